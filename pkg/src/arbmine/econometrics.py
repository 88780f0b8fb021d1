"""Least squares with absorbed multi-way fixed effects, clustered errors, and the spread regressions."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .ledger_model import Leg
from .matcher import ArbitrageAction, MatchConfig, match_ledger
from .pricing import FeeRegime, LegFees, PricedAction, RateTable, price_actions
from .profiles import UserProfile, build_profiles, learning_filter, pca_scores

PROXIES = ("d_currencies", "log_currencies", "log_actions", "d_metaorder", "d_aggressive", "pc1_score")
DEFAULT_THRESHOLDS = ((30, Decimal(1)), (300, Decimal(10)), (600, Decimal(20)))
DEFAULT_REGIMES = (FeeRegime.ACTUAL, FeeRegime.NONE, FeeRegime.EXPECTED)


class RankDeficient(ValueError):
    pass


class EmptyAfterSingletonDrop(ValueError):
    pass


class SingleCluster(ValueError):
    pass


@dataclass
class RegressionResult:
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    r2: float
    n_obs: int
    n_input: int
    dropped_singletons: dict[str, int]
    n_clusters: int | None
    k_total: int
    resid: np.ndarray = field(repr=False)
    design: np.ndarray = field(repr=False)
    kept: np.ndarray = field(repr=False)
    sweeps: int = 0

    def coefficient(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def std_error(self, name: str) -> float:
        return float(self.se[self.names.index(name)])

    def p_value(self, name: str) -> float:
        i = self.names.index(name)
        if self.se[i] == 0:
            return 0.0
        t = abs(self.coef[i] / self.se[i])
        dof = (self.n_clusters - 1) if self.n_clusters else max(self.n_obs - self.k_total, 1)
        return float(2 * stats.t.sf(t, dof))


def stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def _codes(labels: Sequence) -> np.ndarray:
    _, inverse = np.unique(np.asarray(labels, dtype=object).astype(str), return_inverse=True)
    return inverse.astype(np.int64)


def drop_singletons(codes: Sequence[np.ndarray], names: Sequence[str]) -> tuple[np.ndarray, dict[str, int]]:
    """Iteratively drop observations alone in some fixed-effect cell."""
    n = len(codes[0]) if codes else 0
    keep = np.ones(n, dtype=bool)
    dropped = {name: 0 for name in names}
    changed = True
    while changed:
        changed = False
        for name, c in zip(names, codes):
            counts = np.bincount(c[keep], minlength=int(c.max()) + 1 if len(c) else 0)
            lonely = keep & (counts[c] == 1)
            if lonely.any():
                dropped[name] += int(lonely.sum())
                keep &= ~lonely
                changed = True
    return keep, dropped


def demean(
    matrix: np.ndarray, codes: Sequence[np.ndarray], tol: float = 1e-10, max_sweeps: int = 10_000
) -> tuple[np.ndarray, int]:
    """Project out all fixed-effect dimensions by alternating group demeaning.

    Stops when every group mean is below ``tol`` (relative to column scale).
    """
    out = np.array(matrix, dtype=float, copy=True)
    if not codes:
        return out, 0
    scale = np.maximum(np.abs(out).max(axis=0), 1.0)
    sizes = [np.bincount(c).astype(float) for c in codes]
    for sweep in range(1, max_sweeps + 1):
        worst = 0.0
        for c, size in zip(codes, sizes):
            sums = np.zeros((len(size), out.shape[1]))
            np.add.at(sums, c, out)
            means = sums / size[:, None]
            out -= means[c]
            worst = max(worst, float((np.abs(means) / scale).max()))
        if worst < tol or len(codes) == 1:
            return out, sweep
    return out, max_sweeps


def _connected_components(a: np.ndarray, b: np.ndarray) -> int:
    """Connected components of the bipartite graph linking levels of two FE dimensions."""
    na, nb = int(a.max()) + 1, int(b.max()) + 1
    parent = list(range(na + nb))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in zip(a.tolist(), (b + na).tolist()):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    return len({find(x) for x in range(na + nb)})


def fe_degrees_of_freedom(codes: Sequence[np.ndarray]) -> int:
    """Parameters absorbed by the fixed effects, constant included.

    Exact for one or two dimensions; further dimensions add (levels - 1) each,
    which can overstate the count when they are collinear with earlier ones.
    """
    if not codes:
        return 1
    levels = [len(np.unique(c)) for c in codes]
    if len(codes) == 1:
        return levels[0]
    a, b = np.unique(codes[0], return_inverse=True)[1], np.unique(codes[1], return_inverse=True)[1]
    dof = levels[0] + levels[1] - _connected_components(a, b)
    return dof + sum(n - 1 for n in levels[2:])


def cluster_covariance(
    design: np.ndarray, resid: np.ndarray, clusters: Sequence, k_total: int
) -> tuple[np.ndarray, int]:
    """CR1 sandwich: c * (X'X)^-1 [sum_g X_g' e_g e_g' X_g] (X'X)^-1, c = G/(G-1) * (N-1)/(N-K).

    Raises:
        SingleCluster: fewer than two clusters.
    """
    groups = _codes(clusters)
    n_groups = int(groups.max()) + 1 if len(groups) else 0
    if n_groups < 2:
        raise SingleCluster("clustered errors need at least two clusters")
    n = design.shape[0]
    scores = np.zeros((n_groups, design.shape[1]))
    np.add.at(scores, groups, design * resid[:, None])
    bread = np.linalg.inv(design.T @ design)
    meat = scores.T @ scores
    c = n_groups / (n_groups - 1) * (n - 1) / (n - k_total)
    return c * bread @ meat @ bread, n_groups


def ols_fe(
    y: Sequence[float],
    X: np.ndarray,
    names: Sequence[str],
    fixed_effects: Mapping[str, Sequence] | None = None,
    clusters: Sequence | None = None,
    tol: float = 1e-10,
) -> RegressionResult:
    """OLS of ``y`` on ``X`` plus a constant, absorbing the given fixed effects.

    Singleton observations are dropped first. The constant is the grand
    intercept after absorption. R^2 is the overall fit against the raw outcome.
    Errors are clustered when ``clusters`` is given, classical otherwise.

    Raises:
        EmptyAfterSingletonDrop: nothing left to fit.
        RankDeficient: regressors collinear (including with the fixed effects).
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    fixed_effects = dict(fixed_effects or {})
    fe_names = list(fixed_effects)
    codes = [_codes(fixed_effects[k]) for k in fe_names]
    keep, dropped = drop_singletons(codes, fe_names) if codes else (np.ones(len(y), bool), {})
    if not keep.any():
        raise EmptyAfterSingletonDrop("no observations left after dropping singletons")
    yk, Xk = y[keep], X[keep]
    codes = [np.unique(c[keep], return_inverse=True)[1] for c in codes]
    stacked, sweeps = demean(np.column_stack([yk, Xk]), codes, tol)
    y_dm, X_dm = stacked[:, 0], stacked[:, 1:]
    if codes:
        target = y_dm + yk.mean()
        design = np.column_stack([np.ones(len(yk)), X_dm + Xk.mean(axis=0)])
    else:
        target = yk
        design = np.column_stack([np.ones(len(yk)), Xk])
    n, k = design.shape
    if n <= k or np.linalg.matrix_rank(design) < k:
        raise RankDeficient(f"design of shape {design.shape} is rank deficient after absorption")
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    resid = target - design @ coef
    k_total = X.shape[1] + fe_degrees_of_freedom(codes)
    sst = float(((yk - yk.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else float("nan")
    if clusters is not None:
        cov, n_groups = cluster_covariance(design, resid, np.asarray(clusters, dtype=object)[keep], k_total)
    else:
        sigma2 = float(resid @ resid) / max(n - k_total, 1)
        cov, n_groups = sigma2 * np.linalg.inv(design.T @ design), None
    return RegressionResult(
        names=("const",) + tuple(names),
        coef=coef,
        se=np.sqrt(np.clip(np.diag(cov), 0, None)),
        cov=cov,
        r2=r2,
        n_obs=n,
        n_input=len(y),
        dropped_singletons=dropped,
        n_clusters=n_groups,
        k_total=k_total,
        resid=resid,
        design=design,
        kept=keep,
        sweeps=sweeps,
    )


@dataclass(frozen=True)
class RegressionSpec:
    regime: FeeRegime = FeeRegime.ACTUAL
    proxy: str = "d_currencies"
    interaction: bool = False
    fixed_effects: tuple[str, ...] = ("hour", "dyad")

    def __post_init__(self) -> None:
        if self.proxy not in PROXIES:
            raise ValueError(f"unknown ability proxy {self.proxy!r}")
        unknown = set(self.fixed_effects) - {"hour", "dyad", "user"}
        if unknown:
            raise ValueError(f"unknown fixed effects {sorted(unknown)}")
        if "user" in self.fixed_effects and not self.interaction:
            raise ValueError("user fixed effects absorb a user-level proxy; only allowed with the interaction")

    @property
    def label(self) -> str:
        fe = "+".join(self.fixed_effects) or "none"
        eq = "eq2" if self.interaction else "eq1"
        return f"{eq}:{self.proxy}:{self.regime.value}:{fe}"


@dataclass(frozen=True)
class RegressionRow:
    spread: float
    proxy: float
    delta_r: float | None
    usd: float
    user: int
    dyad: str
    hour: int


def regression_rows(
    priced: Iterable[PricedAction], profiles: Mapping[int, UserProfile], spec: RegressionSpec
) -> list[RegressionRow]:
    """Usable observations: priced under the regime, with volume (and rate change for the interaction)."""
    rows = []
    for p in priced:
        spread = p.spread.get(spec.regime)
        if spread is None or p.usd_equiv is None:
            continue
        if spec.interaction and p.delta_r_pct is None:
            continue
        a = p.action
        rows.append(
            RegressionRow(
                spread=spread,
                proxy=profiles[a.user_id].proxy(spec.proxy),
                delta_r=p.delta_r_pct,
                usd=p.usd_equiv / 10_000,
                user=a.user_id,
                dyad="/".join(a.dyad),
                hour=a.execution_hour,
            )
        )
    return rows


def fit_rows(rows: Sequence[RegressionRow], spec: RegressionSpec) -> RegressionResult:
    if not rows:
        raise EmptyAfterSingletonDrop("no usable observations")
    y = [r.spread for r in rows]
    if spec.interaction:
        names = (f"delta_r_x_{spec.proxy}", "delta_r", "usd")
        X = np.array([[r.proxy * r.delta_r, r.delta_r, r.usd] for r in rows])
    else:
        names = (spec.proxy, "usd")
        X = np.array([[r.proxy, r.usd] for r in rows])
    fe = {name: [getattr(r, name) for r in rows] for name in spec.fixed_effects}
    return ols_fe(y, X, names, fe, clusters=[r.user for r in rows])


def run_eq1(
    priced: Iterable[PricedAction], profiles: Mapping[int, UserProfile], spec: RegressionSpec = RegressionSpec()
) -> RegressionResult:
    """Spread on an ability proxy and the dollar volume control."""
    if spec.interaction:
        raise ValueError("run_eq1 takes a spec without the rate-change interaction")
    return fit_rows(regression_rows(priced, profiles, spec), spec)


def run_eq2(
    priced: Iterable[PricedAction],
    profiles: Mapping[int, UserProfile],
    spec: RegressionSpec = RegressionSpec(interaction=True, fixed_effects=("hour", "dyad", "user")),
) -> RegressionResult:
    """Spread on proxy x rate change, rate change and dollar volume."""
    if not spec.interaction:
        raise ValueError("run_eq2 needs a spec with the interaction flag")
    return fit_rows(regression_rows(priced, profiles, spec), spec)


@dataclass(frozen=True)
class SuiteCell:
    delta_t: int
    delta_q: Decimal
    regime: FeeRegime
    learning: bool
    proxy: str
    equation: int

    @property
    def label(self) -> str:
        filt = "learn" if self.learning else "all"
        return f"eq{self.equation}_{self.delta_t}s_{self.delta_q}pct_{self.regime.value}_{filt}_{self.proxy}"


def prepare_actions(
    legs: Sequence[Leg], cfg: MatchConfig
) -> tuple[list[ArbitrageAction], dict[int, UserProfile]]:
    """Match, profile, and attach PC1 scores when the indicators allow it."""
    actions = match_ledger(legs, cfg)
    profiles = build_profiles(actions)
    try:
        _, profiles = pca_scores(profiles)
    except ValueError:
        pass
    return actions, profiles


def robustness_suite(
    legs: Sequence[Leg],
    rates: RateTable,
    expected: Callable[[Leg], LegFees] | None = None,
    thresholds: Sequence[tuple[int, Decimal]] = DEFAULT_THRESHOLDS,
    regimes: Sequence[FeeRegime] = DEFAULT_REGIMES,
    learning: Sequence[bool] = (False, True),
    proxies: Sequence[str] = ("d_currencies",),
    equations: Sequence[int] = (1,),
    max_days: int = 14,
) -> dict[SuiteCell, RegressionResult | str]:
    """Run the regressions over every threshold, fee regime and learning-filter setting.

    A failing cell records its error message and the suite carries on.
    """
    out: dict[SuiteCell, RegressionResult | str] = {}
    for dt, dq in thresholds:
        cfg = MatchConfig(dt, Decimal(str(dq)))
        actions, profiles = prepare_actions(legs, cfg)
        priced_all = price_actions(actions, rates, expected)
        for use_filter in learning:
            kept = set(map(id, learning_filter(profiles, actions, max_days))) if use_filter else None
            priced = [p for p in priced_all if kept is None or id(p.action) in kept]
            for regime in regimes:
                for equation in equations:
                    for proxy in proxies:
                        cell = SuiteCell(cfg.delta_t_max, cfg.delta_q_max, regime, use_filter, proxy, equation)
                        try:
                            if regime is FeeRegime.EXPECTED and expected is None:
                                raise ValueError("no fee model for the expected-fee regime")
                            if equation == 1:
                                spec = RegressionSpec(regime, proxy, False, ("hour", "dyad"))
                                out[cell] = run_eq1(priced, profiles, spec)
                            else:
                                spec = RegressionSpec(regime, proxy, True, ("hour", "dyad", "user"))
                                out[cell] = run_eq2(priced, profiles, spec)
                        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                            out[cell] = f"{type(exc).__name__}: {exc}"
    return out


def results_table(columns: Mapping[str, RegressionResult | str]) -> str:
    """CSV table: one column per regression, coefficient and SE rows per term, then N and R^2."""
    labels = list(columns)
    terms: list[str] = []
    for res in columns.values():
        if isinstance(res, RegressionResult):
            terms.extend(t for t in res.names if t not in terms)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["term"] + labels)
    for term in terms:
        coef_row, se_row = [term], [""]
        for label in labels:
            res = columns[label]
            if isinstance(res, RegressionResult) and term in res.names:
                coef_row.append(f"{res.coefficient(term):.4f}{stars(res.p_value(term))}")
                se_row.append(f"({res.std_error(term):.4f})")
            else:
                coef_row.append("")
                se_row.append("")
        writer.writerow(coef_row)
        writer.writerow(se_row)
    writer.writerow(["N"] + [str(r.n_obs) if isinstance(r, RegressionResult) else "" for r in columns.values()])
    writer.writerow(["R2"] + [f"{r.r2:.4f}" if isinstance(r, RegressionResult) else "" for r in columns.values()])
    writer.writerow(["error"] + ["" if isinstance(r, RegressionResult) else r for r in columns.values()])
    return buffer.getvalue()
