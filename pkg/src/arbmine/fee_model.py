"""Fee percentages, trailing 720h volume, the OLS expected-fee model and the zero-fee logit."""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal
from typing import Callable, Iterable, Sequence

import numpy as np

from .ledger_model import Leg, day_of, pair_trades
from .pricing import DegenerateLeg, LegFees

WINDOW_SECONDS = 720 * 3600
DATE_ORIGIN = date(2011, 4, 1)
EARLY_ADOPTER_MAX_ID = 16_000

T0_RANGE = (date(2011, 4, 1), date(2011, 6, 23))
T1_RANGE = (date(2011, 6, 24), date(2011, 8, 18))
HOLIDAY_RANGES = (
    (date(2011, 12, 26), date(2012, 1, 1)),
    (date(2012, 4, 2), date(2012, 4, 7)),
    (date(2012, 11, 9), date(2012, 11, 10)),
)
ANOMALOUS_DAYS = frozenset(
    {
        date(2011, 12, 19), date(2011, 12, 20), date(2011, 12, 21),
        date(2013, 4, 12), date(2013, 4, 13), date(2013, 4, 14),
        date(2013, 11, 28), date(2013, 11, 29),
    }
)

OLS_SPECS: dict[int, tuple[str, ...]] = {
    1: ("intercept", "log_vol"),
    2: ("intercept", "log_vol", "t0", "t1", "t_holid"),
    3: ("intercept", "vol_small", "vol_big"),
    4: ("intercept", "log_vol", "vol_small", "vol_big", "vol_x_small", "vol_x_big"),
    5: (
        "intercept", "log_vol", "vol_small", "vol_big", "vol_x_small", "vol_x_big",
        "t0", "t1", "t_holid",
    ),
}
LOGIT_SPECS: dict[int, tuple[str, ...]] = {
    1: ("intercept", "log_vol"),
    2: ("intercept", "log_vol", "bitcoins", "date"),
    3: ("intercept", "date", "anomalous_days"),
    4: ("intercept", "early_adopters", "anomalous_users", "matchers", "markus", "willy"),
    5: (
        "intercept", "log_vol", "bitcoins", "date", "anomalous_days", "early_adopters",
        "anomalous_users", "matchers", "markus", "willy",
    ),
}


class RankDeficientDesign(ValueError):
    pass


class Separation(ArithmeticError):
    pass


class NonConvergence(ArithmeticError):
    pass


def actual_fee_pct(leg: Leg) -> float:
    """Fee paid on the leg as a percentage of the amount traded."""
    if leg.bitcoins <= 0 or leg.money <= 0:
        raise DegenerateLeg(f"zero amount on leg {leg.trade_id}")
    return float((leg.bitcoin_fee / leg.bitcoins + leg.money_fee / leg.money) * 100)


class VolumeIndex:
    """Per-user cumulative bitcoin volume for trailing-window queries."""

    def __init__(self, legs: Iterable[Leg]):
        per_user: dict[int, list[tuple[int, Decimal]]] = defaultdict(list)
        for leg in legs:
            per_user[leg.user_id].append((leg.ts, leg.bitcoins))
        self._times: dict[int, list[int]] = {}
        self._cum: dict[int, list[Decimal]] = {}
        for user, rows in per_user.items():
            rows.sort(key=lambda r: r[0])
            cum = [Decimal(0)]
            for _, btc in rows:
                cum.append(cum[-1] + btc)
            self._times[user] = [t for t, _ in rows]
            self._cum[user] = cum

    def volume(self, user: int, ts: int, window: int = WINDOW_SECONDS) -> Decimal:
        """Bitcoins traded by ``user`` in the half-open window (ts - window, ts)."""
        times = self._times.get(user)
        if not times:
            return Decimal(0)
        hi = bisect_left(times, ts)
        lo = bisect_right(times, ts - window)
        return self._cum[user][hi] - self._cum[user][lo] if hi > lo else Decimal(0)


def rolling_volume_720h(history: Sequence[Leg], ts: int) -> Decimal:
    """Trailing 720h volume of a single user's (time-sorted) history at ``ts``."""
    times = [leg.ts for leg in history]
    lo, hi = bisect_right(times, ts - WINDOW_SECONDS), bisect_left(times, ts)
    return sum((leg.bitcoins for leg in history[lo:hi]), Decimal(0))


def _in_ranges(day: date, ranges: Iterable[tuple[date, date]]) -> bool:
    return any(a <= day <= b for a, b in ranges)


@dataclass(frozen=True)
class FeeFeatures:
    volume: float
    log_vol: float
    vol_small: float
    vol_big: float
    vol_x_small: float
    vol_x_big: float
    t0: float
    t1: float
    t_holid: float
    intercept: float = 1.0


def fee_features(volume: float, day: date, linear: bool = False) -> FeeFeatures:
    """Design row for the fee model; ``linear`` uses raw volume instead of its log."""
    vol_term = volume if linear else math.log(max(volume, 1.0))
    small = 1.0 if 100 <= volume < 10_000 else 0.0
    big = 1.0 if volume >= 10_000 else 0.0
    return FeeFeatures(
        volume=volume,
        log_vol=vol_term,
        vol_small=small,
        vol_big=big,
        vol_x_small=vol_term * small,
        vol_x_big=vol_term * big,
        t0=1.0 if _in_ranges(day, [T0_RANGE]) else 0.0,
        t1=1.0 if _in_ranges(day, [T1_RANGE]) else 0.0,
        t_holid=1.0 if _in_ranges(day, HOLIDAY_RANGES) else 0.0,
    )


@dataclass(frozen=True)
class ZeroFeeConfig:
    anomalous_users: frozenset[int] = frozenset()
    markus_ids: frozenset[int] = frozenset({634})
    willy_ids: frozenset[int] = frozenset({1_000_000})
    early_adopter_max_id: int = EARLY_ADOPTER_MAX_ID


@dataclass
class FittedModel:
    kind: str
    spec: int
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    n_obs: int
    fit_stat: float
    linear: bool = False
    log_likelihood: float | None = None
    iterations: int = 0
    extra: dict[str, float] = field(default_factory=dict)

    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.coef)))

    def to_text(self) -> str:
        head = [
            f"# model={self.kind} spec={self.spec} linear={int(self.linear)}",
            f"# n_obs={self.n_obs} fit_stat={self.fit_stat!r}",
            "term,coef,se",
        ]
        body = [f"{n},{c!r},{s!r}" for n, c, s in zip(self.names, self.coef.tolist(), self.se.tolist())]
        return "\n".join(head + body) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FittedModel":
        meta: dict[str, str] = {}
        names, coef, se = [], [], []
        for line in text.splitlines():
            if line.startswith("#"):
                for token in line[1:].split():
                    k, _, v = token.partition("=")
                    meta[k] = v
            elif line and line != "term,coef,se":
                n, c, s = line.split(",")
                names.append(n)
                coef.append(float(c))
                se.append(float(s))
        return cls(
            kind=meta["model"],
            spec=int(meta["spec"]),
            names=tuple(names),
            coef=np.array(coef),
            se=np.array(se),
            n_obs=int(meta["n_obs"]),
            fit_stat=float(meta["fit_stat"]),
            linear=meta.get("linear") == "1",
        )


def _design(rows: Sequence[object], names: Sequence[str]) -> np.ndarray:
    return np.array([[getattr(r, n) for n in names] for r in rows], dtype=float).reshape(len(rows), len(names))


def ols(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Least squares with classical standard errors and centred R^2.

    Raises:
        RankDeficientDesign: columns are linearly dependent.
    """
    n, k = X.shape
    if n < k or np.linalg.matrix_rank(X) < k:
        raise RankDeficientDesign(f"design of shape {X.shape} is rank deficient")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else float("nan")
    sigma2 = float(resid @ resid) / max(n - k, 1)
    cov = sigma2 * np.linalg.inv(X.T @ X)
    return beta, np.sqrt(np.diag(cov)), r2


def leg_fee_features(legs: Sequence[Leg], index: VolumeIndex | None = None, linear: bool = False) -> list[FeeFeatures]:
    index = index or VolumeIndex(legs)
    return [fee_features(float(index.volume(leg.user_id, leg.ts)), day_of(leg.ts), linear) for leg in legs]


def fit_fee_ols(
    legs: Sequence[Leg],
    spec: int = 5,
    linear: bool = False,
    index: VolumeIndex | None = None,
) -> FittedModel:
    """Fit the fee-percentage model on legs paying a positive fee below 1%.

    Trailing volumes come from ``index`` (built from ``legs`` when omitted),
    so the full history can be supplied even when fitting on a subset.
    """
    names = OLS_SPECS[spec]
    index = index or VolumeIndex(legs)
    rows, y = [], []
    for leg in legs:
        if leg.bitcoins <= 0 or leg.money <= 0:
            continue
        fee = actual_fee_pct(leg)
        if 0 < fee < 1:
            rows.append(fee_features(float(index.volume(leg.user_id, leg.ts)), day_of(leg.ts), linear))
            y.append(fee)
    X = _design(rows, names)
    beta, se, r2 = ols(X, np.array(y, dtype=float))
    return FittedModel("ols", spec, names, beta, se, len(y), r2, linear=linear)


def predict_expected_fee(features: FeeFeatures, model: FittedModel) -> float:
    """Predicted fee percentage, floored at zero."""
    raw = sum(c * getattr(features, n) for n, c in zip(model.names, model.coef.tolist()))
    return max(0.0, raw)


def expected_fee_function(model: FittedModel, index: VolumeIndex) -> Callable[[Leg], LegFees]:
    """Per-leg expected fee amounts: buyers pay in bitcoin, sellers in fiat."""

    def fees(leg: Leg) -> LegFees:
        feats = fee_features(float(index.volume(leg.user_id, leg.ts)), day_of(leg.ts), model.linear)
        share = predict_expected_fee(feats, model) / 100.0
        if leg.is_buy:
            return LegFees(0.0, float(leg.bitcoins) * share)
        return LegFees(float(leg.money) * share, 0.0)

    return fees


@dataclass(frozen=True)
class ZeroFeeFeatures:
    log_vol: float
    bitcoins: float
    date: float
    anomalous_days: float
    early_adopters: float
    anomalous_users: float
    matchers: float
    markus: float
    willy: float
    intercept: float = 1.0


def zero_fee_features(
    legs: Sequence[Leg], config: ZeroFeeConfig = ZeroFeeConfig(), index: VolumeIndex | None = None
) -> list[ZeroFeeFeatures]:
    index = index or VolumeIndex(legs)
    trades, _ = pair_trades(legs)
    partner: dict[Leg, int] = {}
    for t in trades:
        partner[t.buy_leg] = t.sell_leg.user_id
        partner[t.sell_leg] = t.buy_leg.user_id
    out = []
    for leg in legs:
        day = day_of(leg.ts)
        other = partner.get(leg)
        out.append(
            ZeroFeeFeatures(
                log_vol=math.log(max(float(index.volume(leg.user_id, leg.ts)), 1.0)),
                bitcoins=float(leg.bitcoins),
                date=float((day - DATE_ORIGIN).days),
                anomalous_days=float(day in ANOMALOUS_DAYS),
                early_adopters=float(0 < leg.user_id <= config.early_adopter_max_id),
                anomalous_users=float(leg.user_id in config.anomalous_users),
                matchers=float(other is not None and other in config.anomalous_users),
                markus=float(leg.user_id in config.markus_ids),
                willy=float(leg.user_id in config.willy_ids),
            )
        )
    return out


def logit_loglik(beta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def logit_score(beta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = 1.0 / (1.0 + np.exp(-(X @ beta)))
    return X.T @ (y - p)


@dataclass
class LogitFit:
    beta: np.ndarray
    se: np.ndarray
    log_likelihood: float
    null_log_likelihood: float
    iterations: int

    @property
    def pseudo_r2(self) -> float:
        if self.null_log_likelihood == 0:
            return float("nan")
        return 1.0 - self.log_likelihood / self.null_log_likelihood


def irls_logit(
    X: np.ndarray,
    y: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 100,
    separation_bound: float = 50.0,
) -> LogitFit:
    """Logistic regression by Newton/IRLS with step halving.

    Raises:
        RankDeficientDesign: singular design.
        Separation: some coefficient diverges past ``separation_bound``.
        NonConvergence: no convergence within ``max_iter`` iterations.
    """
    n, k = X.shape
    if n < k or np.linalg.matrix_rank(X) < k:
        raise RankDeficientDesign(f"design of shape {X.shape} is rank deficient")
    if np.all(y == y[0]):
        raise Separation("outcome takes a single value")
    beta = np.zeros(k)
    ll = logit_loglik(beta, X, y)
    for iteration in range(1, max_iter + 1):
        p = 1.0 / (1.0 + np.exp(-(X @ beta)))
        w = p * (1.0 - p)
        hessian = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(hessian, X.T @ (y - p))
        except np.linalg.LinAlgError:
            raise Separation("information matrix became singular") from None
        scale = 1.0
        while True:
            candidate = beta + scale * step
            new_ll = logit_loglik(candidate, X, y)
            if new_ll >= ll - 1e-12 or scale < 1e-8:
                break
            scale /= 2
        beta, improvement, ll = candidate, new_ll - ll, new_ll
        if np.max(np.abs(beta)) > separation_bound:
            raise Separation(f"coefficient magnitude exceeded {separation_bound}")
        if abs(improvement) < tol:
            break
    else:
        raise NonConvergence(f"no convergence after {max_iter} iterations")
    p = 1.0 / (1.0 + np.exp(-(X @ beta)))
    cov = np.linalg.inv(X.T @ (X * (p * (1.0 - p))[:, None]))
    ybar = float(y.mean())
    if 0 < ybar < 1:
        null_ll = n * (ybar * math.log(ybar) + (1 - ybar) * math.log(1 - ybar))
    else:
        null_ll = 0.0
    return LogitFit(beta, np.sqrt(np.diag(cov)), ll, null_ll, iteration)


def fit_zero_fee_logit(
    legs: Sequence[Leg],
    spec: int = 5,
    config: ZeroFeeConfig = ZeroFeeConfig(),
    index: VolumeIndex | None = None,
) -> FittedModel:
    """Logit for the probability that a leg pays any fee at all."""
    names = LOGIT_SPECS[spec]
    usable = [leg for leg in legs if leg.bitcoins > 0 and leg.money > 0]
    feats = zero_fee_features(usable, config, index or VolumeIndex(legs))
    X = _design(feats, names)
    y = np.array([1.0 if actual_fee_pct(leg) > 0 else 0.0 for leg in usable])
    fit = irls_logit(X, y)
    return FittedModel(
        "logit", spec, names, fit.beta, fit.se, len(y), fit.pseudo_r2,
        log_likelihood=fit.log_likelihood, iterations=fit.iterations,
    )
