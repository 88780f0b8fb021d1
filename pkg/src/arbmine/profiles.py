"""Per-user trade-ability indicators, metaorder runs, PCA score and the learning-by-doing filter."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .matcher import ArbitrageAction

PCA_INDICATORS = ("d_currencies", "log_actions", "d_metaorder", "d_aggressive")


class DegenerateCovariance(ValueError):
    pass


@dataclass(frozen=True)
class Metaorder:
    user_id: int
    dyad: tuple[str, str]
    direction: tuple[str, str]
    actions: tuple[ArbitrageAction, ...]
    total_usd: float | None

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def mean_delay(self) -> float:
        times = [a.ts for a in self.actions]
        return (times[-1] - times[0]) / (len(times) - 1)

    @property
    def total_btc(self) -> float:
        return sum(action_btc(a) for a in self.actions)


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    n_markets: int
    n_fiat_currencies: int
    d_currencies: int
    log_currencies: float
    n_actions: int
    log_actions: float
    d_metaorder: int
    d_aggressive: int
    days_to_new_market: int | None
    pc1_score: float | None = None

    def proxy(self, name: str) -> float:
        value = getattr(self, name)
        if value is None:
            raise ValueError(f"profile {self.user_id} has no {name}")
        return float(value)


def action_btc(action: ArbitrageAction) -> float:
    """Size of an action: the mean of its two legs' bitcoin amounts."""
    return float(action.buy_leg.bitcoins + action.sell_leg.bitcoins) / 2


def detect_metaorders(
    actions: Iterable[ArbitrageAction],
    min_length: int = 5,
    max_gap: int = 60,
    usd: Mapping[int, float] | None = None,
) -> list[Metaorder]:
    """Maximal same-direction runs of at least ``min_length`` actions with gaps <= ``max_gap`` seconds.

    ``usd`` optionally maps ``id(action)`` to its dollar value for the run totals.
    """
    groups: dict[tuple, list[ArbitrageAction]] = defaultdict(list)
    for a in actions:
        groups[(a.user_id, a.dyad, a.direction)].append(a)
    out = []
    for (user, dyad, direction), members in sorted(groups.items()):
        members.sort(key=lambda a: (a.ts, a.buy_leg.trade_id))
        run = [members[0]]
        for a in members[1:] + [None]:
            if a is not None and a.ts - run[-1].ts <= max_gap:
                run.append(a)
                continue
            if len(run) >= min_length:
                total = None
                if usd is not None and all(id(x) in usd for x in run):
                    total = sum(usd[id(x)] for x in run)
                out.append(Metaorder(user, dyad, direction, tuple(run), total))
            if a is not None:
                run = [a]
    out.sort(key=lambda m: (m.user_id, m.actions[0].ts))
    return out


def classify_aggressive(actions: Iterable[ArbitrageAction]) -> tuple[list[bool], int]:
    """Aggressive flag per action, plus the number of actions with an unannotated leg."""
    flags, unannotated = [], 0
    for a in actions:
        if a.buy_leg.aggressive is None or a.sell_leg.aggressive is None:
            unannotated += 1
        flags.append(a.aggressive)
    return flags, unannotated


def build_profiles(
    actions: Sequence[ArbitrageAction], metaorders: Iterable[Metaorder] | None = None
) -> dict[int, UserProfile]:
    """One profile per user appearing in ``actions``."""
    if metaorders is None:
        metaorders = detect_metaorders(actions)
    meta_users = {m.user_id for m in metaorders}
    by_user: dict[int, list[ArbitrageAction]] = defaultdict(list)
    for a in actions:
        by_user[a.user_id].append(a)
    profiles = {}
    for user in sorted(by_user):
        acts = sorted(by_user[user], key=lambda a: (a.ts, a.buy_leg.trade_id))
        dyads = {a.dyad for a in acts}
        currencies = {c for a in acts for c in a.dyad}
        days = None
        if len(dyads) > 1:
            first = acts[0]
            switch = next(a for a in acts if a.dyad != first.dyad)
            days = (switch.ts - first.ts) // 86400
        profiles[user] = UserProfile(
            user_id=user,
            n_markets=len(dyads),
            n_fiat_currencies=len(currencies),
            d_currencies=int(len(dyads) > 1),
            log_currencies=math.log(len(dyads)),
            n_actions=len(acts),
            log_actions=math.log(len(acts)),
            d_metaorder=int(user in meta_users),
            d_aggressive=int(any(a.aggressive for a in acts)),
            days_to_new_market=days,
        )
    return profiles


@dataclass(frozen=True)
class PCAResult:
    loadings: np.ndarray
    explained: float
    scores: dict[int, float]
    eigenvalues: np.ndarray


def pca_first_component(data: np.ndarray, sign_column: int = 1) -> tuple[np.ndarray, float, np.ndarray, np.ndarray]:
    """First principal component of the columns' correlation matrix.

    Columns are z-scored with the population standard deviation. The sign is
    fixed so the loading on ``sign_column`` is positive (or, if it is zero, the
    first non-zero loading).

    Returns (loadings, explained share, scores, eigenvalues in descending order).

    Raises:
        DegenerateCovariance: a column has zero variance.
    """
    data = np.asarray(data, dtype=float)
    sd = data.std(axis=0)
    if data.shape[0] < 2 or np.any(sd == 0):
        raise DegenerateCovariance("indicator with zero variance")
    z = (data - data.mean(axis=0)) / sd
    corr = z.T @ z / data.shape[0]
    values, vectors = np.linalg.eigh(corr)
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]
    v = vectors[:, 0]
    pivot = v[sign_column] if abs(v[sign_column]) > 1e-12 else v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
    if pivot < 0:
        v = -v
    v = v / np.linalg.norm(v)
    return v, float(values[0] / values.sum()), z @ v, values


def pca_scores(profiles: Mapping[int, UserProfile]) -> tuple[PCAResult, dict[int, UserProfile]]:
    """PC1 over the four ability indicators; returns the result and profiles carrying their score."""
    users = sorted(profiles)
    data = np.array([[getattr(profiles[u], f) for f in PCA_INDICATORS] for u in users], dtype=float)
    loadings, explained, scores, values = pca_first_component(data, PCA_INDICATORS.index("log_actions"))
    score_map = {u: float(s) for u, s in zip(users, scores)}
    updated = {u: replace(profiles[u], pc1_score=score_map[u]) for u in users}
    return PCAResult(loadings, explained, score_map, values), updated


def learning_filter(
    profiles: Mapping[int, UserProfile], actions: Iterable[ArbitrageAction], max_days: int = 14
) -> list[ArbitrageAction]:
    """Drop every action of multi-market users who took more than ``max_days`` to open a second market."""
    slow = {
        u
        for u, p in profiles.items()
        if p.d_currencies and p.days_to_new_market is not None and p.days_to_new_market > max_days
    }
    return [a for a in actions if a.user_id not in slow]
