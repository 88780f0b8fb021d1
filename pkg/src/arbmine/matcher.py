"""Detect arbitrage actions: same-user buy/sell leg pairs in different currencies close in time and size."""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from collections import defaultdict
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Sequence

from .ledger_model import Leg


@dataclass(frozen=True)
class MatchConfig:
    delta_t_max: int = 300
    delta_q_max: Decimal = Decimal(10)

    def __post_init__(self) -> None:
        object.__setattr__(self, "delta_q_max", Decimal(str(self.delta_q_max)))
        if self.delta_t_max < 0 or self.delta_q_max < 0:
            raise ValueError("match thresholds must be non-negative")


@dataclass(frozen=True)
class ArbitrageAction:
    buy_leg: Leg
    sell_leg: Leg
    delta_t: int
    delta_q: float

    @property
    def user_id(self) -> int:
        return self.buy_leg.user_id

    @property
    def dyad(self) -> tuple[str, str]:
        return tuple(sorted((self.buy_leg.currency, self.sell_leg.currency)))  # type: ignore[return-value]

    @property
    def direction(self) -> tuple[str, str]:
        return (self.buy_leg.currency, self.sell_leg.currency)

    @property
    def ts(self) -> int:
        return min(self.buy_leg.ts, self.sell_leg.ts)

    @property
    def execution_hour(self) -> int:
        return self.ts // 3600 * 3600

    @property
    def aggressive(self) -> bool:
        return bool(self.buy_leg.aggressive) or bool(self.sell_leg.aggressive)


def volume_gap(buy: Decimal, sell: Decimal) -> Fraction:
    """|b - s| / ((b + s) / 2) * 100 as an exact fraction."""
    total = buy + sell
    if total == 0:
        return Fraction(0)
    return Fraction(abs(buy - sell) * 200) / Fraction(total)


def _within_volume(buy: Decimal, sell: Decimal, limit: Decimal) -> bool:
    # Cross-multiplied so the boundary is compared exactly.
    return abs(buy - sell) * 200 <= limit * (buy + sell)


def _chrono_key(leg: Leg) -> tuple:
    return (leg.ts, leg.trade_id, leg.side.value, leg.currency, leg.row)


@dataclass(frozen=True)
class Candidate:
    buy: int
    sell: int
    delta_t: int
    delta_q: Fraction


def enumerate_candidates(legs: Sequence[Leg], cfg: MatchConfig) -> list[Candidate]:
    """All admissible (buy, sell) index pairs for one user's legs.

    Sells are kept in a time-sorted index and each buy scans only the sells
    inside its +/- delta_t_max window.
    """
    sells = sorted((i for i, leg in enumerate(legs) if not leg.is_buy), key=lambda i: legs[i].ts)
    sell_times = [legs[i].ts for i in sells]
    out = []
    for b, buy in enumerate(legs):
        if not buy.is_buy:
            continue
        members = set(buy.members())
        lo = bisect_left(sell_times, buy.ts - cfg.delta_t_max)
        hi = bisect_right(sell_times, buy.ts + cfg.delta_t_max)
        for s in sells[lo:hi]:
            sell = legs[s]
            if sell.currency == buy.currency or members.intersection(sell.members()):
                continue
            if not _within_volume(buy.bitcoins, sell.bitcoins, cfg.delta_q_max):
                continue
            out.append(Candidate(b, s, abs(buy.ts - sell.ts), volume_gap(buy.bitcoins, sell.bitcoins)))
    return out


def resolve_matches(legs: Sequence[Leg], candidates: Iterable[Candidate]) -> list[ArbitrageAction]:
    """Greedy one-to-one assignment.

    Legs are visited in chronological order; an unmatched leg takes its
    unmatched partner with the smallest time gap, then volume gap, then
    trade id.
    """
    partners: dict[int, list[tuple]] = defaultdict(list)
    for c in candidates:
        partners[c.buy].append((c.delta_t, c.delta_q, legs[c.sell].trade_id, _chrono_key(legs[c.sell]), c.sell, c))
        partners[c.sell].append((c.delta_t, c.delta_q, legs[c.buy].trade_id, _chrono_key(legs[c.buy]), c.buy, c))
    for options in partners.values():
        options.sort(key=lambda o: o[:4])
    matched: set[int] = set()
    actions = []
    for i in sorted(partners, key=lambda i: _chrono_key(legs[i])):
        if i in matched:
            continue
        for *_, j, c in partners[i]:
            if j not in matched:
                matched.update((i, j))
                actions.append(
                    ArbitrageAction(legs[c.buy], legs[c.sell], c.delta_t, float(c.delta_q))
                )
                break
    return actions


def eligible_users(legs: Iterable[Leg]) -> dict[int, list[Leg]]:
    """Group legs by user, keeping real users who traded in at least two currencies."""
    by_user: dict[int, list[Leg]] = defaultdict(list)
    for leg in legs:
        if leg.user_id >= 0:
            by_user[leg.user_id].append(leg)
    return {
        u: sorted(ls, key=_chrono_key)
        for u, ls in by_user.items()
        if len({leg.currency for leg in ls}) >= 2
    }


def match_ledger(legs: Iterable[Leg], cfg: MatchConfig = MatchConfig()) -> list[ArbitrageAction]:
    """Detect arbitrage actions over a whole ledger, ordered by (user, time)."""
    actions = []
    for user_legs in eligible_users(legs).values():
        actions.extend(resolve_matches(user_legs, enumerate_candidates(user_legs, cfg)))
    actions.sort(key=lambda a: (a.user_id, a.ts, a.buy_leg.trade_id, a.sell_leg.trade_id))
    return actions


def sweep_thresholds(
    legs: Iterable[Leg], grid: Sequence[tuple[int, float | Decimal]]
) -> dict[tuple[int, Decimal], int]:
    """Number of matched actions for each (delta_t_max, delta_q_max) cell."""
    if not grid:
        raise ValueError("empty threshold grid")
    users = eligible_users(legs)
    out = {}
    for dt, dq in grid:
        cfg = MatchConfig(int(dt), Decimal(str(dq)))
        out[(cfg.delta_t_max, cfg.delta_q_max)] = sum(
            len(resolve_matches(ls, enumerate_candidates(ls, cfg))) for ls in users.values()
        )
    return out
