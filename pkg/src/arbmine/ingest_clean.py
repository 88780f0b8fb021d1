"""Deduplication, sanity filtering, corrections, anonymisation and aggregation of leg streams."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from decimal import Decimal
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

from .ledger_model import (
    DELETED_USER,
    INTERMEDIARY_USERS,
    Initiator,
    Leg,
    McKind,
    PublicTradeRecord,
    Side,
    day_of,
    to_epoch,
)

DEFAULT_CUTOFF = to_epoch(datetime(2013, 4, 1, tzinfo=timezone.utc))
SEKJPY_FIX_BEFORE = to_epoch(datetime(2013, 9, 12, tzinfo=timezone.utc))
MARKUS_ORIGINAL = 698630
MARKUS_TARGET = 635
WILLY_TARGET = 1_000_000


class DedupMethod(str, Enum):
    CONSERVATIVE = "Conservative"
    AGGRESSIVE = "Aggressive"
    TRADE_ID = "TradeId"
    PAIRS = "Pairs"


class UserIdCollision(ValueError):
    """A remap target id is already used by another account."""


@dataclass
class CleanReport:
    """Audit trail: rows removed per rule plus in-place corrections."""

    input_rows: int = 0
    output_rows: int = 0
    removed: dict[str, int] = field(default_factory=dict)
    corrected: dict[str, int] = field(default_factory=dict)
    notes: dict[str, int] = field(default_factory=dict)

    def remove(self, rule: str, n: int) -> None:
        self.removed[rule] = self.removed.get(rule, 0) + n

    def reconciles(self) -> bool:
        return self.input_rows == self.output_rows + sum(self.removed.values())

    def merge(self, other: "CleanReport") -> "CleanReport":
        out = CleanReport(self.input_rows, other.output_rows)
        for src in (self, other):
            for k, v in src.removed.items():
                out.removed[k] = out.removed.get(k, 0) + v
            for k, v in src.corrected.items():
                out.corrected[k] = out.corrected.get(k, 0) + v
            for k, v in src.notes.items():
                out.notes[k] = out.notes.get(k, 0) + v
        return out

    def lines(self) -> list[str]:
        rows = [f"input_rows={self.input_rows}", f"output_rows={self.output_rows}"]
        rows += [f"removed.{k}={v}" for k, v in sorted(self.removed.items())]
        rows += [f"corrected.{k}={v}" for k, v in sorted(self.corrected.items())]
        rows += [f"note.{k}={v}" for k, v in sorted(self.notes.items())]
        return rows


def dedup_key(leg: Leg, method: DedupMethod) -> tuple:
    if method is DedupMethod.CONSERVATIVE:
        return (leg.user_id, leg.ts, leg.side, leg.bitcoins, leg.money_jpy)
    if method is DedupMethod.TRADE_ID:
        return (leg.trade_id, leg.user_id, leg.ts, leg.side, leg.bitcoins)
    return (leg.user_id, leg.ts, leg.side, leg.bitcoins)


def _trade_instances(legs: Sequence[Leg]) -> list[int]:
    """Assign each leg to a trade instance: k-th buy and k-th sell of a trade id share one."""
    seen: Counter = Counter()
    ids: dict[tuple, int] = {}
    out = []
    for leg in legs:
        slot = (leg.trade_id, leg.side)
        occurrence = seen[slot]
        seen[slot] += 1
        out.append(ids.setdefault((leg.trade_id, occurrence), len(ids)))
    return out


def dedup(legs: Sequence[Leg], method: DedupMethod) -> tuple[list[Leg], CleanReport]:
    """Drop duplicate trades, keeping the first occurrence in input order.

    Every row registers its key, removed or not, so a key seen once stays seen.
    A trade instance goes when any of its legs repeats a key; under ``Pairs``
    only when all of its legs do. ``Pairs`` also drops single-leg trades
    (reported as ``orphan_legs``) so each surviving trade has two legs.
    """
    method = DedupMethod(method)
    instance = _trade_instances(legs)
    seen: set[tuple] = set()
    dup_flags = []
    for leg in legs:
        key = dedup_key(leg, method)
        dup_flags.append(key in seen)
        seen.add(key)
    members: dict[int, list[int]] = defaultdict(list)
    for i, inst in enumerate(instance):
        members[inst].append(i)
    drop_dup: set[int] = set()
    drop_orphan: set[int] = set()
    for inst, idx in members.items():
        flags = [dup_flags[i] for i in idx]
        if method is DedupMethod.PAIRS:
            if len(idx) < 2:
                drop_orphan.add(inst)
            elif all(flags):
                drop_dup.add(inst)
        elif any(flags):
            drop_dup.add(inst)
    out = [leg for leg, inst in zip(legs, instance) if inst not in drop_dup and inst not in drop_orphan]
    report = CleanReport(input_rows=len(legs), output_rows=len(out))
    report.remove("duplicates", sum(len(members[i]) for i in drop_dup))
    if method is DedupMethod.PAIRS:
        report.remove("orphan_legs", sum(len(members[i]) for i in drop_orphan))
    return out, report


@dataclass(frozen=True)
class SanityOptions:
    include_thk_primaries: bool = False
    willy_ids: frozenset[int] = frozenset()
    remap_markus: bool = True


def _group_by_trade(legs: Sequence[Leg]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = defaultdict(list)
    for i, leg in enumerate(legs):
        groups[leg.trade_id].append(i)
    return groups


def _public_index(public: Iterable[PublicTradeRecord]) -> tuple[dict, dict]:
    by_currency: dict[tuple[str, str], PublicTradeRecord] = {}
    by_trade: dict[str, list[PublicTradeRecord]] = defaultdict(list)
    for rec in public:
        by_currency.setdefault((rec.trade_id, rec.currency), rec)
        by_trade[rec.trade_id].append(rec)
    return by_currency, by_trade


def correct_public_sek_jpy(
    public: Sequence[PublicTradeRecord], legs: Sequence[Leg]
) -> tuple[list[PublicTradeRecord], int, int]:
    """Undo the factor-100 price error in old SEK/JPY public records.

    Each candidate price (P, P/100, P*100) is compared with the leaked
    money/bitcoins ratio of the same trade and currency, and the closest in
    log terms wins, so an already-correct record is left alone. Records with no
    leaked counterpart are kept unchanged and counted as unverified.

    Returns (records, n_corrected, n_unverified).
    """
    ratio: dict[tuple[str, str], tuple[Decimal, int]] = {}
    for leg in legs:
        if leg.currency in ("SEK", "JPY") and leg.bitcoins > 0 and leg.money > 0:
            ratio.setdefault((leg.trade_id, leg.currency), (leg.money / leg.bitcoins, leg.ts))
    out, corrected, unverified = [], 0, 0
    for rec in public:
        if rec.currency not in ("SEK", "JPY"):
            out.append(rec)
            continue
        leaked = ratio.get((rec.trade_id, rec.currency))
        ts = rec.ts if rec.ts is not None else (leaked[1] if leaked else None)
        if ts is None or ts >= SEKJPY_FIX_BEFORE:
            out.append(rec)
            continue
        if leaked is None:
            unverified += 1
            out.append(rec)
            continue
        target = leaked[0]
        candidates = (rec.price, rec.price / 100, rec.price * 100)
        best = min(candidates, key=lambda p: abs(math.log(float(p / target))))
        if best != rec.price:
            corrected += 1
            rec = replace(rec, price=best)
        out.append(rec)
    return out, corrected, unverified


def sanity_filter(
    legs: Sequence[Leg],
    public: Sequence[PublicTradeRecord] = (),
    options: SanityOptions = SanityOptions(),
) -> tuple[list[Leg], CleanReport]:
    """Apply the row filters, then the fiat and id corrections.

    Removal rules run in a fixed order and each row is charged to the first
    rule that removes it: last_day, deleted_users, zero_bitcoins,
    intermediary_rows, thk_incomplete, orphan_legs, self_trades.
    """
    report = CleanReport(input_rows=len(legs))
    alive = list(legs)

    def drop(rule: str, keep: Callable[[int, Leg], bool]) -> None:
        nonlocal alive
        kept = [leg for i, leg in enumerate(alive) if keep(i, leg)]
        report.remove(rule, len(alive) - len(kept))
        alive = kept

    if alive:
        last = max(day_of(leg.ts) for leg in alive)
        drop("last_day", lambda i, leg: day_of(leg.ts) != last)

    def drop_trades(rule: str, bad: Callable[[Leg], bool]) -> None:
        bad_ids = {leg.trade_id for leg in alive if bad(leg)}
        drop(rule, lambda i, leg: leg.trade_id not in bad_ids)

    drop_trades("deleted_users", lambda leg: leg.user_id == DELETED_USER)
    drop_trades("zero_bitcoins", lambda leg: leg.bitcoins == 0)
    drop("intermediary_rows", lambda i, leg: leg.user_id not in INTERMEDIARY_USERS)

    # A THK trade keeps only the primary buy leg (possibly twice); no real seller.
    groups = _group_by_trade(alive)
    incomplete_thk: set[str] = set()
    orphan_ids: set[str] = set()
    for tid, idx in groups.items():
        sides = {alive[i].side for i in idx}
        if len(sides) == 2:
            continue
        if alive[idx[0]].mc_kind is McKind.THK:
            incomplete_thk.add(tid)
        else:
            orphan_ids.add(tid)
    if options.include_thk_primaries:
        seen_primary: set[str] = set()
        kept = []
        for leg in alive:
            if leg.trade_id in incomplete_thk:
                if leg.trade_id in seen_primary:
                    report.remove("thk_incomplete", 1)
                    continue
                seen_primary.add(leg.trade_id)
                leg = leg.with_flag("thk_primary")
            kept.append(leg)
        alive = kept
    else:
        drop("thk_incomplete", lambda i, leg: leg.trade_id not in incomplete_thk)
    drop("orphan_legs", lambda i, leg: leg.trade_id not in orphan_ids)

    self_ids = set()
    for tid, idx in _group_by_trade(alive).items():
        buyers = {alive[i].user_id for i in idx if alive[i].is_buy}
        sellers = {alive[i].user_id for i in idx if not alive[i].is_buy}
        if buyers & sellers:
            self_ids.add(tid)
    drop("self_trades", lambda i, leg: leg.trade_id not in self_ids)

    alive, n_tib, n_uncorrectable = _correct_tibanne(alive, public)
    report.corrected["tibanne_corrected"] = n_tib
    report.notes["tibanne_uncorrectable"] = n_uncorrectable
    _, n_sek, n_unverified = correct_public_sek_jpy(public, alive)
    report.corrected["sekjpy_corrected"] = n_sek
    report.notes["sekjpy_unverified"] = n_unverified

    alive, n_markus, n_willy = remap_special_users(alive, options)
    report.corrected["markus_remapped"] = n_markus
    report.corrected["willy_remapped"] = n_willy
    report.output_rows = len(alive)
    return alive, report


def _correct_tibanne(
    legs: list[Leg], public: Sequence[PublicTradeRecord]
) -> tuple[list[Leg], int, int]:
    """Rewrite the secondary leg's fiat amount when it copies the primary currency's amount."""
    by_currency, _ = _public_index(public)
    groups = _group_by_trade(legs)
    out = list(legs)
    corrected = uncorrectable = 0
    for tid, idx in groups.items():
        if len(idx) != 2 or legs[idx[0]].mc_kind is not McKind.TIBANNE:
            continue
        primary, secondary = sorted(idx, key=lambda i: legs[i].row)
        a, b = legs[primary], legs[secondary]
        if a.currency == b.currency or a.money != b.money:
            continue
        rec = by_currency.get((tid, b.currency))
        if rec is None:
            out[secondary] = b.with_flag("uncorrectable")
            uncorrectable += 1
            continue
        out[secondary] = replace(b, money=rec.price * b.bitcoins).with_flag("tibanne_corrected")
        corrected += 1
    return out, corrected, uncorrectable


def remap_special_users(
    legs: Sequence[Leg], options: SanityOptions = SanityOptions()
) -> tuple[list[Leg], int, int]:
    """Fold the 698630 account into 635 and the configured bot accounts into 1000000."""
    present = {leg.user_id for leg in legs}
    willy = frozenset(options.willy_ids)
    if options.remap_markus and MARKUS_ORIGINAL in present and MARKUS_TARGET in present:
        raise UserIdCollision(f"user {MARKUS_TARGET} already exists")
    if willy & present and WILLY_TARGET in present - willy:
        raise UserIdCollision(f"user {WILLY_TARGET} already exists")
    out, n_markus, n_willy = [], 0, 0
    for leg in legs:
        if options.remap_markus and leg.user_id == MARKUS_ORIGINAL:
            leg = replace(leg, user_id=MARKUS_TARGET)
            n_markus += 1
        elif leg.user_id in willy:
            leg = replace(leg, user_id=WILLY_TARGET)
            n_willy += 1
        out.append(leg)
    return out, n_markus, n_willy


def anonymize_users(legs: Sequence[Leg]) -> tuple[list[Leg], dict[int, int]]:
    """Replace user ids by their dense rank (from 1) among the sorted distinct ids."""
    mapping = {uid: rank for rank, uid in enumerate(sorted({leg.user_id for leg in legs}), start=1)}
    return [replace(leg, user_id=mapping[leg.user_id]) for leg in legs], mapping


def aggregate_same_second(legs: Sequence[Leg]) -> list[Leg]:
    """Merge legs sharing (user, second, side, currency) into one leg.

    Amounts and fees are summed exactly; the merged trade id joins the member
    ids with ``|``. The merged leg is aggressive if any member is. Output keeps
    the position of each group's first member.
    """
    groups: dict[tuple, list[Leg]] = {}
    for leg in legs:
        groups.setdefault((leg.user_id, leg.ts, leg.side, leg.currency), []).append(leg)
    out = []
    for members in groups.values():
        if len(members) == 1:
            out.append(members[0])
            continue
        first = members[0]
        flags_known = [m.aggressive for m in members if m.aggressive is not None]
        out.append(
            replace(
                first,
                trade_id="|".join(m.trade_id for m in members),
                bitcoins=sum((m.bitcoins for m in members), Decimal(0)),
                money=sum((m.money for m in members), Decimal(0)),
                money_jpy=sum((m.money_jpy for m in members), Decimal(0)),
                money_fee=sum((m.money_fee for m in members), Decimal(0)),
                bitcoin_fee=sum((m.bitcoin_fee for m in members), Decimal(0)),
                money_fee_jpy=sum((m.money_fee_jpy for m in members), Decimal(0)),
                bitcoin_fee_jpy=sum((m.bitcoin_fee_jpy for m in members), Decimal(0)),
                n_members=sum(m.n_members for m in members),
                aggressive=any(flags_known) if flags_known else None,
                flags=frozenset().union(*(m.flags for m in members)),
            )
        )
    return out


def restrict_sample(legs: Sequence[Leg], cutoff: int = DEFAULT_CUTOFF) -> list[Leg]:
    """Keep legs strictly before ``cutoff`` (epoch seconds)."""
    return [leg for leg in legs if leg.ts < cutoff]


def merge_public(
    legs: Sequence[Leg], public: Sequence[PublicTradeRecord]
) -> tuple[list[Leg], int]:
    """Attach order kind and aggressor flag from the public file.

    Returns the annotated legs and the number of legs with no public record.
    """
    by_currency, by_trade = _public_index(public)
    out, misses = [], 0
    for leg in legs:
        rec = by_currency.get((leg.trade_id, leg.currency))
        if rec is None:
            candidates = by_trade.get(leg.trade_id, [])
            rec = candidates[0] if len(candidates) == 1 else None
        if rec is None:
            misses += 1
            out.append(replace(leg, order_kind=None, aggressive=None))
            continue
        initiating = Side.BUY if rec.initiator is Initiator.BID else Side.SELL
        aggressive = rec.order_kind.is_market and leg.side is initiating
        out.append(replace(leg, order_kind=rec.order_kind, aggressive=aggressive))
    return out, misses


@dataclass(frozen=True)
class VolumeComparison:
    day: date
    leaked: Decimal
    external: Decimal
    diff: float | None
    moving_average: float | None


def daily_usd_volume(legs: Iterable[Leg]) -> dict[date, Decimal]:
    """USD traded per day, counting each trade's USD amount once."""
    seen: set[str] = set()
    out: dict[date, Decimal] = defaultdict(Decimal)
    for leg in legs:
        if leg.currency != "USD" or leg.trade_id in seen:
            continue
        seen.add(leg.trade_id)
        out[day_of(leg.ts)] += leg.money
    return dict(out)


def compare_daily_volumes(
    legs: Iterable[Leg], external: Mapping[date, Decimal], window: int = 15
) -> list[VolumeComparison]:
    """Daily (leaked - external) / leaked USD volume with a centred moving average.

    Days present in either source are reported; a missing side counts as zero.
    Near the edges the average uses only the days available in the window.
    """
    leaked = daily_usd_volume(legs)
    days = sorted(set(leaked) | set(external))
    diffs: list[float | None] = []
    for d in days:
        lv, ev = leaked.get(d, Decimal(0)), Decimal(external.get(d, 0))
        diffs.append(float((lv - ev) / lv) if lv != 0 else None)
    half = window // 2
    out = []
    for i, d in enumerate(days):
        chunk = [x for x in diffs[max(0, i - half): i + half + 1] if x is not None]
        ma = sum(chunk) / len(chunk) if chunk else None
        out.append(VolumeComparison(d, leaked.get(d, Decimal(0)), Decimal(external.get(d, 0)), diffs[i], ma))
    return out


@dataclass
class CleanConfig:
    method: DedupMethod = DedupMethod.TRADE_ID
    cutoff: int = DEFAULT_CUTOFF
    sanity: SanityOptions = SanityOptions()


def clean_pipeline(
    legs: Sequence[Leg], public: Sequence[PublicTradeRecord], config: CleanConfig = CleanConfig()
) -> tuple[list[Leg], list[Leg], CleanReport, dict[int, int]]:
    """Dedup, sanity filter, public merge, anonymise.

    Returns (full ledger, ledger restricted to the analysis window,
    combined report, anonymisation mapping).
    """
    deduped, report = dedup(legs, config.method)
    sane, sanity_report = sanity_filter(deduped, public, config.sanity)
    report = report.merge(sanity_report)
    report.input_rows = len(legs)
    merged, misses = merge_public(sane, public)
    report.notes["public_join_misses"] = misses
    full, mapping = anonymize_users(merged)
    return full, restrict_sample(full, config.cutoff), report, mapping
