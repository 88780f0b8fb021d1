from dataclasses import replace
from datetime import timedelta
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arbmine.ingest_clean import (
    DEFAULT_CUTOFF,
    DedupMethod,
    SanityOptions,
    UserIdCollision,
    aggregate_same_second,
    anonymize_users,
    clean_pipeline,
    compare_daily_volumes,
    correct_public_sek_jpy,
    dedup,
    merge_public,
    remap_special_users,
    restrict_sample,
    sanity_filter,
)
from arbmine.ledger_model import (
    DELETED_USER,
    THK_USER,
    TIBANNE_USER,
    Initiator,
    McKind,
    OrderKind,
    PublicTradeRecord,
    day_of,
)
from arbmine.synth import SynthConfig, gen_ledger
from helpers import BASE_TS, appendix_rows, leg

DAY = 86_400


def rows_of(legs):
    return sorted(g.row for g in legs)


# Expected survivors per method, from the worked dedup illustration.
APPENDIX_EXPECTED = {
    DedupMethod.TRADE_ID: list(range(930, 940)),
    DedupMethod.CONSERVATIVE: list(range(930, 938)),
    DedupMethod.AGGRESSIVE: [930, 931],
    DedupMethod.PAIRS: [930, 931, 932, 933, 938, 939],
}


@pytest.mark.parametrize("method", list(DedupMethod))
def test_appendix_dedup_golden(method):
    out, report = dedup(appendix_rows(), method)
    assert rows_of(out) == APPENDIX_EXPECTED[method]
    assert report.reconciles()


def test_trade_id_method_drops_exact_repeats():
    legs = appendix_rows()
    out, report = dedup(legs + legs[:2], DedupMethod.TRADE_ID)
    assert out == legs
    assert report.removed["duplicates"] == 2


def test_repeated_trade_id_pairs_kth_buy_with_kth_sell():
    a = [leg("t", 1, "buy", btc="1", row=2), leg("t", 2, "sell", btc="1", row=3)]
    b = [leg("t", 3, "buy", btc="2", row=4), leg("t", 4, "sell", btc="2", row=5)]
    out, _ = dedup(a + b, DedupMethod.CONSERVATIVE)
    assert out == a + b
    out, _ = dedup(a + b + a, DedupMethod.AGGRESSIVE)
    assert out == a + b


def test_pairs_drops_orphan_instances():
    legs = [leg("x", 1, "buy", row=2), leg("y", 2, "buy", row=3), leg("y", 3, "sell", row=4)]
    out, report = dedup(legs, DedupMethod.PAIRS)
    assert [g.trade_id for g in out] == ["y", "y"]
    assert report.removed["orphan_legs"] == 1
    assert report.reconciles()


@pytest.mark.parametrize("method", list(DedupMethod))
def test_dedup_undoes_synthetic_duplicate_injection(method):
    legs, truth = gen_ledger(SynthConfig(seed=4, n_noise_trades=1_500, n_planted=20, n_planted_users=5))
    dropped = set(truth.duplicate_rows)
    original = [g for i, g in enumerate(legs) if i not in dropped]
    out, report = dedup(legs, method)
    assert out == original
    assert report.removed["duplicates"] == len(dropped)


def test_dedup_is_idempotent_and_order_preserving():
    legs, _ = gen_ledger(SynthConfig(seed=5, n_noise_trades=800, n_planted=10, n_planted_users=4))
    for method in DedupMethod:
        once, _ = dedup(legs, method)
        twice, report = dedup(once, method)
        assert twice == once
        assert report.removed.get("duplicates", 0) == 0
        positions = [g.row for g in once]
        assert positions == sorted(positions)


def trade(tid, buyer, seller, currency="USD", btc="1", money="10", ts=BASE_TS, **extra):
    return [leg(tid, buyer, "buy", currency, btc, money, ts=ts, **extra), leg(tid, seller, "sell", currency, btc, money, ts=ts, **extra)]


def test_sanity_rules_and_their_order():
    later = BASE_TS + DAY
    legs = (
        trade("ok", 1, 2)
        + trade("del", DELETED_USER, 3)
        + trade("zero", 4, 5, btc="0")
        + trade("self", 6, 6)
        + [leg("orphan", 7, "buy")]
        + trade("last", 8, 9, ts=later)
    )
    legs = [replace(g, row=i + 2) for i, g in enumerate(legs)]
    out, report = sanity_filter(legs)
    assert [g.trade_id for g in out] == ["ok", "ok"]
    assert report.removed == {
        "last_day": 2, "deleted_users": 2, "zero_bitcoins": 2, "intermediary_rows": 0,
        "thk_incomplete": 0, "orphan_legs": 1, "self_trades": 2,
    }
    assert report.reconciles()


def test_thk_trades_are_excluded_or_reduced_to_one_primary():
    thk = [
        leg("m", 10, "buy", "EUR", mc_kind=McKind.THK, row=2),
        leg("m", THK_USER, "sell", "EUR", mc_kind=McKind.THK, row=3),
        leg("m", 10, "buy", "EUR", mc_kind=McKind.THK, row=4),
        leg("m", THK_USER, "sell", "USD", mc_kind=McKind.THK, row=5),
    ]
    tail = trade("z", 1, 2, ts=BASE_TS + DAY)
    out, report = sanity_filter(thk + tail)
    assert out == []
    assert report.removed["intermediary_rows"] == 2 and report.removed["thk_incomplete"] == 2
    out, report = sanity_filter(thk + tail, options=SanityOptions(include_thk_primaries=True))
    assert len(out) == 1 and "thk_primary" in out[0].flags
    assert report.reconciles()


def tibanne_trade(copied: bool):
    m1, m2 = Decimal("50.00"), Decimal("40.00")
    return [
        leg("tb", 11, "buy", "USD", "5", m1, mc_kind=McKind.TIBANNE, row=2),
        leg("tb", TIBANNE_USER, "sell", "USD", "5", m1, mc_kind=McKind.TIBANNE, row=3),
        leg("tb", 12, "sell", "EUR", "5", m1 if copied else m2, mc_kind=McKind.TIBANNE, row=4),
        leg("tb", TIBANNE_USER, "buy", "EUR", "5", m2, mc_kind=McKind.TIBANNE, row=5),
    ] + trade("z", 1, 2, ts=BASE_TS + DAY)


def test_tibanne_secondary_fiat_is_rebuilt_from_public_price():
    public = [PublicTradeRecord("tb", "EUR", Decimal(5), Decimal(8), OrderKind.LIMIT_MIXED, Initiator.BID, BASE_TS)]
    out, report = sanity_filter(tibanne_trade(copied=True), public)
    seller = next(g for g in out if g.user_id == 12)
    assert seller.money == Decimal(40)
    assert "tibanne_corrected" in seller.flags
    assert report.corrected["tibanne_corrected"] == 1
    out, report = sanity_filter(tibanne_trade(copied=True), [])
    assert "uncorrectable" in next(g for g in out if g.user_id == 12).flags
    assert report.notes["tibanne_uncorrectable"] == 1
    out, report = sanity_filter(tibanne_trade(copied=False), public)
    assert report.corrected["tibanne_corrected"] == 0


def test_sek_jpy_public_price_correction():
    legs = [leg("s1", 1, "buy", "SEK", "2", "100"), leg("j1", 1, "buy", "JPY", "1", "1000")]
    public = [
        PublicTradeRecord("s1", "SEK", Decimal(2), Decimal("5000"), OrderKind.LIMIT, Initiator.BID, BASE_TS),
        PublicTradeRecord("j1", "JPY", Decimal(1), Decimal("1000"), OrderKind.LIMIT, Initiator.BID, BASE_TS),
        PublicTradeRecord("zz", "SEK", Decimal(1), Decimal("3"), OrderKind.LIMIT, Initiator.BID, BASE_TS),
    ]
    out, corrected, unverified = correct_public_sek_jpy(public, legs)
    assert [r.price for r in out] == [Decimal(50), Decimal(1000), Decimal(3)]
    assert (corrected, unverified) == (1, 1)


def test_special_user_remapping_and_collision():
    legs = trade("a", 698630, 5) + trade("b", 77, 5)
    out, n_markus, n_willy = remap_special_users(legs, SanityOptions(willy_ids=frozenset({77})))
    assert [g.user_id for g in out] == [635, 5, 1_000_000, 5]
    assert (n_markus, n_willy) == (1, 1)
    with pytest.raises(UserIdCollision):
        sanity_filter(trade("a", 698630, 635) + trade("z", 1, 2, ts=BASE_TS + DAY))


def test_anonymize_is_dense_rank_preserving():
    legs = trade("a", 500, 20) + trade("b", 7, 500)
    out, mapping = anonymize_users(legs)
    assert mapping == {7: 1, 20: 2, 500: 3}
    assert [g.user_id for g in out] == [3, 2, 1, 3]


@settings(max_examples=80, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.integers(1, 3), st.integers(0, 3), st.sampled_from(["buy", "sell"]), st.sampled_from(["USD", "EUR"]),
            st.decimals(min_value=Decimal("0.00000001"), max_value=Decimal(50), places=8),
            st.decimals(min_value=Decimal(0), max_value=Decimal(1000), places=5),
        ),
        max_size=30,
    )
)
def test_aggregation_conserves_amounts(specs):
    legs = [
        leg(f"t{i}", u, side, cur, btc, money, ts=BASE_TS + dt, money_fee=money / 100, row=i + 2)
        for i, (u, dt, side, cur, btc, money) in enumerate(specs)
    ]
    out = aggregate_same_second(legs)
    assert sum(g.bitcoins for g in out) == sum(g.bitcoins for g in legs)
    assert sum(g.money for g in out) == sum(g.money for g in legs)
    assert sum(g.money_fee for g in out) == sum(g.money_fee for g in legs)
    assert sum(g.n_members for g in out) == len(legs)
    keys = [(g.user_id, g.ts, g.side, g.currency) for g in out]
    assert len(keys) == len(set(keys))
    members = [m for g in out for m in g.members()]
    assert sorted(members) == sorted(g.trade_id for g in legs)


def test_aggregated_leg_is_aggressive_if_any_member_is():
    legs = [
        leg("a", 1, "buy", aggressive=False), leg("b", 1, "buy", aggressive=True), leg("c", 1, "buy", aggressive=None),
    ]
    (merged,) = aggregate_same_second(legs)
    assert merged.trade_id == "a|b|c" and merged.aggressive is True and merged.n_members == 3


def test_merge_public_marks_aggressor():
    legs = trade("a", 1, 2, "EUR") + trade("b", 3, 4)
    public = [
        PublicTradeRecord("a", "EUR", Decimal(1), Decimal(10), OrderKind.MARKET, Initiator.ASK, BASE_TS),
    ]
    out, misses = merge_public(legs, public)
    assert [g.aggressive for g in out] == [False, True, None, None]
    assert misses == 2


def test_restrict_sample_cutoff_is_exclusive():
    legs = [leg("a", 1, "buy", ts=DEFAULT_CUTOFF - 1), leg("b", 1, "buy", ts=DEFAULT_CUTOFF)]
    assert [g.trade_id for g in restrict_sample(legs)] == ["a"]


def test_volume_comparison_centred_average():
    start = day_of(BASE_TS)
    legs = []
    external = {}
    for k in range(20):
        legs += trade(f"v{k}", 1, 2, btc="1", money="100", ts=BASE_TS + k * DAY)
        external[start + timedelta(days=k)] = Decimal(90 if k % 2 else 110)
    rows = compare_daily_volumes(legs, external)
    assert len(rows) == 20
    assert rows[0].diff == pytest.approx(-0.1) and rows[1].diff == pytest.approx(0.1)
    # First window holds days 0..7: four at -0.1 and four at +0.1.
    assert rows[0].moving_average == pytest.approx(0.0)
    assert rows[10].moving_average == pytest.approx(sum((-0.1, 0.1)[k % 2] for k in range(3, 18)) / 15)


def test_clean_pipeline_reports_reconcile():
    legs, _ = gen_ledger(SynthConfig(seed=6, n_noise_trades=1_000, n_planted=10, n_planted_users=4, multi_currency_share=0.05))
    full, restricted, report, mapping = clean_pipeline(legs, [])
    assert report.output_rows == len(full)
    assert report.input_rows == len(legs)
    assert report.reconciles()
    assert set(mapping.values()) == set(range(1, len(mapping) + 1))
    assert all(g.ts < DEFAULT_CUTOFF for g in restricted)
