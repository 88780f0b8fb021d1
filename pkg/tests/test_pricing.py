from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arbmine.ledger_model import RateBar
from arbmine.matcher import ArbitrageAction
from arbmine.pricing import (
    DegenerateLeg,
    FeeRegime,
    LegFees,
    MissingRate,
    RateTable,
    delta_r,
    implied_rate,
    official_rate,
    price_action,
    spread_pct,
    usd_equiv,
)
from arbmine.synth import rng_for
from helpers import BASE_TS, leg

HOUR = BASE_TS // 3600 * 3600


def action(buy_cur="EUR", buy_money="100", sell_cur="USD", sell_money="140.5", btc="10", ts=BASE_TS, **fees):
    b = leg("b", 1, "buy", buy_cur, btc, buy_money, ts=ts, bitcoin_fee=Decimal(fees.get("b_btc", "0")), money_fee=Decimal(fees.get("b_fiat", "0")))
    s = leg("s", 1, "sell", sell_cur, btc, sell_money, ts=ts + 5, bitcoin_fee=Decimal(fees.get("s_btc", "0")), money_fee=Decimal(fees.get("s_fiat", "0")))
    return ArbitrageAction(b, s, 5, 0.0)


def table(**series):
    bars = []
    for name, values in series.items():
        dyad = (name[:3], name[3:])
        bars += [RateBar(dyad, HOUR + 3600 * (k - 1), Decimal(str(v))) for k, v in enumerate(values)]
    return RateTable(bars)


def test_worked_spread_example():
    a = action()
    rates = table(EURUSD=[1.4, 1.4])
    imp = implied_rate(a, FeeRegime.NONE)
    assert imp == pytest.approx(1.405, abs=1e-12)
    assert official_rate(a, rates) == pytest.approx(1.4)
    assert spread_pct(imp, official_rate(a, rates)) == pytest.approx(0.357142857142857, abs=1e-9)
    assert spread_pct(1.405, 1.400) == pytest.approx(0.3571428571, abs=1e-9)


def test_inverse_series_and_usd_cross():
    rates = table(EURUSD=[1.3, 1.3], GBPUSD=[1.6, 1.6])
    assert rates.rate("USD", "EUR", HOUR) == pytest.approx(1 / 1.3)
    assert rates.rate("EUR", "GBP", HOUR) == pytest.approx(1.3 / 1.6)
    with pytest.raises(MissingRate):
        rates.rate("EUR", "JPY", HOUR)
    with pytest.raises(MissingRate):
        rates.rate("EUR", "USD", HOUR + 10 * 3600)


def test_direct_series_beats_cross():
    rates = table(EURUSD=[1.3, 1.3], GBPUSD=[1.6, 1.6], EURGBP=[0.9, 0.9])
    assert rates.rate("EUR", "GBP", HOUR) == 0.9


def test_reciprocal_rates_multiply_to_one():
    rng = rng_for(11)
    values = np.exp(rng.normal(0, 1, 50))
    rates = table(EURUSD=values.tolist(), GBPUSD=(values[::-1]).tolist())
    for k in range(49):
        h = HOUR + 3600 * (k - 1)
        for a, b in (("EUR", "USD"), ("EUR", "GBP"), ("GBP", "USD")):
            assert abs(rates.rate(a, b, h) * rates.rate(b, a, h) - 1) <= 1e-12


def test_execution_hour_is_earlier_leg():
    a = action(ts=HOUR + 3599)
    rates = table(EURUSD=[1.0, 2.0, 3.0])
    assert a.execution_hour == HOUR
    assert official_rate(a, rates) == 2.0


@settings(max_examples=300, deadline=None)
@given(
    st.floats(0.01, 100), st.floats(1, 1e4), st.floats(1, 1e4),
    st.floats(0, 0.05), st.floats(0, 0.05), st.floats(0, 0.05), st.floats(0, 0.05),
)
def test_fees_never_raise_the_spread(btc, m_buy, m_sell, f1, f2, f3, f4):
    a = action(
        buy_money=f"{m_buy:.5f}", sell_money=f"{m_sell:.5f}", btc=f"{btc:.8f}",
        b_btc=f"{btc * f1:.8f}", b_fiat=f"{m_buy * f2:.5f}", s_btc=f"{btc * f3:.8f}", s_fiat=f"{m_sell * f4:.5f}",
    )
    plain = implied_rate(a, FeeRegime.NONE)
    assert implied_rate(a, FeeRegime.ACTUAL) <= plain * (1 + 1e-15)


def test_fee_inclusive_rate_formula():
    a = action(buy_money="100", sell_money="150", btc="10", b_btc="0.06", s_fiat="0.9")
    assert implied_rate(a, FeeRegime.ACTUAL) == pytest.approx((149.1 / 10) * (9.94 / 100))
    printed = implied_rate(a, FeeRegime.ACTUAL, printed_signs=True)
    assert printed == pytest.approx((149.1 / 10) * (10 / (100 - 0.06)))


def test_expected_regime_uses_supplied_fees():
    a = action(buy_money="100", sell_money="150", btc="10")
    fees = lambda g: LegFees(0.0, 0.1) if g.is_buy else LegFees(1.5, 0.0)  # noqa: E731
    assert implied_rate(a, FeeRegime.EXPECTED, fees) == pytest.approx((148.5 / 10) * (9.9 / 100))
    with pytest.raises(ValueError):
        implied_rate(a, FeeRegime.EXPECTED)


def test_degenerate_leg():
    a = action(buy_money="0")
    with pytest.raises(DegenerateLeg):
        implied_rate(a, FeeRegime.NONE)
    priced = price_action(a, table(EURUSD=[1, 1]))
    assert priced.imp_er == {} and priced.spread == {}


def test_delta_r_orientation():
    rates = table(EURUSD=[1.0, 1.1])
    assert delta_r(("EUR", "USD"), HOUR, rates) == pytest.approx(10.0)
    rates = table(USDEUR=[1.0, 1.1])
    assert delta_r(("EUR", "USD"), HOUR, rates) == pytest.approx(10.0)
    # No direct series: alphabetical cross.
    rates = table(EURUSD=[1.0, 1.0], GBPUSD=[2.0, 1.0])
    assert delta_r(("GBP", "EUR"), HOUR, rates) == pytest.approx(100.0)


def test_usd_equivalent():
    rates = table(EURUSD=[1.3, 1.3], GBPUSD=[1.5, 1.5])
    assert usd_equiv(action(), rates) == pytest.approx(140.5)
    a = action(sell_cur="GBP", sell_money="80")
    assert usd_equiv(a, rates) == pytest.approx(130.0)
    priced = price_action(a, rates)
    assert priced.usd_feature == pytest.approx(0.013)


def test_missing_rate_marks_exclusion():
    priced = price_action(action(sell_cur="JPY"), table(EURUSD=[1.3, 1.3]))
    assert priced.excluded_missing_rate and priced.off_er is None and priced.spread == {}
    assert FeeRegime.NONE in priced.imp_er
