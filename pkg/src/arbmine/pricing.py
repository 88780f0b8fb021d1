"""Official and implied exchange rates, spreads, hourly rate variation and USD equivalents."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

from .ledger_model import Leg, RateBar
from .matcher import ArbitrageAction


class FeeRegime(str, Enum):
    NONE = "None"
    ACTUAL = "Actual"
    EXPECTED = "Expected"


class MissingRate(LookupError):
    pass


class DegenerateLeg(ValueError):
    pass


class RateTable:
    """Hourly opens keyed by dyad and hour start (epoch seconds)."""

    def __init__(self, bars: Iterable[RateBar] = ()):
        self._series: dict[tuple[str, str], dict[int, float]] = {}
        for bar in bars:
            self.add(bar)

    def add(self, bar: RateBar) -> None:
        series = self._series.setdefault(bar.dyad, {})
        if bar.hour in series:
            raise ValueError(f"duplicate bar for {bar.dyad} at {bar.hour}")
        series[bar.hour] = float(bar.open)

    @property
    def dyads(self) -> list[tuple[str, str]]:
        return sorted(self._series)

    def orientation(self, a: str, b: str) -> tuple[str, str]:
        """The stored orientation of the a/b series, alphabetical when neither exists."""
        if (a, b) in self._series:
            return (a, b)
        if (b, a) in self._series:
            return (b, a)
        return tuple(sorted((a, b)))  # type: ignore[return-value]

    def has_pair(self, a: str, b: str) -> bool:
        return (a, b) in self._series or (b, a) in self._series

    def direct(self, base: str, quote: str, hour: int) -> float | None:
        """Rate base->quote from the base/quote series or the inverse of quote/base."""
        if (base, quote) in self._series:
            value = self._series[(base, quote)].get(hour)
            return value
        if (quote, base) in self._series:
            value = self._series[(quote, base)].get(hour)
            return None if value is None else 1.0 / value
        return None

    def rate(self, base: str, quote: str, hour: int) -> float:
        """Rate base->quote at ``hour``; crosses through USD only when no direct series exists.

        Raises:
            MissingRate: no bar for the hour, or no conversion path.
        """
        if base == quote:
            return 1.0
        if self.has_pair(base, quote):
            value = self.direct(base, quote, hour)
        elif "USD" not in (base, quote) and self.has_pair(base, "USD") and self.has_pair(quote, "USD"):
            left, right = self.direct(base, "USD", hour), self.direct("USD", quote, hour)
            value = None if left is None or right is None else left * right
        else:
            value = None
        if value is None:
            raise MissingRate(f"{base}->{quote} at hour {hour}")
        return value


def official_rate(action: ArbitrageAction, rates: RateTable) -> float:
    """Buy-leg currency priced in sell-leg currency at the action's execution hour."""
    return rates.rate(action.buy_leg.currency, action.sell_leg.currency, action.execution_hour)


@dataclass(frozen=True)
class LegFees:
    fiat: float
    btc: float


def _fees(leg: Leg, regime: FeeRegime, expected: Callable[[Leg], LegFees] | None) -> LegFees:
    if regime is FeeRegime.NONE:
        return LegFees(0.0, 0.0)
    if regime is FeeRegime.ACTUAL:
        return LegFees(float(leg.money_fee), float(leg.bitcoin_fee))
    if expected is None:
        raise ValueError("expected-fee regime needs a fee predictor")
    return expected(leg)


def implied_rate(
    action: ArbitrageAction,
    regime: FeeRegime = FeeRegime.ACTUAL,
    expected: Callable[[Leg], LegFees] | None = None,
    printed_signs: bool = False,
) -> float:
    """Sell-side fiat price over buy-side fiat price of one bitcoin, net of fees.

    With fees the sell side earns (fiat - fiat fee) for (btc + btc fee) and the
    buy side gets (btc - btc fee) for (fiat + fiat fee), so fees never raise
    the rate. ``printed_signs`` swaps in the alternative sign layout where the
    buy-side fees enter with the opposite orientation.

    Raises:
        DegenerateLeg: a numerator or denominator is not positive.
    """
    b, s = action.buy_leg, action.sell_leg
    fb, fs = _fees(b, regime, expected), _fees(s, regime, expected)
    fiat_s = float(s.money) - fs.fiat
    btc_s = float(s.bitcoins) + fs.btc
    if printed_signs:
        btc_b = float(b.bitcoins) + fb.fiat
        fiat_b = float(b.money) - fb.btc
    else:
        btc_b = float(b.bitcoins) - fb.btc
        fiat_b = float(b.money) + fb.fiat
    if min(btc_s, fiat_b) <= 0 or min(fiat_s, btc_b) <= 0:
        raise DegenerateLeg(f"non-positive amount in action {b.trade_id}/{s.trade_id}")
    return (fiat_s / btc_s) * (btc_b / fiat_b)


def spread_pct(implied: float, official: float) -> float:
    return (implied - official) / official * 100.0


def delta_r(dyad: tuple[str, str], hour: int, rates: RateTable) -> float:
    """Absolute hour-on-hour change of the dyad's rate, in percent.

    Uses the dyad's own series orientation when one exists, else alphabetical.
    """
    a, b = rates.orientation(*dyad)
    now, before = rates.rate(a, b, hour), rates.rate(a, b, hour - 3600)
    return abs(now - before) / before * 100.0


def usd_equiv(action: ArbitrageAction, rates: RateTable) -> float:
    """Fiat value of the action in dollars: the USD leg if there is one, else a converted leg."""
    for leg in (action.buy_leg, action.sell_leg):
        if leg.currency == "USD":
            return float(leg.money)
    errors = []
    for leg in (action.buy_leg, action.sell_leg):
        try:
            return float(leg.money) * rates.rate(leg.currency, "USD", action.execution_hour)
        except MissingRate as exc:
            errors.append(str(exc))
    raise MissingRate("; ".join(errors))


@dataclass(frozen=True)
class PricedAction:
    action: ArbitrageAction
    off_er: float | None
    imp_er: dict[FeeRegime, float]
    spread: dict[FeeRegime, float]
    delta_r_pct: float | None
    usd_equiv: float | None
    excluded_missing_rate: bool

    @property
    def usd_feature(self) -> float | None:
        return None if self.usd_equiv is None else self.usd_equiv / 10_000


def price_action(
    action: ArbitrageAction,
    rates: RateTable,
    expected: Callable[[Leg], LegFees] | None = None,
    printed_signs: bool = False,
) -> PricedAction:
    regimes = [FeeRegime.NONE, FeeRegime.ACTUAL] + ([FeeRegime.EXPECTED] if expected else [])
    try:
        off = official_rate(action, rates)
    except MissingRate:
        off = None
    imp: dict[FeeRegime, float] = {}
    spreads: dict[FeeRegime, float] = {}
    for regime in regimes:
        try:
            imp[regime] = implied_rate(action, regime, expected, printed_signs)
        except DegenerateLeg:
            continue
        if off is not None:
            spreads[regime] = spread_pct(imp[regime], off)
    try:
        dr = delta_r(action.dyad, action.execution_hour, rates)
    except MissingRate:
        dr = None
    try:
        usd = usd_equiv(action, rates)
    except MissingRate:
        usd = None
    return PricedAction(action, off, imp, spreads, dr, usd, off is None)


def price_actions(
    actions: Sequence[ArbitrageAction],
    rates: RateTable,
    expected: Callable[[Leg], LegFees] | None = None,
    printed_signs: bool = False,
) -> list[PricedAction]:
    return [price_action(a, rates, expected, printed_signs) for a in actions]
