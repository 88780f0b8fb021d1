"""Seeded synthetic ledgers, rates and regression data with known ground truth, plus brute-force oracles.

All randomness comes from ``numpy.random.Generator(PCG64(seed))`` so fixtures
are reproducible across platforms.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from decimal import Decimal
from fractions import Fraction
from typing import Sequence

import numpy as np

from .econometrics import RegressionRow
from .fee_model import ANOMALOUS_DAYS, WINDOW_SECONDS, fee_features
from .ledger_model import (
    TIBANNE_USER,
    Initiator,
    JapanFlag,
    Leg,
    McKind,
    OrderKind,
    PublicTradeRecord,
    RateBar,
    Side,
    day_of,
    to_epoch,
)
from .matcher import ArbitrageAction, MatchConfig, volume_gap

SAT = Decimal("0.00000001")
CENT = Decimal("0.00001")

# Yen per unit, used only to fill the JPY columns.
JPY_PER_UNIT = {
    "USD": Decimal(80), "EUR": Decimal(105), "GBP": Decimal(125), "AUD": Decimal(82),
    "JPY": Decimal(1), "CAD": Decimal(80), "CHF": Decimal(86), "PLN": Decimal(25),
    "SEK": Decimal(12), "DKK": Decimal(14), "NOK": Decimal(14), "NZD": Decimal(65),
    "SGD": Decimal(64), "HKD": Decimal(10), "CNY": Decimal(13), "RUB": Decimal(3),
    "THB": Decimal(3),
}
# Dollars per unit at the start of the synthetic rate paths.
USD_PER_UNIT = {
    "EUR": 1.30, "GBP": 1.58, "AUD": 1.03, "JPY": 0.0125, "CAD": 1.0, "CHF": 1.08,
    "PLN": 0.31, "SEK": 0.15, "DKK": 0.17, "NOK": 0.17, "NZD": 0.81, "SGD": 0.80,
    "HKD": 0.129, "CNY": 0.16, "RUB": 0.032, "THB": 0.032,
}
POSTED_SCHEDULE = (
    (0, Decimal("0.60")), (100, Decimal("0.55")), (200, Decimal("0.53")), (500, Decimal("0.50")),
    (1000, Decimal("0.46")), (2000, Decimal("0.43")), (5000, Decimal("0.40")),
    (10000, Decimal("0.30")), (25000, Decimal("0.29")), (50000, Decimal("0.28")),
    (100000, Decimal("0.27")), (250000, Decimal("0.26")), (500000, Decimal("0.25")),
)


class InfeasibleConfig(ValueError):
    pass


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _utc(y: int, m: int, d: int) -> int:
    return to_epoch(datetime(y, m, d, tzinfo=timezone.utc))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_noise_trades: int = 10_000
    n_planted: int = 200
    planted_dt: int = 120
    planted_dq: float = 5.0
    separation: int = 3_600
    fee_schedule: tuple[tuple[int, Decimal], ...] = POSTED_SCHEDULE
    zero_fee_share: float = 0.02
    duplicate_rate: float = 0.05
    multi_currency_share: float = 0.0
    tibanne_error_rate: float = 1.0
    currencies: tuple[str, ...] = ("USD", "EUR", "GBP")
    start: int = _utc(2012, 1, 1)
    end: int = _utc(2013, 3, 1)
    n_noise_users: int = 300
    n_planted_users: int = 40
    multi_market_share: float = 0.3
    spread_intercept: float = 0.2
    spread_ability: float = 1.0
    spread_noise: float = 0.3
    rate_volatility: float = 0.001
    btc_usd_start: float = 10.0
    btc_volatility: float = 0.005


@dataclass
class GroundTruth:
    planted: list[tuple[int, str, str]] = field(default_factory=list)
    planted_spread: dict[tuple[int, str, str], float] = field(default_factory=dict)
    duplicate_rows: list[int] = field(default_factory=list)
    multi_market_users: set[int] = field(default_factory=set)
    tibanne_trades: list[str] = field(default_factory=list)
    coefficients: dict[str, float] = field(default_factory=dict)


def gen_rates(cfg: SynthConfig) -> list[RateBar]:
    """Hourly log-random-walk opens for every non-USD currency against USD."""
    rng = rng_for(cfg.seed + 1)
    first, last = cfg.start // 3600 * 3600, (cfg.end + 3600) // 3600 * 3600
    hours = np.arange(first - 3600, last + 3600, 3600)
    bars = []
    for cur in sorted(c for c in cfg.currencies if c != "USD"):
        steps = rng.normal(0.0, cfg.rate_volatility, len(hours))
        steps[0] = 0.0
        path = USD_PER_UNIT.get(cur, 1.0) * np.exp(np.cumsum(steps))
        for h, v in zip(hours.tolist(), path.tolist()):
            bars.append(RateBar((cur, "USD"), int(h), Decimal(f"{v:.8g}")))
    return bars


def _usd_per_unit(bars: Sequence[RateBar]) -> dict[str, dict[int, float]]:
    table: dict[str, dict[int, float]] = defaultdict(dict)
    for bar in bars:
        table[bar.dyad[0]][bar.hour] = float(bar.open)
    return table


def _fee_pct(schedule: Sequence[tuple[int, Decimal]], volume: Decimal) -> Decimal:
    pct = schedule[0][1]
    for threshold, value in schedule:
        if volume >= threshold:
            pct = value
    return pct


@dataclass
class _Row:
    trade_id: str
    ts: int
    user: int
    side: Side
    currency: str
    bitcoins: Decimal
    money: Decimal
    mc_kind: McKind = McKind.STANDARD


def gen_ledger(cfg: SynthConfig) -> tuple[list[Leg], GroundTruth]:
    """Noise trades between single-currency users plus planted arbitrage actions.

    Planted users trade only through their planted actions, each user's actions
    being at least ``separation`` seconds apart, so matching them is
    unambiguous. Exact duplicate copies of whole trades are appended at the
    end, as when overlapping source files are concatenated.

    Raises:
        InfeasibleConfig: the date range cannot hold the planted actions.
    """
    if cfg.separation <= cfg.planted_dt:
        raise InfeasibleConfig("separation must exceed the planted time envelope")
    if len(cfg.currencies) < 2 and cfg.n_planted:
        raise InfeasibleConfig("planted actions need at least two currencies")
    rng = rng_for(cfg.seed)
    bars = gen_rates(cfg)
    usd_rate = _usd_per_unit(bars)
    span = cfg.end - cfg.start
    truth = GroundTruth(coefficients={"intercept": cfg.spread_intercept, "d_currencies": cfg.spread_ability})

    first_hour = cfg.start // 3600 * 3600
    n_hours = (cfg.end - first_hour) // 3600 + 2
    btc_usd = cfg.btc_usd_start * np.exp(np.cumsum(rng.normal(0, cfg.btc_volatility, n_hours)))

    def usd_per(cur: str, ts: int) -> float:
        return 1.0 if cur == "USD" else usd_rate[cur][ts // 3600 * 3600]

    def btc_price(cur: str, ts: int) -> float:
        return float(btc_usd[(ts - first_hour) // 3600]) / usd_per(cur, ts)

    currencies = list(cfg.currencies)
    noise_users: dict[str, list[int]] = {c: [] for c in currencies}
    for k in range(max(cfg.n_noise_users, 2 * len(currencies))):
        noise_users[currencies[k % len(currencies)]].append(k + 1)

    rows: list[_Row] = []
    used_keys: set[tuple] = set()
    micro: dict[int, int] = defaultdict(int)

    def new_trade_id(ts: int) -> str:
        micro[ts] += 1
        return f"{ts:010d}{micro[ts]:06d}"

    def amount(low: float, high: float) -> Decimal:
        return Decimal(str(round(math.exp(rng.uniform(math.log(low), math.log(high))), 8))).quantize(SAT)

    def fresh_btc(user: int, ts: int, side: Side, btc: Decimal) -> Decimal:
        while (user, ts, side, btc) in used_keys or btc <= 0:
            btc += SAT
        used_keys.add((user, ts, side, btc))
        return btc

    def add_trade(ts: int, buyer: int, seller: int, cur: str, btc: Decimal, price: float) -> str:
        tid = new_trade_id(ts)
        btc = fresh_btc(buyer, ts, Side.BUY, btc)
        used_keys.add((seller, ts, Side.SELL, btc))
        money = Decimal(str(float(btc) * price)).quantize(CENT)
        rows.append(_Row(tid, ts, buyer, Side.BUY, cur, btc, money))
        rows.append(_Row(tid, ts, seller, Side.SELL, cur, btc, money))
        return tid

    n_multi = int(round(cfg.n_noise_trades * cfg.multi_currency_share)) if len(currencies) > 1 else 0
    for k in range(cfg.n_noise_trades):
        ts = int(cfg.start + rng.integers(0, span))
        if k < n_multi:
            c1, c2 = rng.choice(len(currencies), 2, replace=False)
            cur1, cur2 = currencies[c1], currencies[c2]
            buyer = int(rng.choice(noise_users[cur1]))
            seller = int(rng.choice(noise_users[cur2]))
            btc = fresh_btc(buyer, ts, Side.BUY, amount(0.01, 50))
            used_keys.add((seller, ts, Side.SELL, btc))
            tid = new_trade_id(ts)
            m1 = Decimal(str(float(btc) * btc_price(cur1, ts))).quantize(CENT)
            m2 = Decimal(str(float(btc) * btc_price(cur2, ts))).quantize(CENT)
            copied = m1 if rng.random() < cfg.tibanne_error_rate else m2
            rows.append(_Row(tid, ts, buyer, Side.BUY, cur1, btc, m1, McKind.TIBANNE))
            rows.append(_Row(tid, ts, TIBANNE_USER, Side.SELL, cur1, btc, m1, McKind.TIBANNE))
            rows.append(_Row(tid, ts, seller, Side.SELL, cur2, btc, copied, McKind.TIBANNE))
            rows.append(_Row(tid, ts, TIBANNE_USER, Side.BUY, cur2, btc, m2, McKind.TIBANNE))
            truth.tibanne_trades.append(tid)
            continue
        cur = currencies[int(rng.integers(0, len(currencies)))]
        buyer, seller = (int(u) for u in rng.choice(noise_users[cur], 2, replace=False))
        add_trade(ts, buyer, seller, cur, amount(0.01, 50), btc_price(cur, ts) * rng.uniform(0.99, 1.01))

    # Planted arbitrageurs: ids well above the noise population.
    planted_users = [100_000 + k for k in range(min(cfg.n_planted_users, max(cfg.n_planted, 1)))]
    per_user = [cfg.n_planted // len(planted_users)] * len(planted_users)
    for k in range(cfg.n_planted % len(planted_users)):
        per_user[k] += 1
    multi = set(planted_users[: int(round(len(planted_users) * cfg.multi_market_share))])
    if len(currencies) < 3:
        multi = set()
    truth.multi_market_users = set(multi)
    for user, count in zip(planted_users, per_user):
        if count == 0:
            continue
        # The last ledger day is dropped by the sanity filter, so keep planted actions off it.
        room = span - 86_400 - cfg.planted_dt - (count - 1) * cfg.separation
        if room <= 0:
            raise InfeasibleConfig("date range too short for the planted actions at this separation")
        picks = rng.choice(len(currencies), 3 if user in multi else 2, replace=False)
        user_curs = [currencies[int(i)] for i in picks]
        dyads = [(a, b) for i, a in enumerate(user_curs) for b in user_curs[i + 1:]]
        if user in multi:
            dyads = dyads[:2]
        starts = np.sort(rng.integers(0, room, count)) + np.arange(count) * cfg.separation
        ability = 1.0 if user in multi else 0.0
        for j, offset in enumerate(starts.tolist()):
            # Every dyad shows up at least once so the market count is deterministic.
            pair = dyads[j % len(dyads)] if j < len(dyads) else dyads[int(rng.integers(0, len(dyads)))]
            buy_cur, sell_cur = pair if rng.random() < 0.5 else pair[::-1]
            t0 = cfg.start + int(offset)
            gap = int(rng.integers(0, cfg.planted_dt + 1))
            t_buy, t_sell = (t0, t0 + gap) if rng.random() < 0.5 else (t0 + gap, t0)
            hour_ts = min(t_buy, t_sell)
            q = rng.uniform(0, cfg.planted_dq * 0.9)
            v_buy = amount(0.5, 20)
            v_sell = (v_buy * Decimal(str((200 + q) / (200 - q)))).quantize(SAT)
            if volume_gap(v_buy, v_sell) > Fraction(Decimal(str(cfg.planted_dq))):
                v_sell = v_buy
            spread = cfg.spread_intercept + cfg.spread_ability * ability + rng.normal(0, cfg.spread_noise)
            p_buy = btc_price(buy_cur, hour_ts) * rng.uniform(0.995, 1.005)
            official = usd_per(buy_cur, hour_ts) / usd_per(sell_cur, hour_ts)
            p_sell = p_buy * official * (1 + spread / 100)
            seller = int(rng.choice(noise_users[buy_cur]))
            buyer = int(rng.choice(noise_users[sell_cur]))
            tid_b = add_trade(t_buy, user, seller, buy_cur, v_buy, p_buy)
            tid_s = add_trade(t_sell, buyer, user, sell_cur, v_sell, p_sell)
            key = (user, tid_b, tid_s)
            truth.planted.append(key)
            truth.planted_spread[key] = float(spread)

    # File order: by time, then trade id, keeping each trade's rows together.
    order = sorted(range(len(rows)), key=lambda i: (rows[i].ts, rows[i].trade_id, i))
    rows = [rows[i] for i in order]

    legs = _attach_fees(rows, cfg, rng)
    n_dup = int(round(cfg.duplicate_rate * len({leg.trade_id for leg in legs})))
    by_trade: dict[str, list[int]] = defaultdict(list)
    for i, leg in enumerate(legs):
        by_trade[leg.trade_id].append(i)
    trade_ids = sorted(by_trade)
    copies = sorted(rng.choice(len(trade_ids), n_dup, replace=False).tolist()) if n_dup else []
    out = list(legs)
    for k in copies:
        for i in by_trade[trade_ids[k]]:
            truth.duplicate_rows.append(len(out))
            out.append(legs[i])
    out = [_with_row(leg, i + 2) for i, leg in enumerate(out)]
    truth.planted.sort()
    return out, truth


def _with_row(leg: Leg, row: int) -> Leg:
    from dataclasses import replace

    return replace(leg, row=row)


def _attach_fees(rows: Sequence[_Row], cfg: SynthConfig, rng: np.random.Generator) -> list[Leg]:
    """Schedule fees from each user's trailing 720h volume; buyers pay in BTC, sellers in fiat."""
    history: dict[int, list[tuple[int, Decimal]]] = defaultdict(list)
    legs = []
    for r in rows:
        past = history[r.user]
        volume = sum((b for t, b in past if r.ts - WINDOW_SECONDS < t < r.ts), Decimal(0))
        if len(past) > 64:
            history[r.user] = past = [(t, b) for t, b in past if t > r.ts - WINDOW_SECONDS]
        past.append((r.ts, r.bitcoins))
        pct = _fee_pct(cfg.fee_schedule, volume) / 100
        if r.user < 0 or rng.random() < cfg.zero_fee_share:
            pct = Decimal(0)
        btc_fee = (r.bitcoins * pct).quantize(SAT) if r.side is Side.BUY else Decimal(0)
        money_fee = (r.money * pct).quantize(CENT) if r.side is Side.SELL else Decimal(0)
        rate = JPY_PER_UNIT[r.currency]
        legs.append(
            Leg(
                trade_id=r.trade_id,
                ts=r.ts,
                user_id=r.user,
                side=r.side,
                currency=r.currency,
                bitcoins=r.bitcoins,
                money=r.money,
                money_jpy=(r.money * rate).quantize(CENT),
                money_fee=money_fee,
                bitcoin_fee=btc_fee,
                money_rate=rate,
                money_fee_rate=rate,
                japan_flag=JapanFlag.JP if r.user % 2 else JapanFlag.NJP,
                mc_kind=r.mc_kind,
                money_fee_jpy=(money_fee * rate).quantize(CENT),
                bitcoin_fee_jpy=Decimal(0),
            )
        )
    return legs


def gen_public(legs: Sequence[Leg], seed: int = 0, market_share: float = 0.4) -> list[PublicTradeRecord]:
    """One public record per (trade, currency) with random order kind and initiator."""
    rng = rng_for(seed + 2)
    # Intermediary rows carry the true fiat amount of multi-currency trades.
    true_price = {
        (leg.trade_id, leg.currency): leg.money / leg.bitcoins
        for leg in legs
        if leg.user_id < 0 and leg.bitcoins > 0
    }
    seen: set[tuple[str, str]] = set()
    out = []
    for leg in legs:
        key = (leg.trade_id, leg.currency)
        if key in seen or leg.user_id < 0:
            continue
        seen.add(key)
        market = rng.random() < market_share
        mixed = leg.mc_kind is not McKind.STANDARD
        kind = {
            (False, False): OrderKind.LIMIT, (True, False): OrderKind.MARKET,
            (False, True): OrderKind.LIMIT_MIXED, (True, True): OrderKind.MARKET_MIXED,
        }[(market, mixed)]
        initiator = Initiator.BID if rng.random() < 0.5 else Initiator.ASK
        price = true_price.get(key) or (leg.money / leg.bitcoins if leg.bitcoins else Decimal(1))
        out.append(PublicTradeRecord(leg.trade_id, leg.currency, leg.bitcoins, price, kind, initiator, leg.ts))
    return out


def brute_force_match(legs: Sequence[Leg], cfg: MatchConfig) -> list[ArbitrageAction]:
    """Reference matcher: full pairwise candidate matrix per user, then greedy resolution."""
    limit = Fraction(cfg.delta_q_max)
    by_user: dict[int, list[Leg]] = defaultdict(list)
    for leg in legs:
        if leg.user_id >= 0:
            by_user[leg.user_id].append(leg)
    out = []
    for user in sorted(by_user):
        ls = by_user[user]
        if len({leg.currency for leg in ls}) < 2:
            continue
        ls.sort(key=lambda g: (g.ts, g.trade_id, g.side.value, g.currency, g.row))
        n = len(ls)
        ts = np.array([g.ts for g in ls], dtype=np.int64)
        is_buy = np.array([g.is_buy for g in ls])
        _, cur = np.unique([g.currency for g in ls], return_inverse=True)
        exponent = max(-g.bitcoins.as_tuple().exponent for g in ls)
        ints = [int(g.bitcoins.scaleb(exponent)) for g in ls]
        vol = np.array(ints, dtype=object)
        overlap = np.zeros((n, n), dtype=bool)
        members = [set(g.trade_id.split("|")) for g in ls]
        for i in range(n):
            for j in range(i + 1, n):
                if not members[i].isdisjoint(members[j]):
                    overlap[i, j] = overlap[j, i] = True
        dt = np.abs(ts[:, None] - ts[None, :])
        diff = np.abs(vol[:, None] - vol[None, :])
        total = vol[:, None] + vol[None, :]
        vol_ok = (diff * 200 * limit.denominator <= total * limit.numerator).astype(bool)
        ok = (
            is_buy[:, None] & ~is_buy[None, :] & (cur[:, None] != cur[None, :])
            & ~overlap & (dt <= cfg.delta_t_max) & vol_ok
        )
        pairs = ok | ok.T
        taken = np.zeros(n, dtype=bool)
        for i in range(n):
            if taken[i]:
                continue
            options = [j for j in np.flatnonzero(pairs[i]).tolist() if not taken[j]]
            if not options:
                continue
            j = min(
                options,
                key=lambda j: (int(dt[i, j]), Fraction(int(diff[i, j]), int(total[i, j])), ls[j].trade_id, j),
            )
            taken[i] = taken[j] = True
            b, s = (i, j) if is_buy[i] else (j, i)
            out.append(
                ArbitrageAction(ls[b], ls[s], int(dt[i, j]), float(volume_gap(ls[b].bitcoins, ls[s].bitcoins)))
            )
    return out


def fig3_legs() -> list[Leg]:
    """Ten legs of one user laid out as in the classic three-cluster illustration.

    Time units become 100 seconds and quantities become bitcoins; each leg is
    in its own trade.
    """
    layout = [
        (1.8, "5", Side.BUY, "USD"), (3.0, "1.1", Side.SELL, "EUR"), (2.2, "4.2", Side.BUY, "EUR"),
        (5.7, "2.5", Side.SELL, "USD"), (6.5, "3.5", Side.BUY, "GBP"), (6.9, "4.6", Side.BUY, "USD"),
        (8.8, "2.5", Side.BUY, "EUR"), (11.6, "4", Side.BUY, "USD"), (12.1, "1.3", Side.BUY, "GBP"),
        (13.0, "2", Side.SELL, "GBP"),
    ]
    base = _utc(2012, 6, 1)
    legs = []
    for k, (t, q, side, cur) in enumerate(layout):
        btc = Decimal(q)
        legs.append(
            Leg(
                trade_id=f"f3-{k:02d}", ts=base + int(round(t * 100)), user_id=7, side=side,
                currency=cur, bitcoins=btc, money=btc * 10, row=k + 2,
            )
        )
    return legs


@dataclass(frozen=True)
class RegressionConfig:
    seed: int = 0
    equation: int = 1
    n_users: int = 120
    actions_per_user: tuple[int, int] = (5, 40)
    n_dyads: int = 5
    n_hours: int = 400
    multi_share: float = 0.3
    beta_proxy: float = 1.3
    beta_usd: float = 0.2
    beta_dr: float = 0.5
    beta_interaction: float = 0.5
    intercept: float = 0.3
    hour_sd: float = 0.5
    dyad_sd: float = 0.5
    user_sd: float = 0.5
    slope_sd: float = 0.3
    noise_sd: float = 1.0


def gen_regression_data(cfg: RegressionConfig) -> tuple[list[RegressionRow], dict[str, float]]:
    """Rows with user/dyad/hour labels and user-correlated errors.

    Equation 1: spread = c + b*proxy + g*usd + hour + dyad + u_user + e.
    Equation 2: spread = b*proxy*dR + d*dR + g*usd + hour + dyad + user + v_user*dR + e,
    where the user effect also carries the proxy's main effect.
    """
    rng = rng_for(cfg.seed)
    hour_fe = rng.normal(0, cfg.hour_sd, cfg.n_hours)
    dyad_fe = rng.normal(0, cfg.dyad_sd, cfg.n_dyads)
    delta_r = np.abs(rng.normal(0, 0.1, (cfg.n_dyads, cfg.n_hours)))
    rows = []
    for user in range(1, cfg.n_users + 1):
        proxy = float(rng.random() < cfg.multi_share)
        user_fe = rng.normal(0, cfg.user_sd)
        slope = rng.normal(0, cfg.slope_sd)
        count = int(rng.integers(cfg.actions_per_user[0], cfg.actions_per_user[1] + 1))
        for _ in range(count):
            h = int(rng.integers(0, cfg.n_hours))
            d = int(rng.integers(0, cfg.n_dyads))
            usd = float(rng.lognormal(0, 1)) / 100
            dr = float(delta_r[d, h])
            if cfg.equation == 1:
                y = cfg.intercept + cfg.beta_proxy * proxy + cfg.beta_usd * usd + user_fe
            else:
                y = (
                    cfg.beta_interaction * proxy * dr + cfg.beta_dr * dr + cfg.beta_usd * usd
                    + user_fe + cfg.beta_proxy * proxy + slope * dr * 10
                )
            y += hour_fe[h] + dyad_fe[d] + rng.normal(0, cfg.noise_sd)
            rows.append(RegressionRow(float(y), proxy, dr, usd, user, f"D{d}", h * 3600))
    truth = {"proxy": cfg.beta_proxy, "usd": cfg.beta_usd}
    if cfg.equation == 2:
        truth = {"interaction": cfg.beta_interaction, "delta_r": cfg.beta_dr, "usd": cfg.beta_usd}
    return rows, truth


@dataclass(frozen=True)
class FeeDataConfig:
    seed: int = 0
    n_users: int = 200
    trades_per_user: int = 100
    sigma: float = 1e-4
    start: date = date(2011, 4, 1)
    end: date = date(2013, 3, 31)


FEE_SPEC5_TRUTH = {
    "intercept": 0.561, "log_vol": -0.001, "vol_small": 0.152, "vol_big": -0.212,
    "vol_x_small": -0.037, "vol_x_big": -0.006, "t0": 0.158, "t1": -0.170, "t_holid": -0.191,
}


def _trailing_volumes(times: np.ndarray, btc: np.ndarray) -> np.ndarray:
    """Volume in (t - 720h, t) for each entry of one user's sorted history."""
    cum = np.concatenate([[0.0], np.cumsum(btc)])
    hi = np.searchsorted(times, times, side="left")
    lo = np.searchsorted(times, times - WINDOW_SECONDS, side="right")
    return cum[hi] - cum[np.minimum(lo, hi)]


def gen_fee_legs(
    cfg: FeeDataConfig = FeeDataConfig(), coefficients: dict[str, float] | None = None
) -> tuple[list[Leg], dict[str, float]]:
    """Legs whose fee percentage follows the full fee-model design plus Gaussian noise."""
    coefficients = dict(coefficients or FEE_SPEC5_TRUTH)
    rng = rng_for(cfg.seed)
    t_lo, t_hi = _utc(cfg.start.year, cfg.start.month, cfg.start.day), _utc(cfg.end.year, cfg.end.month, cfg.end.day)
    legs = []
    for user in range(1, cfg.n_users + 1):
        scale = math.exp(rng.uniform(math.log(0.05), math.log(3000)))
        times = np.sort(rng.choice(np.arange(t_lo, t_hi, 60), cfg.trades_per_user, replace=False))
        btc = np.round(scale * rng.lognormal(0, 0.5, cfg.trades_per_user), 6) + 0.01
        volumes = _trailing_volumes(times, btc)
        for t, b, v in zip(times.tolist(), btc.tolist(), volumes.tolist()):
            feats = fee_features(v, day_of(int(t)))
            pct = sum(c * getattr(feats, n) for n, c in coefficients.items()) + rng.normal(0, cfg.sigma)
            bitcoins = Decimal(repr(b))
            side = Side.BUY if rng.random() < 0.5 else Side.SELL
            money = (bitcoins * Decimal(10)).quantize(CENT)
            fee_share = Decimal(repr(pct)) / 100
            legs.append(
                Leg(
                    trade_id=f"{t:010d}{user:06d}", ts=int(t), user_id=user, side=side, currency="USD",
                    bitcoins=bitcoins, money=money,
                    bitcoin_fee=bitcoins * fee_share if side is Side.BUY else Decimal(0),
                    money_fee=money * fee_share if side is Side.SELL else Decimal(0),
                )
            )
    return legs, coefficients


LOGIT_TRUTH = {
    "intercept": 3.0, "log_vol": -0.3, "bitcoins": 0.02, "date": 0.001, "anomalous_days": -3.0,
    "early_adopters": -1.0, "anomalous_users": -4.0, "matchers": 0.8, "markus": -1.4, "willy": -0.7,
}


def gen_zero_fee_legs(
    n_legs: int = 50_000, seed: int = 0, coefficients: dict[str, float] | None = None
) -> tuple[list[Leg], dict[str, float], frozenset[int]]:
    """Trades whose legs pay a fee with logistic probability in the zero-fee design.

    Returns legs, the true coefficients and the anomalous-user ids.
    """
    beta = dict(coefficients or LOGIT_TRUTH)
    rng = rng_for(seed)
    regular = np.concatenate([np.arange(1, 400) * 37, np.arange(16_001, 16_400)])
    anomalous = frozenset({901, 17_777})
    special = np.array([634, 1_000_000] + sorted(anomalous))
    population = np.concatenate([regular, special])
    weights = np.concatenate([np.ones(len(regular)), np.full(len(special), 40.0)])
    weights /= weights.sum()
    t_lo, t_hi = _utc(2011, 4, 1), _utc(2013, 12, 31)
    anomalous_starts = [_utc(d.year, d.month, d.day) for d in sorted(ANOMALOUS_DAYS)]
    n_trades = n_legs // 2
    raw = []
    for k in range(n_trades):
        if rng.random() < 0.05:
            ts = int(anomalous_starts[int(rng.integers(0, len(anomalous_starts)))] + rng.integers(0, 86_400))
        else:
            ts = int(rng.integers(t_lo, t_hi))
        buyer, seller = (int(u) for u in rng.choice(population, 2, replace=False, p=weights))
        btc = float(np.round(rng.lognormal(0, 1.2), 6)) + 0.01
        raw.append((ts, k, buyer, seller, btc))
    raw.sort()
    times_by_user: dict[int, list[tuple[int, float]]] = defaultdict(list)
    for ts, _, buyer, seller, btc in raw:
        times_by_user[buyer].append((ts, btc))
        times_by_user[seller].append((ts, btc))
    volume_at: dict[tuple[int, int], float] = {}
    for user, hist in times_by_user.items():
        times = np.array([t for t, _ in hist], dtype=np.int64)
        vols = _trailing_volumes(times, np.array([b for _, b in hist]))
        for t, v in zip(times.tolist(), vols.tolist()):
            volume_at.setdefault((user, t), v)
    legs = []
    origin = date(2011, 4, 1)
    for ts, k, buyer, seller, btc in raw:
        tid = f"{ts:010d}{k % 1_000_000:06d}"
        day = day_of(ts)
        for side, user, other in ((Side.BUY, buyer, seller), (Side.SELL, seller, buyer)):
            x = {
                "intercept": 1.0,
                "log_vol": math.log(max(volume_at[(user, ts)], 1.0)),
                "bitcoins": btc,
                "date": float((day - origin).days),
                "anomalous_days": float(day in ANOMALOUS_DAYS),
                "early_adopters": float(user <= 16_000),
                "anomalous_users": float(user in anomalous),
                "matchers": float(other in anomalous),
                "markus": float(user == 634),
                "willy": float(user == 1_000_000),
            }
            eta = sum(beta[n] * x[n] for n in beta)
            pays = rng.random() < 1.0 / (1.0 + math.exp(-eta))
            bitcoins = Decimal(repr(btc))
            money = (bitcoins * 10).quantize(CENT)
            fee = Decimal("0.006") if pays else Decimal(0)
            legs.append(
                Leg(
                    trade_id=tid, ts=ts, user_id=user, side=side, currency="USD",
                    bitcoins=bitcoins, money=money,
                    bitcoin_fee=(bitcoins * fee) if side is Side.BUY else Decimal(0),
                    money_fee=(money * fee) if side is Side.SELL else Decimal(0),
                )
            )
    return legs, beta, anomalous
