from __future__ import annotations

from datetime import datetime, timezone
from decimal import Decimal

from arbmine.ledger_model import Leg, Side, to_epoch

BASE_TS = to_epoch(datetime(2012, 6, 1, tzinfo=timezone.utc))


def leg(
    trade_id: str,
    user: int,
    side: str,
    currency: str = "USD",
    btc: str | Decimal = "1",
    money: str | Decimal = "10",
    ts: int = BASE_TS,
    **extra,
) -> Leg:
    return Leg(
        trade_id=trade_id,
        ts=ts,
        user_id=user,
        side=Side(side),
        currency=currency,
        bitcoins=Decimal(str(btc)),
        money=Decimal(str(money)),
        **extra,
    )


def appendix_rows() -> list[Leg]:
    """The ten-row dedup illustration: user 388 sells 10 BTC five times in one minute."""
    ts = to_epoch(datetime(2011, 4, 4, 14, 23, tzinfo=timezone.utc))
    data = [
        (930, "35837", 2824, "buy", "586.89"), (931, "35837", 388, "sell", "586.89"),
        (932, "35838", 3111, "buy", "578.42"), (933, "35838", 388, "sell", "578.42"),
        (934, "35839", 2824, "buy", "570.20"), (935, "35839", 388, "sell", "570.20"),
        (936, "35840", 3111, "buy", "570.00"), (937, "35840", 388, "sell", "570.00"),
        (938, "35841", 1000, "buy", "570.00"), (939, "35841", 388, "sell", "570.00"),
    ]
    return [
        leg(tid, user, side, "USD", "10.0", "7.3", ts=ts, money_jpy=Decimal(jpy), row=row)
        for row, tid, user, side, jpy in data
    ]


def random_instance(seed: int, max_legs: int = 500):
    """Seeded ledger with coarse times and sizes so ties and window edges are frequent."""
    from arbmine.ledger_model import Side
    from arbmine.matcher import MatchConfig
    from arbmine.synth import rng_for

    r = rng_for(10_000 + seed)
    n = int(r.integers(0, max_legs + 1))
    n_users = int(r.integers(1, 8))
    legs = []
    for i in range(n):
        legs.append(
            Leg(
                trade_id=f"{int(r.integers(0, n // 2 + 1)):06d}",
                ts=BASE_TS + int(r.integers(0, 3_000)),
                user_id=int(r.integers(-1, n_users)),
                side=Side.BUY if r.random() < 0.5 else Side.SELL,
                currency=("USD", "EUR", "GBP")[int(r.integers(0, 3))],
                bitcoins=Decimal(int(r.integers(1, 80))) / 10,
                money=Decimal(1),
                row=i + 2,
            )
        )
    cfg = MatchConfig(int(r.choice([0, 30, 300])), Decimal(str(r.choice([0, 1, 10, 45]))))
    return legs, cfg
