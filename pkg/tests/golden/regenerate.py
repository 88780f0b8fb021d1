"""Rewrite the frozen synthetic fixtures. Run only when generator output is meant to change.

    python3 tests/golden/regenerate.py
"""

from __future__ import annotations

import csv
import io
from decimal import Decimal
from pathlib import Path

from arbmine.ingest_clean import DedupMethod, aggregate_same_second, dedup
from arbmine.ledger_model import legs_to_rows
from arbmine.matcher import MatchConfig
from arbmine.synth import SynthConfig, _utc, brute_force_match, gen_ledger, gen_rates, rng_for

HERE = Path(__file__).parent
GOLDEN_CONFIG = SynthConfig(
    seed=7, n_noise_trades=150, n_planted=6, n_planted_users=3, n_noise_users=12,
    start=_utc(2012, 1, 1), end=_utc(2012, 1, 15),
)


def _csv(rows) -> str:
    buffer = io.StringIO()
    csv.writer(buffer, lineterminator="\n").writerows(rows)
    return buffer.getvalue()


def golden_texts() -> dict[str, str]:
    legs, truth = gen_ledger(GOLDEN_CONFIG)
    bars = gen_rates(GOLDEN_CONFIG)
    clean, _ = dedup(legs, DedupMethod.AGGRESSIVE)
    actions = brute_force_match(aggregate_same_second(clean), MatchConfig(300, Decimal(10)))
    draws = rng_for(0).random(8)
    return {
        "pcg64_seed0.txt": "\n".join(repr(float(x)) for x in draws) + "\n",
        "ledger_seed7.csv": _csv(legs_to_rows(legs)),
        "rates_seed7.csv": _csv([["base", "quote", "hour", "open"]] + [[*b.dyad, b.hour, str(b.open)] for b in bars[:48]]),
        "planted_seed7.csv": _csv([["user_id", "buy_trade", "sell_trade"]] + [list(p) for p in truth.planted]),
        "duplicates_seed7.txt": "\n".join(map(str, truth.duplicate_rows)) + "\n",
        "brute_matches_seed7.csv": _csv(
            [["user_id", "buy_trade", "sell_trade", "delta_t", "delta_q"]]
            + [[a.user_id, a.buy_leg.trade_id, a.sell_leg.trade_id, a.delta_t, repr(a.delta_q)] for a in actions]
        ),
    }


if __name__ == "__main__":
    for name, text in golden_texts().items():
        (HERE / name).write_text(text, encoding="utf-8")
        print(f"wrote {name}")
