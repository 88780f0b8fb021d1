"""Command-line pipeline: each stage reads the previous stage's CSV and writes its own.

Exit codes: 0 success, 1 usage, 2 input format, 3 numerical failure. Failures
also print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import re
import sys
import tempfile
from collections import defaultdict
from dataclasses import replace
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .econometrics import (
    DEFAULT_THRESHOLDS,
    PROXIES,
    RegressionResult,
    RegressionRow,
    RegressionSpec,
    fit_rows,
    results_table,
    robustness_suite,
)
from .fee_model import (
    FittedModel,
    NonConvergence,
    RankDeficientDesign,
    Separation,
    VolumeIndex,
    ZeroFeeConfig,
    expected_fee_function,
    fit_fee_ols,
    fit_zero_fee_logit,
)
from .ingest_clean import (
    CleanConfig,
    DedupMethod,
    SanityOptions,
    aggregate_same_second,
    clean_pipeline,
    compare_daily_volumes,
)
from .ledger_model import (
    EXTENDED_COLUMNS,
    LEG_COLUMNS,
    FormatFamily,
    Leg,
    LedgerError,
    family_for_month,
    format_leaked_file,
    format_public_file,
    format_rate_file,
    format_ts,
    legs_from_rows,
    legs_to_rows,
    parse_leaked_file,
    parse_public_file,
    parse_rate_file,
    parse_ts,
    day_of,
)
from .matcher import ArbitrageAction, MatchConfig, match_ledger
from .pricing import FeeRegime, RateTable, price_actions
from .profiles import (
    DegenerateCovariance,
    Metaorder,
    UserProfile,
    action_btc,
    build_profiles,
    detect_metaorders,
    learning_filter,
    pca_scores,
)
from .synth import SynthConfig, gen_ledger, gen_public, gen_rates

SCHEMA_VERSION = 1
OUTPUT_ENV = "ARBMINE_OUTPUT_DIR"


class UsageError(Exception):
    pass


class InputFormatError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        raise UsageError(message)


# ---------------------------------------------------------------- file helpers


def write_atomic(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def stage_csv(stage: str, rows: Iterable[Sequence[object]]) -> str:
    buffer = io.StringIO()
    buffer.write(f"# arbmine {stage} schema={SCHEMA_VERSION}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()


def read_stage(path: Path) -> list[list[str]]:
    if not path.exists():
        raise FileNotFoundError(f"missing stage input {path}")
    text = path.read_text(encoding="utf-8")
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.reader(lines))


def read_legs(path: Path) -> list[Leg]:
    return legs_from_rows(read_stage(path))


def write_legs(path: Path, stage: str, legs: Iterable[Leg]) -> None:
    write_atomic(path, stage_csv(stage, legs_to_rows(legs)))


def _num(value: float | None, digits: int = 10) -> str:
    if value is None:
        return ""
    return repr(round(float(value), digits))


# ---------------------------------------------------------------- actions file

ACTION_EXTRA = ("delta_t", "delta_q")


def write_actions(path: Path, actions: Sequence[ArbitrageAction]) -> None:
    leg_rows = lambda leg: next(iter(list(legs_to_rows([leg]))[1:]))  # noqa: E731
    header = [f"buy_{c}" for c in LEG_COLUMNS] + [f"sell_{c}" for c in LEG_COLUMNS] + list(ACTION_EXTRA)
    rows: list[list[object]] = [header]
    for a in actions:
        rows.append(leg_rows(a.buy_leg) + leg_rows(a.sell_leg) + [a.delta_t, _num(a.delta_q)])
    write_atomic(path, stage_csv("actions", rows))


def read_actions(path: Path) -> list[ArbitrageAction]:
    table = read_stage(path)
    if not table:
        raise InputFormatError(f"{path} is empty")
    n = len(LEG_COLUMNS)
    header, body = table[0], table[1:]
    if len(header) != 2 * n + len(ACTION_EXTRA):
        raise InputFormatError(f"{path}: unexpected action columns")
    buys = legs_from_rows([list(LEG_COLUMNS)] + [r[:n] for r in body])
    sells = legs_from_rows([list(LEG_COLUMNS)] + [r[n : 2 * n] for r in body])
    return [
        ArbitrageAction(b, s, int(r[2 * n]), float(r[2 * n + 1]))
        for b, s, r in zip(buys, sells, body)
    ]


# ---------------------------------------------------------------- config

DEFAULTS = {
    "method": "TradeId",
    "cutoff": "2013-04-01 00:00:00",
    "dt": "300",
    "dq": "10",
    "regime": "Actual",
    "meta_min_length": "5",
    "meta_max_gap": "60",
    "learning_max_days": "14",
    "seed": "0",
    "willy_ids": "",
    "anomalous_ids": "",
    "markus_ids": "634",
    "include_thk_primaries": "0",
    "printed_signs": "0",
}


def read_config(path: str | None) -> dict[str, str]:
    values = dict(DEFAULTS)
    if not path:
        return values
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in DEFAULTS:
            raise UsageError(f"config line {number}: unknown or malformed entry {line!r}")
        values[key] = value.strip()
    return values


def _ids(text: str) -> frozenset[int]:
    try:
        return frozenset(int(t) for t in re.split(r"[,\s]+", text.strip()) if t)
    except ValueError:
        raise UsageError(f"bad id list {text!r}") from None


def _decimal_arg(text: str) -> Decimal:
    try:
        value = Decimal(text)
    except InvalidOperation:
        raise UsageError(f"not a number: {text!r}") from None
    if not value.is_finite() or value < 0:
        raise UsageError(f"threshold must be non-negative: {text!r}")
    return value


class Settings:
    """Config file values overridden by command-line flags."""

    def __init__(self, args: argparse.Namespace):
        values = read_config(getattr(args, "config", None))
        for key in DEFAULTS:
            flag = getattr(args, key, None)
            if flag is not None:
                values[key] = str(flag)
        self.values = values
        out = args.out or os.environ.get(OUTPUT_ENV) or "."
        self.out = Path(out)

    def __getitem__(self, key: str) -> str:
        return self.values[key]

    def integer(self, key: str) -> int:
        try:
            value = int(self.values[key])
        except ValueError:
            raise UsageError(f"{key} must be an integer") from None
        if value < 0:
            raise UsageError(f"{key} must be non-negative")
        return value

    def flag(self, key: str) -> bool:
        return self.values[key].lower() in ("1", "true", "yes")

    @property
    def match_config(self) -> MatchConfig:
        return MatchConfig(self.integer("dt"), _decimal_arg(self["dq"]))

    @property
    def regime(self) -> FeeRegime:
        try:
            return FeeRegime(self["regime"])
        except ValueError:
            raise UsageError(f"unknown fee regime {self['regime']!r}") from None

    @property
    def zero_fee_config(self) -> ZeroFeeConfig:
        return ZeroFeeConfig(
            anomalous_users=_ids(self["anomalous_ids"]),
            markus_ids=_ids(self["markus_ids"]),
            willy_ids=_ids(self["willy_ids"]) or frozenset({1_000_000}),
        )


# ---------------------------------------------------------------- commands

MONTH_IN_NAME = re.compile(r"(20\d\d)[-_]?(\d\d)")


def _family_for(path: Path, header: list[str], forced: str | None) -> FormatFamily:
    if forced:
        try:
            return FormatFamily(forced)
        except ValueError:
            raise UsageError(f"unknown format family {forced!r}") from None
    m = MONTH_IN_NAME.search(path.name)
    if m:
        return family_for_month(int(m.group(1)), int(m.group(2)))
    return FormatFamily.NOV12_TO_NOV13 if set(EXTENDED_COLUMNS) <= set(header) else FormatFamily.MAY11_TO_OCT12


def cmd_ingest(args: argparse.Namespace, s: Settings) -> int:
    legs: list[Leg] = []
    errors = [["file", "row", "kind", "detail"]]
    for name in args.leaked:
        path = Path(name)
        data = path.read_bytes()
        header = data.split(b"\n", 1)[0].decode("utf-8-sig").strip().split(",")
        family = _family_for(path, header, args.family)
        parsed, problems = parse_leaked_file(data, family)
        legs.extend(parsed)
        errors.extend([path.name, e.row, e.kind, e.detail] for e in problems)
    write_legs(s.out / "legs_raw.csv", "legs_raw", legs)
    write_atomic(s.out / "ingest_errors.csv", stage_csv("ingest_errors", errors))
    if args.public:
        public = parse_public_file(Path(args.public).read_bytes())
        write_atomic(s.out / "public.csv", format_public_file(public))
    print(f"ingested {len(legs)} legs, {len(errors) - 1} row errors")
    return 0


def _load_public(s: Settings):
    path = s.out / "public.csv"
    return parse_public_file(path.read_bytes()) if path.exists() else []


def cmd_dedup(args: argparse.Namespace, s: Settings) -> int:
    try:
        method = DedupMethod(s["method"])
    except ValueError:
        raise UsageError(f"unknown dedup method {s['method']!r}") from None
    legs = read_legs(s.out / "legs_raw.csv")
    sanity = SanityOptions(
        include_thk_primaries=s.flag("include_thk_primaries"), willy_ids=_ids(s["willy_ids"])
    )
    cfg = CleanConfig(method, parse_ts(s["cutoff"]), sanity)
    full, restricted, report, mapping = clean_pipeline(legs, _load_public(s), cfg)
    write_legs(s.out / "legs_full.csv", "legs_full", full)
    write_legs(s.out / "legs_clean.csv", "legs_clean", restricted)
    lines = report.lines() + [f"restricted_rows={len(restricted)}", f"method={method.value}"]
    write_atomic(s.out / "clean_report.txt", "\n".join(lines) + "\n")
    mapping_rows = [["original_id", "anonymous_id"]] + [[k, v] for k, v in sorted(mapping.items())]
    write_atomic(s.out / "user_mapping.csv", stage_csv("user_mapping", mapping_rows))
    print(f"kept {len(full)} legs, {len(restricted)} in the analysis window")
    return 0


def cmd_match(args: argparse.Namespace, s: Settings) -> int:
    cfg = s.match_config
    legs = aggregate_same_second(read_legs(s.out / "legs_clean.csv"))
    actions = match_ledger(legs, cfg)
    write_actions(s.out / "actions.csv", actions)
    print(f"{len(actions)} arbitrage actions")
    return 0


RATE_NAME = re.compile(r"([A-Z]{3})[_/-]?([A-Z]{3})")


def load_rates(directory: Path) -> RateTable:
    if not directory.is_dir():
        raise FileNotFoundError(f"rate directory {directory} not found")
    table = RateTable()
    for path in sorted(directory.iterdir()):
        m = RATE_NAME.match(path.name)
        if not m or path.suffix.lower() not in (".csv", ".txt"):
            continue
        for bar in parse_rate_file(path.read_bytes(), (m.group(1), m.group(2))):
            table.add(bar)
    return table


def _expected_fees(s: Settings) -> Callable[[Leg], object] | None:
    model_path = s.out / "fee_ols.txt"
    legs_path = s.out / "legs_full.csv"
    if not model_path.exists() or not legs_path.exists():
        return None
    model = FittedModel.from_text(model_path.read_text(encoding="utf-8"))
    return expected_fee_function(model, VolumeIndex(read_legs(legs_path)))


PRICED_COLUMNS = (
    "user_id", "buy_trade_id", "sell_trade_id", "buy_currency", "sell_currency", "dyad", "ts",
    "execution_hour", "delta_t", "delta_q", "bitcoins", "usd_equiv", "off_er",
    "imp_er_none", "imp_er_actual", "imp_er_expected",
    "spread_none", "spread_actual", "spread_expected", "delta_r", "aggressive", "excluded_missing_rate",
)


def cmd_price(args: argparse.Namespace, s: Settings) -> int:
    actions = read_actions(s.out / "actions.csv")
    rates = load_rates(Path(args.rates))
    priced = price_actions(actions, rates, _expected_fees(s), s.flag("printed_signs"))
    rows: list[list[object]] = [list(PRICED_COLUMNS)]
    for p in priced:
        a = p.action
        rows.append([
            a.user_id, a.buy_leg.trade_id, a.sell_leg.trade_id, a.buy_leg.currency, a.sell_leg.currency,
            "/".join(a.dyad), format_ts(a.ts), format_ts(a.execution_hour), a.delta_t, _num(a.delta_q),
            _num(action_btc(a)), _num(p.usd_equiv), _num(p.off_er),
            *(_num(p.imp_er.get(r)) for r in FeeRegime),
            *(_num(p.spread.get(r)) for r in FeeRegime),
            _num(p.delta_r_pct), int(a.aggressive), int(p.excluded_missing_rate),
        ])
    write_atomic(s.out / "priced.csv", stage_csv("priced", rows))
    print(f"priced {len(priced)} actions, {sum(p.excluded_missing_rate for p in priced)} without a rate")
    return 0


def cmd_fees(args: argparse.Namespace, s: Settings) -> int:
    legs = read_legs(s.out / "legs_full.csv")
    index = VolumeIndex(legs)
    ols_model = fit_fee_ols(legs, spec=args.spec, linear=args.linear, index=index)
    write_atomic(s.out / "fee_ols.txt", ols_model.to_text())
    cfg = s.zero_fee_config
    mapping_path = s.out / "user_mapping.csv"
    if mapping_path.exists():
        mapping = {int(a): int(b) for a, b in read_stage(mapping_path)[1:]}
        remap = lambda ids: frozenset(mapping.get(i, i) for i in ids)  # noqa: E731
        cfg = replace(
            cfg,
            anomalous_users=remap(cfg.anomalous_users),
            markus_ids=remap(cfg.markus_ids),
            willy_ids=remap(cfg.willy_ids),
        )
    logit = fit_zero_fee_logit(legs, spec=args.spec, config=cfg, index=index)
    write_atomic(s.out / "fee_logit.txt", logit.to_text())
    print(f"fee OLS R2={ols_model.fit_stat:.4f}; zero-fee logit pseudo-R2={logit.fit_stat:.4f}")
    return 0


PROFILE_COLUMNS = (
    "user_id", "n_markets", "n_fiat_currencies", "d_currencies", "log_currencies", "n_actions",
    "log_actions", "d_metaorder", "d_aggressive", "days_to_new_market", "pc1_score",
)


def _usd_by_action(s: Settings, actions: Sequence[ArbitrageAction]) -> dict[int, float]:
    path = s.out / "priced.csv"
    if not path.exists():
        return {}
    table = read_stage(path)
    col = {c: i for i, c in enumerate(table[0])}
    values = {
        (int(r[col["user_id"]]), r[col["buy_trade_id"]], r[col["sell_trade_id"]]): r[col["usd_equiv"]]
        for r in table[1:]
    }
    out = {}
    for a in actions:
        v = values.get((a.user_id, a.buy_leg.trade_id, a.sell_leg.trade_id))
        if v:
            out[id(a)] = float(v)
    return out


def cmd_profile(args: argparse.Namespace, s: Settings) -> int:
    actions = read_actions(s.out / "actions.csv")
    usd = _usd_by_action(s, actions)
    metas = detect_metaorders(actions, s.integer("meta_min_length"), s.integer("meta_max_gap"), usd)
    profiles = build_profiles(actions, metas)
    pca_lines = []
    try:
        result, profiles = pca_scores(profiles)
        pca_lines = [
            "indicator,loading",
            *(f"{n},{_num(v)}" for n, v in zip(("d_currencies", "log_actions", "d_metaorder", "d_aggressive"), result.loadings.tolist())),
            f"explained,{_num(result.explained)}",
        ]
    except DegenerateCovariance as exc:
        pca_lines = [f"unavailable,{exc}"]
    rows: list[list[object]] = [list(PROFILE_COLUMNS)]
    for u in sorted(profiles):
        p = profiles[u]
        rows.append([
            p.user_id, p.n_markets, p.n_fiat_currencies, p.d_currencies, _num(p.log_currencies), p.n_actions,
            _num(p.log_actions), p.d_metaorder, p.d_aggressive,
            "" if p.days_to_new_market is None else p.days_to_new_market, _num(p.pc1_score),
        ])
    write_atomic(s.out / "profiles.csv", stage_csv("profiles", rows))
    meta_rows: list[list[object]] = [["user_id", "dyad", "direction", "start", "length", "mean_delay", "total_btc", "total_usd"]]
    for m in metas:
        meta_rows.append([
            m.user_id, "/".join(m.dyad), ">".join(m.direction), format_ts(m.actions[0].ts), m.length,
            _num(m.mean_delay), _num(m.total_btc), _num(m.total_usd),
        ])
    write_atomic(s.out / "metaorders.csv", stage_csv("metaorders", meta_rows))
    write_atomic(s.out / "pca.csv", stage_csv("pca", [line.split(",", 1) for line in pca_lines]))
    print(f"{len(profiles)} arbitrageurs, {len(metas)} metaorders")
    return 0


def _read_profiles(path: Path) -> dict[int, UserProfile]:
    table = read_stage(path)
    col = {c: i for i, c in enumerate(table[0])}
    out = {}
    for r in table[1:]:
        g = lambda k: r[col[k]]  # noqa: E731
        out[int(g("user_id"))] = UserProfile(
            user_id=int(g("user_id")), n_markets=int(g("n_markets")), n_fiat_currencies=int(g("n_fiat_currencies")),
            d_currencies=int(g("d_currencies")), log_currencies=float(g("log_currencies")),
            n_actions=int(g("n_actions")), log_actions=float(g("log_actions")),
            d_metaorder=int(g("d_metaorder")), d_aggressive=int(g("d_aggressive")),
            days_to_new_market=int(g("days_to_new_market")) if g("days_to_new_market") else None,
            pc1_score=float(g("pc1_score")) if g("pc1_score") else None,
        )
    return out


def _regression_rows(s: Settings, regime: FeeRegime, proxy: str, interaction: bool) -> list[RegressionRow]:
    table = read_stage(s.out / "priced.csv")
    profiles = _read_profiles(s.out / "profiles.csv")
    col = {c: i for i, c in enumerate(table[0])}
    rows = []
    for r in table[1:]:
        spread = r[col[f"spread_{regime.name.lower()}"]]
        usd, dr = r[col["usd_equiv"]], r[col["delta_r"]]
        if not spread or not usd or (interaction and not dr):
            continue
        user = int(r[col["user_id"]])
        value = getattr(profiles[user], proxy)
        if value is None:
            continue
        rows.append(RegressionRow(
            float(spread), float(value), float(dr) if dr else None, float(usd) / 10_000,
            user, r[col["dyad"]], parse_ts(r[col["execution_hour"]]),
        ))
    return rows


def cmd_regress(args: argparse.Namespace, s: Settings) -> int:
    regime = s.regime
    proxies = args.proxies.split(",") if args.proxies else list(PROXIES)
    for p in proxies:
        if p not in PROXIES:
            raise UsageError(f"unknown proxy {p!r}")
    columns: dict[str, RegressionResult | str] = {}
    for equation, interaction, fe in ((1, False, ("hour", "dyad")), (2, True, ("hour", "dyad", "user"))):
        for proxy in proxies:
            spec = RegressionSpec(regime, proxy, interaction, fe)
            try:
                columns[f"eq{equation}_{proxy}"] = fit_rows(_regression_rows(s, regime, proxy, interaction), spec)
            except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                columns[f"eq{equation}_{proxy}"] = f"{type(exc).__name__}: {exc}"
    write_atomic(s.out / f"regressions_{regime.value}.csv", "# arbmine regressions schema=1\n" + results_table(columns))
    print(f"{sum(isinstance(v, RegressionResult) for v in columns.values())} of {len(columns)} regressions fitted")
    return 0


def cmd_sweep(args: argparse.Namespace, s: Settings) -> int:
    if args.grid != "default":
        raise UsageError("only --grid default is supported")
    legs = aggregate_same_second(read_legs(s.out / "legs_clean.csv"))
    rates = load_rates(Path(args.rates))
    expected = _expected_fees(s)
    suite = robustness_suite(
        legs, rates, expected, DEFAULT_THRESHOLDS,
        regimes=(FeeRegime.ACTUAL, FeeRegime.NONE, FeeRegime.EXPECTED),
        proxies=("d_currencies", "log_actions", "pc1_score"),
        equations=(1, 2), max_days=s.integer("learning_max_days"),
    )
    by_file: dict[str, dict[str, RegressionResult | str]] = defaultdict(dict)
    for cell, result in suite.items():
        name = f"sweep_{cell.delta_t}s_{cell.delta_q}pct_{cell.regime.value}.csv"
        column = f"eq{cell.equation}_{cell.proxy}_{'learn' if cell.learning else 'all'}"
        by_file[name][column] = result
    for name in sorted(by_file):
        write_atomic(s.out / name, "# arbmine sweep schema=1\n" + results_table(by_file[name]))
    print(f"wrote {len(by_file)} sweep tables")
    return 0


def cmd_synth(args: argparse.Namespace, s: Settings) -> int:
    cfg = SynthConfig(
        seed=s.integer("seed"),
        n_noise_trades=args.noise_trades,
        n_planted=args.planted,
        duplicate_rate=args.duplicate_rate,
        multi_currency_share=args.multi_currency_share,
    )
    legs, truth = gen_ledger(cfg)
    by_month: dict[tuple[int, int], list[Leg]] = defaultdict(list)
    for leg in legs:
        d = day_of(leg.ts)
        by_month[(d.year, d.month)].append(leg)
    for (y, m), month_legs in sorted(by_month.items()):
        family = family_for_month(y, m)
        write_atomic(s.out / "leaked" / f"trades_{y}-{m:02d}.csv", format_leaked_file(month_legs, family))
    write_atomic(s.out / "synthetic_public.csv", format_public_file(gen_public(legs, cfg.seed)))
    bars = gen_rates(cfg)
    by_dyad: dict[tuple[str, str], list] = defaultdict(list)
    for bar in bars:
        by_dyad[bar.dyad].append(bar)
    for dyad, series in sorted(by_dyad.items()):
        write_atomic(s.out / "rates" / f"{dyad[0]}{dyad[1]}.csv", format_rate_file(series))
    truth_rows: list[list[object]] = [["user_id", "buy_trade_id", "sell_trade_id", "planted_spread"]]
    truth_rows += [[u, b, t, _num(truth.planted_spread[(u, b, t)])] for u, b, t in truth.planted]
    write_atomic(s.out / "truth_actions.csv", stage_csv("truth_actions", truth_rows))
    dup_rows: list[list[object]] = [["ledger_position"]] + [[r] for r in truth.duplicate_rows]
    write_atomic(s.out / "truth_duplicates.csv", stage_csv("truth_duplicates", dup_rows))
    print(f"synthetic ledger: {len(legs)} legs, {len(truth.planted)} planted actions")
    return 0


def _describe(values: Sequence[float], percentiles=(25, 50, 75)) -> list[str]:
    if not values:
        return ["0"] + [""] * (4 + len(percentiles))
    arr = np.asarray(values, dtype=float)
    sd = float(arr.std(ddof=1)) if len(arr) > 1 else float("nan")
    cells = [len(arr), arr.mean(), sd, arr.min(), *np.percentile(arr, percentiles), arr.max()]
    return [str(cells[0])] + [f"{float(c):.4f}" for c in cells[1:]]


def cmd_report(args: argparse.Namespace, s: Settings) -> int:
    table = read_stage(s.out / "priced.csv")
    profiles = _read_profiles(s.out / "profiles.csv")
    col = {c: i for i, c in enumerate(table[0])}
    body = table[1:]

    def column(rows, name):
        return [float(r[col[name]]) for r in rows if r[col[name]] != ""]

    single = [r for r in body if profiles[int(r[col["user_id"]])].d_currencies == 0]
    multiple = [r for r in body if profiles[int(r[col["user_id"]])].d_currencies == 1]
    header = ["panel", "variable", "N", "mean", "sd", "min", "p25", "p50", "p75", "max"]
    out: list[list[object]] = [header]
    variables = (
        ("profit_fees_pct", "spread_actual"), ("profit_expected_fees_pct", "spread_expected"),
        ("profit_no_fees_pct", "spread_none"), ("bitcoins", "bitcoins"), ("equiv_usd", "usd_equiv"),
        ("delta_t_s", "delta_t"), ("delta_q_pct", "delta_q"),
    )
    for panel, rows in (("A_all", body), ("B_single", single), ("C_multiple", multiple)):
        for label, name in variables:
            out.append([panel, label, *_describe(column(rows, name))])
    write_atomic(s.out / "report_actions.csv", stage_csv("report_actions", out))

    counts = [["group", "N", "mean", "sd", "min", "p25", "p50", "p75", "p90", "p95", "max"]]
    for group, flag in (("single", 0), ("multiple", 1)):
        values = [p.n_actions for p in profiles.values() if p.d_currencies == flag]
        counts.append([group, *_describe(values, (25, 50, 75, 90, 95))])
    write_atomic(s.out / "report_action_counts.csv", stage_csv("report_action_counts", counts))

    meta_table = read_stage(s.out / "metaorders.csv")
    mcol = {c: i for i, c in enumerate(meta_table[0])}
    meta_by_user: dict[int, list[list[str]]] = defaultdict(list)
    for r in meta_table[1:]:
        meta_by_user[int(r[mcol["user_id"]])].append(r)
    metas = [["user_id", "pct_actions_in_metaorders", "n_metaorders", "avg_length", "avg_delay", "avg_btc", "avg_usd"]]
    for user in sorted(meta_by_user):
        rs = meta_by_user[user]
        lengths = [int(r[mcol["length"]]) for r in rs]
        usd = [float(r[mcol["total_usd"]]) for r in rs if r[mcol["total_usd"]]]
        metas.append([
            user, f"{100 * sum(lengths) / profiles[user].n_actions:.2f}", len(rs), f"{np.mean(lengths):.2f}",
            f"{np.mean([float(r[mcol['mean_delay']]) for r in rs]):.2f}",
            f"{np.mean([float(r[mcol['total_btc']]) for r in rs]):.2f}",
            f"{np.mean(usd):.2f}" if usd else "",
        ])
    write_atomic(s.out / "report_metaorders.csv", stage_csv("report_metaorders", metas))

    aggressive = [r for r in body if r[col["aggressive"]] == "1"]
    agg = [["variable", "N", "mean", "sd", "min", "p25", "p50", "p75", "max"]]
    agg.append(["user_actions", *_describe([profiles[int(r[col["user_id"]])].n_actions for r in aggressive])])
    agg.append(["spread_pct", *_describe(column(aggressive, "spread_actual"))])
    agg.append(["d_currencies", *_describe([profiles[int(r[col["user_id"]])].d_currencies for r in aggressive])])
    write_atomic(s.out / "report_aggressive.csv", stage_csv("report_aggressive", agg))

    summary = [["variable", "N", "mean", "sd", "min", "p25", "p50", "p75", "max"]]
    for label, name in variables[:5]:
        summary.append([label, *_describe(column(body, name))])
    for proxy in ("d_currencies", "log_currencies", "log_actions", "d_metaorder", "d_aggressive", "pc1_score"):
        values = [getattr(profiles[int(r[col["user_id"]])], proxy) for r in body]
        summary.append([proxy, *_describe([v for v in values if v is not None])])
    summary.append(["delta_r_pct", *_describe(column(body, "delta_r"))])
    write_atomic(s.out / "report_summary_stats.csv", stage_csv("report_summary_stats", summary))

    if args.external_volume:
        external = {}
        for r in read_stage(Path(args.external_volume))[1:]:
            external[day_of(parse_ts(r[0] + " 00:00:00"))] = Decimal(r[1])
        rows = [["date", "leaked_usd", "external_usd", "rel_diff", "moving_avg"]]
        for v in compare_daily_volumes(read_legs(s.out / "legs_full.csv"), external):
            rows.append([v.day.isoformat(), v.leaked, v.external, _num(v.diff), _num(v.moving_average)])
        write_atomic(s.out / "report_volume_check.csv", stage_csv("report_volume_check", rows))

    panel_a = {r[1]: r for r in out[1:] if r[0] == "A_all"}
    text = [
        f"actions: {len(body)} (single-market {len(single)}, multi-market {len(multiple)})",
        f"arbitrageurs: {len(profiles)} (single {counts[1][1]}, multiple {counts[2][1]})",
        f"mean spread with fees: {panel_a['profit_fees_pct'][3]}%",
        f"mean dollar equivalent: {panel_a['equiv_usd'][3]}",
        f"aggressive actions: {len(aggressive)}",
        f"users with metaorders: {len(meta_by_user)}",
    ]
    write_atomic(s.out / "report.txt", "\n".join(text) + "\n")
    print("\n".join(text))
    return 0


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("--out", help=f"stage directory (default ${OUTPUT_ENV} or .)")

    parser = _Parser(prog="arbmine", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"arbmine {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="parse leaked-format files into the canonical leg table")
    p.add_argument("leaked", nargs="+")
    p.add_argument("--family", help="force one format family for all files")
    p.add_argument("--public", help="public trade file with order kinds and initiators")

    p = sub.add_parser("dedup", parents=[common], help="dedup, sanity filter, merge public data, anonymise")
    p.add_argument("--method", choices=[m.value for m in DedupMethod])
    p.add_argument("--cutoff", help="end of the analysis window, 'YYYY-MM-DD HH:MM:SS'")
    p.add_argument("--willy-ids", dest="willy_ids")
    p.add_argument("--include-thk-primaries", dest="include_thk_primaries", type=int, choices=(0, 1))

    p = sub.add_parser("match", parents=[common], help="detect arbitrage actions")
    p.add_argument("--dt", type=int)
    p.add_argument("--dq")

    p = sub.add_parser("price", parents=[common], help="official/implied rates, spreads and dollar values")
    p.add_argument("--rates", required=True, help="directory of hourly rate files named like EURUSD.csv")
    p.add_argument("--printed-signs", dest="printed_signs", type=int, choices=(0, 1))

    p = sub.add_parser("fees", parents=[common], help="fit the fee OLS and the zero-fee logit")
    p.add_argument("--spec", type=int, default=5, choices=range(1, 6))
    p.add_argument("--linear", action="store_true", help="use linear volume instead of its log")
    p.add_argument("--anomalous-ids", dest="anomalous_ids")
    p.add_argument("--willy-ids", dest="willy_ids")
    p.add_argument("--markus-ids", dest="markus_ids")

    p = sub.add_parser("profile", parents=[common], help="per-user indicators, metaorders and PCA")
    p.add_argument("--meta-min-length", dest="meta_min_length", type=int)
    p.add_argument("--meta-max-gap", dest="meta_max_gap", type=int)

    p = sub.add_parser("regress", parents=[common], help="spread regressions with fixed effects")
    p.add_argument("--regime", choices=[r.value for r in FeeRegime])
    p.add_argument("--proxies", help="comma-separated ability proxies")

    p = sub.add_parser("sweep", parents=[common], help="regressions over the threshold x fee-regime grid")
    p.add_argument("--grid", default="default")
    p.add_argument("--rates", required=True)
    p.add_argument("--learning-max-days", dest="learning_max_days", type=int)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic ledger, public file and rates")
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-trades", type=int, default=10_000)
    p.add_argument("--planted", type=int, default=200)
    p.add_argument("--duplicate-rate", type=float, default=0.05)
    p.add_argument("--multi-currency-share", type=float, default=0.0)

    p = sub.add_parser("report", parents=[common], help="summary tables from the stage files")
    p.add_argument("--external-volume", help="CSV of date,usd_volume for the volume cross-check")
    return parser


COMMANDS = {
    "ingest": cmd_ingest, "dedup": cmd_dedup, "match": cmd_match, "price": cmd_price, "fees": cmd_fees,
    "profile": cmd_profile, "regress": cmd_regress, "sweep": cmd_sweep, "synth": cmd_synth, "report": cmd_report,
}

NUMERICAL = (RankDeficientDesign, Separation, NonConvergence, DegenerateCovariance, ArithmeticError, np.linalg.LinAlgError)
INPUT = (LedgerError, InputFormatError, FileNotFoundError, UnicodeDecodeError, KeyError, InvalidOperation)


def _fail(code: int, exc: BaseException) -> int:
    line = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    print(json.dumps(line, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        settings = Settings(args)
        return COMMANDS[args.command](args, settings)
    except UsageError as exc:
        return _fail(1, exc)
    except NUMERICAL as exc:
        return _fail(3, exc)
    except INPUT as exc:
        return _fail(2, exc)
    except ValueError as exc:
        return _fail(2, exc)


if __name__ == "__main__":
    raise SystemExit(main())
