"""Domain types and parsers for exchange trade logs, public trade records and hourly FX rates."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from decimal import Decimal, InvalidOperation
from enum import Enum, IntEnum
from typing import Iterable, Sequence

CURRENCIES: frozenset[str] = frozenset(
    {
        "USD", "EUR", "GBP", "PLN", "AUD", "JPY", "CAD", "SEK", "CHF",
        "RUB", "CNY", "NZD", "SGD", "HKD", "DKK", "NOK", "THB",
    }
)

# Sentinel ids for non-numeric user literals found in the leaked logs.
DELETED_USER = -1
TIBANNE_USER = -2
THK_USER = -3
USER_LITERALS = {"DELETED": DELETED_USER, "TIBANNE_LIMITED_HK": TIBANNE_USER, "THK": THK_USER}
USER_SENTINELS = {v: k for k, v in USER_LITERALS.items()}
INTERMEDIARY_USERS = frozenset({TIBANNE_USER, THK_USER})

DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


class Side(str, Enum):
    BUY = "buy"
    SELL = "sell"


class JapanFlag(str, Enum):
    JP = "JP"
    NJP = "NJP"
    UNKNOWN = ""


class McKind(IntEnum):
    STANDARD = 0
    TIBANNE = 1
    THK = 2


class OrderKind(str, Enum):
    LIMIT = "limit"
    MARKET = "market"
    LIMIT_MIXED = "limit,mixed_currency"
    MARKET_MIXED = "market,mixed_currency"

    @property
    def is_market(self) -> bool:
        return self in (OrderKind.MARKET, OrderKind.MARKET_MIXED)


class Initiator(str, Enum):
    BID = "bid"
    ASK = "ask"


class FormatFamily(str, Enum):
    APRIL_2011 = "April2011"
    MAY11_TO_OCT12 = "May11ToOct12"
    NOV12_TO_NOV13 = "Nov12ToNov13"
    JULY_2012_EXCEPTION = "July2012Exception"


BASE_COLUMNS = (
    "Trade_Id", "Date", "User_Id", "Japan", "Type", "Currency", "Bitcoins", "Money",
    "Money_Rate", "Money_JPY", "Money_Fee", "Money_Fee_Rate", "Money_Fee_JPY",
    "Bitcoin_Fee", "Bitcoin_Fee_JPY",
)
EXTENDED_COLUMNS = BASE_COLUMNS + ("User", "User_Id_Hash", "User_Country", "User_State")

FAMILY_COLUMNS = {
    FormatFamily.APRIL_2011: BASE_COLUMNS,
    FormatFamily.MAY11_TO_OCT12: BASE_COLUMNS,
    FormatFamily.JULY_2012_EXCEPTION: BASE_COLUMNS,
    FormatFamily.NOV12_TO_NOV13: EXTENDED_COLUMNS,
}
# Which multi-currency intermediary a family is allowed to contain.
FAMILY_MC_KIND = {
    FormatFamily.APRIL_2011: McKind.STANDARD,
    FormatFamily.MAY11_TO_OCT12: McKind.TIBANNE,
    FormatFamily.JULY_2012_EXCEPTION: McKind.THK,
    FormatFamily.NOV12_TO_NOV13: McKind.THK,
}


class LedgerError(Exception):
    """Base class for input-format errors."""


class UnknownColumnSet(LedgerError):
    pass


class BadEnumValue(LedgerError):
    def __init__(self, literal: str, row: int | None = None):
        self.literal = literal
        self.row = row
        where = f" at row {row}" if row is not None else ""
        super().__init__(f"bad enum value {literal!r}{where}")


class DuplicateHour(LedgerError):
    pass


class NonPositiveRate(LedgerError):
    pass


@dataclass(frozen=True)
class RowError:
    row: int
    kind: str
    detail: str

    def __str__(self) -> str:
        return f"row {self.row}: {self.kind}: {self.detail}"


@dataclass(frozen=True, slots=True)
class Leg:
    trade_id: str
    ts: int  # UTC epoch seconds
    user_id: int
    side: Side
    currency: str
    bitcoins: Decimal
    money: Decimal
    money_jpy: Decimal = Decimal(0)
    money_fee: Decimal = Decimal(0)
    bitcoin_fee: Decimal = Decimal(0)
    money_rate: Decimal = Decimal(1)
    money_fee_rate: Decimal = Decimal(1)
    japan_flag: JapanFlag = JapanFlag.UNKNOWN
    user_country: str | None = None
    user_state: str | None = None
    mc_kind: McKind = McKind.STANDARD
    money_fee_jpy: Decimal = Decimal(0)
    bitcoin_fee_jpy: Decimal = Decimal(0)
    user_hex: str | None = None
    user_hash: str | None = None
    row: int = 0
    n_members: int = 1
    order_kind: OrderKind | None = None
    aggressive: bool | None = None
    flags: frozenset[str] = field(default_factory=frozenset)

    @property
    def timestamp(self) -> datetime:
        return EPOCH + timedelta(seconds=self.ts)

    @property
    def is_buy(self) -> bool:
        return self.side is Side.BUY

    def members(self) -> tuple[str, ...]:
        """Source trade ids folded into this leg (more than one after aggregation)."""
        return tuple(self.trade_id.split("|"))

    def with_flag(self, flag: str) -> "Leg":
        return replace(self, flags=self.flags | {flag})


@dataclass(frozen=True)
class Trade:
    trade_id: str
    buy_leg: Leg
    sell_leg: Leg


@dataclass(frozen=True)
class PublicTradeRecord:
    trade_id: str
    currency: str
    amount: Decimal
    price: Decimal
    order_kind: OrderKind
    initiator: Initiator
    ts: int | None = None


@dataclass(frozen=True)
class RateBar:
    dyad: tuple[str, str]
    hour: int  # epoch seconds of the hour start
    open: Decimal


def to_epoch(moment: datetime) -> int:
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return int((moment - EPOCH).total_seconds())


def format_ts(ts: int) -> str:
    return (EPOCH + timedelta(seconds=ts)).strftime(DATE_FORMAT)


def parse_ts(text: str) -> int:
    return to_epoch(datetime.strptime(text.strip(), DATE_FORMAT).replace(tzinfo=timezone.utc))


def day_of(ts: int) -> date:
    return (EPOCH + timedelta(seconds=ts)).date()


def family_for_month(year: int, month: int) -> FormatFamily:
    """Format family of the leaked file covering ``year``-``month``."""
    key = (year, month)
    if key == (2011, 4):
        return FormatFamily.APRIL_2011
    if key == (2012, 7):
        return FormatFamily.JULY_2012_EXCEPTION
    if (2011, 5) <= key <= (2012, 10):
        return FormatFamily.MAY11_TO_OCT12
    if (2012, 11) <= key <= (2013, 11):
        return FormatFamily.NOV12_TO_NOV13
    raise ValueError(f"no leaked file family covers {year:04d}-{month:02d}")


def decode_trade_id_time(trade_id: str) -> datetime | None:
    """Decode a timestamp-style trade id (10 epoch digits + 6 microsecond digits).

    Sequential ids from before the late-June 2011 switch, and anything that is
    not a 16-digit number, decode to None.
    """
    if len(trade_id) != 16 or not trade_id.isdigit():
        return None
    seconds, micros = int(trade_id[:10]), int(trade_id[10:])
    return EPOCH + timedelta(seconds=seconds, microseconds=micros)


def _decimal(text: str, name: str, positive: bool = False) -> Decimal:
    try:
        value = Decimal(text.strip())
    except InvalidOperation:
        raise ValueError(f"{name}={text!r} is not a decimal") from None
    if not value.is_finite() or value < 0 or (positive and value == 0):
        raise ValueError(f"{name}={text!r} out of range")
    return value


def _read_csv(data: bytes) -> tuple[list[str], list[tuple[int, list[str]]]]:
    text = data.decode("utf-8-sig")
    reader = csv.reader(io.StringIO(text))
    header: list[str] | None = None
    rows: list[tuple[int, list[str]]] = []
    for record in reader:
        if not record or (len(record) == 1 and not record[0].strip()):
            continue
        if header is None:
            if record[0].startswith("#"):
                continue
            header = [c.strip() for c in record]
            continue
        rows.append((reader.line_num, record))
    return header or [], rows


def _parse_leaked_row(
    values: dict[str, str], extended: bool, row: int
) -> Leg:
    raw_user = values["User_Id"].strip()
    if raw_user in USER_LITERALS:
        user_id = USER_LITERALS[raw_user]
    else:
        try:
            user_id = int(raw_user)
        except ValueError:
            raise _RowProblem("BadUserId", raw_user) from None
        if user_id < 0:
            raise _RowProblem("BadUserId", raw_user)
    try:
        ts = parse_ts(values["Date"])
    except ValueError:
        raise _RowProblem("BadDate", values["Date"]) from None
    try:
        side = Side(values["Type"].strip().lower())
    except ValueError:
        raise _RowProblem("BadEnumValue", values["Type"]) from None
    try:
        japan = JapanFlag(values["Japan"].strip())
    except ValueError:
        raise _RowProblem("BadEnumValue", values["Japan"]) from None
    currency = values["Currency"].strip()
    if currency not in CURRENCIES:
        raise _RowProblem("UnknownCurrency", currency)
    try:
        amounts = {
            name: _decimal(values[name], name, positive=name in ("Money_Rate", "Money_Fee_Rate"))
            for name in (
                "Bitcoins", "Money", "Money_Rate", "Money_JPY", "Money_Fee", "Money_Fee_Rate",
                "Money_Fee_JPY", "Bitcoin_Fee", "Bitcoin_Fee_JPY",
            )
        }
    except ValueError as exc:
        raise _RowProblem("BadDecimal", str(exc)) from None

    def optional(name: str) -> str | None:
        if not extended:
            return None
        value = values[name]
        return value if value != "" else None

    return Leg(
        trade_id=values["Trade_Id"].strip(),
        ts=ts,
        user_id=user_id,
        side=side,
        currency=currency,
        bitcoins=amounts["Bitcoins"],
        money=amounts["Money"],
        money_jpy=amounts["Money_JPY"],
        money_fee=amounts["Money_Fee"],
        bitcoin_fee=amounts["Bitcoin_Fee"],
        money_rate=amounts["Money_Rate"],
        money_fee_rate=amounts["Money_Fee_Rate"],
        japan_flag=japan,
        user_country=optional("User_Country"),
        user_state=optional("User_State"),
        money_fee_jpy=amounts["Money_Fee_JPY"],
        bitcoin_fee_jpy=amounts["Bitcoin_Fee_JPY"],
        user_hex=optional("User"),
        user_hash=optional("User_Id_Hash"),
        row=row,
        flags=frozenset({"deleted"}) if user_id == DELETED_USER else frozenset(),
    )


class _RowProblem(Exception):
    def __init__(self, kind: str, detail: str):
        super().__init__(kind, detail)
        self.kind = kind
        self.detail = detail


def parse_leaked_file(data: bytes, family: FormatFamily) -> tuple[list[Leg], list[RowError]]:
    """Parse one leaked-format CSV file.

    Returns the parsed legs and a list of per-row problems; a malformed row is
    reported and skipped, the rest of the file is still parsed. Rows are
    numbered by physical line (header is line 1).

    Raises:
        UnknownColumnSet: the header does not match the family's column set.
    """
    header, rows = _read_csv(data)
    expected = FAMILY_COLUMNS[family]
    if sorted(header) != sorted(expected):
        raise UnknownColumnSet(f"header {header} does not match {family.value} columns")
    extended = family is FormatFamily.NOV12_TO_NOV13
    legs: list[Leg] = []
    errors: list[RowError] = []
    for line, record in rows:
        if len(record) != len(header):
            errors.append(RowError(line, "BadFieldCount", f"{len(record)} fields"))
            continue
        try:
            legs.append(_parse_leaked_row(dict(zip(header, record)), extended, line))
        except _RowProblem as problem:
            errors.append(RowError(line, problem.kind, problem.detail))

    # Multi-currency kind is a property of the whole trade id group.
    kinds: dict[str, McKind] = {}
    for leg in legs:
        if leg.user_id == TIBANNE_USER:
            kinds[leg.trade_id] = McKind.TIBANNE
        elif leg.user_id == THK_USER:
            kinds[leg.trade_id] = McKind.THK
    allowed = FAMILY_MC_KIND[family]
    out = []
    for leg in legs:
        kind = kinds.get(leg.trade_id, McKind.STANDARD)
        if kind is not McKind.STANDARD and kind is not allowed and leg.user_id in INTERMEDIARY_USERS:
            errors.append(
                RowError(leg.row, "SchemeMismatch", f"{kind.name} intermediary in {family.value} file")
            )
        out.append(replace(leg, mc_kind=kind) if kind is not McKind.STANDARD else leg)
    errors.sort(key=lambda e: e.row)
    return out, errors


def _user_literal(user_id: int) -> str:
    return USER_SENTINELS.get(user_id, str(user_id))


def format_leaked_file(legs: Iterable[Leg], family: FormatFamily) -> bytes:
    """Write legs back in the family's leaked-file layout."""
    columns = FAMILY_COLUMNS[family]
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for leg in legs:
        values = {
            "Trade_Id": leg.trade_id,
            "Date": format_ts(leg.ts),
            "User_Id": _user_literal(leg.user_id),
            "Japan": leg.japan_flag.value,
            "Type": leg.side.value,
            "Currency": leg.currency,
            "Bitcoins": str(leg.bitcoins),
            "Money": str(leg.money),
            "Money_Rate": str(leg.money_rate),
            "Money_JPY": str(leg.money_jpy),
            "Money_Fee": str(leg.money_fee),
            "Money_Fee_Rate": str(leg.money_fee_rate),
            "Money_Fee_JPY": str(leg.money_fee_jpy),
            "Bitcoin_Fee": str(leg.bitcoin_fee),
            "Bitcoin_Fee_JPY": str(leg.bitcoin_fee_jpy),
            "User": leg.user_hex or "",
            "User_Id_Hash": leg.user_hash or "",
            "User_Country": leg.user_country or "",
            "User_State": leg.user_state or "",
        }
        writer.writerow([values[c] for c in columns])
    return buffer.getvalue().encode("utf-8")


PUBLIC_COLUMNS = ("trade_id", "date", "currency", "amount", "price", "order_kind", "initiator")


def parse_public_file(data: bytes) -> list[PublicTradeRecord]:
    """Parse the public trade file (one row per trade, no user ids).

    The ``date`` column may be blank; the trade id is then decoded if possible.

    Raises:
        UnknownColumnSet: header mismatch.
        BadEnumValue: unknown order kind or initiator literal.
        LedgerError: any other malformed value.
    """
    header, rows = _read_csv(data)
    header = [h.lower() for h in header]
    if sorted(header) != sorted(PUBLIC_COLUMNS):
        raise UnknownColumnSet(f"public header {header}")
    records = []
    for line, record in rows:
        values = dict(zip(header, record))
        kind_literal = values["order_kind"].strip().lower()
        initiator_literal = values["initiator"].strip().lower()
        try:
            kind = OrderKind(kind_literal)
        except ValueError:
            raise BadEnumValue(values["order_kind"], line) from None
        try:
            initiator = Initiator(initiator_literal)
        except ValueError:
            raise BadEnumValue(values["initiator"], line) from None
        currency = values["currency"].strip()
        if currency not in CURRENCIES:
            raise LedgerError(f"row {line}: unknown currency {currency!r}")
        try:
            amount = _decimal(values["amount"], "amount")
            price = _decimal(values["price"], "price", positive=True)
            ts = parse_ts(values["date"]) if values["date"].strip() else None
        except ValueError as exc:
            raise LedgerError(f"row {line}: {exc}") from None
        trade_id = values["trade_id"].strip()
        if ts is None:
            decoded = decode_trade_id_time(trade_id)
            ts = to_epoch(decoded) if decoded is not None else None
        records.append(PublicTradeRecord(trade_id, currency, amount, price, kind, initiator, ts))
    return records


def format_public_file(records: Iterable[PublicTradeRecord]) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(PUBLIC_COLUMNS)
    for r in records:
        writer.writerow(
            [
                r.trade_id,
                format_ts(r.ts) if r.ts is not None else "",
                r.currency,
                str(r.amount),
                str(r.price),
                r.order_kind.value,
                r.initiator.value,
            ]
        )
    return buffer.getvalue().encode("utf-8")


def _parse_rate_time(text: str) -> int:
    text = text.strip()
    for pattern in ("%Y%m%d %H%M%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M:%SZ"):
        try:
            return to_epoch(datetime.strptime(text, pattern).replace(tzinfo=timezone.utc))
        except ValueError:
            continue
    raise LedgerError(f"unrecognised rate timestamp {text!r}")


def parse_rate_file(data: bytes, dyad: tuple[str, str]) -> list[RateBar]:
    """Parse hourly OHLC rows (``time,open,high,low,close[,volume]``), keeping the open.

    Both ``,`` and ``;`` separators are accepted and a non-numeric first row is
    treated as a header. Timestamps are floored to the hour.

    Raises:
        DuplicateHour: two rows fall in the same hour.
        NonPositiveRate: an open price is zero or negative.
    """
    base, quote = dyad
    if base not in CURRENCIES or quote not in CURRENCIES or base == quote:
        raise LedgerError(f"bad dyad {dyad}")
    bars: list[RateBar] = []
    seen: set[int] = set()
    text = data.decode("utf-8-sig")
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.replace(";", ",").split(",")]
        if len(parts) < 2:
            raise LedgerError(f"line {number}: too few fields")
        if number == 1 and not parts[1].replace(".", "", 1).replace("-", "", 1).isdigit():
            continue
        hour = _parse_rate_time(parts[0]) // 3600 * 3600
        try:
            value = Decimal(parts[1])
        except InvalidOperation:
            raise LedgerError(f"line {number}: bad open {parts[1]!r}") from None
        if not value.is_finite() or value <= 0:
            raise NonPositiveRate(f"line {number}: open {parts[1]}")
        if hour in seen:
            raise DuplicateHour(f"line {number}: {format_ts(hour)} repeated")
        seen.add(hour)
        bars.append(RateBar(dyad, hour, value))
    bars.sort(key=lambda b: b.hour)
    return bars


def format_rate_file(bars: Iterable[RateBar]) -> bytes:
    lines = ["time,open,high,low,close"]
    for bar in bars:
        o = str(bar.open)
        lines.append(f"{format_ts(bar.hour)},{o},{o},{o},{o}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def pair_trades(legs: Sequence[Leg]) -> tuple[list[Trade], list[Leg]]:
    """Pair buy and sell legs sharing a trade id (k-th buy with k-th sell).

    Returns the trades and the legs left without a partner.
    """
    buys: dict[str, list[Leg]] = defaultdict(list)
    sells: dict[str, list[Leg]] = defaultdict(list)
    order: list[str] = []
    for leg in legs:
        if leg.trade_id not in buys and leg.trade_id not in sells:
            order.append(leg.trade_id)
        (buys if leg.is_buy else sells)[leg.trade_id].append(leg)
    trades, orphans = [], []
    for tid in order:
        b, s = buys.get(tid, []), sells.get(tid, [])
        n = min(len(b), len(s))
        trades.extend(Trade(tid, b[i], s[i]) for i in range(n))
        orphans.extend(b[n:] + s[n:])
    return trades, orphans


# Canonical cleaned-ledger layout used between pipeline stages.
LEG_COLUMNS = (
    "trade_id", "timestamp", "user_id", "side", "currency", "bitcoins", "money", "money_jpy",
    "money_fee", "bitcoin_fee", "money_rate", "money_fee_rate", "japan_flag", "user_country",
    "user_state", "mc_kind", "n_members", "order_kind", "aggressive", "flags",
)


def legs_to_rows(legs: Iterable[Leg]) -> Iterable[list[str]]:
    yield list(LEG_COLUMNS)
    for leg in legs:
        yield [
            leg.trade_id,
            format_ts(leg.ts),
            str(leg.user_id),
            leg.side.value,
            leg.currency,
            str(leg.bitcoins),
            str(leg.money),
            str(leg.money_jpy),
            str(leg.money_fee),
            str(leg.bitcoin_fee),
            str(leg.money_rate),
            str(leg.money_fee_rate),
            leg.japan_flag.value,
            leg.user_country or "",
            leg.user_state or "",
            str(int(leg.mc_kind)),
            str(leg.n_members),
            leg.order_kind.value if leg.order_kind else "",
            "" if leg.aggressive is None else str(int(leg.aggressive)),
            ";".join(sorted(leg.flags)),
        ]


def legs_from_rows(rows: Iterable[Sequence[str]]) -> list[Leg]:
    iterator = iter(rows)
    header = tuple(next(iterator, ()))
    if header != LEG_COLUMNS:
        raise UnknownColumnSet(f"leg table header {header}")
    legs = []
    for line, row in enumerate(iterator, start=2):
        v = dict(zip(LEG_COLUMNS, row))
        legs.append(
            Leg(
                trade_id=v["trade_id"],
                ts=parse_ts(v["timestamp"]),
                user_id=int(v["user_id"]),
                side=Side(v["side"]),
                currency=v["currency"],
                bitcoins=Decimal(v["bitcoins"]),
                money=Decimal(v["money"]),
                money_jpy=Decimal(v["money_jpy"]),
                money_fee=Decimal(v["money_fee"]),
                bitcoin_fee=Decimal(v["bitcoin_fee"]),
                money_rate=Decimal(v["money_rate"]),
                money_fee_rate=Decimal(v["money_fee_rate"]),
                japan_flag=JapanFlag(v["japan_flag"]),
                user_country=v["user_country"] or None,
                user_state=v["user_state"] or None,
                mc_kind=McKind(int(v["mc_kind"])),
                n_members=int(v["n_members"]),
                order_kind=OrderKind(v["order_kind"]) if v["order_kind"] else None,
                aggressive=None if v["aggressive"] == "" else v["aggressive"] == "1",
                flags=frozenset(f for f in v["flags"].split(";") if f),
                row=line,
            )
        )
    return legs
