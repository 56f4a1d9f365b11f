"""File ingestion: schema-validated parsing and the log price transform.

Input formats (dates are ISO-8601, prices USD):

* ``transactions.csv`` -- header ``tx_id,nft_id,collection_code,trade_date,price_usd``
* ``market.csv``       -- header ``date,eth_return,btc_return,sol_return,
  sp500_return,nasdaq_return,fear_greed``
* discourse input      -- CSV or JSON Lines with ``collection_code,url,title,
  body,subreddit`` (extra columns become the record's metadata map)

Transaction rows that fail validation go to a rejects report (row number plus
reason) instead of aborting; a malformed header is always fatal.  The market
table is strict: any malformed row raises, because silently dropping a
controls row would surface later as unexplained sample exclusions.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

import pandas as pd

TRANSACTION_HEADER = ("tx_id", "nft_id", "collection_code", "trade_date", "price_usd")
MARKET_HEADER = (
    "date",
    "eth_return",
    "btc_return",
    "sol_return",
    "sp500_return",
    "nasdaq_return",
    "fear_greed",
)
#: Names of the six per-date market controls attached to every transaction.
MARKET_CONTROLS = MARKET_HEADER[1:]
DISCOURSE_FIELDS = ("collection_code", "url", "title", "body", "subreddit")


class SchemaError(ValueError):
    """Fatal input-format violation (bad header, duplicate keys, bad market row)."""


@dataclass(frozen=True)
class Transaction:
    """One secondary-market sale. ``y`` is ``log(1 + price_usd)``."""

    tx_id: str
    nft_id: str
    collection_code: str
    trade_date: date
    price_usd: float
    y: float


@dataclass(frozen=True)
class MarketSeriesRow:
    date: date
    eth_return: float
    btc_return: float
    sol_return: float
    sp500_return: float
    nasdaq_return: float
    fear_greed: float


@dataclass(frozen=True)
class RawDiscourseRecord:
    collection_code: str
    url: str
    title: str
    body: str
    subreddit: str
    metadata: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class RejectedRow:
    """One dropped input row; ``row`` is the 1-based line number in the file."""

    row: int
    reason: str


@dataclass
class TransactionParse:
    transactions: list[Transaction]
    rejects: list[RejectedRow]
    n_input_rows: int

    @property
    def reject_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for rej in self.rejects:
            counts[rej.reason] = counts.get(rej.reason, 0) + 1
        return counts


def _parse_iso_date(raw: str) -> date:
    return datetime.strptime(raw.strip(), "%Y-%m-%d").date()


def parse_transactions(path: str | Path) -> TransactionParse:
    """Parse ``transactions.csv``, dropping and counting invalid rows.

    Retained rows have strictly positive prices, all identifier fields
    nonempty, and a parseable date; ``y = log(1 + price_usd)`` is computed per
    row.  Duplicate ``tx_id`` values keep the first occurrence.  Raises
    :class:`SchemaError` if the header does not match ``TRANSACTION_HEADER``.
    """
    path = Path(path)
    transactions: list[Transaction] = []
    rejects: list[RejectedRow] = []
    seen_ids: set[str] = set()
    n_rows = 0
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected header {TRANSACTION_HEADER}")
        if tuple(h.strip() for h in header) != TRANSACTION_HEADER:
            raise SchemaError(f"{path}: header {header!r} != {list(TRANSACTION_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            n_rows += 1
            if len(row) != len(TRANSACTION_HEADER):
                rejects.append(RejectedRow(line_no, "wrong_field_count"))
                continue
            tx_id, nft_id, code, raw_date, raw_price = (cell.strip() for cell in row)
            if not tx_id or not nft_id or not code:
                missing = [
                    name
                    for name, value in zip(("tx_id", "nft_id", "collection_code"), (tx_id, nft_id, code))
                    if not value
                ]
                rejects.append(RejectedRow(line_no, "missing_" + missing[0]))
                continue
            if tx_id in seen_ids:
                rejects.append(RejectedRow(line_no, "duplicate_tx_id"))
                continue
            try:
                trade_date = _parse_iso_date(raw_date)
            except ValueError:
                rejects.append(RejectedRow(line_no, "bad_trade_date"))
                continue
            try:
                price = float(raw_price)
            except ValueError:
                rejects.append(RejectedRow(line_no, "bad_price"))
                continue
            if not math.isfinite(price) or price <= 0.0:
                rejects.append(RejectedRow(line_no, "nonpositive_price"))
                continue
            seen_ids.add(tx_id)
            transactions.append(
                Transaction(tx_id, nft_id, code, trade_date, price, math.log1p(price))
            )
    return TransactionParse(transactions, rejects, n_rows)


def parse_market(path: str | Path) -> list[MarketSeriesRow]:
    """Parse ``market.csv``; strict, raises :class:`SchemaError` on any defect."""
    path = Path(path)
    rows: list[MarketSeriesRow] = []
    seen: set[date] = set()
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected header {MARKET_HEADER}")
        if tuple(h.strip() for h in header) != MARKET_HEADER:
            raise SchemaError(f"{path}: header {header!r} != {list(MARKET_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(MARKET_HEADER):
                raise SchemaError(f"{path}:{line_no}: wrong field count")
            try:
                day = _parse_iso_date(row[0])
                values = [float(cell) for cell in row[1:]]
            except ValueError as exc:
                raise SchemaError(f"{path}:{line_no}: {exc}") from exc
            if day in seen:
                raise SchemaError(f"{path}:{line_no}: duplicate market row for {day}")
            if not all(math.isfinite(v) for v in values):
                raise SchemaError(f"{path}:{line_no}: non-finite value")
            if not 0.0 <= values[5] <= 100.0:
                raise SchemaError(f"{path}:{line_no}: fear_greed {values[5]} outside [0, 100]")
            seen.add(day)
            rows.append(MarketSeriesRow(day, *values))
    return rows


def parse_discourse(path: str | Path) -> list[RawDiscourseRecord]:
    """Parse raw discourse records from CSV or JSON Lines (by file suffix)."""
    path = Path(path)
    records: list[RawDiscourseRecord] = []
    if path.suffix.lower() in (".jsonl", ".json", ".ndjson"):
        with path.open(encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise SchemaError(f"{path}:{line_no}: expected a JSON object per line")
                missing = [f for f in DISCOURSE_FIELDS if f not in obj]
                if missing:
                    raise SchemaError(f"{path}:{line_no}: missing fields {missing}")
                meta = {k: str(v) for k, v in obj.items() if k not in DISCOURSE_FIELDS}
                records.append(
                    RawDiscourseRecord(
                        str(obj["collection_code"]),
                        str(obj["url"]),
                        str(obj["title"]),
                        str(obj["body"]),
                        str(obj["subreddit"]),
                        meta,
                    )
                )
        return records
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file")
        missing = [f for f in DISCOURSE_FIELDS if f not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: discourse header missing fields {missing}")
        for row in reader:
            meta = {
                k: (v if v is not None else "")
                for k, v in row.items()
                if k not in DISCOURSE_FIELDS and k is not None
            }
            records.append(
                RawDiscourseRecord(
                    (row["collection_code"] or "").strip(),
                    (row["url"] or "").strip(),
                    row["title"] or "",
                    row["body"] or "",
                    (row["subreddit"] or "").strip(),
                    meta,
                )
            )
    return records


def transactions_frame(transactions: list[Transaction]) -> pd.DataFrame:
    """Tabular view of parsed transactions, sorted for deterministic output."""
    frame = pd.DataFrame(
        {
            "tx_id": [t.tx_id for t in transactions],
            "nft_id": [t.nft_id for t in transactions],
            "collection_code": [t.collection_code for t in transactions],
            "trade_date": pd.to_datetime([t.trade_date for t in transactions]),
            "price_usd": [t.price_usd for t in transactions],
            "y": [t.y for t in transactions],
        }
    )
    return frame.sort_values(
        ["collection_code", "trade_date", "tx_id"], kind="stable"
    ).reset_index(drop=True)


def market_frame(rows: list[MarketSeriesRow]) -> pd.DataFrame:
    frame = pd.DataFrame(
        {
            "date": pd.to_datetime([r.date for r in rows]),
            **{name: [getattr(r, name) for r in rows] for name in MARKET_CONTROLS},
        }
    )
    return frame.sort_values("date", kind="stable").reset_index(drop=True)


def join_market_controls(
    txs: list[Transaction] | pd.DataFrame,
    market: list[MarketSeriesRow] | pd.DataFrame,
) -> tuple[pd.DataFrame, int]:
    """Attach the six trade-date market controls to each transaction row.

    Returns the joined table restricted to rows with a matching market date,
    plus the count of excluded (incomplete) transactions.  Duplicate market
    dates are fatal.
    """
    tx_frame = txs if isinstance(txs, pd.DataFrame) else transactions_frame(txs)
    mkt_frame = market if isinstance(market, pd.DataFrame) else market_frame(market)
    if mkt_frame["date"].duplicated().any():
        dupes = mkt_frame.loc[mkt_frame["date"].duplicated(), "date"].unique()
        raise SchemaError(f"duplicate market rows for dates {[str(d)[:10] for d in dupes]}")
    joined = tx_frame.merge(
        mkt_frame, how="left", left_on="trade_date", right_on="date", validate="many_to_one"
    ).drop(columns=["date"])
    complete = joined[list(MARKET_CONTROLS)].notna().all(axis=1)
    n_excluded = int((~complete).sum())
    return joined.loc[complete].reset_index(drop=True), n_excluded
