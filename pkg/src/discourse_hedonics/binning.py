"""Pseudo-time binning: base-36 ordering, quantile bins, lags, and the audit.

Discourse items are ordered within collection by the integer value of the
thread id embedded in their URL (base-36), then discretized into rank
quantile bins.  The same rank rule, applied to date-ordered transactions with
the collection's realized bin count, yields a trade-bin index, so bin ``b`` of
trading history lines up with bin ``b`` of discourse history.

Quantile rule: with ``n`` items sorted ascending and ``B`` target bins, an
item whose tie group starts at 0-based position ``r`` gets raw bin
``floor(r * B / n)``; tied keys therefore share their group's bin, and raw
bins are re-compacted to contiguous ``0..B'-1``.  Transactions use the same
formula on the (trade_date, tx_id) order, where the composite key is unique,
so no tie collapse occurs and bins stay aligned with the panel index range.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

_THREAD_ID_RE = re.compile(r"/comments/([0-9a-zA-Z]+)")
_BASE36_RE = re.compile(r"^[0-9a-z]+$")

#: Bin-panel aggregate columns produced by :func:`aggregate_bin_cells`.
PANEL_SENTIMENT_COLUMNS = ("sentiment_polarity", "sentiment_subjectivity", "is_neg", "is_pos")


def extract_thread_id(url: str) -> str | None:
    """Alphanumeric thread id from the ``/comments/`` path segment, or None."""
    match = _THREAD_ID_RE.search(url)
    return match.group(1) if match else None


def base36_decode(thread_id: str) -> int:
    """Positional base-36 value of an alphanumeric id (case-insensitive)."""
    lowered = thread_id.lower()
    if not _BASE36_RE.match(lowered):
        raise ValueError(f"invalid base-36 id: {thread_id!r}")
    return int(lowered, 36)


def assign_quantile_bins(keys, target_bins: int = 60) -> np.ndarray:
    """Contiguous 0-based quantile bin per item for an ascending key sequence.

    Tied keys share a bin; the realized bin count is at most ``target_bins``.
    Raises if ``keys`` is not sorted ascending.
    """
    if target_bins < 1:
        raise ValueError(f"target_bins must be >= 1, got {target_bins}")
    keys = np.asarray(keys)
    n = keys.size
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if np.any(keys[1:] < keys[:-1]):
        raise ValueError("keys must be sorted ascending")
    positions = np.arange(n, dtype=np.int64)
    starts_group = np.ones(n, dtype=bool)
    starts_group[1:] = keys[1:] != keys[:-1]
    group_start = np.maximum.accumulate(np.where(starts_group, positions, 0))
    raw_bin = (group_start * target_bins) // n
    _, compact = np.unique(raw_bin, return_inverse=True)
    return compact.astype(np.int64)


def bin_discourse_items(items: pd.DataFrame, target_bins: int = 60) -> pd.DataFrame:
    """Attach a ``bin_index`` column to scored discourse items, per collection."""
    items = items.sort_values(["collection_code", "item_key"], kind="stable").reset_index(
        drop=True
    )
    bins = np.empty(len(items), dtype=np.int64)
    for _, idx in items.groupby("collection_code", sort=True).indices.items():
        bins[idx] = assign_quantile_bins(items["item_key"].to_numpy()[idx], target_bins)
    out = items.copy()
    out["bin_index"] = bins
    return out


def aggregate_bin_cells(items: pd.DataFrame) -> pd.DataFrame:
    """Collection-by-bin panel of attention and sentiment aggregates.

    Bin indices are made contiguous from 0 within each collection; a bin with
    no items gets ``n_items = 0``, ``log_attention = 0``, and missing
    sentiment moments.
    """
    grouped = items.groupby(["collection_code", "bin_index"], sort=True)
    cells = grouped.agg(
        n_items=("item_key", "size"),
        sentiment_polarity=("polarity", "mean"),
        sentiment_subjectivity=("subjectivity", "mean"),
    )
    cells["is_neg"] = grouped["label"].agg(lambda s: (s == "negative").mean())
    cells["is_pos"] = grouped["label"].agg(lambda s: (s == "positive").mean())
    full_index = pd.MultiIndex.from_tuples(
        [
            (code, b)
            for code, top in items.groupby("collection_code", sort=True)["bin_index"]
            .max()
            .items()
            for b in range(int(top) + 1)
        ],
        names=["collection_code", "bin_index"],
    )
    panel = cells.reindex(full_index)
    panel["n_items"] = panel["n_items"].fillna(0).astype(np.int64)
    panel["log_attention"] = np.log1p(panel["n_items"].to_numpy(dtype=float))
    columns = ["n_items", "log_attention", *PANEL_SENTIMENT_COLUMNS]
    return panel[columns].reset_index()


def _sorted_panel(panel: pd.DataFrame) -> pd.DataFrame:
    return panel.sort_values(["collection_code", "bin_index"], kind="stable")


def lag_shift(panel: pd.DataFrame, variable: str, k: int) -> pd.Series:
    """Within-collection shift of ``variable`` back by ``k`` bins.

    The first ``k`` bins of each collection are missing; values never cross a
    collection boundary.  The result is aligned to ``panel``'s index.
    """
    if variable not in panel.columns:
        raise ValueError(f"unknown panel variable {variable!r}")
    if k < 1:
        raise ValueError(f"lag k must be >= 1, got {k}")
    ordered = _sorted_panel(panel)
    shifted = ordered.groupby("collection_code", sort=False)[variable].shift(k)
    return shifted.reindex(panel.index)


def rolling_window_mean(panel: pd.DataFrame, variable: str, window: int = 3) -> pd.Series:
    """Mean of the ``window`` bins strictly before each bin, within collection.

    Shifts by one bin first, so the current bin is always excluded; missing
    until ``window`` prior bins exist.
    """
    if variable not in panel.columns:
        raise ValueError(f"unknown panel variable {variable!r}")
    ordered = _sorted_panel(panel)
    shifted = ordered.groupby("collection_code", sort=False)[variable].shift(1)
    rolled = shifted.groupby(ordered["collection_code"], sort=False).transform(
        lambda s: s.rolling(window, min_periods=window).mean()
    )
    return rolled.reindex(panel.index)


def assign_trade_bins(txs: pd.DataFrame, n_bins: int) -> np.ndarray:
    """Quantile trade-bin index for one collection's transactions.

    Transactions are ordered by ``(trade_date, tx_id)`` -- the tx_id tie-break
    makes the assignment deterministic -- and ranked into ``n_bins`` bins with
    the same rank rule used for discourse items.  Returned in input row order.
    """
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    n = len(txs)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    order = np.lexsort((txs["tx_id"].to_numpy(), txs["trade_date"].to_numpy()))
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(n, dtype=np.int64)
    return (ranks * n_bins) // n


def assign_trade_bins_all(txs: pd.DataFrame, panel: pd.DataFrame) -> pd.Series:
    """Trade bins for every collection present in the panel.

    Each collection uses its own realized bin count; transactions from
    collections absent from the panel get a missing bin (excluded at merge).
    """
    bins_per_collection = (
        panel.groupby("collection_code", sort=True)["bin_index"].max().astype(int) + 1
    )
    out = pd.Series(np.nan, index=txs.index, name="trade_bin")
    for code, idx in txs.groupby("collection_code", sort=True).indices.items():
        if code not in bins_per_collection.index:
            continue
        subset = txs.iloc[idx]
        out.iloc[idx] = assign_trade_bins(subset, int(bins_per_collection.loc[code]))
    return out


def merge_bins_to_trades(
    txs: pd.DataFrame, panel: pd.DataFrame
) -> tuple[pd.DataFrame, int]:
    """Many-to-one merge of panel columns onto transactions by (collection, bin).

    Transactions with a missing trade bin or no matching panel row are
    excluded and counted.  All transactions in a cell inherit identical
    bin-level values; merging twice is idempotent.
    """
    if "trade_bin" not in txs.columns:
        raise ValueError("transactions must carry a trade_bin column")
    has_bin = txs["trade_bin"].notna()
    work = txs.loc[has_bin].copy()
    work["trade_bin"] = work["trade_bin"].astype(np.int64)
    merged = work.merge(
        panel,
        how="left",
        left_on=["collection_code", "trade_bin"],
        right_on=["collection_code", "bin_index"],
        validate="many_to_one",
    )
    matched = merged["bin_index"].notna()
    merged = merged.loc[matched].drop(columns=["bin_index"]).reset_index(drop=True)
    n_excluded = int((~has_bin).sum()) + int((~matched).sum())
    return merged, n_excluded


@dataclass
class LagAuditReport:
    """Lag-construction audit: alignment panel (A) and chronology panel (B)."""

    alignment: pd.DataFrame
    chronology: pd.DataFrame
    tol: float

    def to_frame(self) -> pd.DataFrame:
        a = self.alignment.copy()
        a.insert(0, "panel", "A")
        b = self.chronology.copy()
        b.insert(0, "panel", "B")
        return pd.concat([a, b], ignore_index=True)

    @property
    def max_share_flagged(self) -> float:
        return float(self.alignment["share_flagged"].max())

    @property
    def max_inversion_rate(self) -> float:
        return float(self.chronology["adjacent_inversion_rate"].max())

    @property
    def min_spearman(self) -> float:
        return float(self.chronology["spearman_bin_date"].min())


def audit_lags(
    table: pd.DataFrame,
    pairs: dict[str, str] | None = None,
    date_col: str = "trade_date",
    tol: float = 1e-10,
) -> LagAuditReport:
    """Verify stored lags against a recomputed within-collection shift.

    Panel A compares, per cell, each stored lag column with the base column's
    value at the previous bin index of the same collection (cells whose
    previous bin is absent from the table are skipped).  Panel B reports, per
    collection, the rate of adjacent median-trade-date inversions across the
    bin index and the Spearman rank correlation between bin index and median
    date; collections with fewer than two bins are vacuously ordered and
    report 0.0 / 1.0.
    """
    if pairs is None:
        pairs = {
            "attn_lag1": "log_attention",
            "negshare_rw_lag1": "negshare_rw",
            "polarity_rw_lag1": "polarity_rw",
        }
    keys = ["collection_code", "trade_bin"]
    cell_means = table.groupby(keys, sort=True)[
        sorted({c for pair in pairs.items() for c in pair})
    ].mean()
    alignment_rows = []
    for lag_col, base_col in pairs.items():
        stored = cell_means[lag_col]
        expected = pd.Series(
            [
                cell_means[base_col].get((code, b - 1), np.nan)
                for code, b in cell_means.index
            ],
            index=cell_means.index,
        )
        both = stored.notna() & expected.notna()
        diff = (stored[both] - expected[both]).abs()
        alignment_rows.append(
            {
                "variable": lag_col,
                "bins_compared": int(both.sum()),
                "mae": float(diff.mean()) if len(diff) else 0.0,
                "max_abs_error": float(diff.max()) if len(diff) else 0.0,
                "share_flagged": float((diff > tol).mean()) if len(diff) else 0.0,
            }
        )

    date_ordinal = pd.to_datetime(table[date_col]).astype("int64")
    medians = (
        table.assign(_date=date_ordinal)
        .groupby(keys, sort=True)["_date"]
        .median()
        .reset_index()
    )
    chronology_rows = []
    for code, group in medians.groupby("collection_code", sort=True):
        group = group.sort_values("trade_bin", kind="stable")
        values = group["_date"].to_numpy()
        n_bins = len(values)
        if n_bins < 2:
            inversion_rate, spearman = 0.0, 1.0
        else:
            inversions = int(np.sum(np.diff(values) < 0))
            inversion_rate = inversions / (n_bins - 1)
            if np.all(values == values[0]):
                spearman = 1.0
            else:
                spearman = float(
                    stats.spearmanr(group["trade_bin"].to_numpy(), values).statistic
                )
        chronology_rows.append(
            {
                "collection_code": code,
                "n_bins": n_bins,
                "adjacent_inversion_rate": inversion_rate,
                "spearman_bin_date": spearman,
            }
        )
    return LagAuditReport(
        pd.DataFrame(alignment_rows), pd.DataFrame(chronology_rows), tol
    )
