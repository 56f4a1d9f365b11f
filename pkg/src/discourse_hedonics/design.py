"""Estimation-ready design matrices: within-between split, z-scores, dummies.

The within-between decomposition of a bin-level regressor splits it into its
collection mean over observed bins (the between component, constant within
collection) and the per-bin deviation from that mean (the within component).
Continuous regressors are z-scored on the final estimation sample; month
dummies, collection dummies, and the response are never standardized.

Three estimator layouts are supported:

* ``mixed-mundlak`` -- market controls, visual control, within + between
  columns for the three discourse signals, month dummies.
* ``mixed-direct``  -- market controls, visual control, the three lagged
  discourse levels, month dummies.
* ``ols-cluster``   -- market controls, visual control, lagged attention and
  negativity-share levels, a z-scored within-demeaned polarity baseline slope
  plus per-collection slope deviations, month dummies, collection dummies.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .ingest import MARKET_CONTROLS

INTERCEPT = "Intercept"
#: Discourse signal stems, in reporting order.
REDDIT_SIGNALS = ("attn", "negshare_rw", "polarity_rw")
WINDOW_SUFFIXES = {"lag1": "_lag1", "lag2": "_lag2", "roll3": "_roll3"}


class DesignError(ValueError):
    """Fatal design-assembly problem (missing columns, empty or degenerate sample)."""


def reddit_window_columns(window: str) -> tuple[str, ...]:
    """Lagged discourse column names for a window variant, e.g. ``attn_lag1``."""
    if window not in WINDOW_SUFFIXES:
        raise DesignError(f"unknown window variant {window!r}")
    suffix = WINDOW_SUFFIXES[window]
    return tuple(f"{signal}{suffix}" for signal in REDDIT_SIGNALS)


@dataclass
class MundlakDecomposition:
    """Between (collection-level means) and within (deviations) components."""

    between: pd.DataFrame
    within: pd.DataFrame
    excluded: dict[str, list[str]]


def mundlak_decompose(
    panel: pd.DataFrame, variables: list[str] | tuple[str, ...]
) -> MundlakDecomposition:
    """Split bin-panel variables into collection means and deviations.

    The between component is the unweighted mean over the collection's bins
    with the variable observed.  Collections where a variable is entirely
    missing are recorded in ``excluded`` for that variable.
    """
    for var in variables:
        if var not in panel.columns:
            raise DesignError(f"unknown panel variable {var!r}")
    grouped = panel.groupby("collection_code", sort=False)
    between = grouped[list(variables)].transform("mean")
    within = panel[list(variables)] - between
    excluded = {
        var: sorted(
            code
            for code, n in grouped[var].count().items()
            if n == 0
        )
        for var in variables
    }
    between_cols = between.rename(columns={v: f"{v}_bar" for v in variables})
    within_cols = within.rename(columns={v: f"{v}_within" for v in variables})
    return MundlakDecomposition(between_cols, within_cols, excluded)


def attach_mundlak_columns(panel: pd.DataFrame, variables) -> pd.DataFrame:
    decomp = mundlak_decompose(panel, variables)
    return pd.concat([panel, decomp.within, decomp.between], axis=1)


def standardize_regressors(
    frame: pd.DataFrame, columns: list[str] | tuple[str, ...]
) -> tuple[pd.DataFrame, dict[str, tuple[float, float]]]:
    """Z-score the named columns in place (sample sd), recording (mean, sd).

    A zero-sd column is a degenerate regressor and raises :class:`DesignError`.
    """
    out = frame.copy()
    record: dict[str, tuple[float, float]] = {}
    for col in columns:
        values = out[col].to_numpy(dtype=float)
        mean = float(np.mean(values))
        sd = float(np.std(values, ddof=1))
        if not np.isfinite(sd) or sd == 0.0:
            raise DesignError(f"regressor {col!r} has zero variance on the estimation sample")
        out[col] = (values - mean) / sd
        record[col] = (mean, sd)
    return out, record


def build_month_dummies(dates: pd.Series) -> pd.DataFrame:
    """One indicator per observed calendar month, earliest month as reference."""
    months = pd.to_datetime(dates).dt.strftime("%Y-%m")
    levels = sorted(months.unique())
    columns = {}
    for level in levels[1:]:
        columns[f"month_{level.replace('-', '_')}"] = (months == level).astype(float)
    out = pd.DataFrame(columns, index=dates.index)
    out.attrs["reference_month"] = levels[0] if levels else None
    return out


@dataclass(frozen=True)
class RandomStructure:
    """Random-effect layout: intercept group labels and (group, covariate) slopes."""

    intercepts: tuple[str, ...] = ()
    slopes: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class ModelSpec:
    estimator: str
    response: str = "y"
    market_controls: tuple[str, ...] = MARKET_CONTROLS
    visual_control: str = "visual_index_explicit_z"
    window: str = "lag1"
    standardize: bool = True
    include_months: bool = True
    random_structure: RandomStructure = field(default_factory=RandomStructure)
    reference_collection: str | None = None
    min_within_sd: float = 1e-6

    @property
    def reddit_columns(self) -> tuple[str, ...]:
        return reddit_window_columns(self.window)


def mundlak_spec(window: str = "lag1") -> ModelSpec:
    """Baseline mixed-effects layout with the within-between split."""
    polarity_within = f"{REDDIT_SIGNALS[2]}{WINDOW_SUFFIXES[window]}_within"
    structure = RandomStructure(
        intercepts=("nft_id", "collection_code", "collection_bin"),
        slopes=(("collection_code", polarity_within),),
    )
    return ModelSpec(estimator="mixed-mundlak", window=window, random_structure=structure)


def direct_spec(window: str = "lag1") -> ModelSpec:
    """Mixed-effects layout with direct lagged levels (no decomposition)."""
    polarity_level = f"{REDDIT_SIGNALS[2]}{WINDOW_SUFFIXES[window]}"
    structure = RandomStructure(
        intercepts=("nft_id", "collection_code"),
        slopes=(("collection_code", polarity_level),),
    )
    return ModelSpec(estimator="mixed-direct", window=window, random_structure=structure)


def clustered_spec(
    window: str = "lag1",
    reference_collection: str | None = None,
    min_within_sd: float = 1e-6,
) -> ModelSpec:
    """Fixed-effects OLS layout with polarity slope heterogeneity."""
    return ModelSpec(
        estimator="ols-cluster",
        window=window,
        reference_collection=reference_collection,
        min_within_sd=min_within_sd,
    )


@dataclass
class DesignMatrix:
    y: np.ndarray
    X: np.ndarray
    columns: list[str]
    groups: dict[str, np.ndarray]
    standardization: dict[str, tuple[float, float]]
    n_input_rows: int
    n_dropped: int
    reference_month: str | None = None
    reference_collection: str | None = None
    heterogeneity_excluded: list[str] = field(default_factory=list)

    def frame(self) -> pd.DataFrame:
        out = pd.DataFrame(self.X, columns=self.columns)
        out.insert(0, "y", self.y)
        return out

    def column_index(self, name: str) -> int:
        return self.columns.index(name)


def polarity_heterogeneity_columns(
    table: pd.DataFrame,
    polarity_within_col: str,
    reference_collection: str,
    min_within_sd: float = 1e-6,
) -> tuple[pd.DataFrame, list[str]]:
    """Baseline polarity slope plus per-collection slope-deviation columns.

    The baseline column ``pol_within_z`` is the z-scored within-demeaned
    polarity; each qualifying collection (within sd above ``min_within_sd``,
    reference excluded) gets ``pol_dev_<code> = pol_within_z * 1{collection}``.
    Collections failing the threshold carry only the baseline slope and are
    returned in the excluded list.
    """
    if polarity_within_col not in table.columns:
        raise DesignError(f"missing within-demeaned polarity column {polarity_within_col!r}")
    values = table[polarity_within_col].to_numpy(dtype=float)
    sd = float(np.std(values, ddof=1))
    if sd == 0.0:
        raise DesignError("within-demeaned polarity has zero variance")
    baseline = (values - float(np.mean(values))) / sd
    out = pd.DataFrame({"pol_within_z": baseline}, index=table.index)
    excluded: list[str] = []
    qualifying: list[str] = []
    for code, group in table.groupby("collection_code", sort=True):
        if code == reference_collection:
            continue
        within_sd = float(group[polarity_within_col].std(ddof=0))
        if within_sd > min_within_sd:
            qualifying.append(str(code))
        else:
            excluded.append(str(code))
    if not qualifying:
        warnings.warn("no collection passes the within-variation threshold; baseline slope only")
    for code in qualifying:
        out[f"pol_dev_{code}"] = baseline * (table["collection_code"] == code).to_numpy(dtype=float)
    return out, excluded


def _collection_dummies(codes: pd.Series, reference: str) -> pd.DataFrame:
    levels = sorted(codes.unique())
    out = {}
    for level in levels:
        if level == reference:
            continue
        out[f"collection_{level}"] = (codes == level).astype(float)
    return pd.DataFrame(out, index=codes.index)


def most_traded_collection(table: pd.DataFrame) -> str:
    counts = table.groupby("collection_code", sort=True).size()
    return str(counts.sort_values(ascending=False, kind="stable").index[0])


def assemble_design(spec: ModelSpec, table: pd.DataFrame) -> DesignMatrix:
    """Complete-case design matrix for one model specification.

    Applies the complete-case rule over the response, all regressors, and the
    grouping labels; z-scores continuous regressors when ``spec.standardize``;
    orders columns as declared.  Raises :class:`DesignError` if a referenced
    column is absent or the filtered sample is empty.
    """
    reddit_cols = list(spec.reddit_columns)
    if spec.estimator == "mixed-mundlak":
        reddit_terms = [f"{c}{suffix}" for c in reddit_cols for suffix in ("_within", "_bar")]
    elif spec.estimator == "mixed-direct":
        reddit_terms = reddit_cols
    elif spec.estimator == "ols-cluster":
        # Polarity enters through the heterogeneity columns, not as a level.
        reddit_terms = reddit_cols[:2]
    else:
        raise DesignError(f"unknown estimator {spec.estimator!r}")

    label_cols = ["nft_id", "collection_code", "trade_bin"]
    needed = [spec.response, *spec.market_controls, spec.visual_control, *reddit_terms]
    if spec.estimator == "ols-cluster":
        needed.append(f"{reddit_cols[2]}_within")
    if spec.include_months:
        label_cols.append("trade_date")
    missing = [c for c in needed + label_cols if c not in table.columns]
    if missing:
        raise DesignError(f"estimation table missing columns {missing}")

    complete = table[needed].notna().all(axis=1) & table[label_cols].notna().all(axis=1)
    n_dropped = int((~complete).sum())
    sample = table.loc[complete].reset_index(drop=True)
    if sample.empty:
        raise DesignError(
            f"empty estimation sample after complete-case filtering "
            f"({n_dropped} of {len(table)} rows dropped)"
        )

    continuous = [*spec.market_controls, spec.visual_control, *reddit_terms]
    record: dict[str, tuple[float, float]] = {}
    if spec.standardize:
        sample, record = standardize_regressors(sample, continuous)

    blocks: list[pd.DataFrame] = [
        pd.DataFrame({INTERCEPT: np.ones(len(sample))}, index=sample.index),
        sample[continuous],
    ]
    reference_collection = spec.reference_collection
    het_excluded: list[str] = []
    if spec.estimator == "ols-cluster":
        if reference_collection is None:
            reference_collection = most_traded_collection(sample)
        het, het_excluded = polarity_heterogeneity_columns(
            sample,
            f"{reddit_cols[2]}_within",
            reference_collection,
            spec.min_within_sd,
        )
        blocks.append(het)
    reference_month = None
    if spec.include_months:
        months = build_month_dummies(sample["trade_date"])
        reference_month = months.attrs["reference_month"]
        blocks.append(months)
    if spec.estimator == "ols-cluster":
        blocks.append(_collection_dummies(sample["collection_code"], reference_collection))

    design = pd.concat(blocks, axis=1)
    duplicate = design.columns[design.columns.duplicated()].tolist()
    if duplicate:
        raise DesignError(f"duplicate design columns {duplicate}")

    collection_bin = (
        sample["collection_code"].astype(str)
        + ":"
        + sample["trade_bin"].astype(np.int64).astype(str)
    ).to_numpy()
    groups = {
        "nft_id": sample["nft_id"].to_numpy(),
        "collection_code": sample["collection_code"].to_numpy(),
        "collection_bin": collection_bin,
        "cluster": collection_bin,
    }
    if spec.include_months:
        groups["month"] = pd.to_datetime(sample["trade_date"]).dt.strftime("%Y-%m").to_numpy()

    return DesignMatrix(
        y=sample[spec.response].to_numpy(dtype=float),
        X=design.to_numpy(dtype=float),
        columns=list(design.columns),
        groups=groups,
        standardization=record,
        n_input_rows=len(table),
        n_dropped=n_dropped,
        reference_month=reference_month,
        reference_collection=reference_collection,
        heterogeneity_excluded=het_excluded,
    )


def design_from_columns(
    table: pd.DataFrame,
    response: str,
    columns: list[str],
    group_cols: dict[str, str],
    add_intercept: bool = True,
) -> DesignMatrix:
    """Minimal design builder for simulation studies: no filtering, no scaling."""
    names = list(columns)
    X = table[names].to_numpy(dtype=float)
    if add_intercept:
        X = np.column_stack([np.ones(len(table)), X])
        names = [INTERCEPT, *names]
    groups = {name: table[col].to_numpy() for name, col in group_cols.items()}
    return DesignMatrix(
        y=table[response].to_numpy(dtype=float),
        X=X,
        columns=names,
        groups=groups,
        standardization={},
        n_input_rows=len(table),
        n_dropped=0,
    )
