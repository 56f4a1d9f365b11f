"""Explicit-trait visual index: hue encoding, within-collection z, PCA PC1.

Pipeline: collapse to one row per NFT, encode the circular hue as sine and
cosine, standardize the 13 inputs within collection (missing or zero-variance
cells become 0, i.e. the group mean in standardized units), fit one pooled
PCA, keep the first component as ``visual_index_explicit``, and re-standardize
that score within collection (population convention) to get
``visual_index_explicit_z``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

#: The eleven scalar trait columns expected in the token feature file.
TRAIT_COLUMNS = (
    "edge_bounding_box_area",
    "edge_range_y",
    "edge_range_x",
    "color_hue_dist_max_min",
    "composition_focus_lightness",
    "color_lightness_dist_max_min",
    "color_palette_mean_delta_e",
    "line_art_avg_thickness",
    "composition_focus_saturation",
    "line_art_prop_curved",
    "color_palette_saturation_std",
)
HUE_COLUMN = "most_frequent_hue"
PCA_INPUT_COLUMNS = TRAIT_COLUMNS + ("hue_sin", "hue_cos")

#: Slack above 2*pi in the hue unit heuristic.
HUE_SCALE_EPS = 1e-9


@dataclass
class VisualIndexResult:
    scores: pd.DataFrame
    loadings: pd.DataFrame


def encode_hue(raw_hue: float) -> tuple[float, float]:
    """(sin, cos) of a hue given in degrees, normalized [0, 1], or radians.

    Unit heuristic: values above 2*pi are degrees, values at or below 1 are
    normalized turns, anything between is already radians.  Missing hue yields
    missing components (zero-imputed later in z-space).
    """
    if raw_hue is None or (isinstance(raw_hue, float) and math.isnan(raw_hue)):
        return math.nan, math.nan
    if raw_hue > 2.0 * math.pi + HUE_SCALE_EPS:
        radians = raw_hue * math.pi / 180.0
    elif raw_hue <= 1.0:
        radians = raw_hue * 2.0 * math.pi
    else:
        radians = raw_hue
    return math.sin(radians), math.cos(radians)


def encode_hue_frame(features: pd.DataFrame) -> pd.DataFrame:
    """Vectorized hue encoding; adds ``hue_sin`` and ``hue_cos`` columns."""
    out = features.copy()
    hue = out[HUE_COLUMN].to_numpy(dtype=float)
    radians = np.where(
        hue > 2.0 * math.pi + HUE_SCALE_EPS,
        hue * math.pi / 180.0,
        np.where(hue <= 1.0, hue * 2.0 * math.pi, hue),
    )
    out["hue_sin"] = np.sin(radians)
    out["hue_cos"] = np.cos(radians)
    return out


def within_group_standardize(
    frame: pd.DataFrame, group_col: str, columns: list[str] | tuple[str, ...]
) -> pd.DataFrame:
    """Per-group z-scores (sample sd); 0 where the group sd is 0 or x missing."""
    grouped = frame.groupby(group_col, sort=False)
    means = grouped[list(columns)].transform("mean")
    sds = grouped[list(columns)].transform("std")
    z = (frame[list(columns)] - means) / sds
    z = z.where(np.isfinite(z), 0.0).fillna(0.0)
    return z


def pca_first_component(z_matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scores and loadings of the first principal component.

    Loadings are the unit top eigenvector of the sample covariance of
    ``z_matrix`` with the largest-magnitude entry made positive; scores are
    the column-centered data projected onto them.  A rank-zero matrix yields
    all-zero scores with a warning.
    """
    z = np.asarray(z_matrix, dtype=float)
    if z.ndim != 2 or z.shape[0] < 2 or z.shape[1] < 1:
        raise ValueError(f"need a 2-d matrix with >= 2 rows, got shape {z.shape}")
    centered = z - z.mean(axis=0)
    if not np.any(centered):
        warnings.warn("PCA input has rank zero; returning zero scores")
        return np.zeros(z.shape[0]), np.zeros(z.shape[1])
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    loadings = vt[0]
    pivot = int(np.argmax(np.abs(loadings)))
    if loadings[pivot] < 0:
        loadings = -loadings
    return centered @ loadings, loadings


def build_visual_index(features: pd.DataFrame) -> VisualIndexResult:
    """End-to-end visual index from a token feature table.

    Input must carry ``nft_id``, ``collection_code``, the eleven trait
    columns, and ``most_frequent_hue``; duplicate NFT rows collapse to the
    first occurrence.  Collections with a single NFT (or a zero-variance PC1)
    get ``visual_index_explicit_z = 0``.
    """
    missing = [c for c in ("nft_id", "collection_code", *TRAIT_COLUMNS, HUE_COLUMN) if c not in features.columns]
    if missing:
        raise ValueError(f"feature table missing columns {missing}")
    collapsed = features.drop_duplicates(subset="nft_id", keep="first").reset_index(drop=True)
    encoded = encode_hue_frame(collapsed)
    z = within_group_standardize(encoded, "collection_code", list(PCA_INPUT_COLUMNS))
    scores, loadings = pca_first_component(z.to_numpy())
    out = collapsed[["nft_id", "collection_code"]].copy()
    out["visual_index_explicit"] = scores

    grouped = out.groupby("collection_code", sort=False)["visual_index_explicit"]
    mean = grouped.transform("mean")
    sd = grouped.transform(lambda s: s.std(ddof=0))
    z_final = (out["visual_index_explicit"] - mean) / sd
    out["visual_index_explicit_z"] = z_final.where(np.isfinite(z_final), 0.0).fillna(0.0)

    loading_frame = pd.DataFrame({"feature": list(PCA_INPUT_COLUMNS), "loading": loadings})
    return VisualIndexResult(out, loading_frame)
