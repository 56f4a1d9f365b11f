"""Batch orchestration: staged pipeline, robustness grid, run manifest.

Stages run in a fixed order (``ingest -> text -> panel -> visual -> merge ->
fit``); every stage reads its inputs from files and writes its outputs to the
run directory, so any single stage can be re-run from cached intermediates
and reproduces its outputs byte for byte.  A run ends with a manifest listing
the configuration (hashed) and a content hash of every emitted file; rerunning
with the same configuration and seed yields an identical manifest.

Sensitivity variants re-fit the same specification on a perturbed estimation
sample: drop the largest collection by trades, trim the top price fraction,
or keep only rows whose bin has at least ``min_items_per_bin`` discourse
items.  Window variants re-fit with lag-2 or prior-three-bin-mean discourse
columns; the bin panel carries all variants so a grid run reuses one merge.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import binning, clusterols, design as design_mod, ingest, mixedmodel, smoothing, textmetrics, visualindex

STAGES = ("ingest", "text", "panel", "visual", "merge", "fit")
WINDOWS = ("lag1", "lag2", "roll3")
SENSITIVITIES = ("none", "drop_top_collection", "trim_top_price", "min_items")
ESTIMATORS = ("mixed-mundlak", "mixed-direct", "ols-cluster")

#: Bin-panel base column per discourse signal stem.
SIGNAL_BASES = {"attn": "log_attention", "negshare_rw": "negshare_rw", "polarity_rw": "polarity_rw"}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class RunConfig:
    transactions: Path
    market: Path
    discourse: Path
    features: Path
    out: Path
    lexicon: Path | None = None
    topics: Path | None = None
    target_bins: int = 60
    window: str = "lag1"
    estimator: str = "mixed-mundlak"
    sensitivity: str = "none"
    trim_top_price_pct: float = 0.005
    min_items_per_bin: int = 5
    reference_collection: str | None = None
    seed: int = 0
    n_restarts: int = 3
    make_plots: bool = False
    debug_design: bool = False

    def __post_init__(self) -> None:
        if self.window not in WINDOWS:
            raise ValueError(f"window must be one of {WINDOWS}, got {self.window!r}")
        if self.sensitivity not in SENSITIVITIES:
            raise ValueError(f"sensitivity must be one of {SENSITIVITIES}, got {self.sensitivity!r}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if not 0.0 <= self.trim_top_price_pct <= 0.05:
            raise ValueError(f"trim_top_price_pct must be in [0, 0.05], got {self.trim_top_price_pct}")
        if self.target_bins < 1:
            raise ValueError("target_bins must be >= 1")


_BOOL_KEYS = {"make_plots", "debug_design"}
_INT_KEYS = {"target_bins", "min_items_per_bin", "seed", "n_restarts"}
_FLOAT_KEYS = {"trim_top_price_pct"}
_PATH_KEYS = {"transactions", "market", "discourse", "features", "out", "lexicon", "topics"}


def load_run_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Read a plain-text ``key=value`` configuration file, applying overrides."""
    values: dict = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValueError(f"{path}: unknown configuration keys {unknown}")
    kwargs: dict = {}
    for key, value in values.items():
        if value is None or value == "":
            continue
        if key in _BOOL_KEYS:
            kwargs[key] = str(value).strip().lower() in ("1", "true", "yes", "on")
        elif key in _INT_KEYS:
            kwargs[key] = int(value)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(value)
        elif key in _PATH_KEYS:
            kwargs[key] = Path(value)
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


def _config_echo(config: RunConfig) -> dict:
    """Manifest-safe view of the configuration (output path omitted)."""
    echo = {}
    for f in fields(RunConfig):
        if f.name == "out":
            continue
        value = getattr(config, f.name)
        echo[f.name] = str(value) if isinstance(value, Path) else value
    return echo


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)


def _write_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_ingest(config: RunConfig) -> None:
    out = Path(config.out)
    try:
        parse = ingest.parse_transactions(config.transactions)
        market = ingest.parse_market(config.market)
        joined, n_excluded = ingest.join_market_controls(parse.transactions, market)
    except (ingest.SchemaError, OSError) as exc:
        raise StageError("ingest", str(exc)) from exc
    frame = joined.copy()
    frame["trade_date"] = frame["trade_date"].dt.strftime("%Y-%m-%d")
    _write_csv(frame, out / "stages" / "transactions_joined.csv")
    rejects = pd.DataFrame(
        {"row": [r.row for r in parse.rejects], "reason": [r.reason for r in parse.rejects]}
    )
    _write_csv(rejects, out / "rejects.csv")
    _write_json(
        {
            "n_input_rows": parse.n_input_rows,
            "n_retained": len(parse.transactions),
            "n_rejected": len(parse.rejects),
            "reject_counts": parse.reject_counts,
            "n_market_excluded": n_excluded,
        },
        out / "stages" / "ingest_stats.json",
    )


def stage_text(config: RunConfig) -> None:
    out = Path(config.out)
    try:
        records = ingest.parse_discourse(config.discourse)
        lexicon = textmetrics.load_lexicon(config.lexicon) if config.lexicon else None
        topics = textmetrics.load_topics(config.topics) if config.topics else None
        corpus = textmetrics.score_corpus(records, lexicon, topics)
    except (ingest.SchemaError, OSError, ValueError) as exc:
        raise StageError("text", str(exc)) from exc
    _write_csv(corpus.items.drop(columns=["text"]), out / "stages" / "discourse_items.csv")
    _write_json(
        {
            "n_input": corpus.n_input,
            "n_items": len(corpus.items),
            "n_duplicate_url": corpus.n_duplicate_url,
            "n_too_short": corpus.n_too_short,
            "n_bad_thread_id": corpus.n_bad_thread_id,
        },
        out / "stages" / "text_stats.json",
    )


def stage_panel(config: RunConfig) -> None:
    out = Path(config.out)
    items = pd.read_csv(out / "stages" / "discourse_items.csv")
    if items.empty:
        raise StageError("panel", "no discourse items survived cleaning")
    binned = binning.bin_discourse_items(items, config.target_bins)
    panel = binning.aggregate_bin_cells(binned)

    diagnostics = []
    for variable, rw_name in (("sentiment_polarity", "polarity_rw"), ("is_neg", "negshare_rw")):
        smoothed, diag = smoothing.smooth_series(panel, variable)
        panel[rw_name] = smoothed
        diagnostics.append(diag)
    _write_csv(pd.concat(diagnostics, ignore_index=True), out / "smoothing_diagnostics.csv")

    for stem, base in SIGNAL_BASES.items():
        panel[f"{stem}_lag1"] = binning.lag_shift(panel, base, 1)
        panel[f"{stem}_lag2"] = binning.lag_shift(panel, base, 2)
        panel[f"{stem}_roll3"] = binning.rolling_window_mean(panel, base, 3)
    lag_columns = [f"{stem}{suffix}" for stem in SIGNAL_BASES for suffix in ("_lag1", "_lag2", "_roll3")]
    panel = design_mod.attach_mundlak_columns(panel, lag_columns)
    _write_csv(panel, out / "bin_panel.csv")


def stage_visual(config: RunConfig) -> None:
    out = Path(config.out)
    try:
        features = pd.read_csv(config.features)
        result = visualindex.build_visual_index(features)
    except (OSError, ValueError) as exc:
        raise StageError("visual", str(exc)) from exc
    _write_csv(result.scores, out / "visual_index.csv")
    _write_csv(result.loadings, out / "pc1_loadings.csv")


def stage_merge(config: RunConfig) -> None:
    out = Path(config.out)
    txs = pd.read_csv(out / "stages" / "transactions_joined.csv", parse_dates=["trade_date"])
    panel = pd.read_csv(out / "bin_panel.csv")
    visual = pd.read_csv(out / "visual_index.csv")
    txs["trade_bin"] = binning.assign_trade_bins_all(txs, panel)
    merged, n_excluded = binning.merge_bins_to_trades(txs, panel)
    merged = merged.merge(
        visual[["nft_id", "visual_index_explicit_z"]], on="nft_id", how="left", validate="many_to_one"
    )
    audit = binning.audit_lags(merged)
    _write_csv(audit.to_frame(), out / "lag_audit.csv")
    cache = merged.copy()
    cache["trade_date"] = cache["trade_date"].dt.strftime("%Y-%m-%d")
    _write_csv(cache, out / "stages" / "estimation_table.csv")
    _write_json({"n_excluded_no_panel": n_excluded, "n_rows": len(merged)}, out / "stages" / "merge_stats.json")


def _apply_sensitivity(table: pd.DataFrame, config: RunConfig) -> tuple[pd.DataFrame, dict]:
    if config.sensitivity == "none":
        return table, {"sensitivity": "none", "n_dropped": 0}
    if config.sensitivity == "drop_top_collection":
        top = design_mod.most_traded_collection(table)
        kept = table.loc[table["collection_code"] != top].reset_index(drop=True)
        return kept, {"sensitivity": "drop_top_collection", "dropped_collection": top, "n_dropped": len(table) - len(kept)}
    if config.sensitivity == "trim_top_price":
        k = math.floor(len(table) * config.trim_top_price_pct)
        if k == 0:
            return table, {"sensitivity": "trim_top_price", "n_dropped": 0}
        order = table.sort_values(["price_usd", "tx_id"], ascending=[False, True], kind="stable")
        kept = table.drop(index=order.index[:k]).reset_index(drop=True)
        return kept, {"sensitivity": "trim_top_price", "n_dropped": k}
    kept = table.loc[table["n_items"] >= config.min_items_per_bin].reset_index(drop=True)
    return kept, {"sensitivity": "min_items", "n_dropped": len(table) - len(kept)}


def _spec_for(config: RunConfig) -> design_mod.ModelSpec:
    if config.estimator == "mixed-mundlak":
        return design_mod.mundlak_spec(config.window)
    if config.estimator == "mixed-direct":
        return design_mod.direct_spec(config.window)
    return design_mod.clustered_spec(config.window, config.reference_collection)


def _fit_mixed(config: RunConfig, spec, dm) -> tuple[pd.DataFrame, dict, dict]:
    options = mixedmodel.FitOptions(n_restarts=config.n_restarts, seed=config.seed)
    fit = mixedmodel.fit_ml(dm, spec.random_structure, options)
    table = mixedmodel.fixed_effect_inference(fit)
    summary = {
        "estimator": config.estimator,
        "window": config.window,
        "n_obs": fit.n_obs,
        "loglik": fit.loglik,
        "scale": fit.sigma2,
        "converged": fit.converged,
        "boundary_terms": ",".join(fit.boundary_terms),
    }
    for name, count in fit.n_groups.items():
        summary[f"n_groups[{name}]"] = count
    varcomps = dict(fit.varcomps)
    return table, summary, varcomps


def _fit_clustered(config: RunConfig, dm) -> tuple[pd.DataFrame, dict, list[str]]:
    fit = clusterols.fit_benchmark(dm)
    summary = {
        "estimator": config.estimator,
        "window": config.window,
        "n_obs": fit.n_obs,
        "n_clusters": fit.n_clusters,
        "r2": fit.r2,
        "adj_r2": fit.adj_r2,
        "loglik": fit.loglik,
        "converged": True,
    }
    return fit.table(), summary, fit.aliased_columns


def stage_fit(config: RunConfig, variant_dir: Path | None = None) -> dict:
    out = Path(config.out)
    target = variant_dir if variant_dir is not None else out
    table = pd.read_csv(out / "stages" / "estimation_table.csv", parse_dates=["trade_date"])
    table, sensitivity_info = _apply_sensitivity(table, config)
    spec = _spec_for(config)
    try:
        dm = design_mod.assemble_design(spec, table)
    except design_mod.DesignError as exc:
        raise StageError("fit", str(exc)) from exc
    if config.debug_design:
        _write_csv(dm.frame(), target / "design_matrix.csv")

    if config.estimator in ("mixed-mundlak", "mixed-direct"):
        coef_table, summary, varcomps = _fit_mixed(config, spec, dm)
        _write_csv(coef_table, target / "coefficients.csv")
        _write_csv(
            pd.DataFrame({"term": list(varcomps), "variance": list(varcomps.values())}),
            target / "variance_components.csv",
        )
    else:
        coef_table, summary, aliased = _fit_clustered(config, dm)
        _write_csv(coef_table, target / "table4.csv")
        _write_csv(coef_table, target / "coefficients.csv")
        _write_csv(pd.DataFrame({"aliased_column": aliased}), target / "aliased_columns.csv")
        summary["reference_collection"] = dm.reference_collection
        summary["heterogeneity_excluded"] = ",".join(dm.heterogeneity_excluded)
    summary.update(sensitivity_info)
    summary["n_complete_case_dropped"] = dm.n_dropped
    summary["reference_month"] = dm.reference_month
    _write_csv(pd.DataFrame([summary]), target / "fit_summary.csv")
    if config.make_plots:
        _make_plots(out, target, coef_table)
    return summary


def _make_plots(out: Path, target: Path, coef_table: pd.DataFrame) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    shown = coef_table[~coef_table["variable"].str.startswith(("month_", "collection_"))]
    fig, ax = plt.subplots(figsize=(7, 0.35 * len(shown) + 1.5))
    ax.barh(shown["variable"], shown["coef"], xerr=mixedmodel.Z975 * shown["se"], color="#4878a8")
    ax.axvline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("coefficient (95% interval)")
    fig.tight_layout()
    fig.savefig(target / "coefficients.png", dpi=120)
    plt.close(fig)

    panel = pd.read_csv(out / "bin_panel.csv")
    fig, ax = plt.subplots(figsize=(8, 4))
    for code, group in panel.groupby("collection_code"):
        ax.plot(group["bin_index"], group["polarity_rw"], label=str(code), linewidth=1.0)
    ax.set_xlabel("bin")
    ax.set_ylabel("smoothed polarity")
    ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    fig.savefig(target / "smoothed_polarity.png", dpi=120)
    plt.close(fig)


def write_manifest(config: RunConfig) -> Path:
    """Hash every file in the run directory into ``run_manifest.json``."""
    out = Path(config.out)
    files = sorted(
        p.relative_to(out).as_posix()
        for p in out.rglob("*")
        if p.is_file() and p.name != "run_manifest.json"
    )
    echo = _config_echo(config)
    config_hash = hashlib.sha256(
        json.dumps(echo, sort_keys=True).encode("utf-8")
    ).hexdigest()
    manifest = {
        "config": echo,
        "config_hash": config_hash,
        "files": {name: _sha256(out / name) for name in files},
    }
    path = out / "run_manifest.json"
    _write_json(manifest, path)
    return path


_STAGE_FUNCTIONS = {
    "ingest": stage_ingest,
    "text": stage_text,
    "panel": stage_panel,
    "visual": stage_visual,
    "merge": stage_merge,
    "fit": stage_fit,
}


@dataclass
class RunResult:
    out: Path
    manifest_path: Path
    fit_summary: dict | None = None


def run_pipeline(config: RunConfig, stage: str = "all") -> RunResult:
    """Run the whole pipeline, or one named stage from cached intermediates."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    if stage == "all":
        to_run = STAGES
    elif stage in STAGES:
        to_run = (stage,)
    else:
        raise ValueError(f"unknown stage {stage!r}; expected one of {('all', *STAGES)}")
    fit_summary = None
    for name in to_run:
        try:
            result = _STAGE_FUNCTIONS[name](config)
        except StageError:
            raise
        except FileNotFoundError as exc:
            raise StageError(name, f"missing cached input: {exc}") from exc
        if name == "fit":
            fit_summary = result
    manifest_path = write_manifest(config)
    return RunResult(out=out, manifest_path=manifest_path, fit_summary=fit_summary)


# ---------------------------------------------------------------------------
# Robustness grid
# ---------------------------------------------------------------------------

WINDOW_VARIANTS = (("A", "lag1"), ("B", "lag2"), ("C", "roll3"))
SAMPLE_VARIANTS = (
    ("S0", "none"),
    ("S1", "drop_top_collection"),
    ("S2", "trim_top_price"),
    ("S3", "min_items"),
)


def _reddit_summary_rows(coef_path: Path, window: str) -> dict[str, tuple[float, float]]:
    table = pd.read_csv(coef_path).set_index("variable")
    suffix = design_mod.WINDOW_SUFFIXES[window]
    rows = {}
    for stem, label in (("attn", "attention"), ("negshare_rw", "negshare"), ("polarity_rw", "polarity")):
        for component, tag in (("_within", "within"), ("_bar", "between")):
            name = f"{stem}{suffix}{component}"
            if name in table.index:
                rows[f"{label}_{tag}"] = (
                    float(table.loc[name, "coef"]),
                    float(table.loc[name, "se"]),
                )
    return rows


def _grid_frame(results: dict[str, dict[str, tuple[float, float]]], extras: dict[str, dict]) -> pd.DataFrame:
    row_order = [
        f"{label}_{tag}"
        for label in ("attention", "negshare", "polarity")
        for tag in ("within", "between")
    ]
    data: dict[str, list] = {"term": row_order + ["n_obs", "n_nft_groups"]}
    for tag, rows in results.items():
        coef_col, se_col = [], []
        for term in row_order:
            coef, se = rows.get(term, (np.nan, np.nan))
            coef_col.append(coef)
            se_col.append(se)
        coef_col.extend([extras[tag].get("n_obs"), extras[tag].get("n_groups[nft_id]")])
        se_col.extend([np.nan, np.nan])
        data[f"coef_{tag}"] = coef_col
        data[f"se_{tag}"] = se_col
    return pd.DataFrame(data)


def run_robustness(config: RunConfig) -> RunResult:
    """Baseline plus window variants (A-C) and sample perturbations (S0-S3).

    The shared stages run once; every variant is a full re-fit on its own
    estimation sample and window columns, written under ``variants/``.  The
    grid always uses the within-between mixed estimator, whose coefficients
    the summary tables extract.
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    base = replace(config, window="lag1", sensitivity="none", estimator="mixed-mundlak")
    for name in ("ingest", "text", "panel", "visual", "merge"):
        _STAGE_FUNCTIONS[name](base)

    window_results: dict[str, dict] = {}
    window_extras: dict[str, dict] = {}
    for tag, window in WINDOW_VARIANTS:
        variant = replace(base, window=window)
        variant_dir = out / "variants" / f"window_{tag}"
        summary = stage_fit(variant, variant_dir=variant_dir)
        window_results[tag] = _reddit_summary_rows(variant_dir / "coefficients.csv", window)
        window_extras[tag] = summary

    sample_results: dict[str, dict] = {}
    sample_extras: dict[str, dict] = {}
    for tag, sensitivity in SAMPLE_VARIANTS:
        variant = replace(base, sensitivity=sensitivity)
        variant_dir = out / "variants" / f"sample_{tag}"
        summary = stage_fit(variant, variant_dir=variant_dir)
        sample_results[tag] = _reddit_summary_rows(variant_dir / "coefficients.csv", "lag1")
        sample_extras[tag] = summary

    _write_csv(_grid_frame(window_results, window_extras), out / "robustness_windows.csv")
    _write_csv(_grid_frame(sample_results, sample_extras), out / "robustness_samples.csv")
    manifest_path = write_manifest(config)
    return RunResult(out=out, manifest_path=manifest_path, fit_summary=None)
