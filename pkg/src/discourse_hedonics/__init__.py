"""Discourse-to-price hedonic pipeline.

Submodules, in pipeline order: :mod:`ingest` (file parsing, price transform),
:mod:`textmetrics` (cleaning, sentiment, topics), :mod:`binning` (pseudo-time
quantile bins, lags, audit), :mod:`smoothing` (local-level state space),
:mod:`visualindex` (explicit-trait PCA index), :mod:`design` (within-between
split, z-scores, layouts), :mod:`mixedmodel` and :mod:`clusterols`
(estimators), :mod:`simoracle` (synthetic data and oracles), and
:mod:`pipeline` / :mod:`cli` (batch orchestration).
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    binning,
    clusterols,
    design,
    fixtures,
    ingest,
    mixedmodel,
    pipeline,
    simoracle,
    smoothing,
    textmetrics,
    visualindex,
)
