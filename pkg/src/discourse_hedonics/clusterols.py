"""Fixed-effects OLS benchmark with cluster-robust (CR1) inference.

The point estimates come from a column-pivoted QR solve; rank-deficient
designs drop aliased columns with a warning and the dropped names are kept on
the fit object.  The covariance is the CR1 sandwich

    c * (X'X)^-1 (sum_g X_g' u_g u_g' X_g) (X'X)^-1,
    c = G/(G-1) * (N-1)/(N-K),

which reduces to HC1 when every observation is its own cluster.  Clustering
changes only the covariance, never the coefficients.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .design import DesignMatrix
from .mixedmodel import Z975


@dataclass
class OlsSolution:
    """Least-squares solution; ``beta`` is aligned to the ``kept`` column indices."""

    beta: np.ndarray
    residuals: np.ndarray
    kept: list[int]
    aliased: list[int]
    rank: int


@dataclass
class ClusteredOlsFit:
    columns: list[str]
    beta: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    r2: float
    adj_r2: float
    loglik: float
    n_obs: int
    n_clusters: int
    aliased_columns: list[str] = field(default_factory=list)
    cov: np.ndarray | None = None

    def table(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "variable": self.columns,
                "coef": self.beta,
                "se": self.se,
                "z": self.z,
                "p": self.p,
                "ci_low": self.ci_low,
                "ci_high": self.ci_high,
            }
        )


def fit_fe_ols(X: np.ndarray, y: np.ndarray) -> OlsSolution:
    """Least squares via column-pivoted QR, dropping aliased columns.

    Columns whose pivoted R diagonal falls below ``eps * max(n, p) * |R_00|``
    are treated as aliased, dropped with a warning, and recorded.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    _, r, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = np.finfo(float).eps * max(n, p) * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    kept = sorted(piv[:rank].tolist())
    aliased = sorted(piv[rank:].tolist())
    if aliased:
        warnings.warn(f"dropping {len(aliased)} aliased design column(s): {aliased}")
    Xk = X[:, kept]
    qk, rk = linalg.qr(Xk, mode="economic")
    beta = linalg.solve_triangular(rk, qk.T @ y)
    residuals = y - Xk @ beta
    return OlsSolution(beta=beta, residuals=residuals, kept=kept, aliased=aliased, rank=rank)


def cluster_robust_vcov(
    X: np.ndarray, residuals: np.ndarray, clusters: np.ndarray
) -> np.ndarray:
    """CR1 sandwich covariance for OLS coefficients under cluster labels."""
    X = np.asarray(X, dtype=float)
    u = np.asarray(residuals, dtype=float)
    codes, uniques = pd.factorize(clusters, use_na_sentinel=False)
    n, k = X.shape
    g = len(uniques)
    if g < 2:
        raise ValueError("cluster-robust covariance needs at least 2 clusters")
    bread = linalg.inv(X.T @ X)
    scores = X * u[:, None]
    sums = np.zeros((g, k))
    np.add.at(sums, codes, scores)
    meat = sums.T @ sums
    correction = (g / (g - 1.0)) * ((n - 1.0) / (n - k))
    return correction * bread @ meat @ bread


def fit_benchmark(design: DesignMatrix) -> ClusteredOlsFit:
    """OLS on an assembled design with CR1 inference at the cluster key."""
    sol = fit_fe_ols(design.X, design.y)
    Xk = design.X[:, sol.kept]
    beta_k = sol.beta
    cov = cluster_robust_vcov(Xk, sol.residuals, design.groups["cluster"])
    se_k = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    p_total = design.X.shape[1]
    beta = np.full(p_total, np.nan)
    se = np.full(p_total, np.nan)
    beta[sol.kept] = beta_k
    se[sol.kept] = se_k

    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta / se, np.nan)
    p = np.where(np.isfinite(z), 2.0 * stats.norm.sf(np.abs(z)), np.nan)

    n = len(design.y)
    rss = float(sol.residuals @ sol.residuals)
    tss = float(np.sum((design.y - design.y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1.0) / (n - sol.rank)
    sigma2 = max(rss / n, 1e-300)
    loglik = -0.5 * n * (math.log(2.0 * math.pi) + math.log(sigma2) + 1.0)
    n_clusters = len(pd.unique(design.groups["cluster"]))
    return ClusteredOlsFit(
        columns=list(design.columns),
        beta=beta,
        se=se,
        z=z,
        p=p,
        ci_low=beta - Z975 * se,
        ci_high=beta + Z975 * se,
        r2=r2,
        adj_r2=adj_r2,
        loglik=loglik,
        n_obs=n,
        n_clusters=n_clusters,
        aliased_columns=[design.columns[i] for i in sol.aliased],
        cov=cov,
    )
