"""Maximum-likelihood linear mixed model with crossed random intercepts.

Model: y = X beta + sum_t Z_t b_t + e, with b_t ~ N(0, theta_t * sigma2 * I)
per random term (intercept factors and group-indexed slopes) and
e ~ N(0, sigma2 * I).  Writing V0 = I + sum_t theta_t Z_t Z_t', both beta and
sigma2 have closed forms given theta, so the likelihood is profiled down to
the variance ratios and maximized over log theta with bounded L-BFGS-B from
a deterministic start (theta = 1) plus seeded random restarts.  The gradient
of the profiled likelihood is analytic (envelope theorem):

    d loglik / d theta_t = 0.5 * (n * ||Z_t' u||^2 / RSS - tr(Z_t' V0^-1 Z_t)),
    u = V0^-1 (y - X beta_hat),

so the optimizer converges tightly instead of rattling inside a
finite-difference tolerance band.

All linear algebra runs through the Woodbury identity on M = I_q + W'W with
W the ratio-scaled random-effect design, so only a q x q system is factorized
(dense Cholesky for small q, sparse LU otherwise); V0 itself is never formed.
Rows are re-ordered internally to a canonical sort and group levels are coded
in sorted order, which makes every estimate exactly invariant to input row
permutations.  Estimated ratios hitting the lower bound are reported at the
floor with a boundary flag.  Fixed-effect inference uses asymptotic normal
standard errors sqrt(diag((X' V0^-1 X)^-1 sigma2)).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, optimize, sparse, stats
from scipy.sparse.linalg import splu

try:
    # BLAS thread pools lose badly on the many small factorizations inside
    # the profile loop; pin them to one thread around the hot paths.
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    from contextlib import nullcontext

    def threadpool_limits(limits=None):
        return nullcontext()


from .design import DesignMatrix, RandomStructure

#: Two-sided 95% normal critical value used for all reported intervals.
Z975 = 1.959964

_SOLVE_CHUNK = 512


@dataclass(frozen=True)
class FitOptions:
    n_restarts: int = 3
    seed: int = 0
    maxiter: int = 500
    ftol: float = 1e-14
    gtol: float = 1e-8
    theta_floor: float = 1e-8
    theta_ceil: float = 1e8
    dense_q: int = 500
    ridge: float = 1e-10
    #: Diagnostics-only alternative criterion; reported results use ML.
    reml: bool = False


@dataclass
class MixedFit:
    columns: list[str]
    beta: np.ndarray
    se: np.ndarray
    loglik: float
    sigma2: float
    theta: dict[str, float]
    varcomps: dict[str, float]
    converged: bool
    boundary_terms: list[str]
    n_obs: int
    n_groups: dict[str, int]
    cov_beta: np.ndarray
    options: FitOptions = field(default_factory=FitOptions)

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.se > 0, self.beta / self.se, np.nan)

    @property
    def p(self) -> np.ndarray:
        return np.where(np.isfinite(self.z), 2.0 * stats.norm.sf(np.abs(self.z)), np.nan)


def _factorize_sorted(labels: np.ndarray) -> tuple[np.ndarray, int]:
    codes, uniques = pd.factorize(labels, sort=True, use_na_sentinel=False)
    return codes.astype(np.int64), len(uniques)


@dataclass
class _RandomTerm:
    name: str
    Z: sparse.csr_matrix
    n_levels: int


class MixedModel:
    """Profiled-likelihood workspace for one design and random structure."""

    def __init__(
        self,
        design: DesignMatrix,
        structure: RandomStructure,
        options: FitOptions = FitOptions(),
    ):
        self.design = design
        self.structure = structure
        self.options = options
        X = np.asarray(design.X, dtype=float)
        y = np.asarray(design.y, dtype=float)
        self.n, self.p = X.shape

        # Canonical row order: sorted group codes, then regressors, then the
        # response.  Rows tied on every key are bit-identical, so partial sums
        # cannot depend on the input permutation.
        keys: list[np.ndarray] = []
        for name in sorted(design.groups):
            codes, _ = _factorize_sorted(np.asarray(design.groups[name]))
            keys.append(codes)
        keys.extend(X[:, j] for j in range(self.p))
        keys.append(y)
        order = np.lexsort(tuple(reversed(keys)))
        self.X = X[order]
        self.y = y[order]
        self._groups = {name: np.asarray(arr)[order] for name, arr in design.groups.items()}

        self.terms = self._build_terms(structure)
        self.k = len(self.terms)
        self.term_names = [t.name for t in self.terms]
        self.term_sizes = np.array([t.n_levels for t in self.terms], dtype=np.int64)
        self.q = int(self.term_sizes.sum())
        self._slices = []
        offset = 0
        for size in self.term_sizes:
            self._slices.append(slice(offset, offset + int(size)))
            offset += int(size)

        if self.k:
            Zall = sparse.hstack([t.Z for t in self.terms], format="csr")
            self._ZtZ = (Zall.T @ Zall).tocsc()
            self._ZtZ_diag = np.asarray(self._ZtZ.diagonal())
            self._ZtXy = np.asarray(Zall.T @ np.column_stack([self.X, self.y]))
            self._term_of_level = np.repeat(np.arange(self.k), self.term_sizes)
        else:
            self._ZtZ = None
            self._ZtZ_diag = np.zeros(0)
            self._ZtXy = np.zeros((0, self.p + 1))
            self._term_of_level = np.zeros(0, dtype=np.int64)
        self._dense = self.q <= options.dense_q
        self._ZtZ_dense = self._ZtZ.toarray() if (self._dense and self.k) else None
        self._blocks = self._find_blocks() if (self.k and not self._dense) else None
        self._XtX = self.X.T @ self.X
        self._Xty = self.X.T @ self.y
        self._yty = float(self.y @ self.y)

    def _find_blocks(self) -> list[tuple[np.ndarray, np.ndarray]] | None:
        """Connected components of the level graph, when usefully small.

        Nested structures (every random-effect level tied to one collection)
        make M block diagonal; factoring the blocks densely is far cheaper
        than any generic sparse path.  Returns (indices, dense ZtZ block)
        pairs, or None when the graph is effectively one large component.
        """
        from scipy.sparse.csgraph import connected_components

        n_comp, labels = connected_components(self._ZtZ, directed=False)
        if n_comp < 2:
            return None
        order = np.argsort(labels, kind="stable")
        boundaries = np.flatnonzero(np.diff(labels[order])) + 1
        groups = np.split(order, boundaries)
        if max(len(g) for g in groups) > 1500:
            return None
        return [(idx, self._ZtZ[np.ix_(idx, idx)].toarray()) for idx in groups]

    def _build_terms(self, structure: RandomStructure) -> list[_RandomTerm]:
        rows = np.arange(self.n)
        terms: list[_RandomTerm] = []
        for group in structure.intercepts:
            if group not in self._groups:
                raise ValueError(f"unknown group label {group!r}")
            codes, g = _factorize_sorted(self._groups[group])
            Z = sparse.csr_matrix((np.ones(self.n), (rows, codes)), shape=(self.n, g))
            terms.append(_RandomTerm(group, Z, g))
        for group, column in structure.slopes:
            if group not in self._groups:
                raise ValueError(f"unknown group label {group!r}")
            codes, g = _factorize_sorted(self._groups[group])
            values = self.X[:, self.design.column_index(column)]
            Z = sparse.csr_matrix((values, (rows, codes)), shape=(self.n, g))
            terms.append(_RandomTerm(f"{group}*{column}", Z, g))
        return terms

    def _expand(self, theta: np.ndarray) -> np.ndarray:
        return np.repeat(np.sqrt(np.asarray(theta, dtype=float)), self.term_sizes)

    @staticmethod
    def _cho_with_ridge(M: np.ndarray, ridge: float):
        try:
            return linalg.cho_factor(M, lower=True)
        except linalg.LinAlgError:
            warnings.warn("random-effect system singular; applying ridge")
            M[np.diag_indices_from(M)] += ridge
            return linalg.cho_factor(M, lower=True)

    def _factor(self, s: np.ndarray):
        """Factor M = I + D ZtZ D; returns (solve, logdet, diag_inv or None).

        ``diag_inv`` lazily yields diag(M^-1), available on the dense and
        block-diagonal paths where it is cheap; the generic sparse-LU path
        returns None and the gradient falls back to column solves.
        """
        ridge = self.options.ridge
        if self._dense:
            M = s[:, None] * self._ZtZ_dense * s[None, :]
            M[np.diag_indices_from(M)] += 1.0
            factor = self._cho_with_ridge(M, ridge)
            logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))

            def diag_inv() -> np.ndarray:
                linv = linalg.solve_triangular(
                    factor[0], np.eye(self.q), lower=True, check_finite=False
                )
                return (linv**2).sum(axis=0)

            return lambda rhs: linalg.cho_solve(factor, rhs), logdet, diag_inv
        if self._blocks is not None:
            factors = []
            logdet = 0.0
            for idx, block in self._blocks:
                sb = s[idx]
                M = sb[:, None] * block * sb[None, :]
                M[np.diag_indices_from(M)] += 1.0
                factor = self._cho_with_ridge(M, ridge)
                logdet += 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
                factors.append(factor)

            def solve(rhs: np.ndarray) -> np.ndarray:
                out = np.empty_like(rhs, dtype=float)
                for (idx, _), factor in zip(self._blocks, factors):
                    out[idx] = linalg.cho_solve(factor, rhs[idx])
                return out

            def diag_inv() -> np.ndarray:
                out = np.empty(self.q)
                for (idx, _), factor in zip(self._blocks, factors):
                    linv = linalg.solve_triangular(
                        factor[0], np.eye(len(idx)), lower=True, check_finite=False
                    )
                    out[idx] = (linv**2).sum(axis=0)
                return out

            return solve, logdet, diag_inv
        D = sparse.diags(s)
        M = (sparse.identity(self.q, format="csc") + D @ self._ZtZ @ D).tocsc()
        try:
            lu = splu(M)
        except RuntimeError:
            warnings.warn("random-effect system singular; applying ridge")
            M = M + ridge * sparse.identity(self.q, format="csc")
            lu = splu(M)
        logdet = float(np.sum(np.log(np.abs(lu.U.diagonal()))))
        return lu.solve, logdet, None

    def _solve(self, theta: np.ndarray, want_grad: bool = False, reml: bool = False) -> dict:
        """GLS solution, profiled scale, log-likelihood, optional gradient.

        With ``reml`` the criterion, scale, and gradient switch to the
        restricted likelihood: the scale divisor becomes n - p and the
        objective and gradient pick up the log det X'V0^-1 X adjustment.
        """
        n, p = self.n, self.p
        if self.k:
            s = self._expand(theta)
            solve, logdet, diag_inv = self._factor(s)
            R = s[:, None] * self._ZtXy
            MinvR = solve(R)
            G = R.T @ MinvR
        else:
            logdet = 0.0
            G = np.zeros((p + 1, p + 1))
            solve = None
            diag_inv = None
            s = np.zeros(0)

        XtViX = self._XtX - G[:p, :p]
        XtViy = self._Xty - G[:p, p]
        ytViy = self._yty - G[p, p]
        try:
            h_factor = linalg.cho_factor(XtViX, lower=True)
            beta = linalg.cho_solve(h_factor, XtViy)
        except linalg.LinAlgError:
            warnings.warn("fixed-effect system not positive definite; using pseudo-inverse")
            h_factor = None
            beta = np.linalg.pinv(XtViX) @ XtViy
        rss = max(float(ytViy - beta @ XtViy), 1e-300)
        dof = n - p if reml else n
        sigma2 = rss / dof
        loglik = -0.5 * (dof * math.log(2.0 * math.pi) + dof * math.log(sigma2) + logdet + dof)
        if reml:
            if h_factor is not None:
                loglik -= float(np.sum(np.log(np.diag(h_factor[0]))))
            else:
                loglik -= 0.5 * float(np.linalg.slogdet(XtViX)[1])
        out = {"loglik": loglik, "beta": beta, "sigma2": sigma2, "XtViX": XtViX}
        if not want_grad or not self.k:
            if want_grad:
                out["grad"] = np.zeros(0)
            return out

        # Envelope-theorem gradient wrt theta.
        Ztr = self._ZtXy[:, p] - self._ZtXy[:, :p] @ beta
        Ztu = Ztr - self._ZtZ @ (s * solve(s * Ztr))
        quad = np.array([float(Ztu[sl] @ Ztu[sl]) for sl in self._slices])
        traces = self._traces(theta, s, solve, diag_inv)
        grad = 0.5 * (dof * quad / rss - traces)
        if reml:
            # d log|X'V0^-1 X|/d theta_t = -tr(K_t H^-1 K_t'), with
            # K = Z'V0^-1 X recovered from the solves already performed.
            K = self._ZtXy[:, :p] - self._ZtZ @ (s[:, None] * MinvR[:, :p])
            if h_factor is not None:
                KHalf = linalg.cho_solve(h_factor, K.T)
            else:
                KHalf = np.linalg.pinv(XtViX) @ K.T
            per_level = np.einsum("ij,ji->i", K, KHalf)
            for t, sl in enumerate(self._slices):
                grad[t] += 0.5 * float(per_level[sl].sum())
        out["grad"] = grad
        return out

    def _traces(self, theta, s, solve, diag_inv) -> np.ndarray:
        """tr(Z_t' V0^-1 Z_t) per random term.

        With diag(M^-1) available, use the Woodbury block identity
        tr = (g_t - tr[(M^-1)_tt]) / theta_t; it degrades numerically only as
        theta_t approaches zero, where the direct column-solve form
        tr(Z_t'Z_t) - sum_j ||L^-1 D Z'Z e_j||^2 takes over.
        """
        traces = np.empty(self.k)
        direct = []
        if diag_inv is not None:
            diag = diag_inv()
            for t, sl in enumerate(self._slices):
                if theta[t] >= 1e-6:
                    traces[t] = (self.term_sizes[t] - float(diag[sl].sum())) / theta[t]
                else:
                    direct.append(t)
        else:
            direct = list(range(self.k))
        for t in direct:
            sl = self._slices[t]
            base = float(self._ZtZ_diag[sl].sum())
            correction = 0.0
            for start in range(sl.start, sl.stop, _SOLVE_CHUNK):
                stop = min(start + _SOLVE_CHUNK, sl.stop)
                block = self._ZtZ[:, start:stop].toarray() * s[:, None]
                correction += float((block * solve(block)).sum())
            traces[t] = base - correction
        return traces

    def profile_loglik(self, theta) -> tuple[float, np.ndarray, float]:
        """(loglik, beta_hat, sigma2_hat) at fixed variance ratios ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.k,):
            raise ValueError(f"theta must have length {self.k}, got {theta.shape}")
        if np.any(theta < 0):
            raise ValueError("theta must be nonnegative")
        with threadpool_limits(limits=1):
            out = self._solve(theta)
        return out["loglik"], out["beta"], out["sigma2"]

    def fit(self, options: FitOptions | None = None) -> MixedFit:
        opts = options or self.options
        if self.k == 0:
            solved = self._solve(np.empty(0), reml=opts.reml)
            return self._build_fit(np.empty(0), solved, converged=True, opts=opts)

        log_floor = math.log(opts.theta_floor)
        log_ceil = math.log(opts.theta_ceil)
        bounds = [(log_floor, log_ceil)] * self.k
        best: dict = {"obj": np.inf, "x": None}

        def raw_eval(x: np.ndarray) -> tuple[float, np.ndarray]:
            theta = np.exp(x)
            solved = self._solve(theta, want_grad=True, reml=opts.reml)
            return -solved["loglik"], -solved["grad"] * theta

        def objective(x: np.ndarray) -> tuple[float, np.ndarray]:
            value, grad = raw_eval(x)
            if value < best["obj"]:
                best["obj"] = value
                best["x"] = x.copy()
            return value, grad

        rng = np.random.Generator(np.random.Philox(key=np.uint64(opts.seed)))
        starts = [np.zeros(self.k)]
        for _ in range(opts.n_restarts):
            starts.append(rng.uniform(-2.0, 2.0, size=self.k))
        any_success = False
        with threadpool_limits(limits=1):
            for start in starts:
                res = optimize.minimize(
                    objective,
                    np.clip(start, log_floor, log_ceil),
                    method="L-BFGS-B",
                    jac=True,
                    bounds=bounds,
                    options={"maxiter": opts.maxiter, "ftol": opts.ftol, "gtol": opts.gtol},
                )
                any_success = any_success or bool(res.success)
            x_pol, f_pol = self._polish(raw_eval, best["x"], log_floor, log_ceil)
            if f_pol <= best["obj"] + 1e-10 * max(abs(best["obj"]), 1.0):
                best["obj"] = min(f_pol, best["obj"])
                best["x"] = x_pol
            _, grad = raw_eval(best["x"])
            kkt = np.where(
                best["x"] <= log_floor + 1e-12,
                np.maximum(-grad, 0.0),
                np.where(best["x"] >= log_ceil - 1e-12, np.maximum(grad, 0.0), np.abs(grad)),
            )
            converged = any_success or float(np.max(kkt, initial=0.0)) < 1e-6
            theta_hat = np.exp(best["x"])
            solved = self._solve(theta_hat, reml=opts.reml)
        return self._build_fit(theta_hat, solved, converged=converged, opts=opts)

    @staticmethod
    def _polish(raw_eval, x0: np.ndarray, lo: float, hi: float) -> tuple[np.ndarray, float]:
        """Active-set Newton cleanup on the analytic gradient.

        L-BFGS-B stops inside a tolerance band while the true improvement of
        the remaining steps sits below the objective's floating-point noise,
        so steps are judged by gradient-norm descent (the analytic gradient
        still moves by orders of magnitude there) with an objective increase
        guard of 1e-10 relative.  Driving the gradient to ~1e-12 pins the
        ratios to the stationary point, making estimates reproducible under
        row permutations and response rescaling.
        """
        x = x0.copy()
        k = x.size
        f, g = raw_eval(x)
        guard = 1e-10 * max(abs(f), 1.0)
        for _ in range(8):
            at_lower = (x <= lo + 1e-12) & (g > 0)
            at_upper = (x >= hi - 1e-12) & (g < 0)
            free = ~(at_lower | at_upper)
            if not free.any():
                break
            gnorm = float(np.max(np.abs(g[free])))
            if gnorm < 1e-12:
                break
            idx = np.flatnonzero(free)
            h = 1e-6
            hessian = np.empty((idx.size, idx.size))
            for col, j in enumerate(idx):
                step = np.zeros(k)
                step[j] = h
                _, g_plus = raw_eval(np.clip(x + step, lo, hi))
                hessian[:, col] = (g_plus[idx] - g[idx]) / h
            hessian = 0.5 * (hessian + hessian.T)
            try:
                delta = np.linalg.solve(hessian + 1e-12 * np.eye(idx.size), -g[idx])
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(delta)):
                break
            scale = 1.0
            improved = False
            for _ in range(8):
                trial = x.copy()
                trial[idx] = np.clip(x[idx] + scale * delta, lo, hi)
                f_trial, g_trial = raw_eval(trial)
                trial_free = ~((trial <= lo + 1e-12) & (g_trial > 0)) & ~(
                    (trial >= hi - 1e-12) & (g_trial < 0)
                )
                gnorm_trial = (
                    float(np.max(np.abs(g_trial[trial_free]))) if trial_free.any() else 0.0
                )
                if f_trial <= f + guard and (gnorm_trial < 0.9 * gnorm or f_trial < f):
                    x, f, g = trial, f_trial, g_trial
                    improved = True
                    break
                scale *= 0.5
            if not improved:
                break
        return x, f

    def _build_fit(
        self, theta_hat: np.ndarray, solved: dict, converged: bool, opts: FitOptions
    ) -> MixedFit:
        sigma2 = solved["sigma2"]
        try:
            cov_beta = sigma2 * linalg.inv(solved["XtViX"])
        except linalg.LinAlgError:
            cov_beta = sigma2 * np.linalg.pinv(solved["XtViX"])
        se = np.sqrt(np.clip(np.diag(cov_beta), 0.0, None))
        boundary = [
            name
            for name, value in zip(self.term_names, theta_hat)
            if value <= opts.theta_floor * (1.0 + 1e-6)
        ]
        theta = dict(zip(self.term_names, (float(v) for v in theta_hat)))
        varcomps = {name: float(v * sigma2) for name, v in zip(self.term_names, theta_hat)}
        varcomps["residual"] = float(sigma2)
        return MixedFit(
            columns=list(self.design.columns),
            beta=solved["beta"],
            se=se,
            loglik=float(solved["loglik"]),
            sigma2=float(sigma2),
            theta=theta,
            varcomps=varcomps,
            converged=converged,
            boundary_terms=boundary,
            n_obs=self.n,
            n_groups={t.name: t.n_levels for t in self.terms},
            cov_beta=cov_beta,
            options=opts,
        )


def profile_loglik(
    design: DesignMatrix, structure: RandomStructure, theta
) -> tuple[float, np.ndarray, float]:
    """Module-level convenience wrapper around :meth:`MixedModel.profile_loglik`."""
    return MixedModel(design, structure).profile_loglik(theta)


def fit_ml(
    design: DesignMatrix,
    structure: RandomStructure,
    options: FitOptions = FitOptions(),
) -> MixedFit:
    """Maximum-likelihood fit of the mixed model on an assembled design."""
    return MixedModel(design, structure, options).fit(options)


def fixed_effect_inference(fit: MixedFit) -> pd.DataFrame:
    """Coefficient table: variable, coef, se, z, p, ci_low, ci_high.

    Zero standard errors are guarded: the z and p entries come back missing
    rather than dividing by zero.
    """
    z = fit.z
    p = fit.p
    return pd.DataFrame(
        {
            "variable": fit.columns,
            "coef": fit.beta,
            "se": fit.se,
            "z": z,
            "p": p,
            "ci_low": fit.beta - Z975 * fit.se,
            "ci_high": fit.beta + Z975 * fit.se,
        }
    )


def semi_elasticity(beta: float) -> float:
    """Percent change of expected 1 + price per one-unit regressor move."""
    return float(np.expm1(beta))
