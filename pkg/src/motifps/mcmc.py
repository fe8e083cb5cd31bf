"""Gibbs sampler for CRP co-clustering of one covariate block.

Rows of a block are partitioned into cliques and columns into clusters,
each under a Chinese-restaurant-process prior; every (clique, cluster)
pair owns one motif cell that generates the mapped data cells.  For a
continuous block the cells are Gaussian around the motif value with a
shared noise variance; for a factor block the cells are corrupted copies
of a latent motif level through a row-stochastic, diagonally dominant
corruption matrix.

Assignment moves are collapsed: the affected motif cells are integrated
out analytically (a normal-normal integral for continuous blocks, a
finite sum over levels for factor blocks), after which motifs and
likelihood hyperparameters are refreshed by conjugate draws.  One sweep
updates all rows, all columns, the motif matrix, and the likelihood
parameters, in that order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

__all__ = [
    "ContinuousLik",
    "FactorLik",
    "McmcConfig",
    "McmcTrace",
    "CoClusterState",
    "crp_log_pmf",
    "crp_sequential_draw",
    "default_continuous_lik",
    "default_factor_lik",
    "initial_state",
    "prior_state_draw",
    "sample_block_given_state",
    "gibbs_update_col",
    "gibbs_update_row",
    "gibbs_sweep",
    "update_motif_continuous",
    "update_motif_factor",
    "update_likelihood_params",
    "run_chain",
    "save_checkpoint",
    "load_checkpoint",
]

_W_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class ContinuousLik:
    """Gaussian likelihood parameters for a continuous block.

    ``sigma2`` is the cell noise variance, truncated above at
    ``sigma2_bound`` so the motif structure explains a nontrivial share
    of the variance; ``tau2`` is the motif prior variance.  The priors
    are inverse-gamma with (shape, scale) pairs.
    """

    sigma2: float
    tau2: float
    sigma2_prior: tuple = (2.0, 1.0)
    sigma2_bound: float = 0.5
    tau2_prior: tuple = (2.0, 1.0)

    def validate(self):
        if not (0.0 < self.sigma2 <= self.sigma2_bound):
            raise ValueError(
                f"sigma2={self.sigma2} outside (0, {self.sigma2_bound}]"
            )
        if self.tau2 <= 0.0:
            raise ValueError("tau2 must be positive")

    def copy(self) -> "ContinuousLik":
        return ContinuousLik(
            self.sigma2, self.tau2, tuple(self.sigma2_prior),
            self.sigma2_bound, tuple(self.tau2_prior),
        )


@dataclass
class FactorLik:
    """Categorical-with-corruption likelihood parameters for a factor block.

    ``g`` holds the motif level probabilities; row ``f`` of the
    corruption matrix ``W`` decomposes as
    ``l[f] * e_f + (1 - l[f]) * w_tilde[f]`` with the diagonal anchor
    ``l[f]`` truncated-beta distributed on (l_star, 1], which keeps W
    diagonally dominant.
    """

    g: np.ndarray
    W: np.ndarray
    l: np.ndarray
    w_tilde: np.ndarray
    g_prior: np.ndarray
    l_star: float = 0.85
    l_alpha: float = 9.0
    l_beta: float = 1.0
    dir_alpha: float = 1.0

    @property
    def n_levels(self) -> int:
        return self.g.shape[0]

    def validate(self):
        A = self.n_levels
        if self.W.shape != (A, A) or self.l.shape != (A,):
            raise ValueError("corruption matrix shape inconsistent with g")
        if abs(self.g.sum() - 1.0) > 1e-9 or (self.g <= 0).any():
            raise ValueError("g must be a positive probability vector")
        if np.abs(self.W.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("rows of W must sum to 1")
        if (np.diag(self.W) < self.l_star).any():
            raise ValueError(f"diagonal of W must be at least l_star={self.l_star}")

    def copy(self) -> "FactorLik":
        return FactorLik(
            self.g.copy(), self.W.copy(), self.l.copy(), self.w_tilde.copy(),
            self.g_prior.copy(), self.l_star, self.l_alpha, self.l_beta,
            self.dir_alpha,
        )


def _recompose_W(l: np.ndarray, w_tilde: np.ndarray) -> np.ndarray:
    A = l.shape[0]
    W = (1.0 - l)[:, None] * w_tilde
    W[np.arange(A), np.arange(A)] += l
    W = np.clip(W, _W_FLOOR, None)
    return W / W.sum(axis=1, keepdims=True)


def default_continuous_lik(block: np.ndarray, rng=None) -> ContinuousLik:
    """Default priors for a block; the truncation bound keeps sigma2 at
    or below half the pooled empirical variance."""
    var = float(np.asarray(block, dtype=float).var())
    bound = 0.5 * var if var > 0.0 else 1.0
    lik = ContinuousLik(sigma2=bound, tau2=1.0, sigma2_bound=bound)
    if rng is not None:
        lik.sigma2 = _trunc_invgamma(lik.sigma2_prior, bound, rng)
        lik.tau2 = 1.0 / rng.gamma(lik.tau2_prior[0], 1.0 / lik.tau2_prior[1])
    return lik


def default_factor_lik(n_levels: int, rng=None, l_star: float = 0.85,
                       l_alpha: float = 9.0, l_beta: float = 1.0,
                       dir_alpha: float = 1.0) -> FactorLik:
    A = int(n_levels)
    g_prior = np.ones(A)
    if rng is None:
        g = np.full(A, 1.0 / A)
        l = np.full(A, 0.5 * (1.0 + l_star))
        w_tilde = np.full((A, A), 1.0 / A)
    else:
        g = rng.dirichlet(g_prior)
        l = _trunc_beta(np.full(A, l_alpha), np.full(A, l_beta), l_star, rng)
        w_tilde = rng.dirichlet(np.full(A, dir_alpha / A), size=A)
    g = np.clip(g, _W_FLOOR, None)
    g = g / g.sum()
    w_tilde = np.clip(w_tilde, _W_FLOOR, None)
    w_tilde = w_tilde / w_tilde.sum(axis=1, keepdims=True)
    return FactorLik(
        g=g, W=_recompose_W(l, w_tilde), l=l, w_tilde=w_tilde, g_prior=g_prior,
        l_star=l_star, l_alpha=l_alpha, l_beta=l_beta, dir_alpha=dir_alpha,
    )


@dataclass
class McmcConfig:
    """Chain length controls; defaults follow the full-scale analyses."""

    burn_in: int = 10_000
    samples: int = 50_000
    thin: int = 1
    seed: int = 0
    trace_hyperparams: bool = False

    def __post_init__(self):
        if self.burn_in < 0 or self.samples < 1 or self.thin < 1:
            raise ValueError("burn_in >= 0, samples >= 1, thin >= 1 required")


@dataclass
class McmcTrace:
    """Accumulated posterior summaries from one chain."""

    pairwise_row_coassign: np.ndarray
    pairwise_col_coassign: np.ndarray
    row_draws: np.ndarray        # (samples, N) thinned post-burn-in draws
    col_draws: np.ndarray        # (samples, p)
    n_samples: int
    motif_sums: dict | None = None
    hyperparam_trace: dict | None = None

    def hyperparams_to_csv(self, path) -> None:
        if not self.hyperparam_trace:
            raise ValueError("chain was run without trace_hyperparams")
        names = sorted(self.hyperparam_trace)
        cols = np.column_stack([self.hyperparam_trace[n] for n in names])
        header = ",".join(names)
        np.savetxt(path, cols, delimiter=",", header=header, comments="")

    def save_coassign(self, row_path, col_path) -> None:
        np.save(row_path, self.pairwise_row_coassign)
        np.save(col_path, self.pairwise_col_coassign)


@dataclass
class CoClusterState:
    """Partition and motif state for one covariate block.

    Assignments are 1-based with contiguous labels; the motif matrix is
    q_r x q_c with real cells for a continuous block and levels {1..A}
    for a factor block.
    """

    row_assign: np.ndarray
    col_assign: np.ndarray
    motif: np.ndarray
    row_mass: float
    col_mass: float
    lik: ContinuousLik | FactorLik

    @property
    def kind(self) -> str:
        return "continuous" if isinstance(self.lik, ContinuousLik) else "factor"

    @property
    def n_cliques(self) -> int:
        return self.motif.shape[0]

    @property
    def n_clusters(self) -> int:
        return self.motif.shape[1]

    def validate(self):
        if self.row_mass <= 0.0 or self.col_mass <= 0.0:
            raise ValueError("CRP mass parameters must be positive")
        for name, assign in (("row", self.row_assign), ("col", self.col_assign)):
            q = assign.max(initial=0)
            if assign.size and sorted(set(assign.tolist())) != list(range(1, q + 1)):
                raise ValueError(f"{name} labels must be contiguous 1..q with no gaps")
        q_r = int(self.row_assign.max(initial=0))
        q_c = int(self.col_assign.max(initial=0))
        if self.motif.shape != (q_r, q_c):
            raise ValueError(
                f"motif shape {self.motif.shape} does not match label counts ({q_r}, {q_c})"
            )
        self.lik.validate()
        if self.kind == "factor":
            A = self.lik.n_levels
            if self.motif.size and (self.motif.min() < 1 or self.motif.max() > A):
                raise ValueError(f"factor motif levels must lie in 1..{A}")

    def copy(self) -> "CoClusterState":
        return CoClusterState(
            self.row_assign.copy(), self.col_assign.copy(), self.motif.copy(),
            self.row_mass, self.col_mass, self.lik.copy(),
        )


# ---------------------------------------------------------------------------
# CRP primitives


def crp_log_pmf(assign, mass: float) -> float:
    """Log PMF of a partition vector under a CRP with the given mass.

    log[ Gamma(mass) mass^q / Gamma(mass + p) * prod_u Gamma(m_u) ]
    where q is the number of blocks and m_u the block sizes.  The value
    depends only on the multiset of block sizes.
    """
    if mass <= 0.0:
        raise ValueError("CRP mass must be positive")
    assign = np.asarray(assign)
    if assign.size == 0:
        raise ValueError("partition vector must be nonempty")
    sizes = np.unique(assign, return_counts=True)[1]
    p = assign.size
    q = sizes.size
    return float(
        gammaln(mass) + q * np.log(mass) - gammaln(mass + p) + gammaln(sizes).sum()
    )


def crp_sequential_draw(n: int, mass: float, rng) -> np.ndarray:
    """Draw a partition of n items from the CRP by sequential seating.

    Returns 1-based contiguous labels in seating order.
    """
    if mass <= 0.0:
        raise ValueError("CRP mass must be positive")
    labels = np.zeros(n, dtype=np.int64)
    counts: list[int] = []
    for i in range(n):
        u = rng.random() * (i + mass)
        acc = 0.0
        chosen = len(counts)
        for b, m in enumerate(counts):
            acc += m
            if u < acc:
                chosen = b
                break
        if chosen == len(counts):
            counts.append(1)
        else:
            counts[chosen] += 1
        labels[i] = chosen + 1
    return labels


# ---------------------------------------------------------------------------
# conjugate sampling helpers


def _trunc_invgamma(prior: tuple, bound: float, rng) -> float:
    """Draw from InvGamma(shape, scale) truncated to (0, bound]."""
    shape, scale = prior
    # work with the precision v = 1/x ~ Gamma(shape, rate=scale), v >= 1/bound
    tail = stats.gamma.sf(1.0 / bound, shape, scale=1.0 / scale)
    if tail < 1e-290:
        return bound
    v = stats.gamma.isf(rng.random() * tail, shape, scale=1.0 / scale)
    return min(1.0 / v, bound)


def _trunc_beta(a, b, lo: float, rng) -> np.ndarray:
    """Vector draw from Beta(a, b) truncated to (lo, 1]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    tail = stats.beta.sf(lo, a, b)
    u = rng.random(a.shape)
    with np.errstate(divide="ignore"):
        draw = stats.beta.isf(u * tail, a, b)
    draw = np.where(tail < 1e-290, np.nextafter(lo, 1.0), draw)
    return np.clip(draw, np.nextafter(lo, 1.0), 1.0 - 1e-12)


def _sample_from_logweights(logw: np.ndarray, rng) -> int:
    m = logw.max()
    w = np.exp(logw - m)
    t = rng.random() * w.sum()
    return int(min(np.searchsorted(np.cumsum(w), t, side="right"), w.size - 1))


# ---------------------------------------------------------------------------
# internal samplers (0-based labels, incremental sufficient statistics)


class _BaseSampler:
    """Shared collapsed-Gibbs machinery over rows and columns."""

    def __init__(self, X, row, col, row_mass, col_mass):
        self.X = X
        self.row = row.astype(np.int64)
        self.col = col.astype(np.int64)
        self.row_mass = float(row_mass)
        self.col_mass = float(col_mass)
        self.q_r = int(self.row.max()) + 1 if self.row.size else 0
        self.q_c = int(self.col.max()) + 1 if self.col.size else 0
        self.row_counts = np.bincount(self.row, minlength=self.q_r)
        self.col_counts = np.bincount(self.col, minlength=self.q_c)

    # ---- hooks a concrete sampler provides -------------------------------
    def _col_member_stats(self, j):
        raise NotImplementedError

    def _row_member_stats(self, i):
        raise NotImplementedError

    def _col_logpred(self, member):
        """(q_c + 1,) predictive log-likelihoods, last entry = new cluster."""
        raise NotImplementedError

    def _row_logpred(self, member):
        raise NotImplementedError

    def _sub_col(self, u, member):
        raise NotImplementedError

    def _add_col(self, u, member):
        raise NotImplementedError

    def _sub_row(self, u, member):
        raise NotImplementedError

    def _add_row(self, u, member):
        raise NotImplementedError

    def _drop_col_cluster(self, u):
        raise NotImplementedError

    def _drop_row_clique(self, u):
        raise NotImplementedError

    def _append_col_cluster(self, member, rng):
        raise NotImplementedError

    def _append_row_clique(self, member, rng):
        raise NotImplementedError

    def update_motif(self, rng):
        raise NotImplementedError

    def update_params(self, rng):
        raise NotImplementedError

    # ---- generic collapsed assignment moves ------------------------------
    def update_col(self, j: int, rng):
        member = self._col_member_stats(j)
        u0 = self.col[j]
        self.col_counts[u0] -= 1
        self._sub_col(u0, member)
        if self.col_counts[u0] == 0:
            self._drop_col_cluster(u0)
            self.col_counts = np.delete(self.col_counts, u0)
            self.col[self.col > u0] -= 1
            self.q_c -= 1
        logw = self._col_logpred(member)
        logw[: self.q_c] += np.log(self.col_counts)
        logw[self.q_c] += np.log(self.col_mass)
        u = _sample_from_logweights(logw, rng)
        if u == self.q_c:
            self._append_col_cluster(member, rng)
            self.col_counts = np.append(self.col_counts, 0)
            self.q_c += 1
        self.col[j] = u
        self.col_counts[u] += 1
        self._add_col(u, member)

    def update_row(self, i: int, rng):
        member = self._row_member_stats(i)
        u0 = self.row[i]
        self.row_counts[u0] -= 1
        self._sub_row(u0, member)
        if self.row_counts[u0] == 0:
            self._drop_row_clique(u0)
            self.row_counts = np.delete(self.row_counts, u0)
            self.row[self.row > u0] -= 1
            self.q_r -= 1
        logw = self._row_logpred(member)
        logw[: self.q_r] += np.log(self.row_counts)
        logw[self.q_r] += np.log(self.row_mass)
        u = _sample_from_logweights(logw, rng)
        if u == self.q_r:
            self._append_row_clique(member, rng)
            self.row_counts = np.append(self.row_counts, 0)
            self.q_r += 1
        self.row[i] = u
        self.row_counts[u] += 1
        self._add_row(u, member)

    def sweep(self, rng, assignments: bool = True):
        if assignments:
            for i in range(self.X.shape[0]):
                self.update_row(i, rng)
            for j in range(self.X.shape[1]):
                self.update_col(j, rng)
        self.update_motif(rng)
        self.update_params(rng)

    def check_finite(self):
        if not np.isfinite(self.motif).all():
            raise RuntimeError("chain diverged: non-finite motif values")


class _ContinuousSampler(_BaseSampler):
    """Gaussian block: per-cell sufficient statistics (count, sum, sumsq)."""

    def __init__(self, X, row, col, row_mass, col_mass, lik: ContinuousLik, motif=None):
        super().__init__(X, row, col, row_mass, col_mass)
        self.lik = lik
        R = np.eye(self.q_r)[self.row]            # N x q_r indicator
        C = np.eye(self.q_c)[self.col]            # p x q_c indicator
        self.n = R.T @ np.ones_like(X) @ C
        self.S = R.T @ X @ C
        self.SS = R.T @ (X * X) @ C
        if motif is None:
            motif = np.zeros((self.q_r, self.q_c))
        self.motif = motif.astype(float).copy()

    # evidence difference of adding (k, s, q) points to cells with stats (n, S)
    def _logpred_cells(self, n, S, k, s, q):
        sigma2 = self.lik.sigma2
        tau2 = self.lik.tau2
        P0 = n / sigma2 + 1.0 / tau2
        P1 = P0 + k / sigma2
        mu0 = (S / sigma2) / P0
        mu1 = ((S + s) / sigma2) / P1
        return (
            -0.5 * k * np.log(2.0 * np.pi * sigma2)
            - 0.5 * q / sigma2
            + 0.5 * (np.log(P0) - np.log(P1))
            + 0.5 * (mu1 * mu1 * P1 - mu0 * mu0 * P0)
        )

    def _col_member_stats(self, j):
        x = self.X[:, j]
        k = self.row_counts.astype(float)
        s = np.bincount(self.row, weights=x, minlength=self.q_r)
        q = np.bincount(self.row, weights=x * x, minlength=self.q_r)
        return k, s, q

    def _row_member_stats(self, i):
        x = self.X[i, :]
        k = self.col_counts.astype(float)
        s = np.bincount(self.col, weights=x, minlength=self.q_c)
        q = np.bincount(self.col, weights=x * x, minlength=self.q_c)
        return k, s, q

    def _col_logpred(self, member):
        k, s, q = member
        n = np.hstack([self.n, np.zeros((self.q_r, 1))])
        S = np.hstack([self.S, np.zeros((self.q_r, 1))])
        ll = self._logpred_cells(n, S, k[:, None], s[:, None], q[:, None])
        return ll.sum(axis=0)

    def _row_logpred(self, member):
        k, s, q = member
        n = np.vstack([self.n, np.zeros((1, self.q_c))])
        S = np.vstack([self.S, np.zeros((1, self.q_c))])
        ll = self._logpred_cells(n, S, k[None, :], s[None, :], q[None, :])
        return ll.sum(axis=1)

    def _sub_col(self, u, member):
        k, s, q = member
        self.n[:, u] -= k
        self.S[:, u] -= s
        self.SS[:, u] -= q

    def _add_col(self, u, member):
        k, s, q = member
        self.n[:, u] += k
        self.S[:, u] += s
        self.SS[:, u] += q

    def _sub_row(self, u, member):
        k, s, q = member
        self.n[u, :] -= k
        self.S[u, :] -= s
        self.SS[u, :] -= q

    def _add_row(self, u, member):
        k, s, q = member
        self.n[u, :] += k
        self.S[u, :] += s
        self.SS[u, :] += q

    def _drop_col_cluster(self, u):
        self.n = np.delete(self.n, u, axis=1)
        self.S = np.delete(self.S, u, axis=1)
        self.SS = np.delete(self.SS, u, axis=1)
        self.motif = np.delete(self.motif, u, axis=1)

    def _drop_row_clique(self, u):
        self.n = np.delete(self.n, u, axis=0)
        self.S = np.delete(self.S, u, axis=0)
        self.SS = np.delete(self.SS, u, axis=0)
        self.motif = np.delete(self.motif, u, axis=0)

    def _conjugate_cell_draw(self, k, s, rng):
        v = 1.0 / (k / self.lik.sigma2 + 1.0 / self.lik.tau2)
        return v * s / self.lik.sigma2 + np.sqrt(v) * rng.standard_normal(np.shape(k))

    def _append_col_cluster(self, member, rng):
        k, s, _ = member
        self.n = np.hstack([self.n, np.zeros((self.q_r, 1))])
        self.S = np.hstack([self.S, np.zeros((self.q_r, 1))])
        self.SS = np.hstack([self.SS, np.zeros((self.q_r, 1))])
        self.motif = np.hstack([self.motif, self._conjugate_cell_draw(k, s, rng)[:, None]])

    def _append_row_clique(self, member, rng):
        k, s, _ = member
        self.n = np.vstack([self.n, np.zeros((1, self.q_c))])
        self.S = np.vstack([self.S, np.zeros((1, self.q_c))])
        self.SS = np.vstack([self.SS, np.zeros((1, self.q_c))])
        self.motif = np.vstack([self.motif, self._conjugate_cell_draw(k, s, rng)[None, :]])

    def update_motif(self, rng):
        self.motif = self._conjugate_cell_draw(self.n, self.S, rng)

    def update_params(self, rng):
        lik = self.lik
        # residual sum of squares around the mapped motif cells
        rss = float(
            (self.SS - 2.0 * self.motif * self.S + self.n * self.motif**2).sum()
        )
        rss = max(rss, 0.0)
        a, b = lik.sigma2_prior
        n_cells = self.X.size
        lik.sigma2 = _trunc_invgamma(
            (a + 0.5 * n_cells, b + 0.5 * rss), lik.sigma2_bound, rng
        )
        a, b = lik.tau2_prior
        shape = a + 0.5 * self.motif.size
        rate = b + 0.5 * float((self.motif**2).sum())
        lik.tau2 = 1.0 / rng.gamma(shape, 1.0 / rate)

    def hyperparams(self):
        return {"sigma2": self.lik.sigma2, "tau2": self.lik.tau2}


class _FactorSampler(_BaseSampler):
    """Factor block: per-cell level counts; motif levels stored 1..A."""

    def __init__(self, X, row, col, row_mass, col_mass, lik: FactorLik, motif=None):
        super().__init__(X, row, col, row_mass, col_mass)
        self.lik = lik
        self.A = lik.n_levels
        self.counts = np.zeros((self.q_r, self.q_c, self.A))
        np.add.at(self.counts, (self.row[:, None], self.col[None, :], X - 1), 1.0)
        if motif is None:
            motif = np.ones((self.q_r, self.q_c), dtype=np.int64)
        self.motif = motif.astype(np.int64).copy()

    def _log_gW(self):
        return np.log(self.lik.g), np.log(self.lik.W)

    def _cell_marginal(self, counts):
        """log sum_f g_f prod_a W[f,a]^counts[..., a] per cell."""
        log_g, log_W = self._log_gW()
        t = counts @ log_W.T + log_g
        return logsumexp(t, axis=-1)

    def _col_member_stats(self, j):
        lam = np.zeros((self.q_r, self.A))
        np.add.at(lam, (self.row, self.X[:, j] - 1), 1.0)
        return lam

    def _row_member_stats(self, i):
        lam = np.zeros((self.q_c, self.A))
        np.add.at(lam, (self.col, self.X[i, :] - 1), 1.0)
        return lam

    def _col_logpred(self, lam):
        counts = np.concatenate(
            [self.counts, np.zeros((self.q_r, 1, self.A))], axis=1
        )
        base = self._cell_marginal(counts)
        joint = self._cell_marginal(counts + lam[:, None, :])
        return (joint - base).sum(axis=0)

    def _row_logpred(self, lam):
        counts = np.concatenate(
            [self.counts, np.zeros((1, self.q_c, self.A))], axis=0
        )
        base = self._cell_marginal(counts)
        joint = self._cell_marginal(counts + lam[None, :, :])
        return (joint - base).sum(axis=1)

    def _sub_col(self, u, lam):
        self.counts[:, u, :] -= lam

    def _add_col(self, u, lam):
        self.counts[:, u, :] += lam

    def _sub_row(self, u, lam):
        self.counts[u, :, :] -= lam

    def _add_row(self, u, lam):
        self.counts[u, :, :] += lam

    def _drop_col_cluster(self, u):
        self.counts = np.delete(self.counts, u, axis=1)
        self.motif = np.delete(self.motif, u, axis=1)

    def _drop_row_clique(self, u):
        self.counts = np.delete(self.counts, u, axis=0)
        self.motif = np.delete(self.motif, u, axis=0)

    def _conjugate_cell_draw(self, counts, rng):
        """Sample motif levels from their per-cell full conditionals."""
        log_g, log_W = self._log_gW()
        logp = counts @ log_W.T + log_g
        p = np.exp(logp - logp.max(axis=-1, keepdims=True))
        p /= p.sum(axis=-1, keepdims=True)
        cum = np.cumsum(p, axis=-1)
        u = rng.random(counts.shape[:-1])[..., None]
        idx = (u > cum).sum(axis=-1)
        return np.clip(idx, 0, self.A - 1).astype(np.int64) + 1

    def _append_col_cluster(self, lam, rng):
        self.counts = np.concatenate(
            [self.counts, np.zeros((self.q_r, 1, self.A))], axis=1
        )
        self.motif = np.hstack([self.motif, self._conjugate_cell_draw(lam, rng)[:, None]])

    def _append_row_clique(self, lam, rng):
        self.counts = np.concatenate(
            [self.counts, np.zeros((1, self.q_c, self.A))], axis=0
        )
        self.motif = np.vstack([self.motif, self._conjugate_cell_draw(lam, rng)[None, :]])

    def update_motif(self, rng):
        self.motif = self._conjugate_cell_draw(self.counts, rng)

    def update_params(self, rng):
        lik = self.lik
        A = self.A
        motif0 = self.motif - 1
        # g | motif levels
        level_counts = np.bincount(motif0.ravel(), minlength=A).astype(float)
        g = rng.dirichlet(lik.g_prior + level_counts)
        lik.g = np.clip(g, _W_FLOOR, None)
        lik.g /= lik.g.sum()
        # per-motif-level totals of observed data levels
        tot = np.zeros((A, A))
        np.add.at(tot, motif0.ravel(), self.counts.reshape(-1, A))
        diag = tot[np.arange(A), np.arange(A)]
        off = tot.copy()
        off[np.arange(A), np.arange(A)] = 0.0
        # split matches between the diagonal anchor and the corruption draw
        p_anchor = lik.l / (lik.l + (1.0 - lik.l) * lik.w_tilde[np.arange(A), np.arange(A)])
        anchors = rng.binomial(diag.astype(np.int64), p_anchor).astype(float)
        spill = diag - anchors
        lik.l = _trunc_beta(
            lik.l_alpha + anchors,
            lik.l_beta + spill + off.sum(axis=1),
            lik.l_star,
            rng,
        )
        conc = off + lik.dir_alpha / A
        conc[np.arange(A), np.arange(A)] += spill + lik.dir_alpha / A - lik.dir_alpha / A
        conc[np.arange(A), np.arange(A)] = lik.dir_alpha / A + spill
        w_tilde = np.vstack([rng.dirichlet(conc[f]) for f in range(A)])
        lik.w_tilde = np.clip(w_tilde, _W_FLOOR, None)
        lik.w_tilde /= lik.w_tilde.sum(axis=1, keepdims=True)
        lik.W = _recompose_W(lik.l, lik.w_tilde)

    def hyperparams(self):
        return {"l_min": float(self.lik.l.min()), "g_max": float(self.lik.g.max())}


# ---------------------------------------------------------------------------
# state construction and public single-step operations


def _make_sampler(state: CoClusterState, block: np.ndarray) -> _BaseSampler:
    state.validate()
    block = np.asarray(block)
    n, p = block.shape
    if state.row_assign.shape != (n,) or state.col_assign.shape != (p,):
        raise ValueError(
            f"state assignments ({state.row_assign.shape[0]}, {state.col_assign.shape[0]}) "
            f"do not match block shape {block.shape}"
        )
    row = state.row_assign - 1
    col = state.col_assign - 1
    if state.kind == "continuous":
        return _ContinuousSampler(
            block.astype(float), row, col, state.row_mass, state.col_mass,
            state.lik.copy(), state.motif,
        )
    block = block.astype(np.int64)
    if block.size and (block.min() < 1 or block.max() > state.lik.n_levels):
        raise ValueError("factor block levels must lie in 1..A")
    return _FactorSampler(
        block, row, col, state.row_mass, state.col_mass, state.lik.copy(), state.motif
    )


def _to_state(sampler: _BaseSampler, row_mass: float, col_mass: float) -> CoClusterState:
    return CoClusterState(
        row_assign=sampler.row + 1,
        col_assign=sampler.col + 1,
        motif=sampler.motif.copy(),
        row_mass=row_mass,
        col_mass=col_mass,
        lik=sampler.lik,
    )


def initial_state(block, kind: str, rng, row_mass: float = 1.0,
                  col_mass: float = 1.0, lik=None) -> CoClusterState:
    """Over-dispersed initialization: CRP prior draws for both partitions
    and one conjugate motif draw given the data."""
    block = np.asarray(block)
    n, p = block.shape
    row = crp_sequential_draw(n, row_mass, rng)
    col = crp_sequential_draw(p, col_mass, rng)
    if kind == "continuous":
        lik = lik.copy() if lik is not None else default_continuous_lik(block, rng)
        sampler = _ContinuousSampler(block.astype(float), row - 1, col - 1,
                                     row_mass, col_mass, lik)
    elif kind == "factor":
        if lik is None:
            A = int(block.max(initial=2))
            lik = default_factor_lik(max(A, 2), rng)
        else:
            lik = lik.copy()
        sampler = _FactorSampler(block.astype(np.int64), row - 1, col - 1,
                                 row_mass, col_mass, lik)
    else:
        raise ValueError(f"unknown block kind {kind!r}")
    sampler.update_motif(rng)
    return _to_state(sampler, row_mass, col_mass)


def prior_state_draw(n: int, p: int, kind: str, rng, row_mass: float = 1.0,
                     col_mass: float = 1.0, lik=None) -> CoClusterState:
    """Draw (partitions, motif, likelihood params) from the prior alone."""
    row = crp_sequential_draw(n, row_mass, rng)
    col = crp_sequential_draw(p, col_mass, rng)
    q_r, q_c = int(row.max()), int(col.max())
    if kind == "continuous":
        lik = lik.copy() if lik is not None else ContinuousLik(sigma2=0.25, tau2=1.0)
        a, b = lik.sigma2_prior
        lik.sigma2 = _trunc_invgamma((a, b), lik.sigma2_bound, rng)
        a, b = lik.tau2_prior
        lik.tau2 = 1.0 / rng.gamma(a, 1.0 / b)
        motif = np.sqrt(lik.tau2) * rng.standard_normal((q_r, q_c))
    elif kind == "factor":
        base = lik if lik is not None else default_factor_lik(2)
        lik = default_factor_lik(
            base.n_levels, rng, l_star=base.l_star, l_alpha=base.l_alpha,
            l_beta=base.l_beta, dir_alpha=base.dir_alpha,
        )
        cum = np.cumsum(lik.g)
        motif = (
            (rng.random((q_r, q_c))[..., None] > cum).sum(axis=-1).astype(np.int64) + 1
        )
        motif = np.clip(motif, 1, lik.n_levels)
    else:
        raise ValueError(f"unknown block kind {kind!r}")
    return CoClusterState(row, col, motif, row_mass, col_mass, lik)


def sample_block_given_state(state: CoClusterState, rng) -> np.ndarray:
    """Forward-simulate a data block from the likelihood given the state."""
    row = state.row_assign - 1
    col = state.col_assign - 1
    cell = state.motif[np.ix_(row, col)]
    if state.kind == "continuous":
        return cell + np.sqrt(state.lik.sigma2) * rng.standard_normal(cell.shape)
    W = state.lik.W
    cum = np.cumsum(W, axis=1)
    u = rng.random(cell.shape)
    draws = (u[..., None] > cum[cell - 1]).sum(axis=-1) + 1
    return np.clip(draws, 1, state.lik.n_levels).astype(np.int64)


def gibbs_update_col(state: CoClusterState, block, j: int, rng) -> CoClusterState:
    """Reassign one column by its collapsed full conditional."""
    sampler = _make_sampler(state, block)
    sampler.update_col(int(j), rng)
    return _to_state(sampler, state.row_mass, state.col_mass)


def gibbs_update_row(state: CoClusterState, block, i: int, rng) -> CoClusterState:
    """Reassign one row by its collapsed full conditional."""
    sampler = _make_sampler(state, block)
    sampler.update_row(int(i), rng)
    return _to_state(sampler, state.row_mass, state.col_mass)


def update_motif_continuous(state: CoClusterState, block, rng) -> CoClusterState:
    if state.kind != "continuous":
        raise ValueError("state is not a continuous-block state")
    sampler = _make_sampler(state, block)
    sampler.update_motif(rng)
    return _to_state(sampler, state.row_mass, state.col_mass)


def update_motif_factor(state: CoClusterState, block, rng) -> CoClusterState:
    if state.kind != "factor":
        raise ValueError("state is not a factor-block state")
    sampler = _make_sampler(state, block)
    sampler.update_motif(rng)
    return _to_state(sampler, state.row_mass, state.col_mass)


def update_likelihood_params(state: CoClusterState, block, rng) -> CoClusterState:
    sampler = _make_sampler(state, block)
    sampler.update_params(rng)
    return _to_state(sampler, state.row_mass, state.col_mass)


def gibbs_sweep(state: CoClusterState, block, rng,
                assignments: bool = True) -> CoClusterState:
    """One full sweep: all rows, all columns, motif, likelihood params."""
    sampler = _make_sampler(state, block)
    sampler.sweep(rng, assignments=assignments)
    return _to_state(sampler, state.row_mass, state.col_mass)


# ---------------------------------------------------------------------------
# chain driver


def run_chain(block, config: McmcConfig, init: CoClusterState,
              rng=None, freeze_assignments: bool = False) -> McmcTrace:
    """Run a chain and accumulate pairwise co-assignment frequencies.

    With ``freeze_assignments`` the partitions stay fixed and only
    motifs and likelihood parameters are updated; per-cell motif
    sufficient statistics are then accumulated for Bayes estimates.
    Deterministic given ``config.seed`` (or an explicit ``rng``).
    """
    block = np.asarray(block)
    n, p = block.shape
    if rng is None:
        rng = np.random.default_rng(config.seed)
    sampler = _make_sampler(init, block)
    row_co = np.zeros((n, n))
    col_co = np.zeros((p, p))
    row_draws = []
    col_draws = []
    motif_sums = None
    trace_cols: dict[str, list] = {}
    if freeze_assignments:
        if isinstance(sampler, _ContinuousSampler):
            motif_sums = {
                "kind": "continuous",
                "sum": np.zeros_like(sampler.motif),
                "count": 0,
            }
        else:
            motif_sums = {
                "kind": "factor",
                "level_counts": np.zeros(sampler.motif.shape + (sampler.A,)),
                "count": 0,
            }
    total = config.burn_in + config.samples * config.thin
    kept = 0
    for it in range(total):
        sampler.sweep(rng, assignments=not freeze_assignments)
        sampler.check_finite()
        if it < config.burn_in or (it - config.burn_in) % config.thin != config.thin - 1:
            continue
        kept += 1
        row_co += sampler.row[:, None] == sampler.row[None, :]
        col_co += sampler.col[:, None] == sampler.col[None, :]
        row_draws.append(sampler.row.astype(np.int32) + 1)
        col_draws.append(sampler.col.astype(np.int32) + 1)
        if motif_sums is not None:
            motif_sums["count"] += 1
            if motif_sums["kind"] == "continuous":
                motif_sums["sum"] += sampler.motif
            else:
                flat = motif_sums["level_counts"].reshape(-1, sampler.A)
                flat[np.arange(flat.shape[0]), (sampler.motif - 1).ravel()] += 1
        if config.trace_hyperparams:
            rec = {"q_r": sampler.q_r, "q_c": sampler.q_c}
            rec.update(sampler.hyperparams())
            for key, val in rec.items():
                trace_cols.setdefault(key, []).append(val)
    row_co /= kept
    col_co /= kept
    np.fill_diagonal(row_co, 1.0)
    np.fill_diagonal(col_co, 1.0)
    return McmcTrace(
        pairwise_row_coassign=row_co,
        pairwise_col_coassign=col_co,
        row_draws=np.asarray(row_draws, dtype=np.int32),
        col_draws=np.asarray(col_draws, dtype=np.int32),
        n_samples=kept,
        motif_sums=motif_sums,
        hyperparam_trace={k: np.asarray(v) for k, v in trace_cols.items()} or None,
    )


# ---------------------------------------------------------------------------
# checkpoints


def _lik_to_json(lik) -> dict:
    if isinstance(lik, ContinuousLik):
        return {
            "kind": "continuous",
            "sigma2": lik.sigma2,
            "tau2": lik.tau2,
            "sigma2_prior": list(lik.sigma2_prior),
            "sigma2_bound": lik.sigma2_bound,
            "tau2_prior": list(lik.tau2_prior),
        }
    return {
        "kind": "factor",
        "g": lik.g.tolist(),
        "W": lik.W.tolist(),
        "l": lik.l.tolist(),
        "w_tilde": lik.w_tilde.tolist(),
        "g_prior": lik.g_prior.tolist(),
        "l_star": lik.l_star,
        "l_alpha": lik.l_alpha,
        "l_beta": lik.l_beta,
        "dir_alpha": lik.dir_alpha,
    }


def _lik_from_json(obj: dict):
    if obj["kind"] == "continuous":
        return ContinuousLik(
            sigma2=obj["sigma2"], tau2=obj["tau2"],
            sigma2_prior=tuple(obj["sigma2_prior"]),
            sigma2_bound=obj["sigma2_bound"],
            tau2_prior=tuple(obj["tau2_prior"]),
        )
    return FactorLik(
        g=np.asarray(obj["g"]), W=np.asarray(obj["W"]), l=np.asarray(obj["l"]),
        w_tilde=np.asarray(obj["w_tilde"]), g_prior=np.asarray(obj["g_prior"]),
        l_star=obj["l_star"], l_alpha=obj["l_alpha"], l_beta=obj["l_beta"],
        dir_alpha=obj["dir_alpha"],
    )


def save_checkpoint(path, state: CoClusterState, rng) -> None:
    """Snapshot a chain state plus RNG state for exact resumption."""
    obj = {
        "schema": 1,
        "row_assign": state.row_assign.tolist(),
        "col_assign": state.col_assign.tolist(),
        "motif": state.motif.tolist(),
        "row_mass": state.row_mass,
        "col_mass": state.col_mass,
        "lik": _lik_to_json(state.lik),
        "rng_state": rng.bit_generator.state,
    }
    Path(path).write_text(json.dumps(obj, sort_keys=True), encoding="utf-8")


def load_checkpoint(path):
    """Restore (state, rng) written by :func:`save_checkpoint`."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    lik = _lik_from_json(obj["lik"])
    motif = np.asarray(obj["motif"])
    if isinstance(lik, FactorLik):
        motif = motif.astype(np.int64)
    state = CoClusterState(
        row_assign=np.asarray(obj["row_assign"], dtype=np.int64),
        col_assign=np.asarray(obj["col_assign"], dtype=np.int64),
        motif=motif,
        row_mass=obj["row_mass"],
        col_mass=obj["col_mass"],
        lik=lik,
    )
    rng = np.random.default_rng()
    rng.bit_generator.state = obj["rng_state"]
    return state, rng
