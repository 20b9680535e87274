"""Unnormalized pre/post-change model pairs.

A :class:`ModelPair` bundles two unnormalized log-densities log P~0 and
log P~1 together with whatever exact machinery the family admits: samplers
for the normalized endpoints, a sampler for the geometric bridge

    P_beta(x)  proportional to  P~1(x)^beta * P~0(x)^(1-beta),

and closed-form reference quantities (log Z0/Z1, both KL divergences,
Hyvarinen scores).  Two concrete families are bundled:

* ``mvn10``     -- a 10-dimensional Gaussian pair with a mean shift and a
                   covariance change,
* ``boltzmann`` -- a 1-dimensional exponential-energy pair where a
                   temperature change T=1 -> T=1.2 is to be detected.

The Gaussian unnormalized form is exp(-(x-mu)' Sigma^-1 (x-mu) / 2), so
Z = (2 pi)^(d/2) det(Sigma)^(1/2) and the (2 pi) factor cancels from every
ratio.  The exponential-energy density is exp(-x/T) on x >= 0, so Z_T = T
exactly; every estimator in this package can therefore be checked against
an analytic value on these pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import CapabilityError, DomainError

__all__ = [
    "Capabilities",
    "ModelPair",
    "GaussianPair",
    "BoltzmannPair",
    "CustomPair",
    "mvn10",
    "boltzmann",
    "get_pair",
    "log_weight",
    "log_ptilde_path",
    "sample_source",
    "sample_path",
    "analytic_log_z_ratio",
    "analytic_kl",
    "hyvarinen_score",
    "with_metropolis_path",
]

POST_VS_PRE = "post_vs_pre"
PRE_VS_POST = "pre_vs_post"


@dataclass(frozen=True)
class Capabilities:
    """What a model pair can do exactly, beyond evaluating log-densities."""

    exact_pre_sampler: bool = False
    exact_post_sampler: bool = False
    exact_path_sampler: bool = False
    analytic_log_z_ratio: bool = False
    analytic_kl: bool = False
    analytic_score: bool = False


def _as_batch(x, dim):
    """Coerce a single sample or a batch to 2-D; report whether it was single."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ValueError(f"sample has length {arr.shape[0]}, expected {dim}")
        return arr[None, :], True
    if arr.ndim == 2:
        if arr.shape[1] != dim:
            raise ValueError(f"samples have dimension {arr.shape[1]}, expected {dim}")
        return arr, False
    raise ValueError("sample array must be 1-D or 2-D")


class ModelPair:
    """Base class for unnormalized pre/post density pairs.

    Subclasses must implement ``log_ptilde_pre`` / ``log_ptilde_post`` on
    2-D batches and may implement the capability-gated operations below.
    Instances are immutable after construction and safe to share across
    workers; random generators are always passed in, never stored.
    """

    name: str = "pair"
    dim: int = 1
    capabilities: Capabilities = Capabilities()
    #: True when the attached path sampler is approximate (MCMC fallback).
    approximate_path_sampler: bool = False

    # -- log-density surface -------------------------------------------------

    def _log_ptilde_pre(self, X):
        raise NotImplementedError

    def _log_ptilde_post(self, X):
        raise NotImplementedError

    def log_ptilde_pre(self, x):
        X, single = _as_batch(x, self.dim)
        out = self._log_ptilde_pre(X)
        return float(out[0]) if single else out

    def log_ptilde_post(self, x):
        X, single = _as_batch(x, self.dim)
        out = self._log_ptilde_post(X)
        return float(out[0]) if single else out

    def log_weight(self, x):
        """log w(x) = log P~1(x) - log P~0(x).

        For the geometric bridge this equals the beta-derivative of
        log P~beta(x) at every beta, which is what the path-sampling
        estimator averages.
        """
        X, single = _as_batch(x, self.dim)
        lp0 = self._log_ptilde_pre(X)
        lp1 = self._log_ptilde_post(X)
        if not np.isfinite(lp0).all():
            raise DomainError("pre-change log-density is not finite at the given sample")
        if not np.isfinite(lp1).all():
            raise DomainError("post-change log-density is not finite at the given sample")
        out = lp1 - lp0
        return float(out[0]) if single else out

    def log_ptilde_path(self, beta, x):
        """log P~beta(x) = beta log P~1(x) + (1-beta) log P~0(x)."""
        if not 0.0 <= beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {beta}")
        X, single = _as_batch(x, self.dim)
        out = beta * self._log_ptilde_post(X) + (1.0 - beta) * self._log_ptilde_pre(X)
        return float(out[0]) if single else out

    # -- capability-gated operations -----------------------------------------

    def _require(self, flag, what):
        if not getattr(self.capabilities, flag):
            raise CapabilityError(f"model pair {self.name!r} does not support {what}")

    def sample_pre(self, rng, n):
        self._require("exact_pre_sampler", "exact pre-change sampling")
        return self._sample_pre(rng, n)

    def sample_post(self, rng, n):
        self._require("exact_post_sampler", "exact post-change sampling")
        return self._sample_post(rng, n)

    def sample_path(self, rng, beta):
        """One draw from P_beta.  At beta in {0, 1} this delegates to the
        endpoint sampler so that, for a fixed generator state, the draw is
        bit-identical to the corresponding pre/post draw."""
        self._require("exact_path_sampler", "path sampling")
        if not 0.0 <= beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {beta}")
        if beta == 0.0:
            return self.sample_pre(rng, 1)[0]
        if beta == 1.0:
            return self.sample_post(rng, 1)[0]
        return self._sample_path_batch(rng, np.array([beta]))[0]

    def sample_path_batch(self, rng, betas):
        """Vectorized path sampling, one draw per entry of ``betas``.

        Consumes randomness as (all betas given) -> one block of noise,
        so a batch is reproducible from the generator state alone.
        """
        self._require("exact_path_sampler", "path sampling")
        betas = np.asarray(betas, dtype=float)
        if betas.ndim != 1:
            raise ValueError("betas must be a 1-D array")
        if betas.size and (betas.min() < 0.0 or betas.max() > 1.0):
            raise ValueError("all betas must lie in [0, 1]")
        return self._sample_path_batch(rng, betas)

    def analytic_log_z_ratio(self):
        """log(Z0/Z1) when known in closed form, else None."""
        return None

    def analytic_kl(self, direction):
        """Closed-form KL divergence, or None when unavailable.

        ``post_vs_pre`` is D(P1, P0); ``pre_vs_post`` is D(P0, P1).
        """
        return None

    def score(self, which, x):
        """Hyvarinen score 0.5 |grad log p~|^2 + laplacian(log p~).

        Normalization-free: identical for the normalized and unnormalized
        densities, which is what makes it usable without Z.
        """
        self._require("analytic_score", "Hyvarinen score evaluation")
        X, single = _as_batch(x, self.dim)
        out = self._score(which, X)
        return float(out[0]) if single else out

    def _sample_pre(self, rng, n):
        raise NotImplementedError

    def _sample_post(self, rng, n):
        raise NotImplementedError

    def _sample_path_batch(self, rng, betas):
        raise NotImplementedError

    def _score(self, which, X):
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} {self.name!r} dim={self.dim}>"


def _validate_covariance(sigma, label):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"{label} must be a square matrix")
    if not np.array_equal(sigma, sigma.T):
        if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-12):
            raise ValueError(f"{label} is not symmetric")
        sigma = 0.5 * (sigma + sigma.T)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{label} is not positive definite") from exc
    return sigma, chol


class GaussianPair(ModelPair):
    """Gaussian pair with unnormalized form exp(-(x-mu)' Sigma^-1 (x-mu)/2).

    The geometric bridge between two Gaussians is again Gaussian, with
    precision beta*Sigma1^-1 + (1-beta)*Sigma0^-1.  Sampling along the
    bridge is done in a basis that diagonalizes both precisions at once
    (generalized symmetric eigendecomposition), so a batch of draws at
    arbitrary betas costs only matrix-vector work per draw.
    """

    def __init__(self, mu_pre, sigma_pre, mu_post, sigma_post, name="gaussian"):
        self.mu_pre = np.asarray(mu_pre, dtype=float)
        self.mu_post = np.asarray(mu_post, dtype=float)
        self.sigma_pre, self._chol_pre = _validate_covariance(sigma_pre, "sigma_pre")
        self.sigma_post, self._chol_post = _validate_covariance(sigma_post, "sigma_post")
        d = self.mu_pre.shape[0]
        if self.mu_post.shape != (d,) or self.sigma_pre.shape != (d, d) or self.sigma_post.shape != (d, d):
            raise ValueError("mean vectors and covariance matrices disagree on dimension")
        self.name = name
        self.dim = d
        self.capabilities = Capabilities(
            exact_pre_sampler=True,
            exact_post_sampler=True,
            exact_path_sampler=True,
            analytic_log_z_ratio=True,
            analytic_kl=True,
            analytic_score=True,
        )

        self._prec_pre = np.linalg.inv(self.sigma_pre)
        self._prec_post = np.linalg.inv(self.sigma_post)
        self._logdet_pre = 2.0 * np.log(np.diag(self._chol_pre)).sum()
        self._logdet_post = 2.0 * np.log(np.diag(self._chol_post)).sum()

        # Simultaneous diagonalization: W' Prec0 W = I, W' Prec1 W = diag(evals),
        # hence the bridge precision in the W basis is diag(1 + beta*(evals-1)).
        evals, W = scipy.linalg.eigh(self._prec_post, self._prec_pre)
        self._path_evals = evals
        self._path_basis = W
        self._path_a_pre = W.T @ (self._prec_pre @ self.mu_pre)
        self._path_a_post = W.T @ (self._prec_post @ self.mu_post)

    def _quad(self, X, mu, prec):
        D = X - mu
        return np.einsum("ni,ij,nj->n", D, prec, D)

    def _log_ptilde_pre(self, X):
        return -0.5 * self._quad(X, self.mu_pre, self._prec_pre)

    def _log_ptilde_post(self, X):
        return -0.5 * self._quad(X, self.mu_post, self._prec_post)

    def _sample_pre(self, rng, n):
        z = rng.standard_normal((n, self.dim))
        return self.mu_pre + z @ self._chol_pre.T

    def _sample_post(self, rng, n):
        z = rng.standard_normal((n, self.dim))
        return self.mu_post + z @ self._chol_post.T

    def _sample_path_batch(self, rng, betas):
        # Bridge precision eigenvalues (per draw) in the shared basis.
        lam = 1.0 + betas[:, None] * (self._path_evals[None, :] - 1.0)
        mean_coef = ((1.0 - betas)[:, None] * self._path_a_pre[None, :]
                     + betas[:, None] * self._path_a_post[None, :]) / lam
        z = rng.standard_normal((betas.size, self.dim))
        return (mean_coef + z / np.sqrt(lam)) @ self._path_basis.T

    def analytic_log_z_ratio(self):
        return 0.5 * (self._logdet_pre - self._logdet_post)

    def analytic_kl(self, direction):
        if direction == POST_VS_PRE:
            m_a, s_a, prec_b, logdet_a, logdet_b = (
                self.mu_post, self.sigma_post, self._prec_pre, self._logdet_post, self._logdet_pre)
            dm = self.mu_pre - self.mu_post
        elif direction == PRE_VS_POST:
            m_a, s_a, prec_b, logdet_a, logdet_b = (
                self.mu_pre, self.sigma_pre, self._prec_post, self._logdet_pre, self._logdet_post)
            dm = self.mu_post - self.mu_pre
        else:
            raise ValueError(f"unknown KL direction {direction!r}")
        return 0.5 * (np.trace(prec_b @ s_a) + dm @ prec_b @ dm - self.dim + logdet_b - logdet_a)

    def _score(self, which, X):
        if which == "pre":
            mu, prec = self.mu_pre, self._prec_pre
        elif which == "post":
            mu, prec = self.mu_post, self._prec_post
        else:
            raise ValueError(f"which must be 'pre' or 'post', got {which!r}")
        g = (X - mu) @ prec  # grad log p~ = -prec (x - mu); sign drops in the norm
        return 0.5 * np.einsum("ni,ni->n", g, g) - np.trace(prec)


class BoltzmannPair(ModelPair):
    """Exponential-energy pair P~_T(x) = exp(-x/T) on x >= 0, so Z_T = T.

    The geometric bridge is exponential with rate beta/T1 + (1-beta)/T0.
    The Hyvarinen score is the constant 1/(2 T^2): a score-based detector
    sees the same increment before and after the change and is blind to it.
    """

    def __init__(self, t_pre, t_post, name="boltzmann"):
        if t_pre <= 0 or t_post <= 0:
            raise ValueError("temperatures must be positive")
        self.t_pre = float(t_pre)
        self.t_post = float(t_post)
        self.name = name
        self.dim = 1
        self.capabilities = Capabilities(
            exact_pre_sampler=True,
            exact_post_sampler=True,
            exact_path_sampler=True,
            analytic_log_z_ratio=True,
            analytic_kl=True,
            analytic_score=True,
        )

    def _energy(self, X, t):
        x = X[:, 0]
        out = np.where(x >= 0.0, -x / t, -np.inf)
        return out

    def _log_ptilde_pre(self, X):
        return self._energy(X, self.t_pre)

    def _log_ptilde_post(self, X):
        return self._energy(X, self.t_post)

    def _sample_pre(self, rng, n):
        return rng.exponential(self.t_pre, size=(n, 1))

    def _sample_post(self, rng, n):
        return rng.exponential(self.t_post, size=(n, 1))

    def _sample_path_batch(self, rng, betas):
        rate = betas / self.t_post + (1.0 - betas) / self.t_pre
        return rng.exponential(1.0, size=(betas.size, 1)) / rate[:, None]

    def analytic_log_z_ratio(self):
        return np.log(self.t_pre / self.t_post)

    def analytic_kl(self, direction):
        # KL between exponentials with means Ta (from) and Tb (to):
        # log(Tb/Ta) + Ta/Tb - 1.
        if direction == POST_VS_PRE:
            ta, tb = self.t_post, self.t_pre
        elif direction == PRE_VS_POST:
            ta, tb = self.t_pre, self.t_post
        else:
            raise ValueError(f"unknown KL direction {direction!r}")
        return np.log(tb / ta) + ta / tb - 1.0

    def _score(self, which, X):
        if which == "pre":
            t = self.t_pre
        elif which == "post":
            t = self.t_post
        else:
            raise ValueError(f"which must be 'pre' or 'post', got {which!r}")
        if (X[:, 0] < 0.0).any():
            raise DomainError("Boltzmann score requested outside the support x >= 0")
        return np.full(X.shape[0], 0.5 / (t * t))


class CustomPair(ModelPair):
    """User-defined pair built from vectorized log-density callables.

    Both callables take an (n, dim) array and return length-n log values.
    Samplers and reference quantities are optional; the corresponding
    capability flags are set from what is provided.
    """

    def __init__(self, dim, log_ptilde_pre, log_ptilde_post, name="custom",
                 sample_pre=None, sample_post=None, sample_path_batch=None,
                 log_z_ratio=None, kl_post_vs_pre=None, kl_pre_vs_post=None,
                 score_pre=None, score_post=None, approximate_path_sampler=False):
        self.name = name
        self.dim = int(dim)
        self._lp0 = log_ptilde_pre
        self._lp1 = log_ptilde_post
        self._pre = sample_pre
        self._post = sample_post
        self._path = sample_path_batch
        self._lzr = log_z_ratio
        self._kl = {POST_VS_PRE: kl_post_vs_pre, PRE_VS_POST: kl_pre_vs_post}
        self._scores = {"pre": score_pre, "post": score_post}
        self.approximate_path_sampler = approximate_path_sampler
        self.capabilities = Capabilities(
            exact_pre_sampler=sample_pre is not None,
            exact_post_sampler=sample_post is not None,
            exact_path_sampler=sample_path_batch is not None,
            analytic_log_z_ratio=log_z_ratio is not None,
            analytic_kl=kl_post_vs_pre is not None and kl_pre_vs_post is not None,
            analytic_score=score_pre is not None and score_post is not None,
        )

    def _log_ptilde_pre(self, X):
        return np.asarray(self._lp0(X), dtype=float)

    def _log_ptilde_post(self, X):
        return np.asarray(self._lp1(X), dtype=float)

    def _sample_pre(self, rng, n):
        return np.asarray(self._pre(rng, n), dtype=float).reshape(n, self.dim)

    def _sample_post(self, rng, n):
        return np.asarray(self._post(rng, n), dtype=float).reshape(n, self.dim)

    def _sample_path_batch(self, rng, betas):
        return np.asarray(self._path(rng, betas), dtype=float).reshape(betas.size, self.dim)

    def analytic_log_z_ratio(self):
        return self._lzr

    def analytic_kl(self, direction):
        if direction not in self._kl:
            raise ValueError(f"unknown KL direction {direction!r}")
        return self._kl[direction]

    def _score(self, which, X):
        fn = self._scores.get(which)
        if fn is None:
            raise ValueError(f"which must be 'pre' or 'post', got {which!r}")
        return np.asarray(fn(X), dtype=float)


class _MetropolisPathSampler:
    """Random-walk Metropolis targeting the bridge density P~beta.

    A fallback for user pairs without a closed-form bridge.  Draws are
    approximate: each call runs an independent chain for ``burn_in`` steps
    from an initial point and returns the final state.  Reports built on
    such draws carry an approximate-sampler caveat.
    """

    def __init__(self, pair, burn_in=1000, step_size=1.0, init=None):
        self.pair = pair
        self.burn_in = int(burn_in)
        self.step_size = float(step_size)
        self.init = np.zeros(pair.dim) if init is None else np.asarray(init, dtype=float)

    def __call__(self, rng, betas):
        out = np.empty((betas.size, self.pair.dim))
        for k, beta in enumerate(betas):
            x = self.init.copy()
            lp = self.pair.log_ptilde_path(beta, x)
            for _ in range(self.burn_in):
                prop = x + self.step_size * rng.standard_normal(self.pair.dim)
                lp_prop = self.pair.log_ptilde_path(beta, prop)
                if np.log(rng.uniform()) < lp_prop - lp:
                    x, lp = prop, lp_prop
            out[k] = x
        return out


def with_metropolis_path(pair, burn_in=1000, step_size=1.0, init=None):
    """Return a copy of ``pair`` whose bridge sampler is random-walk Metropolis.

    Intended for user pairs without an exact bridge; the returned pair is
    flagged ``approximate_path_sampler`` so downstream reports surface the
    caveat.
    """
    sampler = _MetropolisPathSampler(pair, burn_in=burn_in, step_size=step_size, init=init)
    return CustomPair(
        pair.dim,
        pair._log_ptilde_pre,
        pair._log_ptilde_post,
        name=pair.name + "+rwm-path",
        sample_pre=pair._sample_pre if pair.capabilities.exact_pre_sampler else None,
        sample_post=pair._sample_post if pair.capabilities.exact_post_sampler else None,
        sample_path_batch=sampler,
        log_z_ratio=pair.analytic_log_z_ratio(),
        kl_post_vs_pre=pair.analytic_kl(POST_VS_PRE) if pair.capabilities.analytic_kl else None,
        kl_pre_vs_post=pair.analytic_kl(PRE_VS_POST) if pair.capabilities.analytic_kl else None,
        approximate_path_sampler=True,
    )


# 10-dimensional covariances for the bundled Gaussian experiment pair.
MVN10_SIGMA_PRE = np.array([
    [1.00, 0.60, 0.40, 0.20, 0.10, 0.05, 0.03, 0.02, 0.01, 0.01],
    [0.60, 1.00, 0.50, 0.30, 0.10, 0.04, 0.02, 0.02, 0.01, 0.01],
    [0.40, 0.50, 1.00, 0.40, 0.30, 0.10, 0.05, 0.03, 0.02, 0.01],
    [0.20, 0.30, 0.40, 1.00, 0.50, 0.30, 0.10, 0.04, 0.03, 0.02],
    [0.10, 0.10, 0.30, 0.50, 1.00, 0.60, 0.40, 0.20, 0.10, 0.05],
    [0.05, 0.04, 0.10, 0.30, 0.60, 1.00, 0.50, 0.30, 0.20, 0.10],
    [0.03, 0.02, 0.05, 0.10, 0.40, 0.50, 1.00, 0.60, 0.40, 0.30],
    [0.02, 0.02, 0.03, 0.04, 0.20, 0.30, 0.60, 1.00, 0.50, 0.40],
    [0.01, 0.01, 0.02, 0.03, 0.10, 0.20, 0.40, 0.50, 1.00, 0.60],
    [0.01, 0.01, 0.01, 0.02, 0.05, 0.10, 0.30, 0.40, 0.60, 1.00],
])

MVN10_SIGMA_POST = np.array([
    [1.20, 0.70, 0.50, 0.30, 0.15, 0.10, 0.07, 0.05, 0.03, 0.02],
    [0.70, 1.20, 0.60, 0.40, 0.20, 0.10, 0.05, 0.04, 0.03, 0.02],
    [0.50, 0.60, 1.20, 0.50, 0.40, 0.20, 0.10, 0.07, 0.05, 0.03],
    [0.30, 0.40, 0.50, 1.20, 0.60, 0.40, 0.20, 0.10, 0.07, 0.05],
    [0.15, 0.20, 0.40, 0.60, 1.20, 0.70, 0.50, 0.30, 0.20, 0.10],
    [0.10, 0.10, 0.20, 0.40, 0.70, 1.20, 0.60, 0.40, 0.30, 0.20],
    [0.07, 0.05, 0.10, 0.20, 0.50, 0.60, 1.20, 0.70, 0.50, 0.40],
    [0.05, 0.04, 0.07, 0.10, 0.30, 0.40, 0.70, 1.20, 0.60, 0.50],
    [0.03, 0.03, 0.05, 0.07, 0.20, 0.30, 0.50, 0.60, 1.20, 0.70],
    [0.02, 0.02, 0.03, 0.05, 0.10, 0.20, 0.40, 0.50, 0.70, 1.20],
])


def mvn10():
    """The bundled 10-D Gaussian pair: zero mean -> unit mean shift plus a covariance change."""
    return GaussianPair(np.zeros(10), MVN10_SIGMA_PRE, np.ones(10), MVN10_SIGMA_POST, name="mvn10")


def boltzmann(t_pre=1.0, t_post=1.2):
    """The bundled temperature-change pair, T = 1 -> 1.2 by default."""
    return BoltzmannPair(t_pre, t_post)


_REGISTRY = {"mvn10": mvn10, "boltzmann": boltzmann}


def get_pair(name):
    """Look up a bundled pair by name ('mvn10' or 'boltzmann')."""
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(f"unknown model pair {name!r}; known: {sorted(_REGISTRY)}") from None


# Functional aliases mirroring the class surface, for callers that prefer
# free functions over methods.

def log_weight(pair, x):
    return pair.log_weight(x)


def log_ptilde_path(pair, beta, x):
    return pair.log_ptilde_path(beta, x)


def sample_source(pair, which, rng, n):
    if which == "pre":
        return pair.sample_pre(rng, n)
    if which == "post":
        return pair.sample_post(rng, n)
    raise ValueError(f"which must be 'pre' or 'post', got {which!r}")


def sample_path(pair, beta, rng):
    return pair.sample_path(rng, beta)


def analytic_log_z_ratio(pair):
    return pair.analytic_log_z_ratio()


def analytic_kl(pair, direction):
    return pair.analytic_kl(direction)


def hyvarinen_score(pair, which, x):
    return pair.score(which, x)
