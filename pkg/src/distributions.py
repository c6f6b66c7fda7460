"""
Seeded random sampling for every distribution used by the sampler and the simulator.

Randomness flows through `RngStream`, a (master_seed, path) pair. The path is a
sequence of (domain-tag, index) pairs hashed together with the master seed by
numpy's SeedSequence, so a given path always produces the same draws no matter
which other streams were consumed before it or in which process.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from src.errors import (
    AllWeightsNegInfinity,
    InvalidDof,
    InvalidParameter,
    NotPositiveDefinite,
)

logger = logging.getLogger(__name__)


def _tag_key(tag: str) -> int:
    return int.from_bytes(hashlib.blake2b(tag.encode("utf-8"), digest_size=4).digest(), "little")


@dataclass
class RngStream:
    """A reproducible substream identified by a master seed and a path of (tag, index) pairs."""

    master_seed: int
    path: tuple = ()
    _generator: Optional[np.random.Generator] = field(default=None, init=False, repr=False, compare=False)

    def child(self, tag: str, index: int = 0) -> "RngStream":
        return RngStream(self.master_seed, self.path + ((tag, int(index)),))

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            spawn_key = tuple(v for tag, index in self.path for v in (_tag_key(tag), index))
            seed_seq = np.random.SeedSequence(entropy=int(self.master_seed) & (2**64 - 1), spawn_key=spawn_key)
            self._generator = np.random.Generator(np.random.PCG64(seed_seq))
        return self._generator


def derive_seed(master_seed: int, tag: str, index: int = 0) -> int:
    """A 63-bit seed derived from (master_seed, tag, index), for runs that own a whole stream tree."""
    seed_seq = np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1), spawn_key=(_tag_key(tag), int(index)))
    high, low = seed_seq.generate_state(2, np.uint32)
    return ((int(high) << 32) | int(low)) >> 1


RngLike = Union[RngStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    return rng.generator if isinstance(rng, RngStream) else rng


# Scalar families

@dataclass(frozen=True)
class Normal:
    mean: float
    var: float

    def validate(self):
        if not self.var > 0:
            raise InvalidParameter("var", f"Normal variance must be > 0, got {self.var}")

    def sample(self, gen, size=None):
        return gen.normal(self.mean, np.sqrt(self.var), size)


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def validate(self):
        for name in ("a", "b"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(name, f"Beta parameter '{name}' must be > 0")

    def sample(self, gen, size=None):
        return gen.beta(self.a, self.b, size)


@dataclass(frozen=True)
class InverseGamma:
    """Shape/rate inverse-Gamma: density proportional to x^-(a+1) exp(-b/x)."""

    a: float
    b: float

    def validate(self):
        for name in ("a", "b"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(name, f"InverseGamma parameter '{name}' must be > 0")

    def sample(self, gen, size=None):
        return inverse_gamma(gen, self.a, self.b, size)


@dataclass(frozen=True)
class Bernoulli:
    q: float

    def validate(self):
        if not 0.0 <= self.q <= 1.0:
            raise InvalidParameter("q", f"Bernoulli probability must lie in [0, 1], got {self.q}")

    def sample(self, gen, size=None):
        draw = gen.random(size) < self.q
        return draw.astype(int) if size is not None else int(draw)


@dataclass(frozen=True)
class Poisson:
    lam: float

    def validate(self):
        if not self.lam > 0:
            raise InvalidParameter("lam", f"Poisson rate must be > 0, got {self.lam}")

    def sample(self, gen, size=None):
        return gen.poisson(self.lam, size)


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def validate(self):
        if not self.lo < self.hi:
            raise InvalidParameter("lo", f"Uniform needs lo < hi, got ({self.lo}, {self.hi})")

    def sample(self, gen, size=None):
        return gen.uniform(self.lo, self.hi, size)


@dataclass(frozen=True)
class SymmetricUniform:
    """Uniform over (-hi, -lo) U (lo, hi), used for module fold changes."""

    lo: float
    hi: float

    def validate(self):
        if not 0 <= self.lo < self.hi:
            raise InvalidParameter("lo", f"need 0 <= lo < hi, got ({self.lo}, {self.hi})")

    def sample(self, gen, size=None):
        magnitude = gen.uniform(self.lo, self.hi, size)
        sign = np.where(gen.random(size) < 0.5, -1.0, 1.0)
        return magnitude * sign


Distribution = Union[Normal, Beta, InverseGamma, Bernoulli, Poisson, Uniform, SymmetricUniform]


_LOG_TINY = float(np.log(np.finfo(float).tiny))
_LOG_MAX = float(np.log(np.finfo(float).max))


def inverse_gamma(gen: np.random.Generator, shape, rate, size=None):
    """
    Vectorised shape/rate inverse-Gamma draws, rate / G with G ~ Gamma(shape).

    log G is drawn as log Gamma(shape + 1) + log(U) / shape, so shapes near 0,
    whose plain Gamma draws underflow to 0, still give finite positive values.
    """
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if size is None:
        size = np.broadcast(shape, rate).shape
    with np.errstate(divide="ignore"):
        log_g = np.log(gen.gamma(shape + 1.0, 1.0, size)) + np.log(gen.random(size)) / shape
    draw = np.exp(np.clip(np.log(rate) - log_g, _LOG_TINY, _LOG_MAX))
    return draw if draw.ndim else float(draw)


def sample_scalar(dist: Distribution, rng: RngLike, size=None):
    dist.validate()
    return dist.sample(as_generator(rng), size)


def sample_dirichlet(alpha, rng: RngLike) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size == 0 or np.any(~(alpha > 0)):
        raise InvalidParameter("alpha", "Dirichlet concentrations must all be > 0")
    if alpha.size == 1:
        return np.ones(1)
    draw = as_generator(rng).gamma(alpha)
    if not np.any(draw > 0):
        # every gamma draw underflowed; fall back to the normalised concentrations
        draw = alpha.copy()
    return draw / draw.sum()


def _log_probabilities(log_weights: np.ndarray) -> np.ndarray:
    norm = logsumexp(log_weights, axis=-1, keepdims=True)
    return np.exp(log_weights - norm)


def sample_categorical_log(log_weights, rng: RngLike) -> int:
    """Draw a 0-based index with probability proportional to exp(log_weights)."""
    log_weights = np.asarray(log_weights, dtype=float)
    if np.any(np.isnan(log_weights)) or np.any(log_weights == np.inf):
        raise InvalidParameter("log_weights", "log-weights must be finite or -inf")
    if not np.any(np.isfinite(log_weights)):
        raise AllWeightsNegInfinity("every log-weight is -inf")
    return int(sample_categorical_log_rows(log_weights[None, :], rng)[0])


def _closed_cumulative(probs: np.ndarray) -> np.ndarray:
    """Row-wise cumulative sums pinned to exactly 1 from each row's last positive entry on."""
    cumulative = np.cumsum(probs, axis=1)
    last = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    cumulative[np.arange(probs.shape[1])[None, :] >= last[:, None]] = 1.0
    return cumulative


def sample_categorical_log_rows(log_weights, rng: RngLike) -> np.ndarray:
    """Row-wise version of `sample_categorical_log` for an (m, K) matrix of log-weights."""
    log_weights = np.asarray(log_weights, dtype=float)
    if np.any(np.isnan(log_weights)):
        raise InvalidParameter("log_weights", "log-weights contain NaN")
    if np.any(~np.any(np.isfinite(log_weights), axis=1)):
        raise AllWeightsNegInfinity("a row has every log-weight equal to -inf")
    cumulative = _closed_cumulative(_log_probabilities(log_weights))
    u = as_generator(rng).random(log_weights.shape[0])
    return np.sum(cumulative <= u[:, None], axis=1)


def _cholesky(matrix: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"matrix is not positive definite: {exc}") from exc


def _check_symmetric(matrix: np.ndarray, name: str):
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InvalidParameter(name, f"{name} must be a square matrix")
    if not np.allclose(matrix, matrix.T, atol=1e-10, rtol=0.0):
        raise NotPositiveDefinite(f"{name} is not symmetric")


def sample_mvn(mean, cov, rng: RngLike, size: Optional[int] = None) -> np.ndarray:
    """Multivariate normal draw(s) through the lower Cholesky factor of `cov`."""
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    _check_symmetric(cov, "cov")
    chol = _cholesky(cov)
    d = cov.shape[0]
    gen = as_generator(rng)
    if size is None:
        return mean + chol @ gen.standard_normal(d)
    return mean + gen.standard_normal((size, d)) @ chol.T


def sample_inverse_wishart(scale, dof: float, rng: RngLike) -> np.ndarray:
    """
    Inverse-Wishart draw W^-1(scale, dof) by the Bartlett decomposition of a
    Wishart(scale^-1, dof) draw followed by inversion.
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    _check_symmetric(scale, "scale")
    d = scale.shape[0]
    if not dof > d - 1:
        raise InvalidDof(f"inverse-Wishart needs dof > d - 1 = {d - 1}, got {dof}")

    scale_chol = _cholesky(scale)
    identity = np.eye(d)
    inv_chol = linalg.solve_triangular(scale_chol, identity, lower=True)
    chol = _cholesky(inv_chol.T @ inv_chol)

    gen = as_generator(rng)
    bartlett = np.zeros((d, d))
    bartlett[np.diag_indices(d)] = np.sqrt(gen.chisquare(dof - np.arange(d)))
    lower = np.tril_indices(d, -1)
    bartlett[lower] = gen.standard_normal(len(lower[0]))

    factor = chol @ bartlett
    factor_inv = linalg.solve_triangular(factor, identity, lower=True)
    draw = factor_inv.T @ factor_inv
    return 0.5 * (draw + draw.T)
