"""
Domain data model shared by all modules: expression matrices, clinical outcomes,
hyper-parameters, the Gibbs state and the posterior trace.

Matrices are stored gene-major (row = gene, column = sample).
"""

import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src.errors import (
    DimensionMismatch,
    EmptyResult,
    EmptyTrace,
    InvalidOutcome,
    InvalidParameter,
    NonFiniteInput,
    ZeroVarianceGene,
)

logger = logging.getLogger(__name__)

OUTCOME_KINDS = ("continuous", "binary", "ordinal", "survival")


def _ids(ids, count, prefix):
    if ids is None:
        return tuple(f"{prefix}{i + 1}" for i in range(count))
    ids = tuple(str(i) for i in ids)
    if len(ids) != count:
        raise DimensionMismatch(f"expected {count} {prefix} ids, got {len(ids)}")
    return ids


def _frozen(values):
    values = np.array(values, dtype=float)
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class ExpressionMatrix:
    """G x n expression values with gene and sample identifiers."""

    values: np.ndarray
    gene_ids: tuple
    sample_ids: tuple

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise DimensionMismatch("expression values must be a 2-d matrix")
        n_genes, n_samples = values.shape
        if n_genes < 1 or n_samples < 2:
            raise DimensionMismatch(f"need at least 1 gene and 2 samples, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteInput("expression matrix contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "gene_ids", _ids(self.gene_ids, n_genes, "gene"))
        object.__setattr__(self, "sample_ids", _ids(self.sample_ids, n_samples, "sample"))

    @property
    def n_genes(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "ExpressionMatrix":
        return cls(df.to_numpy(dtype=float), tuple(df.index), tuple(df.columns))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=list(self.gene_ids), columns=list(self.sample_ids))

    def subset_genes(self, index: Sequence[int]) -> "ExpressionMatrix":
        index = np.asarray(index, dtype=int)
        return ExpressionMatrix(self.values[index], tuple(self.gene_ids[i] for i in index), self.sample_ids)


@dataclass(frozen=True)
class ClinicalOutcome:
    """
    A clinical outcome for n samples.

    `y` holds the values for continuous/binary/ordinal outcomes and the survival
    times for survival outcomes; `event` is only used for survival.
    """

    kind: str
    y: np.ndarray
    event: Optional[np.ndarray] = None
    sample_ids: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in OUTCOME_KINDS:
            raise InvalidOutcome(f"unknown outcome kind '{self.kind}', expected one of {OUTCOME_KINDS}")
        y = _frozen(self.y)
        if y.ndim != 1:
            raise InvalidOutcome("outcome values must be a vector")
        if not np.all(np.isfinite(y)):
            raise NonFiniteInput("outcome contains non-finite values")
        object.__setattr__(self, "y", y)
        if self.sample_ids is not None:
            object.__setattr__(self, "sample_ids", _ids(self.sample_ids, len(y), "sample"))

        if self.kind == "binary":
            if not np.all(np.isin(y, (0.0, 1.0))):
                raise InvalidOutcome("binary outcome must be coded 0/1")
            if np.unique(y).size < 2:
                raise InvalidOutcome("binary outcome needs both classes present")
        elif self.kind == "ordinal":
            if not np.all(y == np.round(y)):
                raise InvalidOutcome("ordinal outcome levels must be integers")
            if np.unique(y).size < 2:
                raise InvalidOutcome("ordinal outcome needs at least 2 distinct levels")
        elif self.kind == "survival":
            if self.event is None:
                raise InvalidOutcome("survival outcome requires an event indicator")
            event = _frozen(self.event)
            if event.shape != y.shape:
                raise InvalidOutcome("survival times and events differ in length")
            if not np.all(np.isin(event, (0.0, 1.0))):
                raise InvalidOutcome("survival events must be coded 0/1")
            if np.any(y <= 0):
                raise InvalidOutcome("survival times must be strictly positive")
            object.__setattr__(self, "event", event)

    def __len__(self):
        return len(self.y)

    def subset(self, index: Sequence[int]) -> "ClinicalOutcome":
        index = np.asarray(index, dtype=int)
        return ClinicalOutcome(
            kind=self.kind,
            y=self.y[index],
            event=None if self.event is None else self.event[index],
            sample_ids=None if self.sample_ids is None else tuple(self.sample_ids[i] for i in index),
        )


@dataclass(frozen=True)
class Hyperparameters:
    """Prior hyper-parameters, cluster count and iteration counts. Inverse-Gamma priors are shape/rate."""

    c: float = 1.0
    a_p: float = 1.0
    b_p: float = 1.0
    a_sigma: float = 0.001
    b_sigma: float = 0.001
    a_tau_mu0: float = 2.0
    b_tau_mu0: float = 0.005
    a_tau_mu1: float = 4.0
    b_tau_mu1: float = 450.0
    a_tau_u0: float = 0.001
    b_tau_u0: float = 0.001
    a_tau_u1: float = 0.001
    b_tau_u1: float = 0.001
    K: int = 3
    N_T: int = 1000
    N_B: int = 500

    def __post_init__(self):
        for f in fields(self):
            if f.name in ("K", "N_T", "N_B"):
                continue
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameter(f.name, f"hyper-parameter '{f.name}' must be > 0, got {value}")
        if self.K < 1:
            raise InvalidParameter("K", f"K must be >= 1, got {self.K}")
        if not 0 <= self.N_B < self.N_T:
            raise InvalidParameter("N_B", f"need 0 <= N_B < N_T, got N_B={self.N_B}, N_T={self.N_T}")

    def with_updates(self, **changes) -> "Hyperparameters":
        return replace(self, **changes)

    def prior_mean(self, which: str) -> float:
        """Prior mean b/(a-1) of one of the four mixture variances, 1.0 when a <= 1."""
        a = getattr(self, f"a_tau_{which}")
        b = getattr(self, f"b_tau_{which}")
        return b / (a - 1.0) if a > 1.0 else 1.0


@dataclass
class ModelState:
    """All Gibbs-sampled parameters. Cluster labels in `Z` are 0-based."""

    pi: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    L: np.ndarray
    Z: np.ndarray
    p: float
    tau2_mu0: float
    tau2_mu1: float
    tau2_u0: float
    tau2_u1: float

    @property
    def K(self) -> int:
        return len(self.pi)

    def validate(self) -> "ModelState":
        if abs(float(np.sum(self.pi)) - 1.0) > 1e-12 or np.any(self.pi <= 0):
            raise InvalidParameter("pi", "pi must lie strictly inside the simplex")
        if np.any(self.sigma2 <= 0) or not np.all(np.isfinite(self.sigma2)):
            raise InvalidParameter("sigma2", "gene variances must be positive")
        for name in ("tau2_mu0", "tau2_mu1", "tau2_u0", "tau2_u1"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameter(name, f"{name} must be positive, got {value}")
        if not 0.0 < self.p < 1.0:
            raise InvalidParameter("p", f"p must lie in (0, 1), got {self.p}")
        if self.mu.shape != (len(self.sigma2), self.K):
            raise InvalidParameter("mu", f"mu must be G x K, got {self.mu.shape}")
        if np.any((self.Z < 0) | (self.Z >= self.K)):
            raise InvalidParameter("Z", "cluster labels out of range")
        return self

    def copy(self) -> "ModelState":
        return ModelState(
            pi=self.pi.copy(), mu=self.mu.copy(), sigma2=self.sigma2.copy(),
            L=self.L.copy(), Z=self.Z.copy(), p=self.p,
            tau2_mu0=self.tau2_mu0, tau2_mu1=self.tau2_mu1,
            tau2_u0=self.tau2_u0, tau2_u1=self.tau2_u1,
        )


SCALAR_PARAMS = ("p", "tau2_mu0", "tau2_mu1", "tau2_u0", "tau2_u1")


@dataclass
class PosteriorTrace:
    """
    Retained post-burn-in draws of L and Z, running sums of pi, mu and sigma2,
    and per-iteration scalar diagnostics for every iteration including burn-in.

    When `draws` is populated it maps each ModelState field name to an array
    whose first axis is the retained iteration.
    """

    K: int
    L: np.ndarray            # N x G, uint8
    Z: np.ndarray            # N x n, 0-based labels
    pi_sum: np.ndarray
    mu_sum: np.ndarray
    sigma2_sum: np.ndarray
    diagnostics: pd.DataFrame
    guided: bool = True
    draws: dict = field(default_factory=dict)

    @property
    def n_retained(self) -> int:
        return self.L.shape[0]

    def _require_draws(self):
        if self.n_retained == 0:
            raise EmptyTrace("posterior trace holds no retained draws")

    @property
    def inclusion_frequency(self) -> np.ndarray:
        self._require_draws()
        return self.L.mean(axis=0)

    @property
    def cluster_frequency(self) -> np.ndarray:
        """n x K matrix of retained-draw frequencies of each label per sample."""
        self._require_draws()
        n_samples = self.Z.shape[1]
        counts = np.zeros((n_samples, self.K))
        for k in range(self.K):
            counts[:, k] = np.sum(self.Z == k, axis=0)
        return counts / self.n_retained

    @property
    def pi_mean(self) -> np.ndarray:
        self._require_draws()
        return self.pi_sum / self.n_retained

    @property
    def mu_mean(self) -> np.ndarray:
        self._require_draws()
        return self.mu_sum / self.n_retained

    @property
    def sigma2_mean(self) -> np.ndarray:
        self._require_draws()
        return self.sigma2_sum / self.n_retained


def standardize_genes(raw, gene_ids=None, sample_ids=None) -> ExpressionMatrix:
    """Center every gene to mean 0 and scale to standard deviation 1 (n-1 divisor)."""
    if isinstance(raw, ExpressionMatrix):
        gene_ids, sample_ids, raw = raw.gene_ids, raw.sample_ids, raw.values
    elif isinstance(raw, pd.DataFrame):
        gene_ids = tuple(raw.index) if gene_ids is None else gene_ids
        sample_ids = tuple(raw.columns) if sample_ids is None else sample_ids
        raw = raw.to_numpy(dtype=float)
    values = np.asarray(raw, dtype=float)
    if values.ndim != 2:
        raise DimensionMismatch("expression values must be a 2-d matrix")
    if not np.all(np.isfinite(values)):
        raise NonFiniteInput("expression matrix contains non-finite values")
    gene_ids = _ids(gene_ids, values.shape[0], "gene")

    centered = values - values.mean(axis=1, keepdims=True)
    sd = centered.std(axis=1, ddof=1, keepdims=True)
    constant = np.flatnonzero(sd[:, 0] == 0)
    if constant.size:
        raise ZeroVarianceGene(gene_ids[constant[0]])
    return ExpressionMatrix(centered / sd, gene_ids, sample_ids)


def filter_low_expression(raw, fraction: float):
    """
    Drop the `fraction` of genes with the lowest row mean, keeping the
    ceil((1 - fraction) * G) highest in their original order.

    Ties at the cutoff keep the lower row index. Accepts an ndarray or a
    gene-indexed DataFrame and returns the same type.
    """
    if not 0.0 <= fraction < 1.0:
        raise InvalidParameter("fraction", f"fraction must lie in [0, 1), got {fraction}")
    values = raw.to_numpy(dtype=float) if isinstance(raw, pd.DataFrame) else np.asarray(raw, dtype=float)
    n_genes = values.shape[0]
    n_keep = math.ceil((1.0 - fraction) * n_genes)
    if n_keep == 0:
        raise EmptyResult("low-expression filter removed every gene")

    # stable sort on -mean keeps lower indices first among equal means
    order = np.argsort(-values.mean(axis=1), kind="stable")
    keep = np.sort(order[:n_keep])
    logger.debug("Filter kept %d of %d genes", n_keep, n_genes)
    if isinstance(raw, pd.DataFrame):
        return raw.iloc[keep]
    return values[keep]

