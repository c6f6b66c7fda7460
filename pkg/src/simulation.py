"""
Synthetic benchmark generator: intrinsic gene modules that define disease
subtypes, a continuous outcome tied to the subtypes, confounder-driven
modules with their own random sample partitions, and pure noise genes.

Genes are laid out intrinsic first, then confounder modules, then noise.
The generator emits raw expression; standardize before fitting.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from src.distributions import (
    Normal,
    Poisson,
    RngStream,
    SymmetricUniform,
    Uniform,
    sample_inverse_wishart,
    sample_mvn,
    sample_scalar,
)
from src.errors import DegenerateClusterSizes, InvalidDof, InvalidParameter, NotPositiveDefinite

logger = logging.getLogger(__name__)

MAX_WISHART_ATTEMPTS = 5
MAX_SIZE_ATTEMPTS = 10


@dataclass(frozen=True)
class SimulationConfig:
    K: int = 3
    subjects_per_cluster_mean: float = 100.0
    M: int = 20
    module_size_mean: float = 20.0
    V: int = 4
    R: int = 20
    n_noise: int = 3000
    sigma0: float = 1.0
    sigma1: float = 3.0
    sigma2: float = 6.0
    sigma3: float = 1.0
    fold_change_low: float = 0.2
    fold_change_high: float = 2.0
    noise_mean_low: float = 4.0
    noise_mean_high: float = 8.0
    wishart_nu: float = 60.0
    wishart_phi_mix: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("K", "M", "V", "R", "n_noise"):
            if getattr(self, name) < 1:
                raise InvalidParameter(name, f"'{name}' must be >= 1")
        for name in ("subjects_per_cluster_mean", "module_size_mean", "sigma0", "sigma1", "sigma2", "sigma3",
                     "wishart_nu"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(name, f"'{name}' must be > 0")
        if not 0.0 <= self.wishart_phi_mix <= 1.0:
            raise InvalidParameter("wishart_phi_mix", "wishart_phi_mix must lie in [0, 1]")

    def baseline(self, k: int) -> float:
        """Baseline level 2 + 2k of the (0-based) subclass k, i.e. 4, 6, 8, ..."""
        return 2.0 + 2.0 * (k + 1)

    def wishart_scale(self, size: int) -> np.ndarray:
        return self.wishart_phi_mix * np.eye(size) + (1.0 - self.wishart_phi_mix) * np.ones((size, size))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SimulatedDataset:
    expr: np.ndarray           # raw G x N
    outcome: np.ndarray        # N
    labels: np.ndarray         # N disease labels, 0-based
    confounder_labels: np.ndarray  # V x N, 0-based
    gene_group: np.ndarray     # "intrinsic", "confounder1".., "noise" per gene
    gene_module: np.ndarray    # module number within its group, -1 for noise
    gene_ids: tuple = field(default=())
    sample_ids: tuple = field(default=())

    @property
    def intrinsic(self) -> np.ndarray:
        return np.flatnonzero(self.gene_group == "intrinsic")

    @property
    def intrinsic_mask(self) -> np.ndarray:
        return self.gene_group == "intrinsic"


def _standardized_covariance(size: int, cfg: SimulationConfig, stream: RngStream) -> np.ndarray:
    for attempt in range(MAX_WISHART_ATTEMPTS):
        try:
            raw = sample_inverse_wishart(cfg.wishart_scale(size), cfg.wishart_nu, stream.child("wishart", attempt))
            scale = 1.0 / np.sqrt(np.diag(raw))
            cov = raw * np.outer(scale, scale)
            np.fill_diagonal(cov, 1.0)
            np.linalg.cholesky(cov)
            return cov
        except (NotPositiveDefinite, np.linalg.LinAlgError):
            logger.warning("Inverse-Wishart draw %d was not positive definite; redrawing", attempt + 1)
    raise NotPositiveDefinite(f"no positive-definite module covariance after {MAX_WISHART_ATTEMPTS} attempts")


def simulate_correlated_module(template_per_cluster, size: int, labels, cfg: SimulationConfig,
                               rng: RngStream) -> np.ndarray:
    """
    Expression block (size x N) of one gene module. For each subclass k a unit-
    diagonal covariance is derived from an inverse-Wishart draw, and every
    subject i in k gets a latent level X'_i ~ N(template_k, sigma1^2) shared by
    the module's genes, perturbed by MVN(0, Sigma_k).
    """
    if size < 1:
        raise InvalidParameter("size", "module size must be >= 1")
    if not cfg.wishart_nu > size - 1:
        raise InvalidDof(f"wishart_nu={cfg.wishart_nu} must exceed module size - 1 = {size - 1}")
    labels = np.asarray(labels)
    block = np.empty((size, len(labels)))
    for k, template in enumerate(template_per_cluster):
        members = np.flatnonzero(labels == k)
        if members.size == 0:
            continue
        stream = rng.child("subclass", k)
        cov = _standardized_covariance(size, cfg, stream)
        latent = sample_scalar(Normal(template, cfg.sigma1**2), stream.child("latent"), size=members.size)
        noise = sample_mvn(np.zeros(size), cov, stream.child("mvn"), size=members.size)
        block[:, members] = (latent[:, None] + noise).T
    return block


def _cluster_sizes(cfg: SimulationConfig, root: RngStream) -> np.ndarray:
    for attempt in range(MAX_SIZE_ATTEMPTS):
        sizes = sample_scalar(Poisson(cfg.subjects_per_cluster_mean), root.child("cluster_sizes", attempt), size=cfg.K)
        if np.all(sizes > 0):
            return sizes
        logger.warning("Drew an empty subtype (sizes %s); redrawing", sizes.tolist())
    raise DegenerateClusterSizes(f"every one of {MAX_SIZE_ATTEMPTS} cluster-size draws had an empty subtype")


def _module_size(cfg: SimulationConfig, stream: RngStream) -> int:
    attempt = 0
    while True:
        size = int(sample_scalar(Poisson(cfg.module_size_mean), stream.child("size", attempt)))
        if size > 0:
            return size
        attempt += 1


def _module(labels, cfg: SimulationConfig, stream: RngStream) -> np.ndarray:
    size = _module_size(cfg, stream)
    fold_change = sample_scalar(SymmetricUniform(cfg.fold_change_low, cfg.fold_change_high), stream.child("alpha"))
    baselines = np.array([cfg.baseline(k) for k in range(cfg.K)])
    templates = fold_change * baselines + sample_scalar(Normal(0.0, cfg.sigma0**2), stream.child("template"), size=cfg.K)
    return simulate_correlated_module(templates, size, labels, cfg, stream.child("block"))


def simulate_dataset(cfg: SimulationConfig) -> SimulatedDataset:
    root = RngStream(cfg.seed).child("simulation")

    sizes = _cluster_sizes(cfg, root)
    labels = np.repeat(np.arange(cfg.K), sizes)
    n_samples = len(labels)

    blocks, groups, modules = [], [], []
    for m in range(cfg.M):
        block = _module(labels, cfg, root.child("intrinsic_module", m))
        blocks.append(block)
        groups += ["intrinsic"] * len(block)
        modules += [m] * len(block)

    baselines = np.array([cfg.baseline(k) for k in range(cfg.K)])
    outcome = sample_scalar(Normal(0.0, cfg.sigma2**2), root.child("outcome"), size=n_samples) + baselines[labels]

    confounder_labels = np.empty((cfg.V, n_samples), dtype=int)
    for v in range(cfg.V):
        stream = root.child("confounder", v)
        confounder_labels[v] = stream.child("partition").generator.integers(0, cfg.K, n_samples)
        for r in range(cfg.R):
            block = _module(confounder_labels[v], cfg, stream.child("module", r))
            blocks.append(block)
            groups += [f"confounder{v + 1}"] * len(block)
            modules += [r] * len(block)

    noise_stream = root.child("noise")
    noise_means = sample_scalar(Uniform(cfg.noise_mean_low, cfg.noise_mean_high), noise_stream.child("mean"),
                                size=cfg.n_noise)
    noise = noise_means[:, None] + cfg.sigma3 * noise_stream.child("values").generator.standard_normal(
        (cfg.n_noise, n_samples)
    )
    blocks.append(noise)
    groups += ["noise"] * cfg.n_noise
    modules += [-1] * cfg.n_noise

    expr = np.vstack(blocks)
    logger.info(
        "Simulated %d genes (%d intrinsic) x %d samples, subtype sizes %s",
        expr.shape[0], groups.count("intrinsic"), n_samples, sizes.tolist(),
    )
    return SimulatedDataset(
        expr=expr,
        outcome=outcome,
        labels=labels,
        confounder_labels=confounder_labels,
        gene_group=np.array(groups),
        gene_module=np.array(modules),
        gene_ids=tuple(f"gene{g + 1}" for g in range(expr.shape[0])),
        sample_ids=tuple(f"sample{i + 1}" for i in range(n_samples)),
    )

