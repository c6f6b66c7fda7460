"""
Gibbs sampler for the outcome-guided sparse Gaussian mixture.

One iteration updates, in this fixed order: p, tau2_mu0, tau2_mu1, tau2_u0,
tau2_u1, the gene selection indicators L, the proportions pi, the labels Z,
the cluster means mu and the gene variances sigma2. The unguided baseline
skips the tau2_u updates and drops the guidance factor from the L update.

Each conditional is exposed twice: `*_conditional` returns the exact
parameters of the full conditional, `update_*` draws from it in place.
Draws for a step come from the substream ("iteration", t) / (step, 0), so
every run with the same seed reproduces bit-for-bit.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import expit, gammaln
from tqdm import tqdm

from src.core import SCALAR_PARAMS, ExpressionMatrix, Hyperparameters, ModelState, PosteriorTrace
from src.distributions import (
    RngLike,
    RngStream,
    as_generator,
    inverse_gamma,
    sample_categorical_log_rows,
    sample_dirichlet,
)
from src.errors import DimensionMismatch, InvalidParameter

logger = logging.getLogger(__name__)

TAU2_KINDS = ("mu0", "mu1", "u0", "u1")


@dataclass(frozen=True)
class GibbsConfig:
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    seed: int = 0
    guided: bool = True
    thin: int = 1
    keep_draws: bool = False
    progress: bool = False
    log_every: int = 100

    def __post_init__(self):
        if self.thin < 1:
            raise InvalidParameter("thin", f"thin must be >= 1, got {self.thin}")

    @property
    def n_retained(self) -> int:
        return -(-(self.hyper.N_T - self.hyper.N_B) // self.thin)


def _guidance_array(u, n_genes: int) -> np.ndarray:
    values = np.asarray(getattr(u, "u", u), dtype=float)
    if values.shape != (n_genes,):
        raise DimensionMismatch(f"guidance vector has shape {values.shape}, expected ({n_genes},)")
    return values


def _log_normal(x, mean, var):
    return stats.norm.logpdf(x, loc=mean, scale=np.sqrt(var))


def _one_hot(Z: np.ndarray, K: int) -> np.ndarray:
    onehot = np.zeros((len(Z), K))
    onehot[np.arange(len(Z)), Z] = 1.0
    return onehot


def initialize_state(expr: ExpressionMatrix, u, cfg: GibbsConfig) -> ModelState:
    """
    Uniform random labels, L ~ Bernoulli(0.5), p = 0.5, flat pi, cluster sample
    means (0 for empty clusters), per-gene sample variances and prior-mean
    mixture variances.
    """
    hyper = cfg.hyper
    X = expr.values
    n_genes, n_samples = X.shape
    if u is not None:
        _guidance_array(u, n_genes)
    gen = RngStream(cfg.seed).child("init").generator

    Z = gen.integers(0, hyper.K, n_samples)
    L = (gen.random(n_genes) < 0.5).astype(np.uint8)
    counts = np.bincount(Z, minlength=hyper.K)
    sums = X @ _one_hot(Z, hyper.K)
    mu = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    sigma2 = X.var(axis=1, ddof=1)
    sigma2 = np.where(sigma2 > 0, sigma2, 1.0)

    state = ModelState(
        pi=np.full(hyper.K, 1.0 / hyper.K),
        mu=mu,
        sigma2=sigma2,
        L=L,
        Z=Z,
        p=0.5,
        tau2_mu0=hyper.prior_mean("mu0"),
        tau2_mu1=hyper.prior_mean("mu1"),
        tau2_u0=hyper.prior_mean("u0"),
        tau2_u1=hyper.prior_mean("u1"),
    )
    if np.any(counts == 0):
        logger.warning("Initial labels left %d empty cluster(s)", int(np.sum(counts == 0)))
    return state.validate()


# Step 1

def p_conditional(state: ModelState, hyper: Hyperparameters):
    selected = float(np.sum(state.L))
    return hyper.a_p + selected, hyper.b_p + len(state.L) - selected


def update_p(state: ModelState, hyper: Hyperparameters, rng: RngLike):
    a, b = p_conditional(state, hyper)
    state.p = float(as_generator(rng).beta(a, b))
    # a Beta draw can round to exactly 0 or 1 when one side dominates
    state.p = float(np.clip(state.p, np.finfo(float).tiny, 1.0 - np.finfo(float).eps))


# Steps 2-5

def tau2_conditional(state: ModelState, hyper: Hyperparameters, which: str, u=None):
    """Shape and rate of the inverse-Gamma conditional for tau2_`which`."""
    if which not in TAU2_KINDS:
        raise InvalidParameter("which", f"expected one of {TAU2_KINDS}, got '{which}'")
    a = getattr(hyper, f"a_tau_{which}")
    b = getattr(hyper, f"b_tau_{which}")
    mask = state.L == (1 if which.endswith("1") else 0)
    count = float(np.sum(mask))
    if which.startswith("mu"):
        return a + 0.5 * state.K * count, b + 0.5 * float(np.sum(state.mu[mask] ** 2))
    values = _guidance_array(u, len(state.L))[mask]
    target = 1.0 if which == "u1" else 0.0
    return a + 0.5 * count, b + 0.5 * float(np.sum((values - target) ** 2))


def update_tau2(state: ModelState, hyper: Hyperparameters, which: str, rng: RngLike, u=None):
    shape, rate = tau2_conditional(state, hyper, which, u)
    setattr(state, f"tau2_{which}", float(inverse_gamma(as_generator(rng), shape, rate)))


# Step 6

def selection_log_odds(state: ModelState, u=None, guided: bool = True) -> np.ndarray:
    """Log-odds of L_g = 1 given everything else, for every gene."""
    log_odds = np.log(state.p) - np.log1p(-state.p)
    log_odds = log_odds + np.sum(
        _log_normal(state.mu, 0.0, state.tau2_mu1) - _log_normal(state.mu, 0.0, state.tau2_mu0), axis=1
    )
    if guided:
        values = _guidance_array(u, len(state.L))
        log_odds += _log_normal(values, 1.0, state.tau2_u1) - _log_normal(values, 0.0, state.tau2_u0)
    return log_odds


def selection_probability(state: ModelState, u=None, guided: bool = True) -> np.ndarray:
    return expit(selection_log_odds(state, u, guided))


def update_gene_selection(state: ModelState, rng: RngLike, u=None, guided: bool = True):
    prob = selection_probability(state, u, guided)
    state.L = (as_generator(rng).random(len(prob)) < prob).astype(np.uint8)


# Step 7

def pi_conditional(state: ModelState, hyper: Hyperparameters) -> np.ndarray:
    return hyper.c + np.bincount(state.Z, minlength=state.K).astype(float)


def update_pi(state: ModelState, hyper: Hyperparameters, rng: RngLike):
    pi = sample_dirichlet(pi_conditional(state, hyper), rng)
    state.pi = np.maximum(pi, np.finfo(float).tiny)
    state.pi /= state.pi.sum()


# Step 8

def assignment_log_weights(state: ModelState, X: np.ndarray) -> np.ndarray:
    """n x K matrix of log pi_k - sum_g (X_gi - mu_gk)^2 / (2 sigma_g^2)."""
    inv_two_var = 0.5 / state.sigma2
    log_weights = np.empty((X.shape[1], state.K))
    for k in range(state.K):
        resid = X - state.mu[:, k:k + 1]
        log_weights[:, k] = np.log(state.pi[k]) - inv_two_var @ (resid * resid)
    return log_weights


def update_assignments(state: ModelState, X: np.ndarray, rng: RngLike):
    state.Z = sample_categorical_log_rows(assignment_log_weights(state, X), rng)


# Step 9

def mean_conditional(state: ModelState, X: np.ndarray):
    """Posterior mean and variance (G x K each) of mu under the N(0, tau2_{mu L_g}) prior."""
    counts = np.bincount(state.Z, minlength=state.K).astype(float)
    sums = X @ _one_hot(state.Z, state.K)
    tau2 = np.where(state.L == 1, state.tau2_mu1, state.tau2_mu0)[:, None]
    sigma2 = state.sigma2[:, None]
    denom = tau2 * counts[None, :] + sigma2
    return tau2 * sums / denom, tau2 * sigma2 / denom


def update_means(state: ModelState, X: np.ndarray, rng: RngLike):
    mean, var = mean_conditional(state, X)
    state.mu = mean + np.sqrt(var) * as_generator(rng).standard_normal(mean.shape)


# Step 10

def variance_conditional(state: ModelState, X: np.ndarray, hyper: Hyperparameters):
    """Shape (scalar) and per-gene rates of the inverse-Gamma conditional of sigma2."""
    resid = X - state.mu[:, state.Z]
    return hyper.a_sigma + 0.5 * X.shape[1], hyper.b_sigma + 0.5 * np.sum(resid * resid, axis=1)


def update_variances(state: ModelState, X: np.ndarray, hyper: Hyperparameters, rng: RngLike):
    shape, rate = variance_conditional(state, X, hyper)
    state.sigma2 = inverse_gamma(as_generator(rng), shape, rate)


def _log_inverse_gamma(x, a, b):
    return stats.invgamma.logpdf(x, a, scale=b)


def log_posterior(state: ModelState, X: np.ndarray, hyper: Hyperparameters, u=None, guided: bool = True) -> float:
    """Unnormalised log of the full posterior, every prior factor included."""
    selected = state.L == 1
    resid = X - state.mu[:, state.Z]
    value = float(np.sum(np.log(state.pi[state.Z])))
    value += float(np.sum(_log_normal(resid, 0.0, state.sigma2[:, None])))

    value += float(np.sum(np.where(
        selected[:, None],
        _log_normal(state.mu, 0.0, state.tau2_mu1),
        _log_normal(state.mu, 0.0, state.tau2_mu0),
    )))
    value += float(np.sum(_log_inverse_gamma(state.sigma2, hyper.a_sigma, hyper.b_sigma)))
    value += float(np.sum(np.where(selected, np.log(state.p), np.log1p(-state.p))))
    value += float(stats.beta.logpdf(state.p, hyper.a_p, hyper.b_p))
    K, c = state.K, hyper.c
    value += float(gammaln(K * c) - K * gammaln(c) + (c - 1.0) * np.sum(np.log(state.pi)))
    value += float(_log_inverse_gamma(state.tau2_mu0, hyper.a_tau_mu0, hyper.b_tau_mu0))
    value += float(_log_inverse_gamma(state.tau2_mu1, hyper.a_tau_mu1, hyper.b_tau_mu1))

    if guided:
        values = _guidance_array(u, len(state.L))
        value += float(np.sum(np.where(
            selected,
            _log_normal(values, 1.0, state.tau2_u1),
            _log_normal(values, 0.0, state.tau2_u0),
        )))
        value += float(_log_inverse_gamma(state.tau2_u0, hyper.a_tau_u0, hyper.b_tau_u0))
        value += float(_log_inverse_gamma(state.tau2_u1, hyper.a_tau_u1, hyper.b_tau_u1))
    return value


def gibbs_sweep(state: ModelState, X: np.ndarray, hyper: Hyperparameters, stream: RngStream,
                u=None, guided: bool = True):
    """One full iteration of the ten conditional updates in their fixed order."""
    update_p(state, hyper, stream.child("p"))
    update_tau2(state, hyper, "mu0", stream.child("tau2_mu0"))
    update_tau2(state, hyper, "mu1", stream.child("tau2_mu1"))
    if guided:
        update_tau2(state, hyper, "u0", stream.child("tau2_u0"), u)
        update_tau2(state, hyper, "u1", stream.child("tau2_u1"), u)
    update_gene_selection(state, stream.child("L"), u, guided)
    update_pi(state, hyper, stream.child("pi"))
    update_assignments(state, X, stream.child("Z"))
    update_means(state, X, stream.child("mu"))
    update_variances(state, X, hyper, stream.child("sigma2"))


def _scalar_names(guided: bool):
    return [name for name in SCALAR_PARAMS if guided or not name.startswith("tau2_u")]


def run_gibbs(expr: ExpressionMatrix, u, cfg: GibbsConfig, initial: Optional[ModelState] = None) -> PosteriorTrace:
    """Run N_T iterations, discard the first N_B and keep every `thin`-th draw after that."""
    if cfg.guided and u is None:
        raise InvalidParameter("u", "guided sampling needs a guidance vector")
    if not cfg.guided and u is not None:
        raise InvalidParameter("u", "unguided sampling does not take a guidance vector")
    hyper = cfg.hyper
    X = expr.values
    n_genes, n_samples = X.shape
    u_values = _guidance_array(u, n_genes) if cfg.guided else None

    state = initial.copy() if initial is not None else initialize_state(expr, u_values, cfg)
    n_keep = cfg.n_retained
    scalar_names = _scalar_names(cfg.guided)
    L_trace = np.zeros((n_keep, n_genes), dtype=np.uint8)
    Z_trace = np.zeros((n_keep, n_samples), dtype=np.int32)
    pi_sum = np.zeros(hyper.K)
    mu_sum = np.zeros((n_genes, hyper.K))
    sigma2_sum = np.zeros(n_genes)
    draws = {}
    if cfg.keep_draws:
        draws = {
            "pi": np.zeros((n_keep, hyper.K)),
            "mu": np.zeros((n_keep, n_genes, hyper.K)),
            "sigma2": np.zeros((n_keep, n_genes)),
        }
        draws.update({name: np.zeros(n_keep) for name in scalar_names})

    rows = []
    root = RngStream(cfg.seed).child("gibbs")
    logger.info(
        "Running %s Gibbs sampler: G=%d, n=%d, K=%d, N_T=%d, N_B=%d",
        "guided" if cfg.guided else "unguided", n_genes, n_samples, hyper.K, hyper.N_T, hyper.N_B,
    )
    slot = 0
    for t in tqdm(range(hyper.N_T), desc=f"Gibbs K={hyper.K}", disable=not cfg.progress):
        gibbs_sweep(state, X, hyper, root.child("iteration", t), u_values, cfg.guided)
        retained = t >= hyper.N_B and (t - hyper.N_B) % cfg.thin == 0
        row = {"iteration": t + 1, "retained": int(retained),
               "log_posterior": log_posterior(state, X, hyper, u_values, cfg.guided)}
        row.update({name: getattr(state, name) for name in scalar_names})
        row["n_selected"] = int(np.sum(state.L))
        rows.append(row)

        if retained:
            L_trace[slot] = state.L
            Z_trace[slot] = state.Z
            pi_sum += state.pi
            mu_sum += state.mu
            sigma2_sum += state.sigma2
            if cfg.keep_draws:
                draws["pi"][slot] = state.pi
                draws["mu"][slot] = state.mu
                draws["sigma2"][slot] = state.sigma2
                for name in scalar_names:
                    draws[name][slot] = getattr(state, name)
            slot += 1

        if cfg.log_every and (t + 1) % cfg.log_every == 0:
            logger.debug(
                "iter %d: log-posterior %.2f, p %.4f, selected %d, cluster sizes %s",
                t + 1, row["log_posterior"], state.p, row["n_selected"],
                np.bincount(state.Z, minlength=hyper.K).tolist(),
            )

    if cfg.keep_draws:
        draws["L"] = L_trace
        draws["Z"] = Z_trace
    return PosteriorTrace(
        K=hyper.K,
        L=L_trace,
        Z=Z_trace,
        pi_sum=pi_sum,
        mu_sum=mu_sum,
        sigma2_sum=sigma2_sum,
        diagnostics=pd.DataFrame(rows),
        guided=cfg.guided,
        draws=draws,
    )
