"""
Decisions drawn from a posterior trace: local-FDR gene selection, soft and MAP
cluster assignment, BIC and the choice of K.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import logsumexp

from src.core import ExpressionMatrix, PosteriorTrace
from src.distributions import derive_seed
from src.errors import EmptyTrace, InvalidParameter
from src.logics.sampler import GibbsConfig, run_gibbs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeneDecision:
    P: np.ndarray
    selected: np.ndarray          # sorted 0-based gene indices
    eta: float
    achieved_fdr: Optional[float]  # None when nothing is selected
    mode: str = "by_fdr"

    @property
    def selected_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.P), dtype=bool)
        mask[self.selected] = True
        return mask


@dataclass(frozen=True)
class ClusterDecision:
    soft: np.ndarray    # n x K
    labels: np.ndarray  # 0-based MAP labels


def local_fdr(trace: PosteriorTrace) -> np.ndarray:
    """Posterior probability that each gene is non-intrinsic: one minus its inclusion frequency."""
    if trace.n_retained == 0:
        raise EmptyTrace("local FDR needs at least one retained draw")
    return 1.0 - trace.inclusion_frequency


def fdr_at_threshold(P, eta: float) -> Optional[float]:
    """Expected FDR of the genes with P_g <= eta; None when no gene passes."""
    P = np.asarray(P, dtype=float)
    passed = P <= eta
    if not np.any(passed):
        return None
    return float(np.mean(P[passed]))


def select_genes(P, eta: Optional[float] = None, top_m: Optional[int] = None) -> GeneDecision:
    """Select genes either by a local-FDR threshold or as the m genes with the smallest P_g."""
    P = np.asarray(P, dtype=float)
    if (eta is None) == (top_m is None):
        raise InvalidParameter("mode", "give exactly one of eta or top_m")
    if eta is not None:
        if not 0.0 < eta < 1.0:
            raise InvalidParameter("eta", f"eta must lie in (0, 1), got {eta}")
        selected = np.flatnonzero(P <= eta)
        return GeneDecision(P, selected, float(eta), fdr_at_threshold(P, eta), "by_fdr")

    if not 0 <= top_m <= len(P):
        raise InvalidParameter("top_m", f"top_m must lie in [0, {len(P)}], got {top_m}")
    order = np.argsort(P, kind="stable")
    selected = np.sort(order[:top_m])
    if top_m == 0:
        return GeneDecision(P, selected, 0.0, None, "top_m")
    implied_eta = float(P[order[top_m - 1]])
    return GeneDecision(P, selected, implied_eta, float(np.mean(P[selected])), "top_m")


def cluster_decision(trace: PosteriorTrace) -> ClusterDecision:
    """Soft assignment from retained-draw label frequencies and MAP labels (ties to the smallest index)."""
    soft = trace.cluster_frequency
    return ClusterDecision(soft, np.argmax(soft, axis=1))


def canonical_relabel(decision: ClusterDecision) -> ClusterDecision:
    """
    Renumber clusters by MAP size, largest first, ties broken by the smallest
    member index; empty clusters keep their relative order at the end.
    Only meant for reported labels.
    """
    K = decision.soft.shape[1]
    labels = decision.labels
    n = len(labels)

    def sort_key(k):
        members = np.flatnonzero(labels == k)
        return (-len(members), members[0] if len(members) else n + k)

    order = sorted(range(K), key=sort_key)
    new_label = np.empty(K, dtype=int)
    new_label[order] = np.arange(K)
    return ClusterDecision(decision.soft[:, order], new_label[labels])


def mixture_loglik(X: np.ndarray, pi, mu, sigma2) -> float:
    """sum_i log sum_k pi_k prod_g N(X_gi; mu_gk, sigma2_g), evaluated in log space."""
    pi = np.asarray(pi, dtype=float)
    sd = np.sqrt(np.asarray(sigma2, dtype=float))[:, None]
    component = np.empty((X.shape[1], len(pi)))
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    for k in range(len(pi)):
        component[:, k] = log_pi[k] + np.sum(stats.norm.logpdf(X, loc=mu[:, k:k + 1], scale=sd), axis=0)
    return float(np.sum(logsumexp(component, axis=1)))


def bic(expr: ExpressionMatrix, trace: PosteriorTrace, K: Optional[int] = None, penalty: str = "genes") -> float:
    """
    -2 * mixture log-likelihood at posterior means + K G log G.

    penalty="samples" switches the logarithm to log n.
    """
    K = trace.K if K is None else K
    n_genes, n_samples = expr.values.shape
    if penalty not in ("genes", "samples"):
        raise InvalidParameter("penalty", f"penalty must be 'genes' or 'samples', got '{penalty}'")
    size = n_genes if penalty == "genes" else n_samples
    loglik = mixture_loglik(expr.values, trace.pi_mean, trace.mu_mean, trace.sigma2_mean)
    return -2.0 * loglik + K * n_genes * np.log(size)


@dataclass
class KSelection:
    best_k: int
    table: pd.DataFrame
    traces: dict


def _fit_for_k(args):
    expr, u, cfg, K, penalty = args
    trace = run_gibbs(expr, u, cfg)
    return K, bic(expr, trace, K, penalty), trace


def select_k(expr: ExpressionMatrix, u, cfg_template: GibbsConfig, k_range: Sequence[int],
             penalty: str = "genes", workers: int = 1) -> KSelection:
    """Fit one chain per K (seed derived from the master seed and K) and keep the K with minimum BIC."""
    k_range = list(k_range)
    if not k_range:
        raise InvalidParameter("k_range", "k_range must not be empty")
    if any(K < 1 for K in k_range):
        raise InvalidParameter("k_range", "every K must be >= 1")
    jobs = [
        (expr, u, replace(cfg_template, hyper=cfg_template.hyper.with_updates(K=K),
                          seed=derive_seed(cfg_template.seed, "select_k", K), progress=False),
         K, penalty)
        for K in k_range
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fit_for_k, jobs))
    else:
        results = [_fit_for_k(job) for job in jobs]

    table = pd.DataFrame({"K": [K for K, _, _ in results], "bic": [value for _, value, _ in results]})
    best_k = int(table.loc[table["bic"].idxmin(), "K"])
    logger.info("BIC selected K=%d over %s", best_k, k_range)
    return KSelection(best_k, table, {K: trace for K, _, trace in results})
