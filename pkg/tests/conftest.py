import numpy as np
import pytest

from src.core import ExpressionMatrix, Hyperparameters, ModelState, PosteriorTrace


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_cluster_expr():
    """Six strongly separated genes plus four noise genes over 20 samples, already standardized."""
    from src.core import standardize_genes

    gen = np.random.default_rng(7)
    labels = np.repeat([0, 1], 10)
    signal = np.where(labels == 0, -3.0, 3.0) + 0.3 * gen.standard_normal((6, 20))
    noise = gen.standard_normal((4, 20))
    return standardize_genes(np.vstack([signal, noise])), labels


def make_state(G=3, n=4, K=2, **overrides) -> ModelState:
    values = dict(
        pi=np.full(K, 1.0 / K),
        mu=np.zeros((G, K)),
        sigma2=np.ones(G),
        L=np.zeros(G, dtype=np.uint8),
        Z=np.arange(n) % K,
        p=0.5,
        tau2_mu0=1.0,
        tau2_mu1=1.0,
        tau2_u0=1.0,
        tau2_u1=1.0,
    )
    values.update(overrides)
    return ModelState(**values)


def make_trace(L, Z, K, pi=None, mu=None, sigma2=None) -> PosteriorTrace:
    """Trace whose running sums reproduce the given posterior means."""
    import pandas as pd

    L = np.asarray(L, dtype=np.uint8)
    Z = np.asarray(Z, dtype=np.int32)
    N, G = L.shape
    pi = np.full(K, 1.0 / K) if pi is None else np.asarray(pi, dtype=float)
    mu = np.zeros((G, K)) if mu is None else np.asarray(mu, dtype=float)
    sigma2 = np.ones(G) if sigma2 is None else np.asarray(sigma2, dtype=float)
    return PosteriorTrace(
        K=K, L=L, Z=Z, pi_sum=N * pi, mu_sum=N * mu, sigma2_sum=N * sigma2,
        diagnostics=pd.DataFrame(),
    )


@pytest.fixture
def hyper():
    return Hyperparameters()


def matrix(values, **kwargs) -> ExpressionMatrix:
    return ExpressionMatrix(np.asarray(values, dtype=float), kwargs.get("gene_ids"), kwargs.get("sample_ids"))
