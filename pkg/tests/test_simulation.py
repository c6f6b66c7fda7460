import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.distributions import RngStream
from src.errors import InvalidDof, InvalidParameter
from src.simulation import SimulationConfig, _standardized_covariance, simulate_correlated_module, simulate_dataset


def tiny_config(**changes):
    values = dict(K=3, subjects_per_cluster_mean=15, M=3, module_size_mean=5, V=2, R=2, n_noise=40, seed=1)
    values.update(changes)
    return SimulationConfig(**values)


class TestSimulateDataset:
    def test_reproducible(self):
        first = simulate_dataset(tiny_config())
        second = simulate_dataset(tiny_config())
        assert_array_equal(first.expr, second.expr)
        assert_array_equal(first.labels, second.labels)
        assert_array_equal(first.outcome, second.outcome)

    def test_seed_changes_data(self):
        assert not np.array_equal(simulate_dataset(tiny_config()).expr, simulate_dataset(tiny_config(seed=2)).expr)

    def test_gene_groups_partition_rows(self):
        data = simulate_dataset(tiny_config())
        groups = set(data.gene_group)
        assert groups == {"intrinsic", "confounder1", "confounder2", "noise"}
        assert np.sum(data.gene_group == "noise") == 40
        assert len(data.gene_group) == data.expr.shape[0] == len(data.gene_ids)
        assert_array_equal(data.intrinsic, np.flatnonzero(data.intrinsic_mask))
        # intrinsic genes come first
        assert data.intrinsic_mask[: len(data.intrinsic)].all()

    def test_every_subtype_present(self):
        data = simulate_dataset(tiny_config())
        assert set(np.unique(data.labels)) == {0, 1, 2}
        assert data.confounder_labels.shape == (2, data.expr.shape[1])

    def test_outcome_tracks_subtype(self):
        data = simulate_dataset(tiny_config(subjects_per_cluster_mean=200, sigma2=1.0, n_noise=5, M=1, V=1, R=1))
        means = [data.outcome[data.labels == k].mean() for k in range(3)]
        assert_allclose(means, [4.0, 6.0, 8.0], atol=0.3)

    def test_noise_levels(self):
        data = simulate_dataset(tiny_config(n_noise=200, sigma3=0.5))
        noise = data.expr[data.gene_group == "noise"]
        assert np.all((noise.mean(axis=1) > 3.5) & (noise.mean(axis=1) < 8.5))

    def test_config_validation(self):
        with pytest.raises(InvalidParameter):
            SimulationConfig(wishart_phi_mix=1.5)
        with pytest.raises(InvalidParameter):
            SimulationConfig(M=0)


class TestCorrelatedModule:
    def test_unit_diagonal_covariance(self):
        cfg = tiny_config()
        cov = _standardized_covariance(6, cfg, RngStream(0))
        assert_allclose(np.diag(cov), 1.0)
        assert np.all(np.linalg.eigvalsh(cov) > 0)

    def test_single_gene_block(self):
        cfg = tiny_config()
        block = simulate_correlated_module([5.0, 8.0], 1, np.array([0, 0, 1, 1]), cfg, RngStream(1))
        assert block.shape == (1, 4)
        assert_allclose(_standardized_covariance(1, cfg, RngStream(2)), [[1.0]])

    def test_genes_correlate_within_module(self):
        cfg = tiny_config(sigma1=3.0)
        labels = np.zeros(500, dtype=int)
        block = simulate_correlated_module([10.0], 8, labels, cfg, RngStream(3))
        corr = np.corrcoef(block)
        off_diagonal = corr[~np.eye(8, dtype=bool)]
        assert off_diagonal.mean() > 0.5

    def test_subclass_templates(self):
        cfg = tiny_config(sigma1=0.5)
        labels = np.repeat([0, 1], 400)
        block = simulate_correlated_module([2.0, 9.0], 4, labels, cfg, RngStream(4))
        assert block[:, labels == 0].mean() == pytest.approx(2.0, abs=0.2)
        assert block[:, labels == 1].mean() == pytest.approx(9.0, abs=0.2)

    def test_module_too_large_for_dof(self):
        cfg = tiny_config(wishart_nu=3.0)
        with pytest.raises(InvalidDof):
            simulate_correlated_module([1.0], 5, np.zeros(4, dtype=int), cfg, RngStream(5))


@pytest.mark.slow
def test_default_benchmark_dimensions():
    data = simulate_dataset(SimulationConfig(seed=3))
    n_intrinsic = len(data.intrinsic)
    assert 300 <= n_intrinsic <= 500
    assert 250 <= data.expr.shape[1] <= 350
    assert np.sum(data.gene_group == "noise") == 3000
