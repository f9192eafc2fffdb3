import numpy as np
import pytest
from scipy.special import ndtr

from lart.harness import SimConfig, gen_synthetic
from lart.model import ResponseDataset
from lart.spectral import SpectralConfig, rank_cutoff, spectral_initialize


def test_config_validation():
    with pytest.raises(ValueError):
        SpectralConfig(epsilon=0.5)
    with pytest.raises(ValueError):
        SpectralConfig(k_latent=2)
    assert SpectralConfig().epsilon == 1e-9


def test_rank_cutoff_rule():
    s = np.array([100.0, 30.0, 25.0, 5.0])
    assert rank_cutoff(s, 400, 100) == 3  # 1.01 * 20 = 20.2
    assert rank_cutoff(np.array([10.0, 1.0]), 400, 100) == 2


def test_noiseless_large_scale_recovers_theta():
    gen = np.random.default_rng(1)
    n = j = 2000
    theta = gen.standard_normal(n)
    a = gen.uniform(0.5, 1.0, j)
    b = gen.normal(0, np.sqrt(0.5), j)
    R = (ndtr(np.outer(theta, a) + b) > 0.5).astype(np.int8)
    data = ResponseDataset(R, np.exp(gen.normal(size=(n, j))))
    _, traits = spectral_initialize(data)
    assert np.corrcoef(traits.theta, theta)[0, 1] > 0.95


def test_constant_lengths_give_exact_intensity():
    gen = np.random.default_rng(2)
    omega = gen.normal(size=6)
    T = np.tile(np.exp(omega), (40, 1))
    R = gen.integers(0, 2, (40, 6))
    params, _ = spectral_initialize(ResponseDataset(R, T))
    assert np.allclose(params.omega, omega, atol=1e-12, rtol=0)
    assert np.allclose(params.phi, 0.0, atol=1e-7)
    assert np.all(params.lam > 0)


def test_constant_column_saturates_without_error():
    gen = np.random.default_rng(3)
    R = gen.integers(0, 2, (30, 5))
    R[:, 2] = 1
    params, _ = spectral_initialize(ResponseDataset(R, np.exp(gen.normal(size=(30, 5)))))
    assert np.all(np.isfinite(params.b))


def test_domain_errors():
    with pytest.raises(ValueError):
        spectral_initialize(ResponseDataset(np.zeros((1, 3), int), np.ones((1, 3))))
    mask = np.ones((4, 3), bool)
    mask[0, 0] = False
    with pytest.raises(ValueError):
        spectral_initialize(ResponseDataset(np.zeros((4, 3), int), np.ones((4, 3)), mask=mask))


def test_outputs_valid_and_deterministic():
    data, _ = gen_synthetic(SimConfig(n_subjects=300, seed=4))
    p1, t1 = spectral_initialize(data)
    p2, t2 = spectral_initialize(data)
    p1.check()
    assert p1.a.sum() > 0 and p1.phi.sum() > 0 and abs(p1.rho) < 1 and np.all(p1.lam > 0)
    assert p1.vector().tobytes() == p2.vector().tobytes()
    assert t1.theta.tobytes() == t2.theta.tobytes()


def test_correlation_sign_recovered_across_replications():
    cfg = SimConfig(n_subjects=500, seed=5)
    negative = sum(spectral_initialize(gen_synthetic(cfg.replicate(r))[0])[0].rho < 0 for r in range(100))
    assert negative >= 95


def test_intercepts_stable_in_epsilon():
    """Stated stability of the intercepts over eps in [1e-12, 1e-6]."""
    data, _ = gen_synthetic(SimConfig(n_subjects=500, seed=6))
    b_lo = spectral_initialize(data, SpectralConfig(1e-12))[0].b
    b_hi = spectral_initialize(data, SpectralConfig(1e-6))[0].b
    assert np.max(np.abs(b_lo - b_hi)) < 0.1
