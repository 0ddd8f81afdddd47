import json

import numpy as np
import pytest

from wcfr.data import load_csv_dataset
from wcfr.synthetic import (
    ToyConfig,
    build_supports,
    equicorr_mvn_sample,
    generate_toy,
    save_toy,
)


def test_support_overlap_exact():
    for omega in (0, 7, 10, 20):
        sup = build_supports(ToyConfig(omega=omega))
        assert len(sup.outcome_idx) == 20 and len(sup.treatment_idx) == 20
        assert len(np.intersect1d(sup.outcome_idx, sup.treatment_idx)) == omega


def test_full_overlap_means_equal_supports():
    sup = build_supports(ToyConfig(omega=20))
    np.testing.assert_array_equal(sup.outcome_idx, sup.treatment_idx)


def test_disjoint_supports_at_zero_overlap():
    sup = build_supports(ToyConfig(omega=0))
    assert np.intersect1d(sup.outcome_idx, sup.treatment_idx).size == 0


def test_coefficient_magnitudes():
    sup = build_supports(ToyConfig(omega=10, gamma_scale=2.5))
    assert np.all(sup.beta0[sup.outcome_idx] == 1.0)
    assert np.all(sup.beta_tau[sup.outcome_idx] == 0.3)
    assert np.all(sup.gamma[sup.treatment_idx] == 2.5)
    assert np.count_nonzero(sup.beta0) == 20
    assert np.count_nonzero(sup.gamma) == 20


def test_zero_gamma_means_constant_half_probability():
    sup = build_supports(ToyConfig(gamma_scale=0.0))
    assert np.all(sup.gamma == 0.0)
    toy = generate_toy(ToyConfig(gamma_scale=0.0, seed=3))
    np.testing.assert_array_equal(toy.propensity["train"], 0.5)


def test_invalid_configs_rejected():
    with pytest.raises(ValueError):
        ToyConfig(omega=21)
    with pytest.raises(ValueError):
        ToyConfig(p_star=51)
    with pytest.raises(ValueError):
        ToyConfig(p=30, p_star=20, omega=0)  # supports do not fit
    with pytest.raises(ValueError):
        ToyConfig(rho=1.0)


def test_split_sizes_and_determinism():
    cfg = ToyConfig(seed=9)
    toy = generate_toy(cfg)
    assert (toy.train.n, toy.val.n, toy.test.n) == (525, 225, 250)
    again = generate_toy(cfg)
    np.testing.assert_array_equal(toy.train.x, again.train.x)
    np.testing.assert_array_equal(toy.test.y, again.test.y)


def test_covariate_mean_within_monte_carlo_error():
    toy = generate_toy(ToyConfig(seed=21))
    x = np.vstack([toy.train.x, toy.val.x, toy.test.x])
    sigma_x = np.sqrt(0.05)
    bound = 3.0 * sigma_x / np.sqrt(x.shape[0])
    assert np.all(np.abs(x.mean(axis=0)) < 5 * bound)  # p=50 columns, allow slack
    assert np.abs(x.mean()) < bound


def test_tau_depends_only_on_outcome_support():
    cfg = ToyConfig(omega=0, gamma_scale=3.0, seed=4)
    toy = generate_toy(cfg)
    sup = build_supports(cfg)
    tau = toy.train.tau_true()
    manual = toy.train.x @ sup.beta_tau + cfg.theta
    np.testing.assert_allclose(tau, manual, atol=1e-12)


def test_sample_ate_near_theta():
    """E[x^T beta_tau] = 0, so the mean of tau(x) concentrates at theta."""
    taus = []
    for seed in range(10):
        toy = generate_toy(ToyConfig(seed=seed))
        taus.append(float(np.mean(toy.test.tau_true())))
    taus = np.array(taus)
    stderr = taus.std(ddof=1) / np.sqrt(len(taus))
    assert abs(taus.mean() - 3.0) < 3.0 * stderr + 0.05


def test_randomized_assignment_rate_near_half():
    counts = []
    for seed in range(10):
        toy = generate_toy(ToyConfig(gamma_scale=0.0, seed=seed))
        t = np.concatenate([toy.train.t, toy.val.t, toy.test.t])
        counts.append(t.mean())
    mean = np.mean(counts)
    se = 0.5 / np.sqrt(1000 * 10)
    assert abs(mean - 0.5) < 3.0 * se + 0.01


def test_factual_and_counterfactual_bookkeeping():
    toy = generate_toy(ToyConfig(seed=6))
    ds = toy.train
    treated = ds.t == 1
    np.testing.assert_allclose(
        ds.y[treated] - ds.ycf[treated], ds.mu1[treated] - ds.mu0[treated], atol=1e-12
    )
    np.testing.assert_allclose(
        ds.ycf[~treated] - ds.y[~treated], ds.mu1[~treated] - ds.mu0[~treated], atol=1e-12
    )


def test_equicorr_iid_when_rho_zero():
    rng = np.random.default_rng(0)
    x = equicorr_mvn_sample(6, 0.05, 0.0, 100_000, rng)
    corr = np.corrcoef(x.T)
    off = corr[~np.eye(6, dtype=bool)]
    assert np.all(np.abs(off) < 0.02)
    assert np.all(np.abs(x.var(axis=0) - 0.05) < 0.02 * 0.05)


def test_equicorr_target_correlation():
    rng = np.random.default_rng(1)
    x = equicorr_mvn_sample(8, 0.05, 0.3, 100_000, rng)
    corr = np.corrcoef(x.T)
    off = corr[~np.eye(8, dtype=bool)]
    assert np.all(np.abs(off - 0.3) < 0.02)
    assert np.all(np.abs(x.var(axis=0) - 0.05) < 0.02 * 0.05)


def test_imbalance_grows_with_gamma():
    """Mean treated/control covariate gap is monotone in the imbalance
    magnitude (averaged over 20 seeds per grid point)."""
    gammas = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    means = []
    for g in gammas:
        gaps = []
        for seed in range(20):
            toy = generate_toy(ToyConfig(gamma_scale=g, seed=seed))
            ds = toy.train
            gap = np.linalg.norm(
                ds.x[ds.t == 1].mean(axis=0) - ds.x[ds.t == 0].mean(axis=0)
            )
            gaps.append(gap)
        means.append(np.mean(gaps))
    assert np.all(np.diff(means) > 0)


def test_save_toy_roundtrip(tmp_path):
    toy = generate_toy(ToyConfig(n_train=20, n_val=10, n_test=10, seed=2))
    paths = save_toy(str(tmp_path), toy)
    back = load_csv_dataset(paths["train"])
    np.testing.assert_array_equal(back.t, toy.train.t)
    np.testing.assert_array_equal(back.x, toy.train.x)
    np.testing.assert_array_equal(back.mu1, toy.train.mu1)
    with open(paths["manifest"], "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    assert manifest["config"]["seed"] == 2
    assert manifest["noise_shared_across_potential_outcomes"] is True
    assert "PCG64" in manifest["rng"]
