import math

import numpy as np
import pytest
from scipy import stats

from nccox import (
    GroupSizeDistribution,
    ModelConfig,
    exponential_baseline,
    goodness_of_fit_check,
    group_stream,
    normal_covariates,
    parse_dataset,
    serialize_dataset,
    simulate_dataset,
    simulate_group,
    uniform_covariates,
)


def make_config(sizes, m=2, theta=0.0, covariate=None):
    gs = (
        GroupSizeDistribution.degenerate(sizes)
        if isinstance(sizes, int)
        else GroupSizeDistribution.from_pairs(sizes)
    )
    return ModelConfig(
        baseline=exponential_baseline(),
        covariate=covariate or normal_covariates(),
        group_size=gs,
        m=m,
        theta=theta,
    )


def test_inverse_transform_survival():
    """For a fixed covariate the simulated lifetime has survival
    base_survival(t) ** exp(theta * z)."""
    theta, z = 0.7, 0.8
    gen = np.random.Generator(np.random.Philox(key=[11, 0]))
    n = 100_000
    u = gen.random(n)
    lifetimes = -np.log(u ** math.exp(-theta * z))
    for t in (0.2, 0.5, 1.0):
        target = math.exp(-t) ** math.exp(theta * z)
        emp = float(np.mean(lifetimes > t))
        se = math.sqrt(target * (1 - target) / n)
        assert abs(emp - target) < 4 * se


def test_group_minimum_is_exponential():
    # two unit-exponential members: the first failure is exponential(2)
    cfg = make_config(2, m=2)
    ds = simulate_dataset(cfg, 1_000_000, seed=5)
    times = np.array([obs.t for obs in ds.observations])
    assert abs(times.mean() - 0.5) < 0.002
    assert ds.tie_count == 0


def test_full_cohort_samples_everyone():
    cfg = make_config(3, m=3)
    ds = simulate_dataset(cfg, 200, seed=1)
    for obs in ds.observations:
        assert obs.r == (1, 2, 3)


def test_failure_identity_uniform_under_null():
    cfg = make_config(4, m=2)
    ds = simulate_dataset(cfg, 100_000, seed=2)
    counts = np.bincount([obs.i for obs in ds.observations], minlength=5)[1:]
    _, pvalue = stats.chisquare(counts)
    assert pvalue > 0.01


def test_determinism_and_stream_separation():
    cfg = make_config([[3, 0.5], [5, 0.5]], m=2, theta=0.3)
    a = simulate_dataset(cfg, 100, seed=7)
    b = simulate_dataset(cfg, 100, seed=7)
    assert serialize_dataset(a) == serialize_dataset(b)
    c = simulate_dataset(cfg, 100, seed=7, replication=1)
    assert serialize_dataset(a) != serialize_dataset(c)
    d = simulate_dataset(cfg, 100, seed=8)
    assert serialize_dataset(a) != serialize_dataset(d)


def test_group_stream_matches_dataset():
    cfg = make_config([[3, 0.5], [4, 0.5]], m=2, theta=0.2)
    ds = simulate_dataset(cfg, 50, seed=3, replication=6)
    for g in (0, 7, 49):
        assert simulate_group(cfg, group_stream(3, 6, g)) == ds.observations[g]


def test_failure_time_distribution_ks():
    cfg = make_config(5, m=2)
    ds = simulate_dataset(cfg, 10_000, seed=4)
    times = np.sort([obs.t for obs in ds.observations])
    grid = np.arange(1, len(times) + 1) / len(times)
    survival = np.exp(-5.0 * times)
    ks = np.max(np.abs(1.0 - survival - grid))
    assert ks < 0.02


def test_control_set_uniform():
    cfg = make_config(5, m=2)
    ds = simulate_dataset(cfg, 100_000, seed=6)
    appearances = np.zeros(5)
    eligible = np.zeros(5)
    for obs in ds.observations:
        control = [j for j in obs.r if j != obs.i][0]
        appearances[control - 1] += 1
        for j in range(1, 6):
            if j != obs.i:
                eligible[j - 1] += 1
    freq = appearances / eligible
    target = 1.0 / 4.0
    se = np.sqrt(target * (1 - target) / eligible)
    assert np.all(np.abs(freq - target) < 3 * se)


def test_serialization_round_trip():
    cfg = make_config([[3, 0.25], [6, 0.75]], m=3, theta=-0.4)
    ds = simulate_dataset(cfg, 40, seed=9)
    again = parse_dataset(serialize_dataset(ds))
    assert again == ds


def test_gof_calibrated_under_null():
    cfg = make_config(5, m=2)
    ds = simulate_dataset(cfg, 10_000, seed=13)
    report = goodness_of_fit_check(ds, cfg)
    for name, pvalue in report.pvalues().items():
        assert pvalue > 0.001, name


def test_gof_detects_shifted_failure_covariates():
    cfg = make_config(5, m=2, theta=1.0)
    ds = simulate_dataset(cfg, 5_000, seed=14)
    null_cfg = make_config(5, m=2, theta=0.0)
    report = goodness_of_fit_check(ds, null_cfg)
    # the failure covariate is size-biased when the true parameter is not 0
    assert report.failure_mean_pvalue < 0.001


def test_gof_detects_wrong_group_size_law():
    cfg = make_config([[3, 0.5], [5, 0.5]], m=2)
    ds = simulate_dataset(cfg, 10_000, seed=15)
    wrong = make_config([[3, 0.3], [5, 0.7]], m=2)
    report = goodness_of_fit_check(ds, wrong)
    assert report.eta_chi2_pvalue < 1e-6


def test_gof_empty_dataset_rejected():
    cfg = make_config(5, m=2)
    ds = simulate_dataset(cfg, 1, seed=1)
    empty = ds.__class__(
        observations=(), fingerprint=ds.fingerprint, seed=0
    )
    with pytest.raises(ValueError):
        goodness_of_fit_check(empty, cfg)


def test_uniform_covariate_sampling_moments():
    cfg = make_config(4, m=2, covariate=uniform_covariates())
    ds = simulate_dataset(cfg, 20_000, seed=21)
    report = goodness_of_fit_check(ds, cfg)
    for name, pvalue in report.pvalues().items():
        assert pvalue > 0.001, name
