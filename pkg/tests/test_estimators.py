import math

import numpy as np
import pytest

from nccox import (
    Dataset,
    DegenerateLikelihoodError,
    GroupSizeDistribution,
    ModelConfig,
    Observation,
    SeparationError,
    breslow,
    exponential_baseline,
    fit_mple,
    mple_asymptotic_variance,
    normal_covariates,
    partial_loglik,
    score_and_information,
    simulate_dataset,
)


def toy_dataset(rows, eta=None):
    """rows: list of (covariates tuple with the failure first, time)."""
    observations = []
    for z, t in rows:
        m = len(z)
        size = eta or m
        observations.append(
            Observation(
                eta=size,
                i=1,
                r=tuple(range(1, m + 1)),
                t=t,
                z=tuple(z),
            )
        )
    return Dataset(observations=tuple(observations), fingerprint="toy", seed=0)


def simulated(n, sizes=5, m=2, theta=0.0, seed=0):
    gs = (
        GroupSizeDistribution.degenerate(sizes)
        if isinstance(sizes, int)
        else GroupSizeDistribution.from_pairs(sizes)
    )
    cfg = ModelConfig(
        baseline=exponential_baseline(),
        covariate=normal_covariates(),
        group_size=gs,
        m=m,
        theta=theta,
    )
    return cfg, simulate_dataset(cfg, n, seed=seed)


# ---------------------------------------------------------------------------
# partial log likelihood
# ---------------------------------------------------------------------------


def test_loglik_at_zero_counts_set_sizes():
    _, ds = simulated(50, m=2)
    assert partial_loglik(ds, 0.0) == pytest.approx(-50 * math.log(2.0), rel=1e-14)


def test_loglik_single_observation():
    ds = toy_dataset([((1.0, 0.0), 1.0)])
    assert partial_loglik(ds, 1.0) == pytest.approx(
        1.0 - math.log(math.e + 1.0), rel=1e-14
    )


def test_loglik_location_invariance():
    _, ds = simulated(30)
    shifted = Dataset(
        observations=tuple(
            Observation(
                eta=o.eta, i=o.i, r=o.r, t=o.t, z=tuple(v + 2.5 for v in o.z)
            )
            for o in ds.observations
        ),
        fingerprint=ds.fingerprint,
        seed=ds.seed,
    )
    for theta in (-0.7, 0.0, 1.3):
        assert partial_loglik(shifted, theta) == pytest.approx(
            partial_loglik(ds, theta), rel=1e-12
        )


def test_degenerate_set_size_rejected():
    ds = toy_dataset([((1.0,), 0.5)], eta=3)
    with pytest.raises(DegenerateLikelihoodError):
        partial_loglik(ds, 0.0)


# ---------------------------------------------------------------------------
# score and information
# ---------------------------------------------------------------------------


def test_score_matches_finite_differences():
    _, ds = simulated(200, theta=0.4, seed=3)
    delta = 1e-5
    for theta in (-0.3, 0.0, 0.9):
        score, info = score_and_information(ds, theta)
        fd_score = (
            partial_loglik(ds, theta + delta) - partial_loglik(ds, theta - delta)
        ) / (2 * delta)
        assert abs(score - fd_score) < 1e-6
        fd_info = -(
            partial_loglik(ds, theta + delta)
            - 2 * partial_loglik(ds, theta)
            + partial_loglik(ds, theta - delta)
        ) / delta**2
        assert info == pytest.approx(fd_info, rel=1e-4)


def test_constant_set_contributes_nothing():
    ds = toy_dataset([((0.7, 0.7), 0.5)])
    score, info = score_and_information(ds, 1.3)
    assert score == 0.0
    assert info == pytest.approx(0.0, abs=1e-16)


def test_pair_information_at_null():
    a, b = 1.4, -0.3
    ds = toy_dataset([((a, b), 0.5)])
    _, info = score_and_information(ds, 0.0)
    assert info == pytest.approx((a - b) ** 2 / 4.0, rel=1e-14)


def test_information_nonnegative_everywhere():
    gen = np.random.default_rng(8)
    _, ds = simulated(60, seed=5)
    for theta in gen.uniform(-3, 3, size=20):
        _, info = score_and_information(ds, float(theta))
        assert info >= 0.0


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def test_fit_balanced_pair_is_zero():
    ds = toy_dataset([((1.0, 0.0), 0.5), ((0.0, 1.0), 0.8)])
    fit = fit_mple(ds)
    assert fit.theta_hat == pytest.approx(0.0, abs=1e-12)
    assert fit.information > 0
    assert abs(fit.score) < 1e-10


def test_fit_single_observation_separates():
    ds = toy_dataset([((1.0, 0.0), 0.5)])
    with pytest.raises(SeparationError):
        fit_mple(ds)


def test_fit_constant_covariates_degenerate():
    ds = toy_dataset([((0.5, 0.5), 0.5), ((1.1, 1.1), 0.2)])
    with pytest.raises(DegenerateLikelihoodError):
        fit_mple(ds)


def test_fit_recovers_simulated_parameter():
    _, ds = simulated(5000, theta=0.5, seed=11)
    fit = fit_mple(ds)
    assert abs(fit.theta_hat - 0.5) < 3 * fit.standard_error
    assert fit.iterations <= 10
    assert fit.standard_error == pytest.approx(
        1.0 / math.sqrt(fit.information), rel=1e-12
    )


def test_fit_location_invariance_iterates():
    _, ds = simulated(400, theta=0.3, seed=12)
    shifted = Dataset(
        observations=tuple(
            Observation(
                eta=o.eta, i=o.i, r=o.r, t=o.t, z=tuple(v + 3.0 for v in o.z)
            )
            for o in ds.observations
        ),
        fingerprint=ds.fingerprint,
        seed=ds.seed,
    )
    fit_a = fit_mple(ds)
    fit_b = fit_mple(shifted)
    assert fit_b.iterations == fit_a.iterations
    assert fit_b.theta_hat == pytest.approx(fit_a.theta_hat, abs=1e-13)


def test_asymptotic_variance_values():
    assert mple_asymptotic_variance(2, 1.0) == 2.0
    assert mple_asymptotic_variance(5, 2.0) == pytest.approx(0.625)
    seq = [mple_asymptotic_variance(m, 1.0) for m in range(2, 60)]
    assert all(a > b for a, b in zip(seq, seq[1:]))
    assert seq[-1] > 1.0  # decreasing toward 1 / Var(Z) from above
    with pytest.raises(ValueError):
        mple_asymptotic_variance(1, 1.0)


# ---------------------------------------------------------------------------
# baseline survival estimation
# ---------------------------------------------------------------------------


def test_breslow_single_group():
    ds = toy_dataset([((0.2, -0.1), 0.7)], eta=4)
    hazard_fn, survival_fn = breslow(ds, theta_hat=0.0)
    # at-risk total (4 / 2) * 2 = 4
    assert hazard_fn(0.69) == 0.0
    assert hazard_fn(0.7) == pytest.approx(0.25)
    assert hazard_fn(5.0) == pytest.approx(0.25)
    assert survival_fn(0.0) == 1.0
    assert survival_fn(1.0) == pytest.approx(math.exp(-0.25))


def test_breslow_two_groups_pooled():
    observations = (
        Observation(eta=2, i=1, r=(1, 2), t=0.4, z=(0.0, 0.0)),
        Observation(eta=3, i=2, r=(1, 2), t=1.1, z=(0.0, 0.0)),
    )
    ds = Dataset(observations=observations, fingerprint="toy", seed=0)
    hazard_fn, _ = breslow(ds, theta_hat=0.0)
    # at-risk totals: 2/2*2 + 3/2*2 = 5 at the first time, then 3
    assert hazard_fn(0.4) == pytest.approx(0.2)
    assert hazard_fn(1.1) == pytest.approx(0.2 + 1.0 / 3.0)


def test_breslow_full_cohort_is_nelson_aalen():
    _, ds = simulated(300, sizes=2, m=2, seed=17)
    hazard_fn, _ = breslow(ds, theta_hat=0.0)
    times = np.sort([obs.t for obs in ds.observations])
    at_risk = 2 * (len(times) - np.arange(len(times)))
    na = np.cumsum(1.0 / at_risk)
    np.testing.assert_allclose(hazard_fn(times), na, rtol=1e-12)


def test_breslow_consistency_against_truth():
    _, ds = simulated(4000, sizes=3, m=2, seed=18)
    _, survival_fn = breslow(ds, theta_hat=0.0)
    for t in (0.1, 0.3, 0.6):
        assert survival_fn(t) == pytest.approx(math.exp(-t), abs=0.02)


def test_breslow_empty_dataset():
    empty = Dataset(observations=(), fingerprint="toy", seed=0)
    with pytest.raises(ValueError):
        breslow(empty, 0.0)
