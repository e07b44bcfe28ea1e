import itertools
import math

import numpy as np
import pytest

from nccox import (
    BoundsInput,
    CovariateFunction,
    GroupSizeDistribution,
    ModelConfig,
    Observation,
    TimeFunction,
    adjoint_baseline_op,
    adjoint_covariate_op,
    apply_baseline_op,
    apply_covariate_op,
    baseline_gram_op,
    baseline_lsq_direction,
    build_scheme,
    covariate_lsq_direction,
    density_sqrt,
    effective_information,
    exponential_baseline,
    hazard_ratio_op,
    hellinger_direction_check,
    information_by_quadrature,
    normal_covariates,
    null_density,
    parametric_score,
    sigma_inner,
)
from nccox.operators import (
    EpsilonTooLargeError,
    SigmaFunction,
    _score_bracket,
    random_covariate_direction,
    random_sigma_direction,
    random_time_direction,
)
from nccox.quadrature import gauss_hermite_standard_normal, gauss_legendre


def rng(seed=0):
    return np.random.Generator(np.random.Philox(key=[seed, 0]))


# ---------------------------------------------------------------------------
# grid structure
# ---------------------------------------------------------------------------


def test_scheme_rejects_small_groups(full_cohort_config):
    with pytest.raises(ValueError):
        build_scheme(full_cohort_config)  # group size 2


def test_density_grid_matches_null_density(exp_normal_scheme):
    s = exp_normal_scheme
    cfg = s.config
    for e, a, q1, q2 in [(0, 10, 3, 20), (1, 100, 0, 0), (2, 300, 31, 7)]:
        eta = int(s.eta_values[e])
        obs = Observation(
            eta=eta,
            i=1,
            r=(1, 2),
            t=float(s.time_nodes[a]),
            z=(float(s.cov_nodes[q1]), float(s.cov_nodes[q2])),
        )
        assert s.f0_values[e, a, q1, q2] == pytest.approx(
            null_density(obs, cfg), rel=1e-12
        )


def test_density_root_has_unit_norm(exp_normal_scheme):
    f0h = density_sqrt(exp_normal_scheme)
    assert sigma_inner(f0h, f0h) == pytest.approx(1.0, abs=1e-6)


def test_collapsed_sum_matches_explicit_labels():
    """The multiplicity-weighted grid reproduces the explicit sum over
    (failure label, sampled set) with the failure in either slot."""
    cfg = ModelConfig(
        baseline=exponential_baseline(),
        covariate=normal_covariates(),
        group_size=GroupSizeDistribution.degenerate(3),
        m=2,
        theta=0.0,
    )
    scheme = build_scheme(cfg, time_panels=20, time_order=10, cov_nodes=24)
    rho = parametric_score(scheme)
    collapsed_norm = sigma_inner(rho, rho)
    collapsed_one = sigma_inner(density_sqrt(scheme), density_sqrt(scheme))

    # test-local grids, independent of the scheme's collapse machinery
    x, w = gauss_legendre(0.0, 1.0, 64)
    z, zw_prob = gauss_hermite_standard_normal(24)
    zw = zw_prob / cfg.covariate.density(z)
    h = cfg.covariate.density(z)
    eta, m = 3, 2
    k_weight = 1.0 / math.comb(eta - 1, m - 1)
    explicit_norm = 0.0
    explicit_one = 0.0
    za = z[:, None]
    zb = z[None, :]
    wa = (zw * h)[:, None]
    wb = (zw * h)[None, :]
    for r in itertools.combinations(range(1, eta + 1), m):
        for i in r:
            fail_first = r.index(i) == 0
            for u, wu in zip(x, w):
                # f0 with the time density folded into the u-substitution
                f0_t = k_weight * u ** (eta - 1)
                z_fail = za if fail_first else zb
                bracket = _score_bracket(
                    z_fail, za + zb, eta, math.log(u), 0.0, m
                )
                explicit_norm += wu * f0_t * float(np.sum(wa * wb * bracket**2))
                explicit_one += wu * f0_t * float(np.sum(wa * wb))
    assert explicit_one == pytest.approx(collapsed_one, rel=1e-10)
    assert explicit_norm == pytest.approx(collapsed_norm, rel=1e-8)


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------


def test_score_bracket_trivial_zeros():
    assert _score_bracket(0.0, 0.0, 5, -2.0, 0.0, 2) == 0.0
    assert _score_bracket(0.0, 0.0, 7, -0.3, 0.0, 3) == 0.0


def test_score_small_time_limit(exp_normal_scheme):
    s = exp_normal_scheme
    rho = parametric_score(s)
    a = 0  # node closest to time zero
    assert s.time_nodes[a] < 0.01
    z_fail = s.cov_nodes[:, None]
    expected = 0.5 * z_fail * s.f0_sqrt_values[:, a, :, :]
    # the neglected terms carry one factor of log survival at this node
    slack = abs(s.log_u[a]) * 10.0 * np.max(s.f0_sqrt_values[:, a, :, :])
    np.testing.assert_allclose(rho.values[:, a, :, :], expected, atol=slack)


# ---------------------------------------------------------------------------
# operator behavior on specific inputs
# ---------------------------------------------------------------------------


def test_zero_directions_map_to_zero(exp_normal_scheme):
    s = exp_normal_scheme
    za = apply_baseline_op(TimeFunction(s, np.zeros_like(s.time_nodes)))
    assert np.all(za.values == 0.0)
    zb = apply_covariate_op(CovariateFunction(s, np.zeros_like(s.cov_nodes)))
    assert np.all(zb.values == 0.0)
    zero_mu = SigmaFunction(s, np.zeros(s.grid_shape))
    assert adjoint_baseline_op(zero_mu).norm() == 0.0
    assert adjoint_covariate_op(zero_mu).norm() == 0.0


def test_apply_baseline_linearity(exp_normal_scheme):
    s = exp_normal_scheme
    gen = rng(2)
    a1 = random_time_direction(s, gen)
    a2 = random_time_direction(s, gen)
    lhs = apply_baseline_op(TimeFunction(s, 2.0 * a1.values - 0.5 * a2.values))
    rhs = 2.0 * apply_baseline_op(a1).values - 0.5 * apply_baseline_op(a2).values
    np.testing.assert_allclose(lhs.values, rhs, atol=1e-12)


def test_projection_image_closed_form(weibull_uniform_scheme):
    s = weibull_uniform_scheme
    mean_z = s.config.covariate.mean
    image = apply_baseline_op(baseline_lsq_direction(s))
    eta = s.eta_column[(...,) + (None,) * s.m]
    logu = s.log_u[None, :].reshape((1, -1) + (1,) * s.m)
    closed = 0.5 * mean_z * (1.0 + eta * logu) * s.f0_sqrt_values
    assert SigmaFunction(s, image.values - closed).norm() < 1e-8


def test_adjoint_score_closed_form(weibull_uniform_scheme):
    """The adjoint of the baseline map applied to the score has the closed
    form (EZ/2) g^(1/2) E[eta/(eta-1) (eta u^(eta-1) - 1)]."""
    s = weibull_uniform_scheme
    mean_z = s.config.covariate.mean
    computed = adjoint_baseline_op(parametric_score(s))
    per_eta = (
        s.eta_column
        / (s.eta_column - 1.0)
        * (s.eta_column * s.u_nodes[None, :] ** (s.eta_column - 1.0) - 1.0)
    )
    closed = 0.5 * mean_z * np.sqrt(s.g_nodes) * s.eta_expect(per_eta)
    diff = TimeFunction(s, computed.values - closed)
    assert diff.norm() < 1e-7


def test_adjoint_score_is_admissible(weibull_uniform_scheme):
    s = weibull_uniform_scheme
    vals = adjoint_baseline_op(parametric_score(s)).values
    inner = np.sum(s.time_weights * vals * np.sqrt(s.g_nodes))
    assert abs(inner) < 1e-8


def test_hazard_ratio_of_adjoint_score(weibull_uniform_scheme):
    """Smoothing the adjoint of the score gives half the at-risk moment
    ratio M1 / survival."""
    s = weibull_uniform_scheme
    mean_z = s.config.covariate.mean
    smoothed = hazard_ratio_op(adjoint_baseline_op(parametric_score(s)))
    m1_over_surv = mean_z * s.eta_expect(
        s.eta_column * s.u_nodes[None, :] ** (s.eta_column - 1.0)
    )
    diff = TimeFunction(s, smoothed.values - 0.5 * m1_over_surv)
    assert diff.norm() < 1e-7


def test_hazard_ratio_forms_agree_on_horizon(exp_normal_scheme):
    s = exp_normal_scheme
    gen = rng(3)
    mask = s.u_nodes >= 1e-6
    for _ in range(5):
        alpha = random_time_direction(s, gen)
        tail = hazard_ratio_op(alpha, form="tail").values
        head = hazard_ratio_op(alpha, form="head").values
        assert np.max(np.abs(tail[mask] - head[mask])) < 1e-8
    with pytest.raises(ValueError):
        hazard_ratio_op(alpha, form="sideways")


def test_lsq_direction_admissibility(weibull_uniform_scheme):
    """The closed-form time direction integrates to zero against the root
    density through the identity that the mean of log survival is -1."""
    s = weibull_uniform_scheme
    a_hat = baseline_lsq_direction(s)
    inner = np.sum(s.time_weights * a_hat.values * np.sqrt(s.g_nodes))
    assert abs(inner) < 1e-8
    b_hat = covariate_lsq_direction(s)
    inner_b = np.sum(s.cov_weights * b_hat.values * np.sqrt(s.h_nodes))
    assert abs(inner_b) < 1e-10


def test_full_cohort_lsq_covariate_vanishes():
    cfg = ModelConfig(
        baseline=exponential_baseline(),
        covariate=normal_covariates(),
        group_size=GroupSizeDistribution.degenerate(3),
        m=3,
        theta=0.0,
    )
    s = build_scheme(cfg, time_panels=16, time_order=8, cov_nodes=12)
    assert covariate_lsq_direction(s).norm() == 0.0


def test_admissibility_projection_policy(exp_normal_scheme):
    s = exp_normal_scheme
    gen = rng(4)
    base = random_time_direction(s, gen)
    # a small violation is projected away silently
    slightly_off = TimeFunction(s, base.values + 5e-5 * np.sqrt(s.g_nodes))
    image = apply_baseline_op(slightly_off)
    reference = apply_baseline_op(base)
    assert (
        SigmaFunction(s, image.values - reference.values).norm()
        < 1e-8 + 1e-4 * reference.norm()
    )
    # a large violation is rejected
    badly_off = TimeFunction(s, base.values + 0.01 * np.sqrt(s.g_nodes))
    with pytest.raises(ValueError):
        apply_baseline_op(badly_off)


# ---------------------------------------------------------------------------
# inner product space
# ---------------------------------------------------------------------------


def test_sigma_inner_requires_shared_scheme(exp_normal_config):
    s1 = build_scheme(exp_normal_config, time_panels=16, time_order=8, cov_nodes=12)
    s2 = build_scheme(exp_normal_config, time_panels=16, time_order=8, cov_nodes=12)
    mu = random_sigma_direction(s1, rng(5))
    nu = random_sigma_direction(s2, rng(5))
    with pytest.raises(ValueError):
        sigma_inner(mu, nu)


def test_sigma_function_shape_checked(exp_normal_scheme):
    with pytest.raises(ValueError):
        SigmaFunction(exp_normal_scheme, np.zeros(3))


def test_cauchy_schwarz(exp_normal_scheme):
    s = exp_normal_scheme
    gen = rng(6)
    for _ in range(50):
        mu = random_sigma_direction(s, gen)
        nu = random_sigma_direction(s, gen)
        lhs = abs(sigma_inner(mu, nu))
        rhs = mu.norm() * nu.norm()
        assert lhs <= rhs * (1.0 + 1e-12)


# ---------------------------------------------------------------------------
# information
# ---------------------------------------------------------------------------


def test_information_all_builtin_configs(exp_normal_scheme, weibull_uniform_scheme):
    for s in (exp_normal_scheme, weibull_uniform_scheme):
        closed = effective_information(BoundsInput.from_config(s.config))
        assert information_by_quadrature(s) == pytest.approx(closed, rel=1e-6)


def test_information_full_cohort_is_covariate_variance():
    cfg = ModelConfig(
        baseline=exponential_baseline(),
        covariate=normal_covariates(),
        group_size=GroupSizeDistribution.degenerate(3),
        m=3,
        theta=0.0,
    )
    s = build_scheme(cfg, time_panels=20, time_order=10, cov_nodes=16)
    assert information_by_quadrature(s) == pytest.approx(1.0, rel=1e-6)


def test_information_grid_refinement(exp_normal_config):
    base = build_scheme(exp_normal_config)
    finer_time = build_scheme(exp_normal_config, time_panels=34, time_order=24)
    finer_cov = build_scheme(exp_normal_config, cov_nodes=64)
    v0 = information_by_quadrature(base)
    assert abs(information_by_quadrature(finer_time) - v0) < 1e-8
    assert abs(information_by_quadrature(finer_cov) - v0) < 1e-8


def test_pythagoras(exp_normal_scheme):
    s = exp_normal_scheme
    rho = parametric_score(s)
    proj = SigmaFunction(
        s,
        apply_baseline_op(baseline_lsq_direction(s)).values
        + apply_covariate_op(covariate_lsq_direction(s)).values,
    )
    resid = SigmaFunction(s, rho.values - proj.values)
    assert sigma_inner(rho, rho) == pytest.approx(
        sigma_inner(resid, resid) + sigma_inner(proj, proj), abs=1e-8
    )


# ---------------------------------------------------------------------------
# first-order expansion
# ---------------------------------------------------------------------------


def test_hellinger_zero_direction(exp_normal_scheme):
    s = exp_normal_scheme
    zero_a = TimeFunction(s, np.zeros_like(s.time_nodes))
    zero_b = CovariateFunction(s, np.zeros_like(s.cov_nodes))
    assert hellinger_direction_check(0.0, zero_a, zero_b, 1e-3, s) < 1e-10


def test_hellinger_eps_guard(exp_normal_scheme):
    s = exp_normal_scheme
    gen = rng(7)
    alpha = random_time_direction(s, gen)
    beta = random_covariate_direction(s, gen)
    with pytest.raises(EpsilonTooLargeError):
        hellinger_direction_check(0.5, alpha, beta, 1e3, s)


def test_hellinger_worst_direction_norm(weibull_uniform_scheme):
    """Along (1, -ahat, -bhat) the limiting direction is the projection
    residual, whose squared norm is a quarter of the information."""
    s = weibull_uniform_scheme
    a_hat = baseline_lsq_direction(s)
    b_hat = covariate_lsq_direction(s)
    zeta = SigmaFunction(
        s,
        parametric_score(s).values
        - apply_baseline_op(a_hat).values
        - apply_covariate_op(b_hat).values,
    )
    info = information_by_quadrature(s)
    assert 4.0 * sigma_inner(zeta, zeta) == pytest.approx(info, rel=1e-12)
    resid = hellinger_direction_check(
        1.0,
        TimeFunction(s, -a_hat.values),
        CovariateFunction(s, -b_hat.values),
        1e-3,
        s,
    )
    assert resid < 0.05  # finite-step error only
