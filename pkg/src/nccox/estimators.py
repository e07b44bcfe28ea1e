"""Maximum partial likelihood estimation and the baseline survival estimator.

The partial likelihood compares, at each failure, the failure's relative
risk to the total relative risk of its sampled set.  The log likelihood
is concave in the scalar parameter, so a damped Newton iteration from
zero converges globally.  The baseline cumulative hazard uses a pooled
estimator whose at-risk total weights each sampled set by eta / m, the
inverse inclusion probability of its members within the stratum.

Likelihood, score and information are reductions over observations and
may be chunked across workers; fits on distinct datasets are independent.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .sampler import Dataset

__all__ = [
    "SeparationError",
    "DegenerateLikelihoodError",
    "TiedTimesWarning",
    "SolverOptions",
    "MpleFit",
    "StepFunction",
    "partial_loglik",
    "score_and_information",
    "fit_mple",
    "mple_asymptotic_variance",
    "breslow",
]


class SeparationError(RuntimeError):
    """The likelihood is monotone; the maximizer runs to infinity."""


class DegenerateLikelihoodError(ValueError):
    """The likelihood carries no information about the parameter."""


class TiedTimesWarning(UserWarning):
    """Tied failure times were broken by record order."""


@dataclass(frozen=True)
class SolverOptions:
    score_tolerance: float = 1e-10
    max_iterations: int = 50
    max_halvings: int = 30
    separation_threshold: float = 50.0


@dataclass(frozen=True)
class MpleFit:
    """Converged fit: estimate, its standard error and solver diagnostics.

    ``information`` is the observed information of the whole dataset, not
    per observation; the standard error is its inverse square root.
    """

    theta_hat: float
    standard_error: float
    iterations: int
    score: float
    information: float


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function defined by jump times and levels."""

    times: np.ndarray
    values: np.ndarray
    initial: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape:
            raise ValueError("times and values must be matching 1-d arrays")
        if np.any(np.diff(times) <= 0):
            raise ValueError("jump times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        out = np.where(idx >= 0, self.values[np.maximum(idx, 0)], self.initial)
        return float(out) if out.ndim == 0 else out


def _risk_arrays(dataset: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Covariates with the failure in column 0, group sizes, failure times."""
    if dataset.n == 0:
        raise ValueError("empty dataset")
    m = len(dataset.observations[0].r)
    if m < 2:
        raise DegenerateLikelihoodError(
            "sampled sets of size 1 make the partial likelihood constant"
        )
    z = np.empty((dataset.n, m))
    eta = np.empty(dataset.n)
    t = np.empty(dataset.n)
    for row, obs in enumerate(dataset.observations):
        obs.validate_for(m)
        fail_pos = obs.r.index(obs.i)
        z[row, 0] = obs.z[fail_pos]
        z[row, 1:] = [v for k, v in enumerate(obs.z) if k != fail_pos]
        eta[row] = obs.eta
        t[row] = obs.t
    return z, eta, t


def partial_loglik(dataset: Dataset, theta: float) -> float:
    """Sum over failures of theta * z_failure minus the log total relative
    risk of the failure's sampled set."""
    z, _, _ = _risk_arrays(dataset)
    return float(np.sum(theta * z[:, 0] - logsumexp(theta * z, axis=1)))


def score_and_information(dataset: Dataset, theta: float) -> tuple[float, float]:
    """First and negated second derivative of the partial log likelihood.

    Each sampled set contributes its failure covariate minus the
    risk-weighted covariate mean, and the risk-weighted covariate
    variance, respectively.
    """
    z, _, _ = _risk_arrays(dataset)
    w = softmax(theta * z, axis=1)
    mean = np.sum(w * z, axis=1)
    var = np.sum(w * z**2, axis=1) - mean**2
    return float(np.sum(z[:, 0] - mean)), float(np.sum(var))


def fit_mple(dataset: Dataset, options: SolverOptions = SolverOptions()) -> MpleFit:
    """Damped Newton maximization of the partial likelihood from zero.

    Steps are halved until the log likelihood does not decrease.  An
    iterate escaping the separation threshold signals a monotone
    likelihood; an all-constant covariate dataset has no information and
    is rejected.
    """
    z, _, _ = _risk_arrays(dataset)
    if np.all(np.ptp(z, axis=1) == 0.0):
        raise DegenerateLikelihoodError(
            "all sampled sets have constant covariates"
        )
    theta = 0.0
    loglik = partial_loglik(dataset, theta)
    for iteration in range(1, options.max_iterations + 1):
        score, info = score_and_information(dataset, theta)
        if abs(score) < options.score_tolerance:
            # a monotone likelihood also drives the score under tolerance,
            # but with curvature collapsing at the same rate: the Newton
            # step stays macroscopic instead of vanishing at a root
            if abs(score) / info > 1e-3:
                raise SeparationError(
                    "score vanished with collapsing curvature; likelihood "
                    "appears monotone"
                )
            return MpleFit(
                theta_hat=theta,
                standard_error=1.0 / math.sqrt(info),
                iterations=iteration - 1,
                score=score,
                information=info,
            )
        step = score / info
        for _ in range(options.max_halvings):
            candidate = partial_loglik(dataset, theta + step)
            if candidate >= loglik:
                break
            step *= 0.5
        theta += step
        loglik = partial_loglik(dataset, theta)
        if abs(theta) > options.separation_threshold:
            raise SeparationError(
                f"iterate |theta|={abs(theta):.1f} exceeds "
                f"{options.separation_threshold}; likelihood appears monotone"
            )
    raise SeparationError(
        f"no convergence in {options.max_iterations} Newton iterations"
    )


def mple_asymptotic_variance(m: int, var_z: float) -> float:
    """Large-sample variance of the normalized estimation error at the
    null: m / ((m - 1) * Var Z)."""
    if m < 2:
        raise ValueError(f"need m >= 2 for a non-degenerate likelihood, got {m}")
    if var_z <= 0:
        raise ValueError(f"covariate variance must be positive, got {var_z}")
    return m / ((m - 1) * var_z)


def breslow(
    dataset: Dataset, theta_hat: float
) -> tuple[StepFunction, StepFunction]:
    """Pooled baseline cumulative hazard and survival estimators.

    At each failure time the increment is one over the at-risk total
    sum_{l: t_l >= t_j} (eta_l / m) * sum_{k in r_l} exp(theta_hat * z_k),
    which scales each sampled set up to its stratum size.  Tied failure
    times are merged in record order and reported via a warning.
    """
    z, eta, t = _risk_arrays(dataset)
    m = z.shape[1]
    group_scores = (eta / m) * np.sum(np.exp(theta_hat * z), axis=1)

    order = np.argsort(t, kind="stable")
    t_sorted = t[order]
    scores_sorted = group_scores[order]
    at_risk = np.cumsum(scores_sorted[::-1])[::-1]
    increments = 1.0 / at_risk

    n_ties = int(dataset.n - len(np.unique(t_sorted)))
    if n_ties:
        warnings.warn(
            f"{n_ties} tied failure times broken by record order",
            TiedTimesWarning,
        )
    jump_times, first_idx = np.unique(t_sorted, return_index=True)
    merged = np.add.reduceat(increments, first_idx)
    cum_hazard = np.cumsum(merged)

    hazard_fn = StepFunction(times=jump_times, values=cum_hazard, initial=0.0)
    survival_fn = StepFunction(
        times=jump_times, values=np.exp(-cum_hazard), initial=1.0
    )
    return hazard_fn, survival_fn
