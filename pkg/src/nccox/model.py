"""Probabilistic model for nested case-control sampled strata.

A stratum of ``eta`` comparable individuals shares an unknown baseline
lifetime law; individual hazards are scaled by exp(theta * z) where z is
the individual's covariate, drawn i.i.d. from an unknown covariate law.
The stratum is observed until its first failure, at which point covariates
are collected on the failure and on m - 1 controls sampled uniformly from
the non-failures.  This module houses the three ingredient laws, the
record type for one observed stratum, and the density of that record.

All evaluations are pure functions of immutable state and safe for
concurrent use.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from .quadrature import gauss_hermite_standard_normal, gauss_legendre

__all__ = [
    "ConfigError",
    "BaselineModel",
    "CovariateModel",
    "GroupSizeDistribution",
    "Observation",
    "ModelConfig",
    "ValidationReport",
    "exponential_baseline",
    "weibull_baseline",
    "normal_covariates",
    "truncated_normal_covariates",
    "uniform_covariates",
    "sampling_weight",
    "survival_given_covariate",
    "mixture_survival",
    "observation_density",
    "null_density",
    "validate_config",
    "parse_config",
    "load_config",
    "format_config",
]

_SURVIVAL_FLOOR = 1e-12  # survival level defining the evaluation horizon


class ConfigError(ValueError):
    """Raised for structurally invalid model configurations."""


@dataclass(frozen=True, eq=False)
class BaselineModel:
    """Baseline lifetime law via density, survival, hazard and quantile.

    ``quantile`` inverts the survival function: it maps a survival level
    u in (0, 1] to the time t with survival(t) = u.  ``horizon`` is the
    largest time at which survival-based quantities are evaluated; beyond
    it the survival level drops under the numerical floor.
    """

    name: str
    params: tuple[float, ...]
    density: Callable[[np.ndarray], np.ndarray]
    survival: Callable[[np.ndarray], np.ndarray]
    hazard: Callable[[np.ndarray], np.ndarray]
    quantile: Callable[[np.ndarray], np.ndarray]
    horizon: float

    def label(self) -> str:
        if self.params:
            inner = ", ".join(f"{p:g}" for p in self.params)
            return f"{self.name}({inner})"
        return self.name


def exponential_baseline() -> BaselineModel:
    """Unit-rate exponential baseline; hazard is identically one."""
    return BaselineModel(
        name="exponential",
        params=(),
        density=lambda t: np.exp(-np.asarray(t, dtype=float)),
        survival=lambda t: np.exp(-np.asarray(t, dtype=float)),
        hazard=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        quantile=lambda u: -np.log(np.asarray(u, dtype=float)),
        horizon=-math.log(_SURVIVAL_FLOOR),
    )


def weibull_baseline(shape: float) -> BaselineModel:
    """Weibull baseline with the given shape and unit scale."""
    if shape <= 0:
        raise ConfigError(f"Weibull shape must be positive, got {shape}")
    k = float(shape)

    def density(t):
        t = np.asarray(t, dtype=float)
        return k * t ** (k - 1.0) * np.exp(-(t ** k))

    return BaselineModel(
        name="weibull",
        params=(k,),
        density=density,
        survival=lambda t: np.exp(-(np.asarray(t, dtype=float) ** k)),
        hazard=lambda t: k * np.asarray(t, dtype=float) ** (k - 1.0),
        quantile=lambda u: (-np.log(np.asarray(u, dtype=float))) ** (1.0 / k),
        horizon=(-math.log(_SURVIVAL_FLOOR)) ** (1.0 / k),
    )


@dataclass(frozen=True, eq=False)
class CovariateModel:
    """Covariate law with exact moments and an exponential-moment map.

    ``exp_moment`` evaluates E exp(theta * Z); it is finite for
    |theta| < moment_radius.  ``support`` gives the (possibly infinite)
    endpoints of the law's support, and ``quadrature`` returns nodes and
    Lebesgue weights adapted to that support so that integrals of
    smooth-density products are accurate to near machine precision.
    """

    name: str
    params: tuple[float, ...]
    density: Callable[[np.ndarray], np.ndarray]
    mean: float
    variance: float
    exp_moment: Callable[[float], float]
    moment_radius: float
    support: tuple[float, float]
    sampler: Callable[[np.random.Generator, int], np.ndarray]

    def label(self) -> str:
        if self.params:
            inner = ", ".join(f"{p:g}" for p in self.params)
            return f"{self.name}({inner})"
        return self.name

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.support[0]) and math.isfinite(self.support[1])

    def quadrature(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        if self.bounded:
            return gauss_legendre(self.support[0], self.support[1], n)
        nodes, prob_weights = gauss_hermite_standard_normal(n)
        return nodes, prob_weights / self.density(nodes)


def normal_covariates() -> CovariateModel:
    """Standard normal covariates.

    The exponential moment is finite everywhere; the declared radius is
    capped at 2.0 since only finiteness on a fixed radius is needed.
    """
    return CovariateModel(
        name="normal",
        params=(),
        density=lambda z: np.exp(-0.5 * np.asarray(z, dtype=float) ** 2)
        / math.sqrt(2.0 * math.pi),
        mean=0.0,
        variance=1.0,
        exp_moment=lambda theta: math.exp(0.5 * theta * theta),
        moment_radius=2.0,
        support=(-math.inf, math.inf),
        sampler=lambda gen, size: gen.standard_normal(size),
    )


def truncated_normal_covariates(halfwidth: float = 3.0) -> CovariateModel:
    """Standard normal conditioned on [-c, c] for c = halfwidth."""
    if halfwidth <= 0:
        raise ConfigError(f"halfwidth must be positive, got {halfwidth}")
    c = float(halfwidth)
    mass = float(special.ndtr(c) - special.ndtr(-c))
    phi_c = math.exp(-0.5 * c * c) / math.sqrt(2.0 * math.pi)
    variance = 1.0 - 2.0 * c * phi_c / mass

    def density(z):
        z = np.asarray(z, dtype=float)
        inside = (z >= -c) & (z <= c)
        return np.where(
            inside,
            np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * mass),
            0.0,
        )

    def exp_moment(theta: float) -> float:
        shifted = special.ndtr(c - theta) - special.ndtr(-c - theta)
        return math.exp(0.5 * theta * theta) * float(shifted) / mass

    def sampler(gen: np.random.Generator, size: int) -> np.ndarray:
        u = gen.random(size)
        lo = special.ndtr(-c)
        return special.ndtri(lo + u * mass)

    return CovariateModel(
        name="truncated-normal",
        params=(c,),
        density=density,
        mean=0.0,
        variance=variance,
        exp_moment=exp_moment,
        moment_radius=math.inf,
        support=(-c, c),
        sampler=sampler,
    )


def uniform_covariates() -> CovariateModel:
    """Uniform covariates on [0, 1]."""

    def exp_moment(theta: float) -> float:
        if theta == 0.0:
            return 1.0
        return math.expm1(theta) / theta

    def density(z):
        z = np.asarray(z, dtype=float)
        return np.where((z >= 0.0) & (z <= 1.0), 1.0, 0.0)

    return CovariateModel(
        name="uniform",
        params=(),
        density=density,
        mean=0.5,
        variance=1.0 / 12.0,
        exp_moment=exp_moment,
        moment_radius=math.inf,
        support=(0.0, 1.0),
        sampler=lambda gen, size: gen.random(size),
    )


@dataclass(frozen=True)
class GroupSizeDistribution:
    """Finite-support law of the stratum size.

    Sizes are integers of at least 2; probabilities are normalized at
    construction.  Finite support makes every polynomial moment finite
    and lets sums over the size be evaluated exactly.
    """

    sizes: tuple[int, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.sizes) != len(self.probs) or not self.sizes:
            raise ConfigError("group size law needs matching, nonempty support")
        if any(int(s) != s or s < 2 for s in self.sizes):
            raise ConfigError(f"group sizes must be integers >= 2: {self.sizes}")
        if sorted(set(self.sizes)) != list(self.sizes):
            raise ConfigError("group sizes must be strictly increasing")
        if any(p < 0 for p in self.probs):
            raise ConfigError("group size probabilities must be nonnegative")
        total = float(sum(self.probs))
        if not math.isclose(total, 1.0, rel_tol=0.0, abs_tol=1e-9):
            raise ConfigError(f"group size probabilities sum to {total}, not 1")
        object.__setattr__(
            self, "probs", tuple(float(p) / total for p in self.probs)
        )
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "_sizes_arr", np.array(self.sizes))
        object.__setattr__(self, "_cum_probs", np.cumsum(self.probs))

    @classmethod
    def degenerate(cls, size: int) -> "GroupSizeDistribution":
        return cls(sizes=(size,), probs=(1.0,))

    @classmethod
    def from_pairs(cls, pairs) -> "GroupSizeDistribution":
        pairs = sorted((int(s), float(p)) for s, p in pairs)
        return cls(
            sizes=tuple(s for s, _ in pairs), probs=tuple(p for _, p in pairs)
        )

    def pmf(self, size: int) -> float:
        try:
            return self.probs[self.sizes.index(size)]
        except ValueError:
            return 0.0

    @property
    def min_size(self) -> int:
        return self.sizes[0]

    @property
    def max_size(self) -> int:
        return self.sizes[-1]

    def expect(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        """E fn(eta) under the law, evaluated exactly over the support."""
        sizes = np.asarray(self.sizes, dtype=float)
        return float(np.dot(self.probs, fn(sizes)))

    def sample(self, gen: np.random.Generator, size: int | None = None):
        """Draw sizes; degenerate laws consume no randomness."""
        if len(self.sizes) == 1:
            only = self.sizes[0]
            return only if size is None else np.full(size, only, dtype=int)
        u = gen.random(size)
        idx = np.searchsorted(self._cum_probs, u, side="right")
        idx = np.minimum(idx, len(self.sizes) - 1)
        picked = self._sizes_arr[idx]
        return int(picked) if size is None else picked


@dataclass(frozen=True)
class Observation:
    """One observed stratum: (eta, i, r, t, z_r).

    ``r`` holds the 1-based labels of the m sampled individuals in
    increasing order, with the failure label ``i`` among them, and ``z``
    the covariates aligned with ``r``.
    """

    eta: int
    i: int
    r: tuple[int, ...]
    t: float
    z: tuple[float, ...]

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"failure time must be nonnegative, got {self.t}")
        if len(self.r) != len(self.z):
            raise ValueError("sampled set and covariates differ in length")
        if list(self.r) != sorted(set(self.r)):
            raise ValueError("sampled set must be strictly increasing")
        if self.i not in self.r:
            raise ValueError(f"failure {self.i} not in sampled set {self.r}")
        if self.r[0] < 1 or self.r[-1] > self.eta:
            raise ValueError(f"sampled set {self.r} not within 1..{self.eta}")

    @property
    def failure_covariate(self) -> float:
        return self.z[self.r.index(self.i)]

    def validate_for(self, m: int) -> None:
        if len(self.r) != m:
            raise ValueError(f"sampled set has size {len(self.r)}, expected {m}")


@dataclass(frozen=True, eq=False)
class ModelConfig:
    """Complete model specification for simulation, estimation and bounds."""

    baseline: BaselineModel
    covariate: CovariateModel
    group_size: GroupSizeDistribution
    m: int
    theta: float

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ConfigError(f"m must be an integer >= 1, got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "theta", float(self.theta))

    def canonical_text(self) -> str:
        return format_config(self)

    def fingerprint(self) -> str:
        digest = hashlib.sha256(self.canonical_text().encode()).hexdigest()
        return digest[:16]


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of the structural and regularity checks on a configuration.

    ``positivity``, ``boundedness`` and ``cohort_size`` are the three
    alternative regularity regimes; at least one should hold for the
    efficiency theory to apply, and a warning (not an error) is issued
    when none does.
    """

    positivity: bool
    boundedness: bool
    cohort_size: bool
    eta_at_least_two: bool
    moment_radius_finite: bool
    m_within_support: bool
    warnings: tuple[str, ...] = ()

    @property
    def any_condition(self) -> bool:
        return self.positivity or self.boundedness or self.cohort_size

    def summary_lines(self) -> list[str]:
        yn = lambda b: "yes" if b else "no"
        lines = [
            f"positivity regime (theta >= 0, Z >= 0, eta >= m): {yn(self.positivity)}",
            f"boundedness regime (Z bounded, eta >= m): {yn(self.boundedness)}",
            f"cohort size regime (m <= eta - 4): {yn(self.cohort_size)}",
            f"eta >= 2 almost surely: {yn(self.eta_at_least_two)}",
            f"exponential moment finite on declared radius: {yn(self.moment_radius_finite)}",
            f"m within group size support: {yn(self.m_within_support)}",
        ]
        lines += [f"warning: {w}" for w in self.warnings]
        return lines


def sampling_weight(eta: int, m: int) -> float:
    """Probability of one particular size-m sampled set containing the
    failure, when m - 1 controls are drawn uniformly from eta - 1
    non-failures."""
    if m < 1 or m > eta:
        raise ValueError(f"need 1 <= m <= eta, got m={m}, eta={eta}")
    return 1.0 / math.comb(eta - 1, m - 1)


def survival_given_covariate(config: ModelConfig, t, z, theta: float | None = None):
    """Survival of an individual with covariate z: survival(t) ** exp(theta*z)."""
    theta = config.theta if theta is None else theta
    base = config.baseline.survival(t)
    return base ** np.exp(theta * np.asarray(z, dtype=float))


def mixture_survival(
    config: ModelConfig, t, theta: float | None = None, n_quad: int = 64
):
    """Survival of an individual whose covariate was not observed,
    averaged over the covariate law by quadrature."""
    theta = config.theta if theta is None else theta
    if abs(theta) >= config.covariate.moment_radius:
        raise ValueError(
            f"|theta|={abs(theta)} is outside the covariate moment radius "
            f"{config.covariate.moment_radius}"
        )
    nodes, weights = config.covariate.quadrature(n_quad)
    h_vals = config.covariate.density(nodes)
    base = np.asarray(config.baseline.survival(t), dtype=float)
    scalar = base.ndim == 0
    base = np.atleast_1d(base)
    powers = np.exp(theta * nodes)
    out = (base[:, None] ** powers[None, :]) @ (weights * h_vals)
    return float(out[0]) if scalar else out


def null_density(obs: Observation, config: ModelConfig) -> float:
    """Density of one observed stratum when the relative-risk parameter
    vanishes; independent of the failure label and of which labels were
    sampled."""
    base_surv = float(config.baseline.survival(obs.t))
    base_dens = float(config.baseline.density(obs.t))
    h_vals = config.covariate.density(np.asarray(obs.z))
    return (
        sampling_weight(obs.eta, len(obs.r))
        * base_dens
        * base_surv ** (obs.eta - 1)
        * float(np.prod(h_vals))
        * config.group_size.pmf(obs.eta)
    )


def observation_density(
    obs: Observation, config: ModelConfig, theta: float | None = None
) -> float:
    """Density of one observed stratum at the given parameter value.

    Multiplies the sampling weight, the failure's lifetime density, the
    survival of the sampled non-failures, the mixture survival of the
    unsampled ones, the covariate density of the sampled covariates and
    the group size probability.
    """
    theta = config.theta if theta is None else theta
    if theta == 0.0:
        return null_density(obs, config)
    if abs(theta) >= config.covariate.moment_radius:
        raise ValueError(
            f"|theta|={abs(theta)} is outside the covariate moment radius "
            f"{config.covariate.moment_radius}"
        )
    pmf = config.group_size.pmf(obs.eta)
    if pmf == 0.0:
        return 0.0
    m = len(obs.r)
    base_surv = float(config.baseline.survival(obs.t))
    base_dens = float(config.baseline.density(obs.t))
    if base_surv == 0.0:
        return 0.0
    z = np.asarray(obs.z)
    zi = obs.failure_covariate
    risk = np.exp(theta * z)
    risk_i = math.exp(theta * zi)
    # failure's lifetime density under relative risk exp(theta * z_i)
    fail_dens = risk_i * base_dens * base_surv ** (risk_i - 1.0)
    controls = base_surv ** (risk[np.arange(m) != obs.r.index(obs.i)])
    unsampled = (
        mixture_survival(config, obs.t, theta) ** (obs.eta - m)
        if obs.eta > m
        else 1.0
    )
    h_vals = config.covariate.density(z)
    return (
        sampling_weight(obs.eta, m)
        * fail_dens
        * float(np.prod(controls))
        * unsampled
        * float(np.prod(h_vals))
        * pmf
    )


def validate_config(config: ModelConfig) -> ValidationReport:
    """Check the regularity regimes and structural requirements.

    Raises for m < 1 (enforced at construction as well); every other
    finding is reported, with warnings when no regularity regime holds or
    when estimation would be impossible for some drawable group size.
    """
    if config.m < 1:
        raise ConfigError(f"m must be >= 1, got {config.m}")
    gs = config.group_size
    cov = config.covariate
    eta_min = gs.min_size
    eta_ge_m = eta_min >= config.m
    positivity = cov.support[0] >= 0.0 and config.theta >= 0.0 and eta_ge_m
    boundedness = cov.bounded and eta_ge_m
    cohort = config.m <= eta_min - 4
    eta_two = eta_min >= 2
    try:
        radius_probe = min(cov.moment_radius, 10.0) * 0.99
        finite = math.isfinite(cov.exp_moment(radius_probe)) and math.isfinite(
            cov.exp_moment(-radius_probe)
        )
    except (OverflowError, ValueError):
        finite = False
    warnings = []
    if not (positivity or boundedness or cohort):
        warnings.append(
            "no regularity regime holds (positivity, boundedness, cohort size); "
            "bound formulas remain computable but the efficiency theory is "
            "not guaranteed"
        )
    if not eta_ge_m:
        warnings.append(
            f"m={config.m} exceeds the smallest group size {eta_min}; "
            "simulation and estimation will fail for such groups"
        )
    if not eta_two:
        warnings.append("group sizes below 2 are outside the model")
    return ValidationReport(
        positivity=positivity,
        boundedness=boundedness,
        cohort_size=cohort,
        eta_at_least_two=eta_two,
        moment_radius_finite=finite,
        m_within_support=eta_ge_m,
        warnings=tuple(warnings),
    )


# ---------------------------------------------------------------------------
# plain-text configuration files
# ---------------------------------------------------------------------------

_BASELINES = {"exponential", "weibull"}
_COVARIATES = {"normal", "truncated-normal", "uniform"}


def parse_config(text: str) -> ModelConfig:
    """Parse a key = value configuration.

    Recognized keys: ``baseline`` (exponential | weibull), ``shape``
    (weibull only), ``covariate`` (normal | truncated-normal | uniform),
    ``halfwidth`` (truncated-normal only), ``eta`` (either a single size
    or a list of [size, probability] pairs), ``m`` and ``theta``.
    Lines starting with ``#`` are comments.
    """
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value': {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value

    known = {"baseline", "shape", "covariate", "halfwidth", "eta", "m", "theta"}
    unknown = set(entries) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    for required in ("baseline", "covariate", "eta", "m"):
        if required not in entries:
            raise ConfigError(f"missing configuration key {required!r}")

    baseline_name = entries["baseline"].lower()
    if baseline_name not in _BASELINES:
        raise ConfigError(f"unknown baseline {baseline_name!r}")
    if baseline_name == "weibull":
        if "shape" not in entries:
            raise ConfigError("weibull baseline requires 'shape'")
        baseline = weibull_baseline(float(entries["shape"]))
    else:
        baseline = exponential_baseline()

    covariate_name = entries["covariate"].lower()
    if covariate_name not in _COVARIATES:
        raise ConfigError(f"unknown covariate law {covariate_name!r}")
    if covariate_name == "normal":
        covariate = normal_covariates()
    elif covariate_name == "truncated-normal":
        covariate = truncated_normal_covariates(
            float(entries.get("halfwidth", 3.0))
        )
    else:
        covariate = uniform_covariates()

    try:
        eta_value = json.loads(entries["eta"])
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse eta value {entries['eta']!r}: {exc}")
    if isinstance(eta_value, int):
        group_size = GroupSizeDistribution.degenerate(eta_value)
    elif isinstance(eta_value, list):
        group_size = GroupSizeDistribution.from_pairs(eta_value)
    else:
        raise ConfigError(f"eta must be an integer or [[size, prob], ...]")

    return ModelConfig(
        baseline=baseline,
        covariate=covariate,
        group_size=group_size,
        m=int(entries["m"]),
        theta=float(entries.get("theta", "0.0")),
    )


def load_config(path) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config(handle.read())


def format_config(config: ModelConfig) -> str:
    """Canonical text form; parsing it reproduces the configuration."""
    lines = [f"baseline = {config.baseline.name}"]
    if config.baseline.name == "weibull":
        lines.append(f"shape = {config.baseline.params[0]:.17g}")
    lines.append(f"covariate = {config.covariate.name}")
    if config.covariate.name == "truncated-normal":
        lines.append(f"halfwidth = {config.covariate.params[0]:.17g}")
    pairs = ",".join(
        f"[{s},{p:.17g}]"
        for s, p in zip(config.group_size.sizes, config.group_size.probs)
    )
    lines.append(f"eta = [{pairs}]")
    lines.append(f"m = {config.m}")
    lines.append(f"theta = {config.theta:.17g}")
    return "\n".join(lines) + "\n"
