"""Figure rendering for the report paths of the command-line interface.

Figures are a convenience companion to the delimited output; the CSV
files remain the authoritative, byte-reproducible artifacts.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "render_theta_histogram",
    "render_breslow_variances",
    "render_bound_curves",
    "render_breslow_fit",
    "render_residuals",
]


def render_theta_histogram(
    theta_hats: np.ndarray,
    theta0: float,
    sigma2_mple: float,
    n: int,
    path,
) -> None:
    """Histogram of the per-replication estimates with the large-sample
    normal overlay."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.hist(theta_hats, bins=30, density=True, color="#7aa6c2", alpha=0.8)
    sd = math.sqrt(sigma2_mple / n)
    grid = np.linspace(theta0 - 4 * sd, theta0 + 4 * sd, 300)
    ax.plot(
        grid,
        np.exp(-0.5 * ((grid - theta0) / sd) ** 2) / (sd * math.sqrt(2 * math.pi)),
        "k-",
        lw=1.2,
        label="large-sample normal",
    )
    ax.axvline(theta0, color="k", ls=":", lw=0.8)
    ax.set_xlabel(r"$\hat\theta$")
    ax.set_ylabel("density")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_breslow_variances(
    grid_times: np.ndarray,
    empirical: np.ndarray,
    kstar: np.ndarray,
    omega: np.ndarray,
    path,
) -> None:
    """Empirical pointwise variances of the survival estimator against the
    two covariance bounds."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(grid_times, empirical, "o-", color="#365f91", label="empirical")
    ax.plot(grid_times, kstar, "s--", color="#b04a3a", label="finite-size bound")
    ax.plot(grid_times, omega, "^:", color="#5a8f5a", label="limit covariance")
    ax.set_xlabel("t")
    ax.set_ylabel("variance of scaled survival error")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_bound_curves(
    grid_times: np.ndarray,
    kstar_diag: np.ndarray,
    omega_diag: np.ndarray,
    path,
) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(grid_times, kstar_diag, "s--", color="#b04a3a", label="finite-size bound")
    ax.plot(grid_times, omega_diag, "^:", color="#5a8f5a", label="limit covariance")
    ax.set_xlabel("t")
    ax.set_ylabel("diagonal covariance")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_breslow_fit(hazard_fn, survival_fn, path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    axes[0].step(
        hazard_fn.times, hazard_fn.values, where="post", color="#365f91"
    )
    axes[0].set_xlabel("t")
    axes[0].set_ylabel("cumulative hazard")
    axes[1].step(
        survival_fn.times, survival_fn.values, where="post", color="#b04a3a"
    )
    axes[1].set_xlabel("t")
    axes[1].set_ylabel("baseline survival")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_residuals(names: list[str], residuals: np.ndarray, tolerances, path) -> None:
    """Log-scale residual chart for the identity verification suite."""
    fig, ax = plt.subplots(figsize=(7.5, 0.35 * len(names) + 1.5))
    y = np.arange(len(names))
    floored = np.maximum(residuals, 1e-18)
    ax.barh(y, floored, color="#7aa6c2")
    for yi, tol in zip(y, tolerances):
        ax.plot([tol, tol], [yi - 0.4, yi + 0.4], "r-", lw=1.0)
    ax.set_yticks(y)
    ax.set_yticklabels(names, fontsize=7)
    ax.set_xscale("log")
    ax.set_xlabel("residual (red marks: tolerance)")
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
