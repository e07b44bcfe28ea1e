"""Command-line front end: simulate, fit, bounds, verify and mc.

Each run is reproducible from its arguments: datasets derive from
counter-based streams, replications of the Monte Carlo harness own
disjoint streams, and report rows are ordered by replication id, so
results do not depend on worker scheduling.  CSV files are the
authoritative outputs; figures are rendered alongside them unless
disabled.

Exit codes: 0 on success, 2 on configuration or validation failure,
3 when the verification suite leaves a residual above tolerance.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import figures
from .bounds import (
    BoundsInput,
    breslow_covariance,
    effective_information,
    effective_information_limit,
    known_theta_covariance,
    survival_lower_bound,
)
from .estimators import (
    DegenerateLikelihoodError,
    SeparationError,
    breslow,
    fit_mple,
    mple_asymptotic_variance,
)
from .model import (
    ConfigError,
    ModelConfig,
    load_config,
    parse_config,
    validate_config,
)
from .operators import run_identity_suite
from .sampler import (
    goodness_of_fit_check,
    load_dataset,
    save_dataset,
    simulate_dataset,
)

__all__ = ["ExperimentSpec", "McReport", "run_mc_experiment", "emit_report", "main"]

_ENV_WORKER_CAP = "NCCOX_MAX_WORKERS"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """One Monte Carlo experiment: model, scale, seed and outputs."""

    config: ModelConfig
    n: int
    replications: int
    seed: int
    grid_times: tuple[float, ...] = ()
    workers: int = 1

    def __post_init__(self):
        if self.n < 1 or self.replications < 1:
            raise ValueError("need n >= 1 and replications >= 1")


@dataclass(frozen=True, eq=False)
class McReport:
    """Per-replication fits plus the bound values they are compared to.

    Aggregate statistics are recomputable from the per-replication rows;
    separated replications carry NaN estimates and are excluded from the
    aggregates.
    """

    spec: ExperimentSpec
    theta_hat: np.ndarray
    std_err: np.ndarray
    iterations: np.ndarray
    separated: np.ndarray
    survival_at_grid: np.ndarray  # (replications, len(grid_times))

    @property
    def ok(self) -> np.ndarray:
        return ~self.separated

    def mean_theta(self) -> float:
        return float(np.mean(self.theta_hat[self.ok]))

    def scaled_variance(self) -> float:
        """n times the sample variance of the estimates."""
        return float(self.spec.n * np.var(self.theta_hat[self.ok], ddof=1))

    def separation_count(self) -> int:
        return int(np.sum(self.separated))

    def breslow_scaled_variances(self) -> np.ndarray:
        """n times the per-grid-point sample variance of the survival
        estimator across replications."""
        vals = self.survival_at_grid[self.ok]
        return self.spec.n * np.var(vals, axis=0, ddof=1)

    def bound_rows(self) -> list[tuple[str, float]]:
        cfg = self.spec.config
        inp = BoundsInput.from_config(cfg)
        info_finite = effective_information(inp)
        info_limit = effective_information_limit(cfg.m, cfg.covariate.variance)
        rows = [
            ("effective_information_finite", info_finite),
            ("effective_information_limit", info_limit),
            ("inverse_information_finite", 1.0 / info_finite),
        ]
        if cfg.m >= 2:
            rows.append(
                ("sigma2_mple", mple_asymptotic_variance(cfg.m, cfg.covariate.variance))
            )
            rows.append(("mple_efficiency", info_limit / info_finite))
        return rows


def _mc_replication(args) -> tuple[int, float, float, int, bool, list[float]]:
    """One replication; takes the configuration as text so the work unit
    pickles cleanly for process pools."""
    config_text, n, seed, rep, grid_times = args
    config = parse_config(config_text)
    dataset = simulate_dataset(config, n, seed, replication=rep)
    try:
        fit = fit_mple(dataset)
        _, survival_fn = breslow(dataset, fit.theta_hat)
        ghat = [float(survival_fn(t)) for t in grid_times]
        return rep, fit.theta_hat, fit.standard_error, fit.iterations, False, ghat
    except SeparationError:
        return rep, math.nan, math.nan, 0, True, [math.nan] * len(grid_times)


def run_mc_experiment(spec: ExperimentSpec) -> McReport:
    """Simulate, fit and summarize ``replications`` independent datasets."""
    config_text = spec.config.canonical_text()
    jobs = [
        (config_text, spec.n, spec.seed, rep, spec.grid_times)
        for rep in range(spec.replications)
    ]
    cap = int(os.environ.get(_ENV_WORKER_CAP, str(os.cpu_count() or 1)))
    workers = max(1, min(spec.workers, cap))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_mc_replication, jobs, chunksize=4))
    else:
        raw = [_mc_replication(job) for job in jobs]
    raw.sort(key=lambda row: row[0])

    theta = np.array([row[1] for row in raw])
    std_err = np.array([row[2] for row in raw])
    iters = np.array([row[3] for row in raw], dtype=int)
    separated = np.array([row[4] for row in raw], dtype=bool)
    ghat = np.array([row[5] for row in raw], dtype=float).reshape(
        spec.replications, len(spec.grid_times)
    )
    return McReport(
        spec=spec,
        theta_hat=theta,
        std_err=std_err,
        iterations=iters,
        separated=separated,
        survival_at_grid=ghat,
    )


def emit_report(report: McReport, outdir: Path, render_figures: bool = True):
    """Write the per-replication CSV with its summary block, a text
    summary, and (optionally) the companion figures."""
    if report.spec.replications == 0 or report.theta_hat.size == 0:
        raise ValueError("cannot emit a report with no replications")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    spec = report.spec
    cfg = spec.config

    ghat_cols = [f"ghat@{_fmt(t)}" for t in spec.grid_times]
    lines = [
        "# nccox mc report",
        f"# fingerprint = {cfg.fingerprint()}",
        f"# n = {spec.n}",
        f"# replications = {spec.replications}",
        f"# seed = {spec.seed}",
        "rep,theta_hat,std_err,iterations,separated" + "".join("," + c for c in ghat_cols),
    ]
    for rep in range(spec.replications):
        row = [
            str(rep),
            _fmt(report.theta_hat[rep]),
            _fmt(report.std_err[rep]),
            str(int(report.iterations[rep])),
            str(int(report.separated[rep])),
        ] + [_fmt(v) for v in report.survival_at_grid[rep]]
        lines.append(",".join(row))

    lines.append("# summary")
    lines.append("key,value")
    summary: list[tuple[str, float]] = [
        ("mean_theta_hat", report.mean_theta()),
        ("scaled_variance_theta_hat", report.scaled_variance()),
        ("separation_count", float(report.separation_count())),
    ]
    summary += report.bound_rows()
    inp = BoundsInput.from_config(cfg)
    emp = report.breslow_scaled_variances()
    for t, v in zip(spec.grid_times, emp):
        summary.append((f"breslow_scaled_variance@{_fmt(t)}", float(v)))
        summary.append((f"survival_bound@{_fmt(t)}", survival_lower_bound(t, t, inp)))
        summary.append((f"breslow_covariance@{_fmt(t)}", breslow_covariance(t, t, inp)))
    for key, value in summary:
        lines.append(f"{key},{_fmt(value)}")

    csv_path = outdir / "mc_report.csv"
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    sep_frac = report.separation_count() / spec.replications
    text = [
        "Monte Carlo calibration summary",
        "===============================",
        f"model fingerprint: {cfg.fingerprint()}",
        f"groups per replication: {spec.n}, replications: {spec.replications}, seed: {spec.seed}",
        "",
        f"mean estimate:                {report.mean_theta(): .6f} (true {cfg.theta:g})",
        f"scaled variance (n Var):      {report.scaled_variance(): .6f}",
    ]
    for key, value in report.bound_rows():
        text.append(f"{key + ':':<30}{value: .6f}")
    text.append(f"separated replications:       {report.separation_count()}")
    if sep_frac > 0.01:
        text.append(
            f"warning: separation in {100 * sep_frac:.1f}% of replications "
            "(excluded from aggregates)"
        )
    if spec.grid_times:
        text.append("")
        text.append("survival estimator, scaled pointwise variances vs bounds")
        text.append(f"{'t':>8} {'empirical':>12} {'finite bound':>13} {'limit cov':>12}")
        for t, v in zip(spec.grid_times, emp):
            text.append(
                f"{t:8.4g} {v:12.6f} {survival_lower_bound(t, t, inp):13.6f} "
                f"{breslow_covariance(t, t, inp):12.6f}"
            )
    txt_path = outdir / "mc_summary.txt"
    txt_path.write_text("\n".join(text) + "\n", encoding="utf-8")

    paths = [csv_path, txt_path]
    if render_figures:
        ok = report.ok
        if cfg.m >= 2:
            fig1 = outdir / "mc_theta_hist.png"
            figures.render_theta_histogram(
                report.theta_hat[ok],
                cfg.theta,
                mple_asymptotic_variance(cfg.m, cfg.covariate.variance),
                spec.n,
                fig1,
            )
            paths.append(fig1)
        if spec.grid_times:
            fig2 = outdir / "mc_breslow_variance.png"
            figures.render_breslow_variances(
                np.asarray(spec.grid_times),
                emp,
                np.array([survival_lower_bound(t, t, inp) for t in spec.grid_times]),
                np.array([breslow_covariance(t, t, inp) for t in spec.grid_times]),
                fig2,
            )
            paths.append(fig2)
    return paths


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _load_config_or_exit(path: str) -> ModelConfig:
    try:
        return load_config(path)
    except (OSError, ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        raise SystemExit(2)


def _cmd_simulate(args) -> int:
    config = _load_config_or_exit(args.config)
    report = validate_config(config)
    for line in report.summary_lines():
        print(line)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    dataset = simulate_dataset(config, args.n, args.seed)
    path = outdir / "dataset.txt"
    save_dataset(dataset, path)
    print(f"wrote {dataset.n} observations to {path}")
    if args.gof:
        if config.theta != 0.0:
            print(
                "note: goodness-of-fit checks assume the null model",
                file=sys.stderr,
            )
        gof = goodness_of_fit_check(dataset, config)
        gof_lines = ["check,pvalue"]
        for name, pval in gof.pvalues().items():
            gof_lines.append(f"{name},{_fmt(pval)}")
        gof_path = outdir / "gof.csv"
        gof_path.write_text("\n".join(gof_lines) + "\n", encoding="utf-8")
        print(f"wrote goodness-of-fit p-values to {gof_path}")
    return 0


def _cmd_fit(args) -> int:
    dataset = load_dataset(args.data)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        fit = fit_mple(dataset)
    except (SeparationError, DegenerateLikelihoodError) as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return 2
    hazard_fn, survival_fn = breslow(dataset, fit.theta_hat)

    mple_path = outdir / "mple.csv"
    mple_path.write_text(
        "theta_hat,std_err,iterations,score,information\n"
        + ",".join(
            [
                _fmt(fit.theta_hat),
                _fmt(fit.standard_error),
                str(fit.iterations),
                _fmt(fit.score),
                _fmt(fit.information),
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    breslow_lines = ["t,cumhaz,survival"]
    for t, ch, sv in zip(hazard_fn.times, hazard_fn.values, survival_fn.values):
        breslow_lines.append(f"{_fmt(t)},{_fmt(ch)},{_fmt(sv)}")
    breslow_path = outdir / "breslow.csv"
    breslow_path.write_text("\n".join(breslow_lines) + "\n", encoding="utf-8")
    print(
        f"theta_hat = {fit.theta_hat:.6f} (se {fit.standard_error:.6f}, "
        f"{fit.iterations} iterations)"
    )
    print(f"wrote {mple_path} and {breslow_path}")
    if args.figures:
        fig_path = outdir / "breslow.png"
        figures.render_breslow_fit(hazard_fn, survival_fn, fig_path)
        print(f"wrote {fig_path}")
    return 0


def _cmd_bounds(args) -> int:
    config = _load_config_or_exit(args.config)
    times = _parse_times(args.times)
    inp = BoundsInput.from_config(config)
    info_finite = effective_information(inp)
    info_limit = effective_information_limit(config.m, config.covariate.variance)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    lines = ["key,value"]
    lines.append(f"effective_information_finite,{_fmt(info_finite)}")
    lines.append(f"effective_information_limit,{_fmt(info_limit)}")
    lines.append(f"inverse_information_finite,{_fmt(1.0 / info_finite)}")
    if config.m >= 2:
        sigma2 = mple_asymptotic_variance(config.m, config.covariate.variance)
        lines.append(f"sigma2_mple,{_fmt(sigma2)}")
        lines.append(f"mple_efficiency,{_fmt(info_limit / info_finite)}")
    lines.append("s,t,known_theta_covariance,survival_bound,breslow_covariance")
    for s in times:
        for t in times:
            lines.append(
                ",".join(
                    [
                        _fmt(s),
                        _fmt(t),
                        _fmt(known_theta_covariance(s, t, inp)),
                        _fmt(survival_lower_bound(s, t, inp)),
                        _fmt(breslow_covariance(s, t, inp)),
                    ]
                )
            )
    path = outdir / "bounds.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {path}")
    if args.figures and times:
        fig_path = outdir / "bounds.png"
        figures.render_bound_curves(
            np.asarray(times),
            np.array([survival_lower_bound(t, t, inp) for t in times]),
            np.array([breslow_covariance(t, t, inp) for t in times]),
            fig_path,
        )
        print(f"wrote {fig_path}")
    return 0


def _cmd_verify(args) -> int:
    config = _load_config_or_exit(args.config)
    try:
        results = run_identity_suite(
            config,
            n_directions=args.directions,
            seed=args.seed,
            tolerance_override=args.tolerance,
        )
    except ValueError as exc:
        print(f"verification cannot run: {exc}", file=sys.stderr)
        return 2
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = ["check,residual,tolerance,status"]
    width = max(len(r.name) for r in results)
    for r in results:
        status = "pass" if r.passed else "FAIL"
        lines.append(f"{r.name},{_fmt(r.residual)},{_fmt(r.tolerance)},{status}")
        print(f"{r.name:<{width}}  {r.residual:12.3e}  (tol {r.tolerance:8.1e})  {status}")
    path = outdir / "verify.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {path}")
    if args.figures:
        fig_path = outdir / "verify_residuals.png"
        figures.render_residuals(
            [r.name for r in results],
            np.array([r.residual for r in results]),
            [r.tolerance for r in results],
            fig_path,
        )
        print(f"wrote {fig_path}")
    return 0 if all(r.passed for r in results) else 3


def _cmd_mc(args) -> int:
    config = _load_config_or_exit(args.config)
    report = validate_config(config)
    if report.warnings:
        for w in report.warnings:
            print(f"validation warning: {w}", file=sys.stderr)
        if not args.allow_warnings:
            print(
                "refusing to run with warnings; pass --allow-warnings to proceed",
                file=sys.stderr,
            )
            return 2
    spec = ExperimentSpec(
        config=config,
        n=args.n,
        replications=args.reps,
        seed=args.seed,
        grid_times=tuple(_parse_times(args.times)),
        workers=args.workers,
    )
    mc = run_mc_experiment(spec)
    paths = emit_report(mc, Path(args.out), render_figures=args.figures)
    for p in paths:
        print(f"wrote {p}")
    sep = mc.separation_count()
    if sep:
        print(f"note: {sep} replications hit separation and were excluded")
    return 0


def _parse_times(text: str) -> list[float]:
    if not text:
        return []
    return [float(part) for part in text.replace(";", ",").split(",") if part]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nccox",
        description=(
            "Nested case-control Cox model: simulation, partial-likelihood "
            "estimation, efficiency bounds and operator verification."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_seed=True):
        p.add_argument("--config", required=True, help="model configuration file")
        if with_seed:
            p.add_argument("--seed", type=int, default=0, help="root seed")
        p.add_argument("--out", default="out", help="output directory")

    p_sim = sub.add_parser("simulate", help="draw a dataset from the model")
    add_common(p_sim)
    p_sim.add_argument("--n", type=int, required=True, help="number of groups")
    p_sim.add_argument(
        "--gof", action="store_true", help="run goodness-of-fit checks (null model)"
    )
    p_sim.set_defaults(fn=_cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit a serialized dataset")
    p_fit.add_argument("--data", required=True, help="dataset file")
    p_fit.add_argument("--out", default="out")
    p_fit.add_argument(
        "--figures",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="render figures next to the CSV output",
    )
    p_fit.set_defaults(fn=_cmd_fit)

    p_bounds = sub.add_parser("bounds", help="tabulate the efficiency bounds")
    add_common(p_bounds, with_seed=False)
    p_bounds.add_argument(
        "--times",
        default="",
        help="comma-separated time points for the covariance grid",
    )
    p_bounds.add_argument(
        "--figures", action=argparse.BooleanOptionalAction, default=True
    )
    p_bounds.set_defaults(fn=_cmd_bounds)

    p_verify = sub.add_parser("verify", help="run the operator identity suite")
    add_common(p_verify)
    p_verify.add_argument("--directions", type=int, default=20)
    p_verify.add_argument(
        "--tolerance",
        type=float,
        default=None,
        help="override every per-check tolerance",
    )
    p_verify.add_argument(
        "--figures", action=argparse.BooleanOptionalAction, default=True
    )
    p_verify.set_defaults(fn=_cmd_verify)

    p_mc = sub.add_parser("mc", help="Monte Carlo calibration experiment")
    add_common(p_mc)
    p_mc.add_argument("--n", type=int, required=True, help="groups per replication")
    p_mc.add_argument("--reps", type=int, required=True, help="replications")
    p_mc.add_argument(
        "--times", default="", help="grid times for survival-estimator variances"
    )
    p_mc.add_argument("--workers", type=int, default=1)
    p_mc.add_argument("--allow-warnings", action="store_true")
    p_mc.add_argument(
        "--figures", action=argparse.BooleanOptionalAction, default=True
    )
    p_mc.set_defaults(fn=_cmd_mc)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
