"""Config-driven experiment suites with machine-readable reports.

Subcommands: mixing, concentration, fkr, verify-all, plotdata. Every suite
writes CSV reports whose bodies are byte-identical across reruns of the same
config (timestamps live only in the JSON manifest) and exits 0 when all of
its declared checks pass, 1 when a check fails, 2 on config/usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np
import scipy

from . import __version__
from .concentration import (
    BoundParams,
    TailEstimate,
    calibrate_corollary,
    calibrate_laplace_constant,
    corollary_bound,
    empirical_laplace,
    laplace_bound,
    make_fspec,
    tail_deviations,
    truncate,
)
from .config import ExperimentConfig, load_config_file, resolve_config
from .errors import BetamixError, ConfigError, FitError
from .mixing import (
    FiniteChain,
    FiniteJointDistribution,
    alpha_exact,
    beta_exact,
    davydov_check,
    ibragimov_check,
    markov_beta_lag,
)
from .processes import FunctionalPath, estimate_chain_mixing, uniform_grid
from .regression import (
    RegressionFit,
    dynamic_forecast_experiment,
    kernel_spec,
    m_constant,
    nadaraya_watson,
)
from .seeding import rng_for


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class SuiteResult:
    exit_code: int
    checks: tuple[Check, ...]
    report_paths: tuple[str, ...]
    manifest_path: str


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path: str, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if not isinstance(v, str) else v for v in row) + "\n")


def _write_manifest(
    path: str, config: ExperimentConfig, checks: list[Check], reports: list[str]
) -> None:
    resolved = dict(sorted(config.raw.items()))
    manifest = {
        "suite": config.suite,
        "seed": config.seed,
        "reps": config.reps,
        "workers": config.workers,
        "config": resolved,
        "config_sha256": hashlib.sha256(
            json.dumps(resolved, sort_keys=True).encode()
        ).hexdigest(),
        "versions": {
            "betamix": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "checks": [dataclasses.asdict(c) for c in checks],
        "reports": [os.path.basename(r) for r in reports],
        "created_unix": time.time(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


MIXING_HEADER = ["check_name", "lhs", "rhs", "holds", "seed"]


def _mixing_rows(config: ExperimentConfig) -> tuple[list[tuple], list[Check]]:
    rng = rng_for(config.seed)
    seed = config.seed
    max_states = int(config["mixing.max_states"])
    n_joints = int(config["mixing.joints"])
    n_chains = int(config["mixing.chains"])
    rows: list[tuple] = []
    families: dict[str, bool] = {
        "alpha_le_quarter": True,
        "alpha_beta_ordering": True,
        "beta_le_one": True,
        "davydov": True,
        "ibragimov": True,
        "markov_lag_consistency": True,
    }

    def add(name: str, lhs: float, rhs: float, family: str, tol: float = 1e-10):
        holds = bool(lhs <= rhs + tol)
        rows.append((name, lhs, rhs, holds, seed))
        families[family] &= holds

    for i in range(n_joints):
        m, ell = (int(v) for v in rng.integers(2, max_states + 1, size=2))
        joint = FiniteJointDistribution(rng.dirichlet(np.ones(m * ell)).reshape(m, ell))
        a, b = alpha_exact(joint), beta_exact(joint)
        add(f"alpha_le_quarter[{i}]", a, 0.25, "alpha_le_quarter", tol=1e-12)
        add(f"alpha_beta_ordering[{i}]", 2.0 * a, b, "alpha_beta_ordering", tol=1e-12)
        add(f"beta_le_one[{i}]", b, 1.0, "beta_le_one", tol=1e-12)
        h = rng.normal(0.0, 2.0, size=(m, ell))
        for p in (1.5, 2.0, 3.0, math.inf):
            res = davydov_check(joint, h, p)
            name = f"davydov[p={'inf' if math.isinf(p) else p}][{i}]"
            rows.append((name, res.lhs, res.rhs, res.holds, seed))
            families["davydov"] &= res.holds

    for i in range(n_chains):
        m = int(rng.integers(2, min(max_states, 4) + 1))
        chain = FiniteChain.from_transition(rng.dirichlet(np.ones(m), size=m))
        n_funcs = int(rng.integers(2, 5))
        lags = np.sort(rng.choice(np.arange(1, 9), size=n_funcs, replace=False))
        funcs = [rng.uniform(0.0, 2.0, size=m) for _ in range(n_funcs)]
        res = ibragimov_check(chain, funcs, lags)
        rows.append((f"ibragimov[{i}]", res.lhs, res.rhs, res.holds, seed))
        families["ibragimov"] &= res.holds
        lag = int(rng.integers(1, 6))
        direct = markov_beta_lag(chain, lag)
        via_joint = beta_exact(chain.lag_joint(lag))
        add(
            f"markov_lag_consistency[{i}]",
            abs(direct - via_joint),
            0.0,
            "markov_lag_consistency",
            tol=1e-12,
        )

    checks = [Check(name=k, passed=v) for k, v in families.items()]
    return rows, checks


def run_mixing_suite(config: ExperimentConfig) -> tuple[list[Check], list[str]]:
    rows, checks = _mixing_rows(config)
    report = os.path.join(config.output, "mixing_report.csv")
    _write_csv(report, MIXING_HEADER, rows)
    return checks, [report]


CONCENTRATION_HEADER = ["experiment_id", "n", "epsilon", "B", "p_hat", "ci", "bound_value", "seed"]
LAPLACE_HEADER = ["experiment_id", "A", "gamma", "estimate", "std_error", "bound_value", "C", "seed"]


def _resolve_t(rule: str, n: int) -> int:
    if rule == "last":
        return n
    if rule == "middle":
        return max(n // 2, 1)
    if rule.startswith("index:"):
        t = int(rule.split(":", 1)[1])
        if not 1 <= t <= n:
            raise ConfigError(f"field 't_rule': index {t} outside [1, {n}]")
        return t
    raise ConfigError(f"field 't_rule': unsupported value {rule!r}")


def run_concentration_suite(config: ExperimentConfig) -> tuple[list[Check], list[str]]:
    process = config.chain_spec()
    fspec = make_fspec(config.fspec_name, process, seed=config.seed)
    b_raw = config["bound.B"].strip()
    bound_b = float(b_raw) if b_raw else fspec.bound
    checks: list[Check] = []
    reports: list[str] = []

    tails_by_eps = {eps: [] for eps in config.epsilon_grid}
    for n in config.n_grid:
        t = _resolve_t(config.t_rule, n)
        devs = tail_deviations(
            fspec, process, n, t, config.reps, config.seed, workers=config.workers
        )
        for eps in config.epsilon_grid:
            p_hat = float(np.mean(devs >= eps))
            ci = 1.96 * math.sqrt(p_hat * (1 - p_hat) / config.reps)
            tails_by_eps[eps].append(
                TailEstimate(epsilon=eps, n=n, reps=config.reps, p_hat=p_hat,
                             ci_half_width=ci)
            )

    rows = []
    for eps, tails in tails_by_eps.items():
        bound_at = {}
        try:
            params, fit = calibrate_corollary(tails, B=bound_b, epsilon=eps)
            for te in tails:
                bound_at[te.n] = corollary_bound(dataclasses.replace(params, n=te.n))
            checks.append(
                Check(
                    name=f"rate_fit(eps={eps})",
                    passed=fit.a2_hat > 0 and fit.r_squared > 0.9,
                    detail=f"a2={fit.a2_hat:.4g} r2={fit.r_squared:.4g}",
                )
            )
            dominated = all(
                bound_at[te.n] >= te.p_hat + te.ci_half_width for te in tails
            )
            checks.append(Check(name=f"bound_dominates(eps={eps})", passed=dominated))
        except FitError as exc:
            checks.append(Check(name=f"rate_fit(eps={eps})", passed=False, detail=str(exc)))
        for te in tails:
            rows.append(
                (
                    f"tail(eps={eps})",
                    te.n,
                    te.epsilon,
                    bound_b,
                    te.p_hat,
                    te.ci_half_width,
                    bound_at.get(te.n, math.nan),
                    config.seed,
                )
            )
    report = os.path.join(config.output, "concentration_report.csv")
    _write_csv(report, CONCENTRATION_HEADER, rows)
    reports.append(report)

    if config.a_grid:
        checks_l, report_l = _laplace_section(config, process, fspec, bound_b)
        checks.extend(checks_l)
        reports.append(report_l)
    return checks, reports


def _laplace_section(config, process, fspec, bound_b):
    a_grid = sorted(config.a_grid)
    a_min = a_grid[0]
    mixing_fit = estimate_chain_mixing(process, seed=config.seed, n_steps=10**5)
    kappa0 = max(mixing_fit.kappa0, 1e-6)
    kappa1 = max(mixing_fit.kappa1, 1e-6)
    gamma_raw = config["gamma"].strip()
    if gamma_raw:
        gamma = float(gamma_raw)
    else:
        cap = min(min(1.0, kappa1) / 2.0, kappa1 / (4.0 * math.log(max(a_grid))))
        gamma = 0.9 * cap / bound_b
    reps = max(config.reps, 100)
    estimates = {}
    for a in a_grid:
        t = _resolve_t(config.t_rule, int(math.floor(a)))
        estimates[a] = empirical_laplace(fspec, process, gamma, a, t, reps, config.seed)
    c_value = calibrate_laplace_constant(
        [estimates[a_min].value], kappa0, kappa1, gamma, bound_b, a_min
    )
    rows, checks = [], []
    all_below = True
    for a in a_grid:
        params = BoundParams(
            kappa0=kappa0, kappa1=kappa1, C=c_value, gamma=gamma, B=bound_b, A=a
        )
        bound_value = laplace_bound(params)
        est = estimates[a]
        all_below &= est.value <= bound_value
        rows.append(
            ("laplace", a, gamma, est.value, est.std_error, bound_value, c_value, config.seed)
        )
    checks.append(Check(name="laplace_domination", passed=bool(all_below),
                        detail=f"C={c_value:.4g} gamma={gamma:.4g}"))
    report = os.path.join(config.output, "laplace_report.csv")
    _write_csv(report, LAPLACE_HEADER, rows)
    return checks, report


FKR_HEADER = [
    "n", "rep_quantile_level", "forecast_error", "f_hat_error", "g_hat_error",
    "undefined_fraction",
]


def run_fkr_suite(config: ExperimentConfig) -> tuple[list[Check], list[str]]:
    summaries = dynamic_forecast_experiment(
        process=config.far1_spec(),
        psi=config.psi_spec(),
        noise_sd=config.noise_sd,
        kernel=kernel_spec(config.kernel_name),
        theta=config.theta,
        n_grid=config.n_grid,
        t_rule=config.t_rule,
        reps=config.reps,
        seed=config.seed,
        grid_size=config.grid_size,
        workers=config.workers,
    )
    rows = []
    for s in summaries:
        rows.append((s.n, 0.5, s.median_error, s.median_f_error, s.median_g_error,
                     s.undefined_fraction))
        rows.append((s.n, 0.9, s.q90_error, s.median_f_error, s.median_g_error,
                     s.undefined_fraction))
    report = os.path.join(config.output, "fkr_report.csv")
    _write_csv(report, FKR_HEADER, rows)
    medians = [s.median_error for s in summaries]
    f_errors = [s.median_f_error for s in summaries]
    checks = [
        Check(
            name="forecast_error_decreases",
            passed=len(medians) < 2 or medians[-1] < medians[0],
            detail=f"median@{summaries[0].n}={medians[0]:.4g} "
                   f"median@{summaries[-1].n}={medians[-1]:.4g}",
        ),
        Check(
            name="f_hat_error_decreases",
            passed=all(b < a for a, b in zip(f_errors, f_errors[1:])),
        ),
        Check(
            name="undefined_fraction_below_10pct",
            passed=all(s.undefined_fraction < 0.1 for s in summaries),
        ),
    ]
    return checks, [report]


def run_verify_all_suite(config: ExperimentConfig) -> tuple[list[Check], list[str]]:
    rows, checks = _mixing_rows(config)
    seed = config.seed

    rng = rng_for(seed, salt=0x7E57)
    values = np.concatenate([
        rng.normal(0.0, 1.0, 40_000),
        rng.normal(0.0, 1e6, 30_000),
        rng.uniform(-2.0, 2.0, 30_000),
    ])
    levels = rng.choice(np.array([0.5, 1.0, 1.0 + 2.0**-52, 3.7]), size=values.size)
    mismatches = sum(
        1
        for v, b in zip(values, levels)
        if (lambda tr: tr.plus + tr.zero + tr.minus != v)(truncate(float(v), float(b)))
    )
    rows.append(("truncate_reconstruction", float(mismatches), 0.0, mismatches == 0, seed))
    checks.append(Check(name="truncate_reconstruction", passed=mismatches == 0))

    m_lin = m_constant(kernel_spec("downslope-linear"), lambda s: s)
    m_sq = m_constant(kernel_spec("downslope-linear"), lambda s: s**2)
    for name, got, want in (
        ("m_constant_tau_linear", m_lin, 1.5),
        ("m_constant_tau_square", m_sq, 4.0 / 3.0),
    ):
        holds = abs(got - want) <= 1e-6
        rows.append((name, got, want, holds, seed))
        checks.append(Check(name=name, passed=holds))

    grid = uniform_grid(5)
    dists = np.array([0.1, 0.2, 0.9, 1.5, 2.0])
    training = FunctionalPath(
        grid=grid,
        curves=dists[:, None] * np.ones((1, 5)),
        responses=np.array([1.0, 2.0, 3.0, 4.0, 5.0]),
    )
    fit = RegressionFit(
        kernel=kernel_spec("downslope-linear"), bandwidth=1.0, training=training,
        reference_curves=np.linspace(0.0, 2.0, 12)[:, None] * np.ones((1, 5)),
    )
    nw = nadaraya_watson(fit, np.zeros(5))
    holds = nw.defined and abs(nw.psi_hat - 8.8 / 4.8) <= 1e-12
    rows.append(("nadaraya_watson_hand_example", nw.psi_hat, 8.8 / 4.8, holds, seed))
    checks.append(Check(name="nadaraya_watson_hand_example", passed=holds))

    ns = list(range(16, 400, 7))
    bounds = [
        corollary_bound(BoundParams(a1=1.0, a2=0.5, B=1.0, epsilon=0.2, n=n)) for n in ns
    ]
    holds = all(b < a for a, b in zip(bounds, bounds[1:]))
    rows.append(("corollary_bound_decreasing", float(not holds), 0.0, holds, seed))
    checks.append(Check(name="corollary_bound_decreasing", passed=holds))

    report = os.path.join(config.output, "verify_report.csv")
    _write_csv(report, MIXING_HEADER, rows)
    return checks, [report]


_SUITE_RUNNERS = {
    "mixing": run_mixing_suite,
    "concentration": run_concentration_suite,
    "fkr": run_fkr_suite,
    "verify-all": run_verify_all_suite,
}


def run_suite(config: ExperimentConfig) -> SuiteResult:
    """Run one suite: write reports and a manifest, return checks + exit code."""
    os.makedirs(config.output, exist_ok=True)
    checks, reports = _SUITE_RUNNERS[config.suite](config)
    manifest = os.path.join(config.output, f"{config.suite.replace('-', '_')}_manifest.json")
    _write_manifest(manifest, config, checks, reports)
    exit_code = 0 if all(c.passed for c in checks) else 1
    return SuiteResult(
        exit_code=exit_code,
        checks=tuple(checks),
        report_paths=tuple(reports),
        manifest_path=manifest,
    )


PLOTDATA_HEADER = ["series", "x", "y", "y_lo", "y_hi"]


def emit_plotdata(report_path: str, kind: str, output_path: str) -> None:
    """Tidy a wide suite report into long-format (series, x, y, y_lo, y_hi)."""
    try:
        with open(report_path, encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read report {report_path}: {exc}") from exc
    if not lines:
        raise ConfigError(f"report {report_path} is empty")
    header = lines[0].split(",")
    body = [ln.split(",") for ln in lines[1:]]
    out_rows: list[tuple] = []
    if kind == "concentration":
        if header != CONCENTRATION_HEADER:
            raise ConfigError(
                f"report schema mismatch: expected {CONCENTRATION_HEADER}, got {header}"
            )
        for cells in body:
            n = float(cells[1])
            eps = cells[2]
            p_hat, ci = float(cells[4]), float(cells[5])
            x = n / (math.log(n) * math.log(math.log(n)))
            out_rows.append((f"eps={eps}", x, p_hat, p_hat - ci, p_hat + ci))
    elif kind == "fkr":
        if header != FKR_HEADER:
            raise ConfigError(f"report schema mismatch: expected {FKR_HEADER}, got {header}")
        for cells in body:
            if float(cells[1]) != 0.5:
                continue
            n = float(cells[0])
            for series, idx in (("forecast_error", 2), ("f_hat_error", 3), ("g_hat_error", 4)):
                y = float(cells[idx])
                out_rows.append((series, n, y, y, y))
    else:
        raise ConfigError(f"unsupported plotdata kind {kind!r}")
    _write_csv(output_path, PLOTDATA_HEADER, out_rows)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="betamix",
        description="Mixing-coefficient oracles, deviation bounds, and "
                    "functional kernel regression experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a key = value config file")
    common.add_argument("--seed", help="master seed (overrides config)")
    common.add_argument("--reps", help="MC replications (overrides config)")
    common.add_argument("--output", help="report directory (overrides config)")
    common.add_argument("--workers", help="worker processes (overrides config)")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override any config key (repeatable)",
    )
    for suite in ("mixing", "concentration", "fkr", "verify-all"):
        sub.add_parser(suite, parents=[common], help=f"run the {suite} suite")

    plot = sub.add_parser("plotdata", help="tidy a suite report for plotting")
    plot.add_argument("report", help="path to a suite report CSV")
    plot.add_argument("--kind", required=True, choices=["concentration", "fkr"])
    plot.add_argument("--output", required=True, help="output CSV path")
    return parser


def _overrides_from_args(args) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for pair in args.set:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    for flag in ("seed", "reps", "output", "workers"):
        value = getattr(args, flag)
        if value is not None:
            overrides[flag] = value
    return overrides


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "plotdata":
            emit_plotdata(args.report, args.kind, args.output)
            return 0
        mapping = load_config_file(args.config) if args.config else {}
        overrides = _overrides_from_args(args)
        overrides["suite"] = args.command
        config = resolve_config(mapping, overrides)
        result = run_suite(config)
        for check in result.checks:
            status = "PASS" if check.passed else "FAIL"
            detail = f" ({check.detail})" if check.detail else ""
            print(f"[check] {check.name}: {status}{detail}")
        if result.exit_code != 0:
            failing = [c.name for c in result.checks if not c.passed]
            print(f"FAILED checks: {', '.join(failing)}", file=sys.stderr)
        return result.exit_code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BetamixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
