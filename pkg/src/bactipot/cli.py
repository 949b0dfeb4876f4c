"""Command-line front end.

Subcommands::

    simulate     trajectories of the branching process (CSV)
    synth        synthetic Ct dataset for a dose-response experiment (CSV)
    fit          full pipeline fit of a Ct dataset (JSON)
    mc-study     Monte Carlo estimator validation (JSON)
    design-eval  asymptotic variances for candidate designs (CSV)
    curve        tabulated dose-response curve (CSV)

Concentration grids accept ``2^k`` power notation alongside plain decimals,
e.g. ``--grid "2^-6,2^-4,2^-2"``. The master seed comes from ``--seed``,
falling back to the BACTIPOT_SEED environment variable, then 0; stochastic
subcommands log the effective seed to stderr so piped CSV stays clean.

Exit status: 0 on success, 1 on data errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
from datetime import datetime, timezone
from typing import IO, Sequence

from .branching import GrowthParams, OffspringDistribution, dist_from_mean, simulate
from .errors import BactipotError
from .harness import (
    McStudyConfig,
    PipelineConfig,
    emit_curve,
    evaluate_designs,
    fit_dataset,
    log_spaced_grid,
    run_mc_study,
)
from .measurement import MeasurementConfig, read_dataset, simulate_experiment, write_dataset
from .seeding import spawn_rng

_POWER = re.compile(r"^([+-]?\d+(?:\.\d+)?)\^([+-]?\d+(?:\.\d+)?)$")


class UsageError(Exception):
    """Bad flag values; maps to exit status 2."""


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"bactipot: usage error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"bactipot: usage error: --input file not found: {exc.filename}", file=sys.stderr)
        return 2
    except (BactipotError, OSError) as exc:
        print(f"bactipot: error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bactipot",
        description="Branching-process dose-response modeling and MIC estimation.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="simulate branching-process trajectories")
    group = p.add_argument_group("offspring distribution (either --m or --p0/--p1/--p2)")
    group.add_argument("--m", type=float, help="offspring mean for the death-or-divide rule")
    group.add_argument("--p0", type=float, help="death probability")
    group.add_argument("--p1", type=float, help="survive-as-one probability")
    group.add_argument("--p2", type=float, help="divide-in-two probability")
    p.add_argument("--x0", type=int, default=1, help="initial live cells (default 1)")
    p.add_argument("--gens", type=int, default=10, help="generations (default 10)")
    p.add_argument("--reps", type=int, default=1, help="replicate trajectories (default 1)")
    _add_common(p)
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("synth", help="synthesize a Ct dataset")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--grid", required=True, help="comma-separated concentrations")
    p.add_argument("--a", type=float, default=0.0, help="calibration constant (default 0)")
    p.add_argument("--sigma-eps", type=float, default=0.2, help="Ct noise s.d. (default 0.2)")
    p.add_argument("--x0", type=int, default=10_000)
    p.add_argument("--gens", type=int, default=10)
    p.add_argument("--reps", type=int, default=3, help="replicates per concentration")
    p.add_argument(
        "--untreated-lane",
        default=None,
        help="sentinel concentration for an antibiotic-free control lane",
    )
    _add_common(p)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("fit", help="fit a Ct dataset end to end")
    p.add_argument("--input", required=True, help="dataset CSV path, or - for stdin")
    p.add_argument("--high-c", required=True, help="growth-suppressed threshold concentration")
    p.add_argument("--low-c", required=True, help="free-growth lane concentration")
    p.add_argument(
        "--fit-c",
        default="auto",
        help='regression lanes: "auto" or an explicit comma-separated list',
    )
    p.add_argument("--x0", type=int, required=True)
    _add_common(p)
    p.set_defaults(handler=_cmd_fit)

    p = sub.add_parser("mc-study", help="Monte Carlo estimator validation")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--sigma-eps", type=float, default=0.2)
    p.add_argument("--x0", type=int, default=10_000)
    p.add_argument("--gens", type=int, default=10)
    p.add_argument("--reps", type=int, default=3, help="replicates per concentration")
    p.add_argument("--measurements", type=int, default=1000, help="study repetitions")
    p.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker processes (default: available parallelism)",
    )
    _add_common(p)
    p.set_defaults(handler=_cmd_mc_study)

    p = sub.add_parser("design-eval", help="rank concentration designs analytically")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--gens", type=int, default=10)
    p.add_argument("--sigma-eps", type=float, default=0.2)
    p.add_argument(
        "--designs",
        action="append",
        required=True,
        help="design grid; repeat the flag or separate designs with ';'",
    )
    _add_common(p)
    p.set_defaults(handler=_cmd_design_eval)

    p = sub.add_parser("curve", help="tabulate a dose-response curve")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--range", required=True, help="concentration span LOW:HIGH")
    p.add_argument("--points", type=int, default=200, help="log-spaced points (default 200)")
    _add_common(p)
    p.set_defaults(handler=_cmd_curve)

    return parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (env BACTIPOT_SEED, then 0)")
    p.add_argument("-o", "--output", default="-", help="output path (default stdout)")
    p.add_argument("--pretty", action="store_true", help="human-readable table output")
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp from JSON output")


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_simulate(args: argparse.Namespace) -> int:
    dist = _offspring_from_args(args)
    seed = _effective_seed(args)
    _log_seed(seed)
    with _out_stream(args.output) as out:
        writer = csv.writer(out, lineterminator="\n")
        if args.reps == 1:
            writer.writerow(["generation", "alive", "dead", "total"])
            for state in simulate(args.x0, dist, args.gens, spawn_rng(seed, 0)):
                writer.writerow([state.generation, state.alive, state.dead, state.total])
        else:
            writer.writerow(["replicate", "alive", "dead", "total"])
            for rep in range(args.reps):
                final = simulate(args.x0, dist, args.gens, spawn_rng(seed, rep))[-1]
                writer.writerow([rep + 1, final.alive, final.dead, final.total])
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    grid = _parse_grid(args.grid, "--grid")
    sentinel = None
    if args.untreated_lane is not None:
        sentinel = _parse_number(args.untreated_lane, "--untreated-lane")
    seed = _effective_seed(args)
    _log_seed(seed)
    config = MeasurementConfig(
        a=args.a,
        sigma_eps=args.sigma_eps,
        x0=args.x0,
        n_generations=args.gens,
        replicates=args.reps,
    )
    dataset = simulate_experiment(
        GrowthParams(args.alpha, args.beta),
        grid,
        config,
        spawn_rng(seed),
        untreated_lane=sentinel,
    )
    with _out_stream(args.output) as out:
        write_dataset(dataset, out)
    return 0


def _cmd_fit(args: argparse.Namespace) -> int:
    fit_c = None
    if args.fit_c != "auto":
        fit_c = tuple(_parse_grid(args.fit_c, "--fit-c"))
    pipeline = PipelineConfig(
        high_c_threshold=_parse_number(args.high_c, "--high-c"),
        low_c_choice=_parse_number(args.low_c, "--low-c"),
        x0=args.x0,
        fit_concentrations=fit_c,
    )
    if args.input == "-":
        dataset = read_dataset(sys.stdin)
    else:
        dataset = read_dataset(args.input)
    result = fit_dataset(dataset, pipeline)
    payload = {"meta": _meta(args, seed=None), **result.to_dict()}
    with _out_stream(args.output) as out:
        json.dump(payload, out, indent=2)
        out.write("\n")
    return 0


def _cmd_mc_study(args: argparse.Namespace) -> int:
    grid = _parse_grid(args.grid, "--grid")
    seed = _effective_seed(args)
    _log_seed(seed)
    workers = args.threads if args.threads is not None else (os.cpu_count() or 1)
    if workers < 1:
        raise UsageError(f"--threads must be >= 1, got {workers}")
    config = McStudyConfig(
        params=GrowthParams(args.alpha, args.beta),
        grid=tuple(grid),
        measurement=MeasurementConfig(
            a=0.0,
            sigma_eps=args.sigma_eps,
            x0=args.x0,
            n_generations=args.gens,
            replicates=args.reps,
        ),
        n_measurements=args.measurements,
        seed=seed,
    )
    report = run_mc_study(config, workers=workers)
    with _out_stream(args.output) as out:
        if args.pretty:
            _print_mc_table(report, out)
        else:
            json.dump({"meta": _meta(args, seed=seed), **report.to_dict()}, out, indent=2)
            out.write("\n")
    return 0


def _cmd_design_eval(args: argparse.Namespace) -> int:
    designs = []
    for chunk in args.designs:
        for item in chunk.split(";"):
            if item.strip():
                designs.append(tuple(_parse_grid(item, "--designs")))
    if not designs:
        raise UsageError("--designs named no design")
    rows = evaluate_designs(
        designs, GrowthParams(args.alpha, args.beta), args.gens, args.sigma_eps
    )
    with _out_stream(args.output) as out:
        if args.pretty:
            _print_design_table(rows, out)
            return 0
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(
            ["design", "sigma2_alpha", "sigma_alphabeta", "sigma2_beta", "sigma2_theta", "status"]
        )
        for row in rows:
            design_text = " ".join(repr(c) for c in row.design)
            if row.singular:
                writer.writerow([design_text, "", "", "", "", "singular"])
            else:
                cov = row.covariance
                writer.writerow(
                    [
                        design_text,
                        repr(cov.sigma2_alpha),
                        repr(cov.sigma_alphabeta),
                        repr(cov.sigma2_beta),
                        repr(cov.sigma2_theta),
                        "best" if row.best else "ok",
                    ]
                )
    return 0


def _cmd_curve(args: argparse.Namespace) -> int:
    low, high = _parse_range(args.range, "--range")
    if args.points < 2:
        raise UsageError(f"--points must be >= 2, got {args.points}")
    rows = emit_curve(
        GrowthParams(args.alpha, args.beta), log_spaced_grid(low, high, args.points)
    )
    with _out_stream(args.output) as out:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["concentration", "offspring_mean"])
        for c, m in rows:
            writer.writerow([repr(c), repr(m)])
    return 0


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _offspring_from_args(args: argparse.Namespace) -> OffspringDistribution:
    probs = (args.p0, args.p1, args.p2)
    if args.m is not None:
        if any(p is not None for p in probs):
            raise UsageError("give either --m or --p0/--p1/--p2, not both")
        return dist_from_mean(args.m)
    if any(p is None for p in probs):
        raise UsageError("give either --m or all of --p0, --p1, --p2")
    return OffspringDistribution(*probs)


def _effective_seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    raw = os.environ.get("BACTIPOT_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"BACTIPOT_SEED must be an integer, got {raw!r}") from None


def _log_seed(seed: int) -> None:
    print(f"bactipot: seed={seed}", file=sys.stderr)


def _meta(args: argparse.Namespace, seed: int | None) -> dict:
    meta: dict = {"command": args.subcommand}
    if seed is not None:
        meta["seed"] = seed
    if not args.no_timestamp:
        meta["timestamp"] = datetime.now(timezone.utc).isoformat()
    return meta


def _parse_number(token: str, flag: str) -> float:
    text = token.strip()
    match = _POWER.match(text)
    try:
        if match:
            return float(match.group(1)) ** float(match.group(2))
        return float(text)
    except (ValueError, OverflowError):
        raise UsageError(f"{flag}: cannot parse number {token!r}") from None


def _parse_grid(text: str, flag: str) -> list[float]:
    tokens = [t for t in text.split(",") if t.strip()]
    if not tokens:
        raise UsageError(f"{flag}: empty grid")
    values = [_parse_number(t, flag) for t in tokens]
    if any(v <= 0.0 for v in values):
        raise UsageError(f"{flag}: concentrations must be positive")
    ordered = sorted(values)
    if any(b <= a for a, b in zip(ordered, ordered[1:])):
        raise UsageError(f"{flag}: duplicate concentrations in {text!r}")
    return ordered


def _parse_range(text: str, flag: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise UsageError(f"{flag}: expected LOW:HIGH, got {text!r}")
    low = _parse_number(parts[0], flag)
    high = _parse_number(parts[1], flag)
    if not (0.0 < low < high):
        raise UsageError(f"{flag}: need 0 < LOW < HIGH, got {text!r}")
    return low, high


class _out_stream:
    """Context manager writing to a path or stdout without closing stdout."""

    def __init__(self, target: str):
        self._target = target
        self._handle: IO[str] | None = None

    def __enter__(self) -> IO[str]:
        if self._target == "-":
            return sys.stdout
        self._handle = open(self._target, "w", encoding="utf-8", newline="")
        return self._handle

    def __exit__(self, *exc_info) -> None:
        if self._handle is not None:
            self._handle.close()


def _sig3(value: float) -> str:
    if value == 0.0:
        return "0"
    return f"{value:.3g}"


def _print_design_table(rows, out: IO[str]) -> None:
    header = ("design", "s2_alpha", "s_alphabeta", "s2_beta", "s2_theta", "status")
    table = [header]
    for row in rows:
        design_text = ", ".join(_sig3(c) for c in row.design)
        if row.singular:
            table.append((design_text, "-", "-", "-", "-", "singular"))
        else:
            cov = row.covariance
            table.append(
                (
                    design_text,
                    _sig3(cov.sigma2_alpha),
                    _sig3(cov.sigma_alphabeta),
                    _sig3(cov.sigma2_beta),
                    _sig3(cov.sigma2_theta),
                    "best" if row.best else "",
                )
            )
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    for r in table:
        out.write("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() + "\n")


def _print_mc_table(report, out: IO[str]) -> None:
    theory = report.theoretical
    rows = [
        ("", "mean", "emp var (scaled)", "asymptotic"),
        ("alpha", _sig3(report.mean_alpha), _sig3(report.emp_var_alpha), _sig3(theory.sigma2_alpha)),
        ("beta", _sig3(report.mean_beta), _sig3(report.emp_var_beta), _sig3(theory.sigma2_beta)),
        ("mic", _sig3(report.mean_theta), _sig3(report.emp_var_theta), _sig3(theory.sigma2_theta)),
        ("alpha-beta cov", "", _sig3(report.emp_cov_alphabeta), _sig3(theory.sigma_alphabeta)),
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    for r in rows:
        out.write("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() + "\n")
    out.write(f"measurements: {report.n_measurements}  failures: {report.failures}\n")


if __name__ == "__main__":
    sys.exit(main())
