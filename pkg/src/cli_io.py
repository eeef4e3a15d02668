#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from cryptography.hazmat.primitives import hashes

from analytics import Profile, density_f_t, heat_profile, moment_f, rho, rho_support
from parallel_processing import ParallelProcessor
from stats import (ConvergenceReport, hydro_scan, ks_distance_to_limit, laplace_check, lln_table,
                   local_equilibrium_scan, product_poisson_check)
from utils import floor_int, version_string
from walk_core import (CoinTag, averaged_kernel, check_unitarity, evolve, from_localized,
                       position_distribution)

logger = logging.getLogger(__name__)

COMMANDS = ("evolve", "kernel", "lln", "local-eq", "hydro", "laplace", "heat", "product-poisson")
SCAN_COMMANDS = ("lln", "local-eq", "hydro")
PROFILE_COMMANDS = ("local-eq", "hydro", "laplace", "heat", "product-poisson")
OUTPUT_FORMATS = ("csv", "json")

EXIT_PASS = 0
EXIT_CRITERION_FAILED = 1
EXIT_INVALID_INPUT = 2

EVENNESS_TOLERANCE = 1e-12
DIGEST_SUFFIX = ".sha256"


@dataclass
class ExperimentConfig:
    """Validated view of one experiment run; `resolved` keeps the full merged config."""
    command: str
    n: int
    n_list: List[int]
    t: float
    x: float
    site: int
    coin: CoinTag
    steps: int
    replicas: int
    seed: int
    profile_path: Optional[str]
    test_fn_path: Optional[str]
    lam: Dict[int, float]
    probe_offsets: List[int]
    grid_points: int
    tolerances: Dict[str, float]
    output_path: str
    output_format: str
    write_digest: bool = False
    resolved: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> 'ExperimentConfig':
        """
        Validate a merged configuration dictionary.

        Raises:
            ValueError: on any missing or out-of-range setting
        """
        experiment = _as_mapping(config.get("experiment", {}), "experiment")
        output = _as_mapping(config.get("output", {}), "output")
        command = experiment.get("command")
        if command not in COMMANDS:
            raise ValueError(f"Unknown command {command!r}; expected one of {', '.join(COMMANDS)}")

        t = _as_float(experiment.get("t", 1.0), "t")
        if not t > 0:
            raise ValueError(f"Time must be positive, got t = {t}")
        n = _as_int(experiment.get("n", 0), "n")
        if n < 0:
            raise ValueError(f"n must be nonnegative, got {n}")
        steps = _as_int(experiment.get("steps", 0), "steps")
        if steps < 0:
            raise ValueError(f"steps must be nonnegative, got {steps}")
        replicas = _as_int(experiment.get("replicas", 1), "replicas")
        if replicas < 1:
            raise ValueError(f"replicas must be at least 1, got {replicas}")

        n_list = [_as_int(v, "n_list entry")
                  for v in _as_list(experiment.get("n_list", []), "n_list")]
        if command in SCAN_COMMANDS:
            if len(n_list) < 2:
                raise ValueError(f"Command {command} needs an n_list with at least two entries")
            if n_list[0] < 1 or any(b <= a for a, b in zip(n_list, n_list[1:])):
                raise ValueError(f"n_list must be positive and strictly increasing, got {n_list}")
        if command in ("laplace", "product-poisson") and n < 1:
            raise ValueError(f"Command {command} needs n >= 1, got {n}")

        tolerances = {k: _as_float(v, f"tolerance {k}")
                      for k, v in _as_mapping(config.get("tolerances", {}), "tolerances").items()}
        for name, value in tolerances.items():
            if not value > 0:
                raise ValueError(f"Tolerance {name} must be positive, got {value}")

        profile_path = experiment.get("profile_path")
        if profile_path is not None and not isinstance(profile_path, str):
            raise ValueError(f"profile_path must be a string, got {profile_path!r}")
        if command in PROFILE_COMMANDS and not profile_path:
            raise ValueError(f"Command {command} needs experiment.profile_path")
        test_fn_path = experiment.get("test_fn_path")
        if test_fn_path is not None and not isinstance(test_fn_path, str):
            raise ValueError(f"test_fn_path must be a string, got {test_fn_path!r}")
        if command == "hydro" and not test_fn_path:
            raise ValueError("Command hydro needs experiment.test_fn_path")

        lam = {_as_int(k, "lambda site"): _as_float(v, f"lambda[{k}]")
               for k, v in _as_mapping(experiment.get("lambda", {}), "lambda").items()}
        if command == "laplace" and not lam:
            raise ValueError("Command laplace needs a nonempty experiment.lambda map")
        probe_offsets = [_as_int(v, "probe offset")
                         for v in _as_list(experiment.get("probe_offsets", [0]), "probe_offsets")]
        if command == "product-poisson" and not probe_offsets:
            raise ValueError("Command product-poisson needs at least one probe offset")
        grid_points = _as_int(experiment.get("grid_points", 81), "grid_points")
        if grid_points < 2:
            raise ValueError(f"grid_points must be at least 2, got {grid_points}")

        output_format = str(output.get("format", "csv")).lower()
        if output_format not in OUTPUT_FORMATS:
            raise ValueError(f"Unknown output format {output_format!r}")

        x = _as_float(experiment.get("x", 0.0), "x")
        return cls(command=command, n=n, n_list=n_list, t=t, x=x,
                   site=_as_int(experiment.get("site", 0), "site"),
                   coin=CoinTag.parse(experiment.get("coin", "PLUS")), steps=steps,
                   replicas=replicas, seed=_as_int(experiment.get("seed", 0), "seed"),
                   profile_path=profile_path, test_fn_path=test_fn_path, lam=lam,
                   probe_offsets=probe_offsets, grid_points=grid_points, tolerances=tolerances,
                   output_path=str(output.get("path", "output.csv")), output_format=output_format,
                   write_digest=bool(output.get("write_digest", False)), resolved=config)

    def tolerance(self, name: str, default: float) -> float:
        return self.tolerances.get(name, default)


def _as_float(value: Any, name: str) -> float:
    if isinstance(value, bool):
        raise ValueError(f"{name} must be a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a number, got {value!r}") from None


def _as_int(value: Any, name: str) -> int:
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    number = _as_float(value, name)
    if not number.is_integer():
        raise ValueError(f"{name} must be an integer, got {value!r}")
    return int(number)


def _as_mapping(value: Any, name: str) -> Dict[str, Any]:
    if not isinstance(value, dict):
        raise ValueError(f"{name} must be an object, got {type(value).__name__}")
    return value


def _as_list(value: Any, name: str) -> List[Any]:
    if not isinstance(value, list):
        raise ValueError(f"{name} must be a list, got {type(value).__name__}")
    return value


@dataclass
class Table:
    columns: List[str]
    rows: List[Sequence[Any]]


@dataclass
class CommandResult:
    """Tables and verdict of one command; `main` goes to the output path."""
    main: Table
    verdict: Dict[str, Any]
    passed: bool
    extra_tables: Dict[str, Table] = field(default_factory=dict)


def load_profile(path: str) -> Profile:
    """
    Read a profile from a text table of `x value` pairs, one knot per line.

    Blank lines and `#` comments are skipped.

    Raises:
        ValueError: with the offending line number on malformed or negative entries
    """
    knots, values = [], []
    with open(path, 'r') as f:
        for lineno, line in enumerate(f, start=1):
            text = line.split('#', 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'x value', got {text!r}")
            try:
                x, value = float(parts[0]), float(parts[1])
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from e
            if value < 0:
                raise ValueError(f"{path}:{lineno}: negative profile value {value}")
            knots.append(x)
            values.append(value)
    try:
        return Profile(knots=np.array(knots), values=np.array(values))
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from e


def write_profile(profile: Profile, path: str) -> None:
    """Write a profile so that load_profile reads it back exactly."""
    with open(path, 'w') as f:
        f.write("# x value\n")
        for x, value in zip(profile.knots, profile.values):
            f.write(f"{float(x)!r} {float(value)!r}\n")


def _run_evolve(cfg: ExperimentConfig, processor: ParallelProcessor) -> CommandResult:
    state = evolve(from_localized(cfg.site, cfg.coin), cfg.steps)
    drift = check_unitarity(state, cfg.tolerance("unitarity", 1e-9))
    dist = position_distribution(state)
    rows = [(site, prob) for site, prob in dist.as_dict().items()]
    return CommandResult(Table(["site", "probability"], rows),
                         {"unitarity_drift": drift, "passed": True}, True)


def _run_kernel(cfg: ExperimentConfig, processor: ParallelProcessor) -> CommandResult:
    kernel = averaged_kernel(cfg.n)
    evenness = float(np.max(np.abs(kernel.probs - kernel.probs[::-1])))
    drift = abs(1.0 - kernel.total())
    passed = evenness <= EVENNESS_TOLERANCE and drift <= cfg.tolerance("unitarity", 1e-9)
    rows = [(site, prob) for site, prob in kernel.as_dict().items()]
    return CommandResult(Table(["site", "probability"], rows),
                         {"evenness": evenness, "unitarity_drift": drift, "passed": passed}, passed)


def _run_lln(cfg: ExperimentConfig, processor: ParallelProcessor) -> CommandResult:
    ks_values, second_moments = [], []
    for n in cfg.n_list:
        kernel = averaged_kernel(n)
        ks_values.append(ks_distance_to_limit(kernel, n))
        second_moments.append(float(np.dot((kernel.sites / n) ** 2, kernel.probs)))
        logger.info(f"LLN n={n}: KS distance {ks_values[-1]:.6f}")
    report = ConvergenceReport.from_values(cfg.n_list, ks_values, "ks_distance",
                                           extras={"second_moment": second_moments})
    bound = cfg.tolerance("ks_bound", 0.03)
    passed = report.strictly_decreasing() and report.metric_values[-1] <= bound
    verdict = dict(report.verdict(), ks_bound=bound, limit_second_moment=moment_f(2.0),
                   passed=passed)
    density = Table(["x", "rescaled_pmf", "density_f"], lln_table(cfg.n_list[-1]))
    return CommandResult(_report_table(report), verdict, passed, {"density": density})


def _run_local_eq(cfg: ExperimentConfig, processor: ParallelProcessor) -> CommandResult:
    profile = load_profile(cfg.profile_path)
    report = local_equilibrium_scan(profile, cfg.t, cfg.x, cfg.n_list, cfg.replicas, cfg.seed,
                                    processor)
    threshold = cfg.tolerance("tv_threshold", 0.01)
    passed = report.monotone_trend
    verdict = dict(report.verdict(), tv_threshold=threshold,
                   below_threshold=bool(report.metric_values[-1] <= threshold),
                   t=cfg.t, x=cfg.x, passed=passed)
    return CommandResult(_report_table(report), verdict, passed)


def _run_hydro(cfg: ExperimentConfig, processor: ParallelProcessor) -> CommandResult:
    profile = load_profile(cfg.profile_path)
    test_fn = load_profile(cfg.test_fn_path)
    report = hydro_scan(profile, test_fn, cfg.t, cfg.n_list, cfg.replicas, cfg.seed, processor)
    target = report.extras["target"][-1]
    sigma = cfg.tolerance("sigma_multiplier", 3.0)
    allowed = cfg.tolerance("hydro_relative", 0.05) * abs(target)
    passed = bool(report.metric_values[-1] <= allowed)
    verdict = dict(report.verdict(), target=target, allowed_error=allowed,
                   stderr=report.stderrs[-1])
    if cfg.replicas > 1:
        std = report.extras["replica_std"][-1]
        exact_std = report.extras["exact_std"][-1]
        stderr = std / np.sqrt(2.0 * (cfg.replicas - 1))
        std_passed = bool(abs(std - exact_std) <= sigma * stderr)
        verdict["std_check"] = {"std": std, "exact_std": exact_std, "stderr": float(stderr),
                                "passed": std_passed}
        passed = passed and std_passed
    verdict["passed"] = passed
    return CommandResult(_report_table(report), verdict, passed)


def _run_laplace(cfg: ExperimentConfig, processor: ParallelProcessor) -> CommandResult:
    profile = load_profile(cfg.profile_path)
    steps = floor_int(cfg.t * cfg.n)
    result = laplace_check(profile, cfg.n, steps, cfg.lam, cfg.replicas, cfg.seed, processor,
                           cfg.tolerance("laplace_sigma", 3.0))
    row = (cfg.n, steps, result["exact"], result["monte_carlo"], result["stderr"], result["gap"])
    table = Table(["n", "steps", "exact", "monte_carlo", "stderr", "gap"], [row])
    verdict = dict(result, lam={str(k): v for k, v in sorted(cfg.lam.items())})
    return CommandResult(table, verdict, result["passed"])


def _run_heat(cfg: ExperimentConfig, processor: ParallelProcessor) -> CommandResult:
    profile = load_profile(cfg.profile_path)
    lo, hi = rho_support(profile, cfg.t)
    margin = 0.5 * (hi - lo)
    rows, outside_zero, heat_positive = [], True, True
    for x in np.linspace(lo - margin, hi + margin, cfg.grid_points):
        x = float(x)
        rho_value = rho(profile, cfg.t, x)
        heat_value = heat_profile(profile, cfg.t, x)
        if (x < lo or x > hi) and rho_value != 0.0:
            outside_zero = False
        if heat_value <= 0.0:
            heat_positive = False
        rows.append((x, rho_value, heat_value))
    passed = outside_zero and (heat_positive or profile.is_zero())
    verdict = {"rho_support": [lo, hi], "rho_zero_outside_support": outside_zero,
               "heat_positive": heat_positive, "passed": passed}
    kernel_rows = [(float(x), density_f_t(cfg.t, float(x)))
                   for x in np.linspace(lo - margin, hi + margin, cfg.grid_points)]
    return CommandResult(Table(["x", "rho", "heat"], rows), verdict, passed,
                         {"kernel": Table(["x", "density_f_t"], kernel_rows)})


def _run_product_poisson(cfg: ExperimentConfig, processor: ParallelProcessor) -> CommandResult:
    profile = load_profile(cfg.profile_path)
    steps = floor_int(cfg.t * cfg.n)
    center = floor_int(cfg.x * cfg.n)
    result = product_poisson_check(profile, cfg.n, steps, center, cfg.probe_offsets,
                                   cfg.replicas, cfg.seed, processor,
                                   cfg.tolerance("tv_threshold", 0.01),
                                   cfg.tolerance("sigma_multiplier", 3.0))
    rows = [(p["site"], p["intensity_B"], p["tv"], p["passed"]) for p in result["probes"]]
    covariance = result["covariance"]
    verdict = {"n": cfg.n, "steps": steps, "center_site": center, "passed": result["passed"]}
    if covariance is not None:
        verdict["covariance"] = {"covariance": covariance.covariance, "stderr": covariance.stderr,
                                 "passed": covariance.passed}
    return CommandResult(Table(["site", "intensity_B", "tv", "passed"], rows), verdict,
                         result["passed"])


DISPATCH = {
    "evolve": _run_evolve,
    "kernel": _run_kernel,
    "lln": _run_lln,
    "local-eq": _run_local_eq,
    "hydro": _run_hydro,
    "laplace": _run_laplace,
    "heat": _run_heat,
    "product-poisson": _run_product_poisson,
}


def _report_table(report: ConvergenceReport) -> Table:
    extra_names = list(report.extras)
    columns = ["n", report.metric_name, "stderr"] + extra_names
    rows = []
    for i, (n, value, stderr) in enumerate(report.to_rows()):
        rows.append([n, value, stderr] + [report.extras[name][i] for name in extra_names])
    return Table(columns, rows)


def _plain(value: Any) -> Any:
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _provenance(cfg: ExperimentConfig) -> Dict[str, Any]:
    return {"version": version_string(), "command": cfg.command, "config": cfg.resolved}


def _sidecar_path(path: Path, name: str) -> Path:
    return path.with_name(f"{path.stem}.{name}{path.suffix}")


def _write_csv(path: Path, table: Table, provenance: Dict, verdict: Optional[Dict]) -> None:
    with open(path, 'w', newline='') as f:
        f.write(f"# version: {provenance['version']}\n")
        f.write(f"# command: {provenance['command']}\n")
        f.write(f"# config: {json.dumps(provenance['config'], sort_keys=True)}\n")
        if verdict is not None:
            f.write(f"# verdict: {json.dumps(verdict, sort_keys=True, default=_plain)}\n")
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([_plain(v) for v in row])


def _write_json(path: Path, table: Table, provenance: Dict, verdict: Optional[Dict]) -> None:
    document = {
        "provenance": provenance,
        "columns": table.columns,
        "rows": [[_plain(v) for v in row] for row in table.rows],
    }
    if verdict is not None:
        document["verdict"] = verdict
    with open(path, 'w') as f:
        json.dump(document, f, indent=2, sort_keys=True, default=_plain)
        f.write("\n")


def write_result(cfg: ExperimentConfig, result: CommandResult) -> List[Path]:
    """Write the main table (with verdict) and any extra tables next to it."""
    writer = _write_json if cfg.output_format == "json" else _write_csv
    provenance = _provenance(cfg)
    path = Path(cfg.output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    writer(path, result.main, provenance, result.verdict)
    written = [path]
    for name, table in result.extra_tables.items():
        extra = _sidecar_path(path, name)
        writer(extra, table, provenance, None)
        written.append(extra)
    if cfg.write_digest:
        for p in list(written):
            write_digest(p)
    return written


def file_digest(path: Path) -> str:
    """SHA-256 of a file's bytes, hex encoded."""
    digest = hashes.Hash(hashes.SHA256())
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(65536), b''):
            digest.update(chunk)
    return digest.finalize().hex()


def write_digest(path: Path) -> Path:
    """Store the digest as `<file>.sha256` in sha256sum format."""
    path = Path(path)
    digest_path = path.with_name(path.name + DIGEST_SUFFIX)
    with open(digest_path, 'w') as f:
        f.write(f"{file_digest(path)}  {path.name}\n")
    logger.debug(f"Wrote digest {digest_path}")
    return digest_path


def verify_output(path: str) -> bool:
    """
    Recompute an output's digest and compare it with its sidecar.

    Raises:
        FileNotFoundError: if the file or its sidecar is missing
    """
    path = Path(path)
    digest_path = path.with_name(path.name + DIGEST_SUFFIX)
    with open(digest_path, 'r') as f:
        expected = f.read().split()[0]
    matches = file_digest(path) == expected
    if not matches:
        logger.warning(f"Digest mismatch for {path}")
    return matches


def run(cfg: ExperimentConfig, processor: Optional[ParallelProcessor] = None) -> int:
    """
    Execute one experiment and write its outputs.

    Returns:
        EXIT_PASS, EXIT_CRITERION_FAILED or EXIT_INVALID_INPUT
    """
    processor = processor or ParallelProcessor.from_config(cfg.resolved)
    logger.info(f"Running {cfg.command} (seed {cfg.seed})")
    try:
        result = DISPATCH[cfg.command](cfg, processor)
    except ArithmeticError as e:
        return _fail(EXIT_CRITERION_FAILED, f"{cfg.command}: {e}")
    except (ValueError, OSError, MemoryError) as e:
        return _fail(EXIT_INVALID_INPUT, f"{cfg.command}: {e}")

    try:
        written = write_result(cfg, result)
    except OSError as e:
        return _fail(EXIT_INVALID_INPUT, f"Cannot write output: {e}")
    logger.info(f"Wrote {', '.join(str(p) for p in written)}")

    if not result.passed:
        details = json.dumps(result.verdict, default=_plain)
        return _fail(EXIT_CRITERION_FAILED, f"{cfg.command}: criterion failed: {details}")
    logger.info(f"{cfg.command}: all criteria met")
    return EXIT_PASS


def run_config(config: Dict[str, Any], processor: Optional[ParallelProcessor] = None) -> int:
    """Validate a merged configuration dictionary and run it."""
    try:
        cfg = ExperimentConfig.from_dict(config)
    except ValueError as e:
        return _fail(EXIT_INVALID_INPUT, f"Invalid configuration: {e}")
    return run(cfg, processor)


def _fail(code: int, message: str) -> int:
    logger.error(message)
    print(message, file=sys.stderr)
    return code
