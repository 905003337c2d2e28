"""Batch front end.

Experiments are described by an INI-style config file (section `[experiment]`
with scalar keys, optional `[noise]` section) and run with

    sacfem --config <path> [--output <dir>] [--workers <k>]
    sacfem --replay <manifest> [--output <dir>] [--workers <k>]

Unknown keys or sections are rejected. Every run writes CSV reports, a flat
sorted `manifest.txt` (including a `config.*` copy of the inputs, so a run
can be replayed bit-for-bit), and `checks.txt` with one PASS/FAIL line per
acceptance check. Exit codes: 0 all checks pass, 1 a check failed, 2 config
error, 3 numerical failure (flagged paths or solver divergence), 4 replay
artifact mismatch.
"""

from __future__ import annotations

import argparse
import configparser
import filecmp
import shutil
import sys
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import fem, mesh as mesh_mod, verify
from .fem import SolverError
from .noise import SIGMA_KINDS

__all__ = ["ExperimentConfig", "ConfigError", "run", "main"]

COMMANDS = (
    "mesh-info", "operators", "converge-smooth", "converge-rough",
    "validate-noise", "ou-validate", "moments",
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    command: str
    levels: tuple = (4, 8, 16)
    reference: int = 32
    paths: int = 32
    p: float = 4.0
    q: float = 4.0
    tau: float = 2.5e-4
    T: float = 0.25
    t_star: float = 0.25
    t_probe: float = 0.0625
    seed: int = 20240501
    scheme: str = "semi-implicit"
    sample_stride: int = 10
    amplitude: float = 1.0
    n: int = 8
    trials: int = 50
    taus: tuple = (4e-3, 2e-3, 1e-3, 5e-4)
    workers: int = 1
    output_dir: str = ""
    dump: bool = False
    rho: float = 1.5
    modes: int = 64
    sigma: str = "sqrt1py2"

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; choose from {COMMANDS}")
        if self.paths < 1:
            raise ConfigError(f"paths must be >= 1, got {self.paths}")
        if self.command in ("converge-smooth", "converge-rough", "moments"):
            if not self.p > 2:
                raise ConfigError(f"p must be > 2, got {self.p}")
            if not self.q > 2:
                raise ConfigError(f"q must be > 2, got {self.q}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.T <= 0:
            raise ConfigError(f"T must be positive, got {self.T}")
        if self.command == "converge-rough":
            if not 0 < self.t_star <= self.T:
                raise ConfigError(f"t_star must lie in (0, T], got {self.t_star}")
            if not 0 < self.t_probe <= self.T:
                raise ConfigError(f"t_probe must lie in (0, T], got {self.t_probe}")
        if any(n < 1 for n in self.levels) or list(self.levels) != sorted(set(self.levels)):
            raise ConfigError(f"levels must be strictly increasing positive integers, got {self.levels}")
        if self.command in ("converge-smooth", "converge-rough") and self.reference <= max(self.levels):
            raise ConfigError(f"reference {self.reference} must exceed the finest level")
        if self.scheme not in ("semi-implicit", "splitting"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.sigma not in SIGMA_KINDS:
            raise ConfigError(f"unknown sigma kind {self.sigma!r}; choose from {SIGMA_KINDS}")
        if self.rho < 1.1:
            raise ConfigError(f"rho must be >= 1.1, got {self.rho}")
        if self.modes < 1:
            raise ConfigError(f"modes must be >= 1, got {self.modes}")
        if self.sample_stride < 1:
            raise ConfigError(f"sample_stride must be >= 1, got {self.sample_stride}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if any(t <= 0 for t in self.taus):
            raise ConfigError(f"taus must be positive, got {self.taus}")
        return self


_INT_KEYS = {"reference", "paths", "seed", "sample_stride", "n", "trials",
             "workers", "modes"}
_FLOAT_KEYS = {"p", "q", "tau", "T", "t_star", "t_probe", "amplitude", "rho"}
_TUPLE_INT_KEYS = {"levels"}
_TUPLE_FLOAT_KEYS = {"taus"}
_BOOL_KEYS = {"dump"}
_NOISE_KEYS = {"rho": "rho", "modes": "modes", "sigma": "sigma"}


def _parse_value(key, raw):
    raw = raw.strip()
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _TUPLE_INT_KEYS:
            return tuple(int(t) for t in raw.split())
        if key in _TUPLE_FLOAT_KEYS:
            return tuple(float(t) for t in raw.split())
        if key in _BOOL_KEYS:
            if raw.lower() in ("1", "yes", "true", "on"):
                return True
            if raw.lower() in ("0", "no", "false", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"could not parse value {raw!r} for key {key!r}")


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case-sensitive (T vs t_star)
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file {path} not found or unreadable")
    known = {f.name for f in fields(ExperimentConfig)} - {"rho", "modes", "sigma"}
    values = {}
    for section in parser.sections():
        if section == "experiment":
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [experiment]")
                values[key] = _parse_value(key, raw)
        elif section == "noise":
            for key, raw in parser.items(section):
                if key not in _NOISE_KEYS:
                    raise ConfigError(f"unknown key {key!r} in [noise]")
                values[_NOISE_KEYS[key]] = _parse_value(key, raw)
        else:
            raise ConfigError(f"unknown section [{section}]")
    if "command" not in values:
        raise ConfigError("missing required key 'command' in [experiment]")
    return ExperimentConfig(**values).validate()


# ---------------------------------------------------------------------------
# artifacts

def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_manifest(path, config: ExperimentConfig, extra: dict):
    entries = {}
    for f in fields(ExperimentConfig):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = " ".join(_fmt(t) for t in v)
        elif isinstance(v, bool):
            v = int(v)
        entries[f"config.{f.name}"] = _fmt(v)
    for k, v in extra.items():
        entries[str(k)] = _fmt(v)
    with open(path, "w") as fh:
        for k in sorted(entries):
            fh.write(f"{k} = {entries[k]}\n")


def read_manifest(path) -> ExperimentConfig:
    values = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, _, raw = line.partition("=")
        key = key.strip()
        if key.startswith("config."):
            name = key[len("config."):]
            values[name] = _parse_value(name, raw.strip())
    if "command" not in values:
        raise ConfigError(f"manifest {path} carries no config.command entry")
    return ExperimentConfig(**values).validate()


def _write_convergence_csv(path, report: verify.ConvergenceReport):
    with open(path, "w") as f:
        f.write("n,h,error,se,paths\n")
        npaths = report.per_path.shape[1]
        for n, h, e, s in report.rows():
            f.write(f"{n},{h!r},{e!r},{s!r},{npaths}\n")


class _Checks:
    def __init__(self):
        self.lines = []
        self.all_ok = True

    def add(self, ok, label, detail):
        tag = "PASS" if ok else "FAIL"
        self.lines.append(f"{tag} {label}: {detail}")
        self.all_ok &= bool(ok)

    def write(self, path):
        with open(path, "w") as f:
            for line in self.lines:
                f.write(line + "\n")


# ---------------------------------------------------------------------------
# command runners; each returns (checks, manifest_extra, flagged_paths)

def _run_mesh_info(cfg: ExperimentConfig, out: Path):
    checks = _Checks()
    rows = []
    for n in cfg.levels:
        m = mesh_mod.build_box_mesh(n)
        mesh_mod.validate(m)
        rows.append((n, m.n_vertices, m.n_tets, m.h, m.shape_ratio,
                     int(m.boundary_mask.sum())))
        checks.add(m.shape_ratio < 20.0, f"mesh:shape-ratio:n={n}",
                   f"ratio={m.shape_ratio:.4f} < 20")
        if cfg.dump:
            mesh_mod.write_mesh(m, out / f"mesh_{n}.txt")
    with open(out / "mesh_info.csv", "w") as f:
        f.write("n,vertices,tets,h,shape_ratio,boundary_vertices\n")
        for r in rows:
            f.write(",".join(_fmt(x) for x in r) + "\n")
    return checks, {}, 0


def _run_operators(cfg: ExperimentConfig, out: Path):
    report = verify.operator_suite(levels=cfg.levels, trials=cfg.trials, seed=cfg.seed)
    checks = _Checks()
    with open(out / "operators.csv", "w") as f:
        f.write("row,levels,values,statistic,low,high,passed\n")
        for row in report.rows:
            lv = " ".join(str(n) for n in row.per_level)
            vals = " ".join(repr(v) for v in row.per_level.values())
            f.write(f"{row.name},{lv},{vals},{row.statistic!r},"
                    f"{'' if row.low is None else repr(row.low)},"
                    f"{'' if row.high is None else repr(row.high)},{int(row.passed)}\n")
            window = (f"[{row.low}, {row.high}]" if row.low is not None
                      else f"<= {row.high}")
            checks.add(row.passed, f"operator:{row.name}",
                       f"statistic={row.statistic:.4f} target {window}")
    return checks, report.manifest, 0


def _run_converge_smooth(cfg: ExperimentConfig, out: Path):
    rep_a, rep_b, rep_c = verify.converge_smooth(
        levels=cfg.levels, reference=cfg.reference, paths=cfg.paths,
        p=cfg.p, q=cfg.q, tau=cfg.tau, T=cfg.T, seed=cfg.seed,
        scheme=cfg.scheme, stride=cfg.sample_stride, rho=cfg.rho,
        modes=cfg.modes, sigma_kind=cfg.sigma, amplitude=cfg.amplitude,
        workers=cfg.workers,
    )
    _write_convergence_csv(out / "smooth_lplq.csv", rep_a)
    _write_convergence_csv(out / "smooth_uniform.csv", rep_b)
    _write_convergence_csv(out / "smooth_fixed_time.csv", rep_c)
    flagged = rep_a.manifest["flagged_paths"]
    checks = _Checks()
    checks.add(1.6 <= rep_a.fitted_rate <= 2.4, "smooth:lplq-rate",
               f"rate={rep_a.fitted_rate:.4f} target [1.6, 2.4]")
    checks.add(rep_b.fitted_rate >= 1.5, "smooth:uniform-rate",
               f"rate={rep_b.fitted_rate:.4f} target >= 1.5")
    checks.add(flagged == 0, "smooth:flagged-paths", f"flagged={flagged}")
    extra = dict(rep_a.manifest)
    extra["uniform_rate"] = rep_b.fitted_rate
    extra["fixed_time_rate"] = rep_c.fitted_rate
    extra["rate_ci_low"], extra["rate_ci_high"] = rep_a.rate_ci
    return checks, extra, flagged


def _run_converge_rough(cfg: ExperimentConfig, out: Path):
    report = verify.converge_rough(
        levels=cfg.levels, reference=cfg.reference, paths=cfg.paths,
        p=cfg.p, tau=cfg.tau, T=cfg.T, t_star=cfg.t_star, t_probe=cfg.t_probe,
        seed=cfg.seed, scheme=cfg.scheme, stride=cfg.sample_stride,
        rho=cfg.rho, modes=cfg.modes, sigma_kind=cfg.sigma, workers=cfg.workers,
    )
    _write_convergence_csv(out / "rough_fixed_time.csv", report)
    flagged = report.manifest["flagged_paths"]
    checks = _Checks()
    decreasing = all(a > b for a, b in zip(report.errors, report.errors[1:]))
    floor = max(2.0 / cfg.p - 0.25, 0.0)
    checks.add(decreasing, "rough:errors-decreasing",
               "errors " + " > ".join(f"{e:.4e}" for e in report.errors))
    checks.add(report.fitted_rate >= floor, "rough:rate",
               f"rate={report.fitted_rate:.4f} target >= {floor}")
    checks.add(flagged == 0, "rough:flagged-paths", f"flagged={flagged}")
    extra = dict(report.manifest)
    extra["rate_ci_low"], extra["rate_ci_high"] = report.rate_ci
    return checks, extra, flagged


def _run_validate_noise(cfg: ExperimentConfig, out: Path):
    cert = verify.validate_noise(rho=cfg.rho, modes=cfg.modes, n=cfg.n,
                                 trials=cfg.trials, seed=cfg.seed,
                                 sigma_kind=cfg.sigma)
    with open(out / "noise_certification.csv", "w") as f:
        f.write("quantity,value\n")
        for k in ("growth_tail", "lipschitz_tail", "boundary_residual",
                  "worst_growth_ratio", "worst_lipschitz_ratio"):
            f.write(f"{k},{getattr(cert, k)!r}\n")
    checks = _Checks()
    checks.add(cert.growth_tail_ok, "noise:growth-tail",
               f"last-half tail {cert.growth_tail:.4f} target <= {cert.tail_threshold}")
    checks.add(cert.lipschitz_tail_ok, "noise:lipschitz-tail",
               f"last-half tail {cert.lipschitz_tail:.4f} target <= {cert.tail_threshold}")
    checks.add(cert.boundary_ok, "noise:boundary-condition",
               f"max residual {cert.boundary_residual!r} target == 0")
    checks.add(cert.growth_bound_ok, "noise:growth-bound",
               f"worst ratio {cert.worst_growth_ratio:.4f} target <= 1")
    checks.add(cert.lipschitz_bound_ok, "noise:lipschitz-bound",
               f"worst ratio {cert.worst_lipschitz_ratio:.4f} target <= 1.05")
    return checks, cert.manifest, 0


def _run_ou_validate(cfg: ExperimentConfig, out: Path):
    report = verify.ou_validate(taus=cfg.taus, paths=cfg.paths, modes=cfg.modes,
                                rho=cfg.rho, seed=cfg.seed, workers=cfg.workers)
    with open(out / "ou_errors.csv", "w") as f:
        f.write("tau,error,se,paths\n")
        for t, e, s in zip(report.taus, report.errors, report.ses):
            f.write(f"{t!r},{e!r},{s!r},{cfg.paths}\n")
    checks = _Checks()
    checks.add(0.7 <= report.slope <= 1.3, "ou:strong-order",
               f"slope={report.slope:.4f} target [0.7, 1.3]")
    return checks, report.manifest, 0


def _run_moments(cfg: ExperimentConfig, out: Path):
    report = verify.moment_check(n=cfg.n, T=cfg.T, tau=cfg.tau, p=cfg.p, q=cfg.q,
                                 paths=cfg.paths, seed=cfg.seed, scheme=cfg.scheme,
                                 stride=cfg.sample_stride, rho=cfg.rho,
                                 modes=cfg.modes, sigma_kind=cfg.sigma,
                                 workers=cfg.workers)
    with open(out / "moments.csv", "w") as f:
        f.write("quantity,value\n")
        f.write(f"estimate,{report.estimate!r}\n")
        f.write(f"se,{report.se!r}\n")
        f.write(f"estimate_double_paths,{report.estimate_double_paths!r}\n")
        f.write(f"estimate_double_modes,{report.estimate_double_modes!r}\n")
    checks = _Checks()
    checks.add(np.isfinite(report.estimate), "moments:finite",
               f"estimate={report.estimate:.6f}")
    checks.add(report.stable_paths, "moments:path-doubling",
               f"delta={abs(report.estimate_double_paths - report.estimate):.3e} "
               f"target <= {2 * report.se:.3e}")
    checks.add(report.stable_modes, "moments:mode-doubling",
               f"delta={abs(report.estimate_double_modes - report.estimate):.3e} "
               f"target <= {2 * report.se:.3e}")
    checks.add(report.flagged_paths == 0, "moments:flagged-paths",
               f"flagged={report.flagged_paths}")
    return checks, report.manifest, report.flagged_paths


_RUNNERS = {
    "mesh-info": _run_mesh_info,
    "operators": _run_operators,
    "converge-smooth": _run_converge_smooth,
    "converge-rough": _run_converge_rough,
    "validate-noise": _run_validate_noise,
    "ou-validate": _run_ou_validate,
    "moments": _run_moments,
}

# files compared by the replay subcommand (manifest excluded: wall time)
_REPLAY_EXCLUDE = {"manifest.txt"}


def run(config: ExperimentConfig, output_dir) -> int:
    """Execute one experiment; returns the process exit code."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        checks, extra, flagged = _RUNNERS[config.command](config, out)
    except (SolverError, verify.ExperimentError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    write_manifest(out / "manifest.txt", config, extra)
    checks.write(out / "checks.txt")
    for line in checks.lines:
        print(line)
    if flagged:
        return 3
    return 0 if checks.all_ok else 1


def replay(manifest_path, output_dir=None, workers=None) -> int:
    """Re-run an experiment from its manifest and compare the produced
    artifacts byte-for-byte with the originals (exit 4 on any mismatch)."""
    manifest_path = Path(manifest_path)
    config = read_manifest(manifest_path)
    if workers is not None:
        config.workers = workers
    original = manifest_path.parent
    target = Path(output_dir) if output_dir else Path(tempfile.mkdtemp(prefix="sacfem-replay-"))
    code = run(config, target)
    if code == 2:
        return code
    mismatched = []
    for f in sorted(original.iterdir()):
        if f.name in _REPLAY_EXCLUDE or not f.is_file():
            continue
        twin = target / f.name
        if not twin.exists() or not filecmp.cmp(f, twin, shallow=False):
            mismatched.append(f.name)
    if mismatched:
        print(f"FAIL replay: artifacts differ: {', '.join(mismatched)}")
        return 4
    print(f"PASS replay: {sum(1 for f in original.iterdir() if f.is_file() and f.name not in _REPLAY_EXCLUDE)} artifacts byte-identical")
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sacfem",
        description="Batch experiments for the stochastic Allen-Cahn toolkit",
    )
    parser.add_argument("--config", help="experiment config file (INI format)")
    parser.add_argument("--output", help="output directory for artifacts")
    parser.add_argument("--workers", type=int, help="worker process count")
    parser.add_argument("--replay", help="re-run from a manifest and compare artifacts")
    args = parser.parse_args(argv)

    if bool(args.config) == bool(args.replay):
        parser.error("exactly one of --config or --replay is required")
    try:
        if args.replay:
            return replay(args.replay, args.output, args.workers)
        config = load_config(args.config)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError(f"workers must be >= 1, got {args.workers}")
            config.workers = args.workers
        out = args.output or config.output_dir
        if not out:
            raise ConfigError("no output directory: set output_dir or pass --output")
        return run(config, out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
