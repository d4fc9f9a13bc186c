"""Command line driver: ``boltzlab <experiment> [--config FILE] [--seed N] [--workers K] [--out DIR]``.

Configuration files are flat ``key = value`` lines with dotted section
names (``md.N = 1000``); ``#`` starts a comment.  Unknown keys are
rejected.  Each run writes ``resolved_config.cfg`` and ``manifest.json``
next to its CSV outputs, the manifest also when the experiment fails.

Exit codes: 0 success, 1 experiment failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
import traceback
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .core_types import RngSpec
from .experiments import ALIASES, EXPERIMENTS, ExperimentFailure

log = logging.getLogger("boltzlab")

COMMON_DEFAULTS = {"seed": 0, "workers": 1, "output_dir": "runs"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _convert(key, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            elem = type(default[0]) if default else float
            return tuple(elem(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _render(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    return str(value)


@dataclass
class ExperimentConfig:
    experiment: str
    values: dict = field(default_factory=dict)

    @property
    def seed(self) -> RngSpec:
        return RngSpec(int(self.values["seed"]))

    @property
    def output_dir(self) -> Path:
        return Path(self.values["output_dir"])

    def resolved_text(self) -> str:
        """All effective settings; the output location is left out since it does not affect results."""
        lines = [f"experiment = {self.experiment}"]
        lines += [f"{k} = {_render(self.values[k])}" for k in sorted(self.values) if k != "output_dir"]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()


def parse_config_text(text: str, experiment: str, overrides: dict | None = None) -> ExperimentConfig:
    """Strict parser: every key must be known to the experiment or common."""
    experiment = ALIASES.get(experiment, experiment)
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    defaults = dict(COMMON_DEFAULTS)
    defaults.update(EXPERIMENTS[experiment][1])
    values = dict(defaults)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key == "experiment":
            if ALIASES.get(raw, raw) != experiment:
                raise ConfigError(f"config is for {raw!r}, not {experiment!r}")
            continue
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw, defaults[key])
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    if values["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    return ExperimentConfig(experiment, values)


def load_config(path, experiment: str, overrides: dict | None = None) -> ExperimentConfig:
    text = Path(path).read_text() if path else ""
    return parse_config_text(text, experiment, overrides)


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    experiment: str
    config_hash: str
    code_version: str
    started: str
    finished: str = ""
    status: str = "running"
    outputs: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    error: str = ""

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    try:
        return float(x)
    except (TypeError, ValueError):
        return str(x)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def run_experiment(config: ExperimentConfig) -> int:
    """Run one experiment; returns the exit status (0 or 1)."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.cfg").write_text(config.resolved_text())
    manifest = RunManifest(config.experiment, config.digest(), __version__, _now())
    fn = EXPERIMENTS[config.experiment][0]
    status = 0
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            manifest.summary = fn(config.values, config.seed, out, int(config.values["workers"]))
        for w in caught:
            log.warning("%s", w.message)
        manifest.status = "ok"
    except ExperimentFailure as exc:
        manifest.status = "failed"
        manifest.error = str(exc)
        status = 1
    except Exception as exc:  # noqa: BLE001 - any module error is an experiment failure
        manifest.status = "error"
        manifest.error = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        log.debug("%s", traceback.format_exc())
        status = 1
    finally:
        manifest.finished = _now()
        manifest.outputs = {p.name: _sha256(p) for p in sorted(out.iterdir())
                            if p.is_file() and p.name != "manifest.json"}
        manifest.write(out / "manifest.json")
    if status:
        log.error("%s failed: %s", config.experiment, manifest.error)
    else:
        log.info("%s finished: %s", config.experiment, json.dumps(manifest.summary, default=_jsonable))
    return status


# ---------------------------------------------------------------------------
# plot scripts
# ---------------------------------------------------------------------------

PLOT_SCHEMAS = {
    ("E0", "J0", "rho_star", "tau_star", "Theta", "b"): "scatter",
    ("eps", "fraction", "stderr", "n"): "recollision",
}


def _plot_script(kind: str, csv_path: Path, rows: list, header: list) -> str:
    name = csv_path.name
    if kind == "scatter":
        E0s = sorted({float(r[0]) for r in rows})
        plots = ", ".join(f"'{name}' using 2:($1=={e!r} ? $5 : 1/0) with linespoints title 'E0={e:g}'" for e in E0s)
        return ("set datafile separator ','\nset key autotitle columnhead\n"
                "set xlabel 'J0'\nset ylabel 'Theta'\n"
                f"plot {plots}\n")
    if kind == "relaxation":
        col = header.index("H") + 1
        return ("set datafile separator ','\nset key autotitle columnhead\n"
                f"set xlabel 't'\nset ylabel 'H'\nplot '{name}' using 1:{col} with linespoints title 'H(t)'\n")
    if kind == "recollision":
        import numpy as np

        x = np.array([float(r[0]) for r in rows])
        y = np.array([float(r[1]) for r in rows])
        slope = float(np.polyfit(np.log(x), np.log(y), 1)[0]) if len(rows) > 1 and np.all(y > 0) else float("nan")
        return ("set datafile separator ','\nset key autotitle columnhead\nset logscale xy\n"
                "set xlabel 'eps'\nset ylabel 'recollision fraction'\n"
                f"set label 1 'fitted slope {slope:.3f}' at graph 0.05, graph 0.9\n"
                f"plot '{name}' using 1:2:3 with yerrorbars title 'fraction'\n")
    raise ValueError(kind)


def emit_plots(csv_paths, out_dir) -> list:
    """Write one gnuplot script per CSV (Theta(J0), H(t), recollision fraction vs eps)."""
    import csv

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for p in map(Path, csv_paths):
        with open(p, newline="") as fh:
            data = list(csv.reader(fh))
        target = out_dir / (p.stem + ".gp")
        if not data:
            warnings.warn(f"{p} is empty; writing an empty plot script", RuntimeWarning, stacklevel=2)
            target.write_text("")
            written.append(target)
            continue
        header, rows = data[0], data[1:]
        kind = PLOT_SCHEMAS.get(tuple(header))
        if kind is None and header[:1] == ["t"] and "H" in header and "energy" in header:
            kind = "relaxation"
        if kind is None:
            raise ValueError(f"{p}: unrecognised CSV schema {header}")
        if not rows:
            warnings.warn(f"{p} has no data rows; writing an empty plot script", RuntimeWarning, stacklevel=2)
            target.write_text("")
        else:
            target.write_text(_plot_script(kind, p, rows, header))
        written.append(target)
    return written


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boltzlab", description="Kinetic-limit numerical experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, aliases=[a for a, c in ALIASES.items() if c == name])
        sp.add_argument("--config", type=Path, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--out", type=Path, default=None)
    pp = sub.add_parser("plots", help="write gnuplot scripts for result CSVs")
    pp.add_argument("csv", nargs="+", type=Path)
    pp.add_argument("--out", type=Path, default=Path("."))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    if args.command == "plots":
        try:
            for p in emit_plots(args.csv, args.out):
                print(p)
        except (OSError, ValueError) as exc:
            log.error("%s", exc)
            return 2
        return 0
    overrides = {"seed": args.seed, "workers": args.workers,
                 "output_dir": str(args.out) if args.out is not None else None}
    try:
        config = load_config(args.config, args.command, overrides)
    except (ConfigError, OSError) as exc:
        log.error("%s", exc)
        return 2
    if args.out is None:
        config.values["output_dir"] = str(Path(config.values["output_dir"]) / config.experiment)
    return run_experiment(config)


if __name__ == "__main__":
    sys.exit(main())
