"""Command-line front end: config parsing, subcommands and serialization.

Config files are flat YAML (JSON is accepted too).  Rates are given in
%/year through ``pi_star_annual`` and ``rho_star_annual``; a swept parameter
is declared as ``sweep_<key>: [values]`` (or ``"linspace(lo, hi, n)"``).

Set ``MARK0_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) to control verbosity.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import itertools
import json
import logging
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from mark0.core import TimeSeries, run
from mark0.measure import (
    PhaseLabel,
    PhaseThresholds,
    annualize,
    classify_phase,
    dashboard,
    deannualize,
    phillips_points,
)
from mark0.params import ConfigError, ModelParams
from mark0.sweep import CI_SCALE, SweepResult, SweepSpec, detect_coexistence, run_sweep

log = logging.getLogger("mark0")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_HALTED = 3
EXIT_IO = 4

LOG_ENV = "MARK0_LOG_LEVEL"

# config key -> ModelParams field, for everything that maps one to one
_DIRECT = (
    "n_firms", "c0", "beta", "gamma", "eta0_minus", "ratio_R", "delta", "theta",
    "phi_revival", "f_share", "alpha_c", "alpha_gamma", "gamma0", "omega", "g_index",
    "tau_R", "tau_T", "phi_pi", "T", "T_eq", "seed", "steps_per_year", "zlb_enabled",
    "collapse_guard",
)
_ANNUAL = {"pi_star_annual": "pi_star", "rho_star_annual": "rho_star"}
MODEL_KEYS = _DIRECT + tuple(_ANNUAL)
REQUIRED_KEYS = ("ratio_R", "tau_R", "tau_T", "phi_pi", "pi_star_annual", "rho_star_annual")
SWEEP_KEYS = ("ratio_R", "rho_star_annual", "tau_R", "tau_T", "phi_pi", "pi_star_annual",
              "g_index")
_THRESHOLD_KEYS = tuple(f.name for f in dataclasses.fields(PhaseThresholds))
EXTRA_DEFAULTS = {
    "out": None,
    "seeds": 8,
    "phillips_stride": 1,
    "coexistence_min_freq": 0.1,
    **{k: getattr(PhaseThresholds(), k) for k in _THRESHOLD_KEYS},
}
ALLOWED_KEYS = set(MODEL_KEYS) | set(EXTRA_DEFAULTS) | {f"sweep_{k}" for k in SWEEP_KEYS}

_INT_KEYS = {"n_firms", "T", "T_eq", "seed", "steps_per_year", "phillips_stride"}
_LINSPACE = re.compile(r"^\s*linspace\(\s*([^,]+),\s*([^,]+),\s*([^,)]+)\)\s*$")

TRAJECTORY_COLUMNS = ("t", "p_bar", "w_bar", "u", "pi_step", "pi_annual", "pi_ema", "rho0",
                      "rho_l", "rho_d", "S", "C_B", "n_defaults", "n_active", "money_total")


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    pi_star_annual: float
    rho_star_annual: float
    axes: tuple[tuple[str, tuple[float, ...]], ...] = ()
    seeds: tuple[int, ...] = tuple(range(8))
    thresholds: PhaseThresholds = PhaseThresholds()
    phillips_stride: int = 1
    coexistence_min_freq: float = 0.1
    out: str | None = None

    def sweep_spec(self) -> SweepSpec:
        spy = self.params.steps_per_year
        axes = []
        for key, values in self.axes:
            if key in _ANNUAL:
                axes.append((_ANNUAL[key], tuple(deannualize(v, spy) for v in values)))
            else:
                axes.append((key, values))
        return SweepSpec(self.params, tuple(axes), self.seeds, self.thresholds)


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------


def _coerce(key, value):
    try:
        if key == "zlb_enabled":
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false"):
                return value.lower() == "true"
            raise ValueError
        if key in _INT_KEYS:
            if isinstance(value, bool) or not float(value).is_integer():
                raise ValueError
            return int(value)
        if isinstance(value, bool):
            raise ValueError
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"invalid value {value!r}") from None


def _axis_values(key, value):
    if isinstance(value, str):
        m = _LINSPACE.match(value)
        if not m:
            raise ConfigError(key, f"expected a list or 'linspace(lo, hi, n)', got {value!r}")
        lo, hi, n = (_coerce(key, m.group(i)) for i in (1, 2, 3))
        if not float(n).is_integer() or n < 1:
            raise ConfigError(key, "linspace count must be a positive integer")
        return tuple(float(x) for x in np.linspace(lo, hi, int(n)))
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(key, "missing swept-axis values")
    return tuple(_coerce(key[len("sweep_"):], v) for v in value)


def _seeds(value):
    if isinstance(value, (list, tuple)):
        seeds = tuple(_coerce("seeds", v) if not isinstance(v, bool) else None for v in value)
        if not seeds or any(s is None or not float(s).is_integer() for s in seeds):
            raise ConfigError("seeds", "expected a count or a non-empty list of integers")
        return tuple(int(s) for s in seeds)
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError("seeds", "expected a count or a non-empty list of integers")
    return tuple(range(value))


def load_file(path) -> dict:
    text = Path(path).read_text()
    try:
        if str(path).endswith(".json"):
            data = json.loads(text) if text.strip() else {}
        else:
            data = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a key-value mapping")
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(str(key), "nested mappings are not allowed")
    return data


def parse_override(item: str) -> tuple[str, object]:
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError("--set", f"expected key=value, got {item!r}")
    return key.strip(), yaml.safe_load(raw) if raw.strip() else None


def build_config(raw: dict) -> RunConfig:
    unknown = sorted(set(raw) - ALLOWED_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")

    axes = tuple((key[len("sweep_"):], _axis_values(key, value))
                 for key, value in raw.items() if key.startswith("sweep_"))
    swept = {k: v[0] for k, v in axes}

    model = {}
    for key in MODEL_KEYS:
        if key in raw and raw[key] is not None:
            model[key] = _coerce(key, raw[key])
        elif key in swept:
            model[key] = swept[key]
    missing = [k for k in REQUIRED_KEYS if k not in model]
    if missing:
        raise ConfigError(missing[0], "required key is missing")

    spy = model.get("steps_per_year", 2)
    if not isinstance(spy, int) or spy < 1:
        raise ConfigError("steps_per_year", "must be a positive integer")
    kwargs = {k: v for k, v in model.items() if k in _DIRECT}
    kwargs["pi_star"] = deannualize(model["pi_star_annual"], spy)
    kwargs["rho_star"] = deannualize(model["rho_star_annual"], spy)
    params = ModelParams(**kwargs)
    pi_star_annual = 0.0 if params.normalized else model["pi_star_annual"]

    extra = {**EXTRA_DEFAULTS, **{k: v for k, v in raw.items() if k in EXTRA_DEFAULTS}}
    thresholds = PhaseThresholds(**{k: _coerce(k, extra[k]) for k in _THRESHOLD_KEYS})
    stride = _coerce("phillips_stride", extra["phillips_stride"])
    if stride < 1:
        raise ConfigError("phillips_stride", "must be >= 1")
    out = extra["out"]
    if out is not None and not isinstance(out, str):
        raise ConfigError("out", "must be a path")
    return RunConfig(
        params=params,
        pi_star_annual=pi_star_annual,
        rho_star_annual=model["rho_star_annual"],
        axes=axes,
        seeds=_seeds(extra["seeds"]),
        thresholds=thresholds,
        phillips_stride=stride,
        coexistence_min_freq=_coerce("coexistence_min_freq", extra["coexistence_min_freq"]),
        out=out,
    )


def parse_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    """File values, then ``key=value`` overrides, then an explicit seed."""
    raw = load_file(path) if path is not None else {}
    for item in overrides:
        key, value = parse_override(item)
        raw[key] = value
    if seed is not None:
        raw["seed"] = seed
    return build_config(raw)


def config_dict(cfg: RunConfig) -> dict:
    """The effective config as a flat mapping that :func:`build_config` accepts."""
    p = cfg.params
    d = {key: getattr(p, key) for key in _DIRECT}
    d["pi_star_annual"] = cfg.pi_star_annual
    d["rho_star_annual"] = cfg.rho_star_annual
    for key, values in cfg.axes:
        d[f"sweep_{key}"] = list(values)
    d["seeds"] = list(cfg.seeds)
    for key in _THRESHOLD_KEYS:
        d[key] = getattr(cfg.thresholds, key)
    d["phillips_stride"] = cfg.phillips_stride
    d["coexistence_min_freq"] = cfg.coexistence_min_freq
    d["out"] = cfg.out
    return d


def emit_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_dict(cfg), sort_keys=False)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def fmt(x) -> str:
    """Shortest round-trip text for floats, plain text for everything else."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def to_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trajectory_csv(ts: TimeSeries) -> str:
    """Canonical trajectory table.  ``pi_step`` is per step; other rates are %/year."""
    spy = ts.params.steps_per_year
    r = ts.records

    def ann(col):
        return [annualize(float(x), spy) for x in r[col]]

    cols = [
        r["t"].tolist(), r["p_bar"].tolist(), r["w_bar"].tolist(), r["u"].tolist(),
        r["pi"].tolist(), ann("pi"), ann("pi_ema"), ann("rho0"), ann("rho_l"), ann("rho_d"),
        r["S"].tolist(), r["C_B"].tolist(), r["n_defaults"].tolist(), r["n_active"].tolist(),
        r["money_total"].tolist(),
    ]
    return csv_text(TRAJECTORY_COLUMNS, zip(*cols))


def summary_record(cfg: RunConfig, ts: TimeSeries) -> dict:
    d = dashboard(ts)
    return {
        "label": str(classify_phase(ts, cfg.thresholds)),
        "mean_u": d.mean_u,
        "mean_pi_annual": d.mean_pi_annual,
        "p_neg": d.p_neg,
        "mean_real_deposit_annual": d.mean_real_deposit_annual,
        "n_window": d.n_window,
        "halt_reason": ts.halt_reason,
        "halt_step": ts.halt_step,
        "steps": len(ts),
        "seed": cfg.params.seed,
        "config": config_dict(cfg),
    }


def sweep_tables(cfg: RunConfig, result: SweepResult) -> tuple[str, str]:
    """Per-(point, seed) table and per-point aggregate table."""
    names = [k for k, _ in cfg.axes]
    # coordinates as the user wrote them, in the same order as the sweep points
    user_points = list(itertools.product(*(v for _, v in cfg.axes)))
    cell_rows = []
    point_rows = []
    labels = [str(lab) for lab in PhaseLabel]
    for coords, point in zip(user_points, result.points, strict=True):
        for c in point.cells:
            d = c.dashboard
            cell_rows.append([*coords, c.seed, str(c.label), d.mean_u, d.mean_pi_annual,
                              d.p_neg, d.mean_real_deposit_annual])
        freq = point.frequencies
        co = detect_coexistence(point, cfg.coexistence_min_freq)
        point_rows.append([*coords, len(point.cells), str(point.label),
                           *(freq.get(lab, 0.0) for lab in PhaseLabel),
                           co.coexists, co.low_confidence])
    cells = csv_text([*names, "seed", "label", "mean_u", "mean_pi_annual", "p_neg",
                      "real_rate_annual"], cell_rows)
    points = csv_text([*names, "n_seeds", "label", *(f"freq_{lab}" for lab in labels),
                       "coexistence", "low_confidence"], point_rows)
    return cells, points


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.out or ".")


def cmd_run(args, cfg: RunConfig) -> int:
    ts = run(cfg.params)
    out = _out_dir(args, cfg)
    atomic_write(out / "trajectory.csv", trajectory_csv(ts))
    atomic_write(out / "summary.json", to_json(summary_record(cfg, ts)))
    return EXIT_HALTED if ts.halted else EXIT_OK


def cmd_dashboard(args, cfg: RunConfig) -> int:
    ts = run(cfg.params)
    atomic_write(_out_dir(args, cfg) / "summary.json", to_json(summary_record(cfg, ts)))
    return EXIT_HALTED if ts.halted else EXIT_OK


def cmd_phillips(args, cfg: RunConfig) -> int:
    ts = run(cfg.params)
    ph = phillips_points(ts, stride=cfg.phillips_stride)
    out = _out_dir(args, cfg)
    atomic_write(out / "phillips.csv", csv_text(("u", "pi_annual"), zip(ph.u.tolist(),
                                                                         ph.pi_annual.tolist())))
    fit = dataclasses.asdict(ph.fit)
    fit.update(halt_reason=ts.halt_reason, halt_step=ts.halt_step, config=config_dict(cfg))
    atomic_write(out / "phillips_fit.json", to_json(fit))
    return EXIT_HALTED if ts.halted else EXIT_OK


def _write_sweep(args, cfg: RunConfig) -> int:
    result = run_sweep(cfg.sweep_spec(), workers=args.workers)
    cells, points = sweep_tables(cfg, result)
    out = _out_dir(args, cfg)
    atomic_write(out / "sweep_cells.csv", cells)
    atomic_write(out / "sweep_points.csv", points)
    atomic_write(out / "sweep_config.yaml", emit_config(cfg))
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig) -> int:
    if not cfg.axes:
        raise ConfigError("sweep_<key>", "missing swept-axis values")
    return _write_sweep(args, cfg)


PHASE_DIAGRAM_PRESETS = {
    "full": {"n": 20, "seeds": 8, "scale": {}},
    "ci": {"n": 10, "seeds": 4, "scale": CI_SCALE},
}


def phase_diagram_config(cfg: RunConfig, preset: str) -> RunConfig:
    """Default (rho_star, R) grid unless the config already sweeps something."""
    p = PHASE_DIAGRAM_PRESETS[preset]
    params = cfg.params.replace(**p["scale"]) if p["scale"] else cfg.params
    if cfg.axes:
        return dataclasses.replace(cfg, params=params)
    n = p["n"]
    axes = (("ratio_R", tuple(float(x) for x in np.linspace(0.1, 2.0, n))),
            ("rho_star_annual", tuple(float(x) for x in np.linspace(0.0, 5.0, n))))
    return dataclasses.replace(cfg, params=params, axes=axes,
                               seeds=tuple(range(p["seeds"])))


def cmd_phase_diagram(args, cfg: RunConfig) -> int:
    return _write_sweep(args, phase_diagram_config(cfg, args.preset))


COMMANDS = {
    "run": cmd_run,
    "dashboard": cmd_dashboard,
    "phillips": cmd_phillips,
    "sweep": cmd_sweep,
    "phase-diagram": cmd_phase_diagram,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mark0", description="Mark-0 macroeconomy simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE")
        p.add_argument("--workers", type=int, default=1)
        if name == "phase-diagram":
            p.add_argument("--preset", choices=sorted(PHASE_DIAGRAM_PRESETS), default="full")
    return parser


def setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config, args.overrides, args.seed)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
