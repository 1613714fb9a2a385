"""Command-line entry point: configure, run, write trace/metrics/manifest (and figures)."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import __version__
from .presets import PRESETS
from .scenarios import (
    ConfigError,
    ScenarioConfig,
    SimulationTrace,
    convergence_errors,
    distance_report,
    errors_metrics,
    prediction_errors,
    run_simulation,
)

log = logging.getLogger("ksmpc")

EXIT_OK, EXIT_ERROR, EXIT_UNSAFE = 0, 1, 2
_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
_DEFAULTS = ScenarioConfig()
_OPTIONAL_FLOATS = {"r_sense", "koopman_ridge"}


def fmt(v) -> str:
    """Nine significant digits; integers and flags stay integral."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.9g}"


# -- config parsing -----------------------------------------------------------

def _field_name(key: str) -> str:
    name = key.strip().replace(".", "_").replace("-", "_")
    if name not in _FIELDS:
        raise ConfigError(f"unknown key {key!r}")
    return name


def _coerce(name: str, raw):
    """Convert a text or JSON value to the type of field ``name``."""
    default = getattr(_DEFAULTS, name)
    if isinstance(raw, str):
        text = raw.strip()
        if name in _OPTIONAL_FLOATS and text.lower() in ("none", "null", ""):
            return None
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        if isinstance(default, tuple):
            text = text.strip("[]()")
            try:
                return tuple(float(p) for p in text.split(",") if p.strip())
            except ValueError:
                raise ConfigError(f"{name}: expected a list of numbers, got {raw!r}") from None
        if isinstance(default, str):
            return text.strip("\"'")
        try:
            if isinstance(default, int):
                return int(text, 0)
            return float(text)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {raw!r}") from None
    if raw is None:
        if name in _OPTIONAL_FLOATS:
            return None
        raise ConfigError(f"{name}: null is not allowed")
    if isinstance(default, bool):
        if not isinstance(raw, bool):
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        return raw
    if isinstance(default, tuple):
        if not isinstance(raw, (list, tuple)):
            raise ConfigError(f"{name}: expected a list, got {raw!r}")
        return tuple(float(v) for v in raw)
    if isinstance(default, str):
        if not isinstance(raw, str):
            raise ConfigError(f"{name}: expected a string, got {raw!r}")
        return raw
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {raw!r}")
    if isinstance(default, int) and name not in _OPTIONAL_FLOATS:
        if int(raw) != raw:
            raise ConfigError(f"{name}: expected an integer, got {raw!r}")
        return int(raw)
    return float(raw)


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines with optional ``[section]`` headers.

    ``[noise]`` followed by ``sigma0 = 0.01`` sets ``noise.sigma0``, which is
    the field ``noise_sigma0``. ``#`` starts a comment.
    """
    out: dict = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{source}:{lineno}: malformed section header {line!r}")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        full = f"{section}.{key}" if section else key
        try:
            name = _field_name(full)
            if name in out:
                raise ConfigError(f"duplicate key {full!r}")
            out[name] = _coerce(name, value)
        except ConfigError as e:
            raise ConfigError(f"{source}:{lineno}: {e}") from None
    return out


def parse_json(data: dict, source: str = "<json>") -> dict:
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]  # a run manifest
    out: dict = {}
    for key, value in data.items():
        if isinstance(value, dict):
            items = [(f"{key}.{k}", v) for k, v in value.items()]
        else:
            items = [(key, value)]
        for full, v in items:
            try:
                name = _field_name(full)
                out[name] = _coerce(name, v)
            except ConfigError as e:
                raise ConfigError(f"{source}: {e}") from None
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{e.lineno}: {e.msg}") from None
        return parse_json(data, str(path))
    return parse_text(text, str(path))


def parse_overrides(items: Iterable[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        name = _field_name(key)
        out[name] = _coerce(name, value)
    return out


def parse_config(path=None, overrides: Iterable[str] = (), preset: Optional[str] = None,
                 **extra) -> ScenarioConfig:
    """Defaults, then preset, then file, then ``key=value`` overrides, then ``extra``."""
    values: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if path is not None:
        values.update(load_config_file(path))
    values.update(parse_overrides(overrides))
    values.update({k: v for k, v in extra.items() if v is not None})
    return ScenarioConfig(**values).validate()


# -- writers ------------------------------------------------------------------

def trace_header(cfg: ScenarioConfig, sources: list) -> list:
    cols = ["time"]
    for i in range(1, cfg.n_uavs + 1):
        cols += [f"uav{i}_{c}" for c in ("x", "y", "z", "phi", "theta", "psi", "mode", "feasible")]
    for l in range(1, cfg.n_obstacles + 1):
        cols += [f"obs{l}_{c}" for c in ("x", "y", "z")]
        for s in sources:
            cols += [f"obs{l}_{s}_{c}" for c in ("mx", "my", "mz")]
    return cols


def write_trace_csv(trace: SimulationTrace, path) -> None:
    cfg = trace.config
    sources = sorted(trace.records[0].measured) if trace.records else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(cfg, sources))
        for rec in trace.records:
            row = [fmt(rec.time)]
            for pose, mode, ok in zip(rec.poses, rec.modes, rec.feasible):
                row += [fmt(v) for v in pose.state] + [fmt(int(mode)), fmt(bool(ok))]
            for l in range(cfg.n_obstacles):
                row += [fmt(v) for v in rec.obstacles[l]]
                for s in sources:
                    row += [fmt(v) for v in rec.measured[s][l]]
            w.writerow(row)


def write_predictions_csv(trace: SimulationTrace, path) -> None:
    truth = trace.obstacle_truth()
    K = len(trace.records) - 1
    T = trace.config.T
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "source", "obstacle", "step", "pred_x", "pred_y", "pred_z",
                    "true_x", "true_y", "true_z", "error", "from_model", "reliable"])
        for rec in trace.predictions:
            for h in range(1, min(len(rec.positions), K - rec.k) + 1):
                p = rec.positions[h - 1]
                q = truth[rec.k + h, rec.obstacle]
                w.writerow([fmt(rec.k * T), rec.source, rec.obstacle + 1, h,
                            *(fmt(v) for v in p), *(fmt(v) for v in q),
                            fmt(float(np.linalg.norm(p - q))), fmt(rec.from_model), fmt(rec.reliable)])


def compute_metrics(trace: SimulationTrace) -> dict:
    cfg = trace.config
    errs = prediction_errors(trace)
    all_err = np.concatenate(list(errs.values())) if errs else np.zeros(0)
    per_point = errors_metrics(all_err)
    dist = distance_report(trace)
    obs_floor = cfg.r_rob + cfg.r_obs
    agent_floor = 2.0 * cfg.r_rob
    violated = bool(
        (dist["uav_obstacle"] is not None and dist["uav_obstacle"]["distance"] < obs_floor)
        or (dist["inter_agent"] is not None and dist["inter_agent"]["distance"] < agent_floor)
    )
    feas = np.array([r.feasible for r in trace.records], dtype=bool).reshape(len(trace.records), -1)
    return {
        "prediction": {
            "per_point": per_point.as_dict(),
            "accumulated": {"sum_error": float(all_err.sum()),
                            "sum_squared_error": float((all_err ** 2).sum()),
                            "count": int(all_err.size)},
            "by_source": {s: errors_metrics(e).as_dict() for s, e in sorted(errs.items())},
            "mean_noise_std": float(np.mean(trace.noise_std)) if trace.noise_std else 0.0,
        },
        "distances": dist,
        "safety": {"uav_obstacle_floor": obs_floor, "inter_agent_floor": agent_floor,
                   "violated": violated},
        "convergence": {"final_error": convergence_errors(trace)},
        "infeasible_solves": [int(v) for v in (~feas).sum(axis=0)],
    }


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float):
        return float(fmt(obj)) if math.isfinite(obj) else None
    return obj


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=False)
        fh.write("\n")


def run(config: ScenarioConfig, out_dir, figures: bool = True) -> int:
    """Run ``config`` and write all outputs; returns the process exit status."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    trace = run_simulation(config)
    runtime = time.perf_counter() - t0
    metrics = compute_metrics(trace)
    write_trace_csv(trace, out / "trace.csv")
    write_predictions_csv(trace, out / "predictions.csv")
    write_json(metrics, out / "metrics.json")
    write_json({"config": config.to_dict(), "seed": config.seed, "version": __version__,
                "runtime_s": runtime}, out / "manifest.json")
    if figures:
        from .plotting import render_report
        render_report(trace, out / "figures")
    if metrics["safety"]["violated"]:
        log.warning("safety floor violated: %s", metrics["distances"])
        return EXIT_UNSAFE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ksmpc", description=__doc__)
    ap.add_argument("--config", help="key=value text file or JSON (a manifest.json also works)")
    ap.add_argument("--preset", help=f"one of {', '.join(sorted(PRESETS))}")
    ap.add_argument("--out", help="output directory (default: $KSMPC_OUT or ./ksmpc-out)")
    ap.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key; repeatable")
    ap.add_argument("--prediction-only", action="store_true", default=None,
                    help="track and forecast obstacles without running the controller")
    ap.add_argument("--no-figures", dest="figures", action="store_false",
                    help="skip the PNG report")
    ap.add_argument("--list-presets", action="store_true")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    if args.list_presets:
        for name in sorted(PRESETS):
            print(name)
        return EXIT_OK
    try:
        cfg = parse_config(args.config, args.overrides, args.preset,
                           seed=args.seed, prediction_only=args.prediction_only)
    except (ConfigError, OSError) as e:
        print(f"ksmpc: {e}", file=sys.stderr)
        return EXIT_ERROR
    out = args.out or os.environ.get("KSMPC_OUT") or "ksmpc-out"
    try:
        return run(cfg, out, figures=args.figures)
    except OSError as e:
        print(f"ksmpc: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
