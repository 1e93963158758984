"""Command-line entry point: ``spde-fd {converge,ou-error,verify,simulate,noise}``.

Configuration is one JSON document with sections grid, plan, drifts, output
and tolerances.  Every key can be overridden by a flag ``--<section>-<key>``;
flags win over the file, the file wins over built-in defaults.

Exit codes: 0 success, 1 config or I/O error, 2 failed acceptance assertion,
3 failed lemma check.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import subprocess
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .convergence import (
    ExperimentPlan,
    PlanError,
    estimate_rates,
    fit_slope,
    persist_report,
    provenance_lines,
    write_rate_csv,
)
from .grid import GridError, make_grid
from .lemmas import DEFAULT_TOLERANCES, LemmaConfig, report_dict, run_all
from .noise import dump_noise, load_noise, sample_noise
from .ou import ou_coupling_error_sq
from .scheme import run

log = logging.getLogger("spde_fd")

SCHEMA_VERSION = "spde-fd-output/1"

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT, EXIT_LEMMA = 0, 1, 2, 3

_PLAN_KEYS = ("levels", "reference_n", "horizon", "p", "samples", "seed", "initial", "snapshot_times",
              "chunk_size", "epsilon")
_LEMMA_KEYS = ("kernel_t_fixed", "kernel_t_list", "summation_lambda", "summation_gammas", "summation_t_list",
               "q_r", "det_t", "only")

DEFAULT_CONFIG = {
    "grid": {"c": 0.25, "n": 16, "n_list": [8, 16, 32, 64], "small_n_list": [2, 4, 8]},
    "plan": {
        "levels": [4, 8, 16, 32],
        "reference_n": 64,
        "horizon": 0.25,
        "p": 2.0,
        "samples": 200,
        "seed": 0,
        "initial": "sine",
        "snapshot_times": [],
        "chunk_size": 25,
        "epsilon": 0.0,
        "workers": 0,
        "sample_index": 0,
        "ou_levels": [8, 16, 32, 64],
        "ou_t": [0.25],
        "kernel_t_fixed": 0.1,
        "kernel_t_list": [2.0**-k for k in range(12, 0, -1)],
        "summation_lambda": 4 * np.pi**2,
        "summation_gammas": [0.0, 1.0],
        "summation_t_list": [2.0**-k for k in range(12, 1, -1)],
        "q_r": 0.25,
        "det_t": 0.1,
        "only": None,
    },
    "drifts": {"name": "sign"},
    "output": {"dir": "spde_out", "prefix": ""},
    "tolerances": {
        "rate_slope_min": -0.65,
        "rate_slope_max": -0.35,
        "ou_slope_min": -1.2,
        "ou_slope_max": -0.8,
        **DEFAULT_TOLERANCES,
    },
}

# short flags mapped onto config keys
ALIASES = {
    "--levels": ("plan", "levels"),
    "--ref": ("plan", "reference_n"),
    "--seed": ("plan", "seed"),
    "--workers": ("plan", "workers"),
    "--samples": ("plan", "samples"),
    "--horizon": ("plan", "horizon"),
    "--only": ("plan", "only"),
    "--drift": ("drifts", "name"),
    "--n": ("grid", "n"),
    "--c": ("grid", "c"),
}


class ConfigError(Exception):
    pass


# --- configuration --------------------------------------------------------------


def _parse_value(text: str, default):
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list) or default is None:
            items = [s.strip() for s in text.split(",") if s.strip()]
            proto = default[0] if default else None
            if isinstance(proto, str) or default is None:
                return items
            if isinstance(proto, int) and not isinstance(proto, bool):
                return [int(s) for s in items]
            return [float(s) for s in items]
        return text
    except ValueError as exc:
        raise ConfigError(f"cannot parse {text!r}: {exc}") from exc


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for sec, vals in over.items():
        if sec not in base:
            raise ConfigError(f"unknown config section {where}{sec!r}")
        if not isinstance(vals, dict):
            raise ConfigError(f"config section {sec!r} must be an object")
        for k, v in vals.items():
            if k not in base[sec]:
                raise ConfigError(f"unknown config key {sec}.{k}")
            out[sec][k] = v
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return _merge(DEFAULT_CONFIG, doc)


def _flag(section: str, key: str) -> str:
    return f"--{section}-{key.replace('_', '-')}"


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--assert", dest="assert_", action="store_true", help="exit 2 if the acceptance band is missed")
    grp = p.add_argument_group("config overrides")
    for sec, vals in DEFAULT_CONFIG.items():
        for key in vals:
            grp.add_argument(_flag(sec, key), dest=f"cfg:{sec}:{key}", metavar="VALUE")
    for flag, (sec, key) in ALIASES.items():
        grp.add_argument(flag, dest=f"alias:{sec}:{key}", metavar="VALUE", help=f"alias of {_flag(sec, key)}")


def effective_config(args: argparse.Namespace) -> dict:
    cfg = load_config(args.config)
    overrides = {}
    for dest, val in vars(args).items():
        if val is None or not (dest.startswith("cfg:") or dest.startswith("alias:")):
            continue
        kind, sec, key = dest.split(":")
        # explicit --section-key beats the alias
        if kind == "alias" and (sec, key) in overrides:
            continue
        overrides[(sec, key)] = val
    for (sec, key), val in overrides.items():
        cfg[sec][key] = _parse_value(val, DEFAULT_CONFIG[sec][key])
    return cfg


def build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5, check=True,
        )
        return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        try:
            return f"artifact-{metadata.version('artifact')}"
        except metadata.PackageNotFoundError:
            return "artifact-unknown"


def provenance(cfg: dict, command: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": cfg,
        "seed": cfg["plan"]["seed"],
        "build": build_id(),
    }


def _outdir(cfg: dict) -> Path:
    d = Path(cfg["output"]["dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _outpath(cfg: dict, name: str) -> Path:
    return _outdir(cfg) / f"{cfg['output']['prefix']}{name}"


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _write_csv(path: Path, header: str, rows, prov: dict) -> None:
    lines = provenance_lines(prov) + [header] + [",".join(repr(v) if isinstance(v, float) else str(v) for v in r) for r in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _workers(cfg: dict) -> int:
    w = int(cfg["plan"]["workers"])
    return w if w > 0 else (os.cpu_count() or 1)


# --- subcommands ------------------------------------------------------------------


def experiment_plan(cfg: dict) -> ExperimentPlan:
    kw = {k: cfg["plan"][k] for k in _PLAN_KEYS}
    return ExperimentPlan(c=cfg["grid"]["c"], drift=cfg["drifts"]["name"], **kw)


def cmd_converge(cfg: dict, do_assert: bool = False) -> int:
    plan = experiment_plan(cfg)
    report = estimate_rates(plan, workers=_workers(cfg))
    for lv in report.per_level:
        log.info("n=%d error=%.5g stderr=%.2g", lv.n, lv.error, lv.stderr)
    prov = provenance(cfg, "converge")
    persist_report(report, _outpath(cfg, "converge.json"), prov)
    write_rate_csv(report, _outpath(cfg, "converge.csv"), prov)
    if report.degenerate:
        log.warning("degenerate plan: %s", "; ".join(report.notes))
    else:
        log.info("slope=%.4f", report.slope)
    if do_assert:
        lo, hi = cfg["tolerances"]["rate_slope_min"], cfg["tolerances"]["rate_slope_max"]
        if report.slope is None or not lo <= report.slope <= hi:
            log.error("slope %s outside acceptance band [%s, %s]", report.slope, lo, hi)
            return EXIT_ASSERT
    return EXIT_OK


def cmd_ou_error(cfg: dict, do_assert: bool = False) -> int:
    c = cfg["grid"]["c"]
    rows, notes = [], []
    for t in cfg["plan"]["ou_t"]:
        for n in cfg["plan"]["ou_levels"]:
            g = make_grid(n, c)
            if t < g.h:
                notes.append(f"n={n}, t={t}: t below h, skipped")
                continue
            try:
                val = ou_coupling_error_sq(g, t)
            except GridError:
                notes.append(f"n={n}, t={t}: not a grid time, skipped")
                continue
            rows.append((n, float(t), val))
    slopes = {}
    for t in cfg["plan"]["ou_t"]:
        sel = [(n, v) for n, tt, v in rows if tt == float(t)]
        if len(sel) >= 2:
            slopes[str(t)] = fit_slope([n for n, _ in sel], [v for _, v in sel]).slope
    for note in notes:
        log.warning(note)
    prov = provenance(cfg, "ou-error")
    _write_csv(_outpath(cfg, "ou_error.csv"), "n,t,error_sq", rows, prov)
    _write_json(_outpath(cfg, "ou_error.json"), {**prov, "rows": rows, "slopes": slopes, "notes": notes})
    log.info("slopes: %s", slopes)
    if do_assert:
        lo, hi = cfg["tolerances"]["ou_slope_min"], cfg["tolerances"]["ou_slope_max"]
        if not slopes or not all(lo <= s <= hi for s in slopes.values()):
            log.error("OU error slopes %s outside [%s, %s]", slopes, lo, hi)
            return EXIT_ASSERT
    return EXIT_OK


def lemma_config(cfg: dict) -> LemmaConfig:
    tol = {k: v for k, v in cfg["tolerances"].items() if k in DEFAULT_TOLERANCES}
    kw = {k: cfg["plan"][k] for k in _LEMMA_KEYS}
    return LemmaConfig(c=cfg["grid"]["c"], n_list=list(cfg["grid"]["n_list"]),
                       small_n_list=list(cfg["grid"]["small_n_list"]), tolerances=tol, **kw)


def cmd_verify(cfg: dict, do_assert: bool = False) -> int:
    checks = run_all(lemma_config(cfg))
    doc = report_dict(checks, {"provenance": provenance(cfg, "verify")})
    _write_json(_outpath(cfg, "verify.json"), doc)
    for ch in checks:
        log.info("%-16s %s", ch.id, "pass" if ch.passed else f"FAIL {ch.narrative}")
    if not checks:
        log.warning("empty sweep: report has no checks")
    return EXIT_OK if all(ch.passed for ch in checks) else EXIT_LEMMA


def cmd_simulate(cfg: dict, do_assert: bool = False) -> int:
    g = make_grid(cfg["grid"]["n"], cfg["grid"]["c"])
    horizon = float(cfg["plan"]["horizon"])
    k = g.exact_step_index(horizon)
    seed = cfg["plan"]["seed"]
    if k > 0:
        noise = sample_noise(g, horizon, seed, cfg["plan"]["sample_index"])
    else:
        noise = np.zeros((0, g.num_space))
    times = cfg["plan"]["snapshot_times"] or [0.0, horizon]
    res = run(g, cfg["drifts"]["name"], cfg["plan"]["initial"], noise, horizon, times)
    prov = provenance(cfg, "simulate")
    files = []
    x = g.points()
    for step in sorted(res.snapshots):
        name = f"snapshot_{step:08d}.csv"
        _write_csv(_outpath(cfg, name), "x,u", zip(x.tolist(), res.snapshots[step].tolist()), prov)
        files.append({"file": name, "step": step, "t": step * g.h})
    _write_json(_outpath(cfg, "manifest.json"), {**prov, "grid": {"n": g.n, "c": g.c, "h": g.h}, "snapshots": files})
    return EXIT_OK


def cmd_noise(cfg: dict, action: str, path: str) -> int:
    if action == "dump":
        g = make_grid(cfg["grid"]["n"], cfg["grid"]["c"])
        noise = sample_noise(g, float(cfg["plan"]["horizon"]), cfg["plan"]["seed"], cfg["plan"]["sample_index"])
        dump_noise(noise, path)
        log.info("wrote %d x %d cells to %s", noise.num_steps, g.num_space, path)
        return EXIT_OK
    noise = load_noise(path)
    summary = {
        "n": noise.grid.n, "c": noise.grid.c, "steps": noise.num_steps, "seed": noise.seed,
        "sample_index": noise.sample_index, "cell_mean": float(noise.cells.mean()) if noise.cells.size else 0.0,
        "cell_var_over_area": float(noise.cells.var() / (noise.grid.h / noise.grid.num_space)) if noise.cells.size else 0.0,
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


# --- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spde-fd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("converge", "strong-error rates from coupled Monte Carlo"),
        ("ou-error", "exact OU coupling error sweep"),
        ("verify", "run the lemma checks"),
        ("simulate", "run the scheme and dump snapshots"),
    ):
        _add_config_flags(sub.add_parser(name, help=helptext))
    pn = sub.add_parser("noise", help="dump or inspect a binary noise field")
    pn.add_argument("action", choices=["dump", "load"])
    pn.add_argument("path")
    _add_config_flags(pn)
    return parser


COMMANDS = {"converge": cmd_converge, "ou-error": cmd_ou_error, "verify": cmd_verify, "simulate": cmd_simulate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    try:
        cfg = effective_config(args)
        if args.command == "noise":
            return cmd_noise(cfg, args.action, args.path)
        return COMMANDS[args.command](cfg, args.assert_)
    except (ConfigError, PlanError, GridError, KeyError, ValueError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"spde-fd: config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"spde-fd: I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
