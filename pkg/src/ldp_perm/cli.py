"""Command-line interface: ``ldp-perm test | power | find-separation``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import continuous, discrete
from .harness import (ExperimentConfig, ExperimentResult, binary_search_separation, config_rejection_rate,
                      estimate_power, search_depth)
from .rng import RngStream

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

TEST_METHODS = ("discrete_ni", "discrete_i", "cont_ni", "cont_i", "adaptive_ni", "adaptive_i")
CSV_HEADER = ExperimentResult.columns()

# keys a grid config may contain; list-valued entries are swept
GRID_AXES = ("method", "family", "d", "eps", "gamma", "n1", "n2", "s", "k", "manual_R")
GRID_SCALARS = ("reps", "B", "alpha", "seed", "trunc_const", "workers", "randomized")


class DataError(Exception):
    pass


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Input parsing
# ---------------------------------------------------------------------------

def read_samples(path: str, discrete_data: bool) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"cannot read data file: {path}")
    rows = []
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        try:
            if discrete_data:
                if len(parts) != 1:
                    raise ValueError
                rows.append(int(parts[0]))
            else:
                rows.append([float(v) for v in parts])
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed line {text!r}") from None
    if not rows:
        raise DataError(f"{path}: no observations")
    if discrete_data:
        return np.array(rows, dtype=np.int64)
    if len({len(r) for r in rows}) != 1:
        raise DataError(f"{path}: rows have differing dimensions")
    return np.array(rows, dtype=float)


def load_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"cannot read config file: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return cfg


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_test(args: argparse.Namespace) -> dict:
    discrete_data = args.method.startswith("discrete")
    x = read_samples(args.x, discrete_data)
    y = read_samples(args.y, discrete_data)
    stream = RngStream(args.seed)
    if discrete_data:
        d = args.d if args.d is not None else int(max(x.max(), y.max()))
        if args.method == "discrete_ni":
            out = discrete.test_discrete_noninteractive(x, y, d, args.eps, args.B, args.alpha, stream,
                                                        randomized=args.randomized)
        else:
            out = discrete.test_discrete_interactive(x, y, d, args.eps, args.B, args.alpha, stream,
                                                     trunc_const=args.trunc_const, randomized=args.randomized)
    else:
        if x.shape[1] != y.shape[1]:
            raise DataError("samples have different dimensions")
        sob = continuous.SobolevConfig(s=args.s, d=x.shape[1])
        if args.method == "cont_ni":
            out = continuous.test_cont_noninteractive(x, y, args.eps, sob, args.B, args.alpha, stream,
                                                      manual_R=args.manual_R, randomized=args.randomized)
        elif args.method == "cont_i":
            out = continuous.test_cont_interactive(x, y, args.eps, sob, args.B, args.alpha, args.trunc_const,
                                                   stream, manual_R=args.manual_R, randomized=args.randomized)
        else:
            mode = "noninteractive" if args.method == "adaptive_ni" else "interactive"
            out = continuous.test_adaptive(x, y, args.eps, sob, args.B, args.alpha, mode, stream,
                                           constant_c=args.trunc_const, randomized=args.randomized)
    statistic = out.statistic if np.isfinite(out.statistic) else None
    return {"method": args.method, "p_value": out.p_value, "reject": bool(out.reject),
            "statistic": statistic, "B": out.n_permutations, "seed": args.seed}


def _config_fields() -> set[str]:
    return {f.name for f in fields(ExperimentConfig)}


def expand_grid(cfg: dict, defaults: argparse.Namespace) -> tuple[list[ExperimentConfig], dict]:
    """Cartesian product of the list-valued axes, in the fixed axis order."""
    valid = set(GRID_AXES) | set(GRID_SCALARS)
    unknown = sorted(set(cfg) - valid)
    if unknown:
        raise UsageError(f"invalid config key(s) {unknown}; valid keys: {sorted(valid)}")
    if "method" not in cfg:
        raise UsageError("config needs a 'method' entry")
    settings = {
        "reps": cfg.get("reps", defaults.reps),
        "B": cfg.get("B", defaults.B),
        "alpha": cfg.get("alpha", defaults.alpha),
        "seed": cfg.get("seed", defaults.seed),
        "trunc_const": cfg.get("trunc_const", defaults.trunc_const),
        "workers": cfg.get("workers", defaults.workers),
        "randomized": cfg.get("randomized", defaults.randomized),
    }
    axes = []
    for key in GRID_AXES:
        if key in cfg:
            val = cfg[key]
            axes.append((key, val if isinstance(val, list) else [val]))
        elif key == "manual_R" and defaults.manual_R is not None:
            axes.append((key, [defaults.manual_R]))
    cells = []
    for combo in _product([vals for _, vals in axes]):
        kw = dict(zip([k for k, _ in axes], combo))
        kw.update(B=settings["B"], alpha=settings["alpha"], trunc_const=settings["trunc_const"],
                  randomized=settings["randomized"])
        try:
            cells.append(ExperimentConfig(**kw))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid grid cell {kw}: {exc}") from None
    return cells, settings


def _product(lists):
    if not lists:
        yield ()
        return
    head, *rest = lists
    for h in head:
        for tail in _product(rest):
            yield (h,) + tail


def cmd_power(args: argparse.Namespace) -> str:
    cells, settings = expand_grid(load_json(args.config), args)
    root = RngStream(settings["seed"])
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    for i, cell in enumerate(cells):
        res = estimate_power(cell, settings["reps"], root.derive(i), workers=settings["workers"])
        writer.writerow(res.as_row())
    return buf.getvalue()


def parse_results_csv(text: str) -> list[ExperimentResult]:
    types = {f.name: f.type for f in fields(ExperimentResult)}
    conv = {"int": int, "float": float, "str": str}
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(ExperimentResult(**{k: conv[types[k]](v) for k, v in row.items()}))
    return out


def cmd_find_separation(args: argparse.Namespace) -> dict:
    cfg = load_json(args.config)
    allowed = (_config_fields() - {"gamma"}) | {"delta", "r", "seed", "workers"}
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise UsageError(f"invalid config key(s) {unknown}; valid keys: {sorted(allowed)}")
    for key in ("method", "delta", "r"):
        if key not in cfg:
            raise UsageError(f"config needs a {key!r} entry")
    delta, r = float(cfg.pop("delta")), int(cfg.pop("r"))
    seed = int(cfg.pop("seed", args.seed))
    workers = int(cfg.pop("workers", args.workers))
    cfg.setdefault("B", args.B)
    cfg.setdefault("alpha", args.alpha)
    cfg.setdefault("trunc_const", args.trunc_const)
    if cfg["method"] == "stub_coin":
        cfg.setdefault("family", "discrete_L1")
    try:
        base = ExperimentConfig(**cfg)
        search = binary_search_separation(delta, r, config_rejection_rate(base, workers), RngStream(seed))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return {
        "gamma_star": search.gamma_star,
        "probes": [{"gamma": g, "beta_hat": b} for g, b in search.probes],
        "iterations": search.iterations,
        "max_iterations": search_depth(delta),
    }


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--reps", type=int, default=2000, help="replications per grid cell")
    p.add_argument("--B", type=int, default=199, help="number of permutations (default 199)")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level (default 0.05)")
    p.add_argument("--trunc-const", dest="trunc_const", type=float, default=1.0,
                   help="constant in the truncation width and eta grid (default 1)")
    p.add_argument("--manual-R", dest="manual_R", type=float, default=None,
                   help="fix the basis radius instead of using the rate-optimal formula")
    p.add_argument("--workers", type=int, default=1, help="worker processes for replications")
    p.add_argument("--randomized", action="store_true", help="randomise over permutation ties")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldp-perm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="run one test on two data files")
    t.add_argument("method", choices=TEST_METHODS)
    t.add_argument("x", help="first sample, one observation per line")
    t.add_argument("y", help="second sample, one observation per line")
    t.add_argument("--eps", type=float, required=True, help="privacy level")
    t.add_argument("--d", type=int, default=None, help="category count (discrete; default: max observed)")
    t.add_argument("--s", type=float, default=1.0, help="assumed smoothness (continuous)")
    _common(t)

    pw = sub.add_parser("power", help="estimate rejection rates over a JSON grid, CSV to stdout")
    pw.add_argument("config")
    pw.add_argument("--output", "-o", default=None, help="write CSV here instead of stdout")
    _common(pw)

    fs = sub.add_parser("find-separation", help="bisection search for the separation point")
    fs.add_argument("config")
    _common(fs)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.command == "test":
            text = json.dumps(cmd_test(args))
        elif args.command == "power":
            text = cmd_power(args)
            if args.output:
                Path(args.output).write_text(text)
                return EXIT_OK
        else:
            text = json.dumps(cmd_find_separation(args))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
