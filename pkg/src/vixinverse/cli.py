"""
Command-line front end.

    vixinverse <command> --config run.yaml [--out DIR] [--seed N] [--format csv|json] [--require-positive]

Commands: solvability, recover, consistency, hjm, simulate, oracle-check.
Exit status: 0 success, 1 input error, 2 a check failed.

Config (YAML or JSON):

    model:                      # market model, see model_from_dict
      family: bergomi_multi
      h0: 0.2
      gamma: [0.5, 0.5]
      factor: {kind: multi_ou, kappas: [1, 10], sigmas: [0.6, 0.8], rho: 0.4}
    tau: 0.0821917808219178     # optional, 30/365 by default
    truncation: 6               # N (1-D) or total degree (2-D); adaptive when absent
    target: quadratic           # double Nelson only: quadratic | linear
    quadrature: {nodes: 32, max_nodes: 512, tol: 1.0e-10}
    grid: {ranges: [[-1, 1], [-1, 1]], counts: [41, 41]}
    thetas: [0, 0.25, 1]        # consistency
    probe: {form: algebraic, gamma: 0.3, thetas: [0, 0.5, 1]}   # consistency, scalar factor
    hjm: {x: [0.1], t: [0, 0.5], T: [0.5, 1, 2]}
    simulate: {x0: [0.0], horizon: 1.0, dt: 0.00273972602739726, n_paths: 4}
    oracle: {states: [[0.0], [0.3]], n_paths: 200000, dt: null}
    seed: 0
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from .consistency import check_consistency, hjm_grid, markovianity_probe
from .errors import ConvergenceError, NotAvailable, TruncationWarning
from .factors import ScalarOU, simulate, stationary_covariance
from .inverse import (
    TAU,
    QuadratureConfig,
    check_solvability,
    evaluate_v2,
    grid_points,
    positivity_scan,
    recover_bergomi_multi,
    recover_bergomi_scalar,
    recover_double_nelson,
    recover_three_halves,
)
from .marketmodels import BergomiMulti, BergomiScalar, DoubleNelsonMarket, ThreeHalves, model_from_dict
from .oracle import mc_phi

COMMANDS = ("solvability", "recover", "consistency", "hjm", "simulate", "oracle-check")
EXIT_OK, EXIT_INPUT, EXIT_CHECK = 0, 1, 2


class InputError(ValueError):
    pass


# --------------------------------------------------------------------------- io helpers


def load_config(path) -> dict:
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if not isinstance(data, dict) or "model" not in data:
        raise InputError("config must be a mapping with a 'model' block")
    return data


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def write_table(out: Path, stem: str, header, rows, fmt: str) -> Path:
    if fmt == "json":
        path = out / f"{stem}.json"
        write_json(path, [dict(zip(header, r)) for r in rows])
        return path
    path = out / f"{stem}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


# --------------------------------------------------------------------------- config helpers


def _quadrature(cfg) -> QuadratureConfig:
    q = cfg.get("quadrature") or {}
    allowed = {"nodes", "max_nodes", "tol", "tilt", "pole_order"}
    unknown = set(q) - allowed
    if unknown:
        raise InputError(f"unknown quadrature keys {sorted(unknown)}")
    return QuadratureConfig(**q)


def default_region(model):
    fac = model.factor
    if isinstance(model, BergomiScalar):
        sd = math.sqrt(fac.stationary_variance)
        return [(-3 * sd, 3 * sd)], [201]
    if isinstance(model, BergomiMulti):
        sd = np.sqrt(np.diag(stationary_covariance(fac)))
        return [(-3 * sd[0], 3 * sd[0]), (-3 * sd[1], 3 * sd[1])], [41, 41]
    if isinstance(model, ThreeHalves):
        return [(5.0, 60.0)], [221]
    return [(0.01, 1.0), (0.01, 1.0)], [41, 41]


def _grid(cfg, model) -> np.ndarray:
    g = cfg.get("grid")
    if g is None:
        ranges, counts = default_region(model)
    else:
        ranges, counts = g["ranges"], g.get("counts", 41)
    ranges = np.atleast_2d(np.asarray(ranges, dtype=float))
    if ranges.shape != (model.factor.dim, 2):
        raise InputError(f"grid ranges must have shape ({model.factor.dim}, 2)")
    pts = grid_points(ranges, counts)
    if len(pts) == 0:
        raise InputError("grid is empty")
    return pts


def _recover(cfg, model):
    tau = float(cfg.get("tau", TAU))
    n = cfg.get("truncation")
    if isinstance(model, BergomiScalar):
        return recover_bergomi_scalar(model, n, tau)
    if isinstance(model, BergomiMulti):
        return recover_bergomi_multi(model, 6 if n is None else int(n), tau)
    if isinstance(model, ThreeHalves):
        return recover_three_halves(model, n, tau)
    return recover_double_nelson(model, cfg.get("target", "quadratic"), tau)


def _h_target(model, solution, pts):
    if isinstance(model, DoubleNelsonMarket) and solution.target == "linear":
        return np.sqrt(pts[:, 0])
    return model.vix(pts)


def _coord_names(d):
    return [f"x{i + 1}" for i in range(d)]


# --------------------------------------------------------------------------- commands


def cmd_solvability(cfg, model, args) -> int:
    rep = check_solvability(model, _quadrature(cfg) if "quadrature" in cfg else None)
    write_json(args.out / "solvability.json", rep.to_dict())
    print(f"solvability {model.family}: value={rep.value:.3e} scale={rep.scale:.3e} passed={rep.passed}")
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_recover(cfg, model, args) -> int:
    sol = _recover(cfg, model)
    pts = _grid(cfg, model)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", TruncationWarning)
        v2 = evaluate_v2(sol, pts, check=True)
    h = _h_target(model, sol, pts)
    v = np.where(v2 >= 0, np.sqrt(np.abs(v2)), np.nan)
    rows = [(*p, vi, hi, vi - hi) for p, vi, hi in zip(pts, v, h)]
    write_table(args.out, "recover_grid", _coord_names(pts.shape[1]) + ["v", "h", "Q"], rows, args.format)
    scan = positivity_scan(sol, np.column_stack([pts.min(0), pts.max(0)]), np.array([len(np.unique(c)) for c in pts.T]))
    write_json(
        args.out / "solution.json",
        {
            "model": model.to_dict(),
            "solution": sol.to_dict(),
            "positivity": {
                "min_value": scan.min_value,
                "argmin": scan.argmin,
                "fraction_negative": scan.fraction_negative,
                "n_points": scan.n_points,
            },
            "truncation_warnings": len(caught),
        },
    )
    print(f"recover {model.family}: min v^2 on grid = {scan.min_value:.6g} at {scan.argmin}")
    if args.require_positive and scan.min_value < 0:
        return EXIT_CHECK
    return EXIT_OK


def _nu_family(spec):
    form = spec.get("form", "exponential")
    g = float(spec.get("gamma", 0.3))
    k = float(spec.get("kappa", 1.0))
    if form == "exponential":
        return lambda th: g * math.exp(-k * th)
    if form == "algebraic":
        return lambda th: g / (1.0 + th)
    if form == "zero":
        return lambda th: 0.0
    raise InputError(f"unknown probe form {form!r}")


def cmd_consistency(cfg, model, args) -> int:
    thetas = cfg.get("thetas", [0.0])
    pts = _grid(cfg, model)
    rep = check_consistency(model, pts, thetas, tol=float(cfg.get("tol", 1e-9)))
    header = ["theta"] + _coord_names(pts.shape[1]) + ["drift_residual", "diffusion_residual"]
    write_table(args.out, "consistency", header, list(rep.rows()), args.format)
    payload = {"model": model.to_dict(), "summary": rep.summary()}
    if "probe" in cfg:
        if not isinstance(model.factor, ScalarOU):
            raise InputError("the probe needs a scalar OU factor")
        spec = cfg["probe"]
        res = markovianity_probe(
            _nu_family(spec), model.factor, spec.get("thetas", [0.0, 0.5, 1.0]), seed=args.seed,
            n_histories=int(spec.get("n_histories", 2000)),
        )
        payload["probe"] = {"family": spec, **res.to_dict()}
    write_json(args.out / "consistency.json", payload)
    print(f"consistency {model.family}: {rep.summary()}")
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_hjm(cfg, model, args) -> int:
    spec = cfg.get("hjm") or {}
    x = spec.get("x", [0.0] * model.factor.dim if not isinstance(model, (ThreeHalves, DoubleNelsonMarket)) else None)
    if x is None:
        raise InputError("hjm.x is required for this model")
    rows = [q.row() for q in hjm_grid(model, x, spec.get("t", [0.0]), spec.get("T", [0.25, 0.5, 1.0]))]
    m = model.factor.dim
    header = ["t", "T", "forward"] + [f"beta_{i + 1}" for i in range(m)] + [f"nu_{i + 1}" for i in range(m)] + ["alpha"]
    write_table(args.out, "hjm", header, rows, args.format)
    print(f"hjm {model.family}: {len(rows)} (t, T) pairs")
    return EXIT_OK


def cmd_simulate(cfg, model, args) -> int:
    spec = cfg.get("simulate") or {}
    if "x0" not in spec:
        raise InputError("simulate.x0 is required")
    ens = simulate(
        model.factor,
        spec["x0"],
        float(spec.get("horizon", 1.0)),
        float(spec.get("dt", 1.0 / 365.0)),
        int(spec.get("n_paths", 1)),
        args.seed,
    )
    if args.format == "json":
        write_json(args.out / "paths.json", {"times": ens.times, "states": ens.states, "seed": ens.seed, "scheme": ens.scheme})
    else:
        ens.to_csv(args.out / "paths.csv")
    print(f"simulate {model.factor.kind}: {ens.n_paths} path(s), {ens.times.size} times")
    return EXIT_OK


def cmd_oracle(cfg, model, args) -> int:
    sol = _recover(cfg, model)
    spec = cfg.get("oracle") or {}
    states = spec.get("states")
    if not states:
        raise InputError("oracle.states is required")
    rows, ok = [], True
    for i, x in enumerate(states):
        pt = np.atleast_2d(np.asarray(x, dtype=float))
        est = mc_phi(
            model.factor, sol, pt[0], sol.tau, int(spec.get("n_paths", 200_000)), spec.get("dt"), args.seed + i
        )
        target = float(_h_target(model, sol, pt)[0] ** 2)
        z = (est.value - target) / est.standard_error if est.standard_error > 0 else 0.0
        within = abs(z) <= 4.0
        ok &= within
        rows.append((*pt[0], target, est.value, est.standard_error, z, within))
    header = _coord_names(model.factor.dim) + ["h2", "estimate", "standard_error", "z", "within_4se"]
    write_table(args.out, "oracle_check", header, rows, args.format)
    print(f"oracle-check {model.family}: {'all within 4 SE' if ok else 'MISMATCH'}")
    return EXIT_OK if ok else EXIT_CHECK


HANDLERS = {
    "solvability": cmd_solvability,
    "recover": cmd_recover,
    "consistency": cmd_consistency,
    "hjm": cmd_hjm,
    "simulate": cmd_simulate,
    "oracle-check": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vixinverse", description="Recover SVM volatility functions from VIX market models.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path, default=Path("."))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--require-positive", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = int(cfg.get("seed", 0))
        if args.seed < 0 or args.seed >= 2**64:
            raise InputError("seed must be an unsigned 64-bit integer")
        model = model_from_dict(cfg["model"])
        args.out.mkdir(parents=True, exist_ok=True)
    except (OSError, ValueError, KeyError, TypeError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return HANDLERS[args.command](cfg, model, args)
    except (NotAvailable, InputError, KeyError, TypeError, NotImplementedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
