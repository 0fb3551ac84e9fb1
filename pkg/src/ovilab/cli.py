"""Command-line harness.

    ovilab run --config cfg.json [--seed N] [--out DIR]
    ovilab sweep --config cfg.json --grid grid.json [--out DIR]
    ovilab spectrum --activation quadratic --d 3 --jmax 8
    ovilab validate [--fast]

Exit codes: 0 ok, 2 bad configuration, 3 numerical failure, 4 invariant violation.
``OVILAB_WORKERS`` sets the number of worker processes for seeds and sweep cells.
"""
import argparse
import copy
import csv
import io
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import diagnostics as dg
from .errors import InputError, InvariantViolation, NumericalError
from .kernels import DecayClass, linear_kernel, rbf_kernel
from .kovi import KoviConfig, run_kovi
from .mdp import EpisodicMdp, make_chain_mdp, make_linear_mdp, make_sphere_mdp
from .novi import NoviConfig, init_symmetric, run_novi
from .records import atomic_write
from .spectrum import bt_schedule, ntk_closed_form, ntk_decay, ntk_kfun, parse_activation, spherical_spectrum


EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4
INVARIANT_TOL = 1e-8

SWEEP_KEYS = ("beta", "lam", "T", "m")
SWEEP_HEADER = ["cell", "beta", "lam", "T", "m", "seed", "final_regret", "exponent",
                "optimism_violation_frac", "max_decomp_residual", "telescope_min_slack",
                "ledger_max_err", "linearization_gap_max"]

DEFAULTS = {
    "mode": "kovi",
    "mdp": {"kind": "linear", "d": 4, "n_states": 10, "n_actions": 3, "H": 3, "seed": 0},
    "kernel": {"kind": "linear"},
    "net": {"m": 256, "activation": "quadratic", "seed": 0},
    "T": 100,
    "lam": None,
    "beta": 1.0,
    "seeds": [0],
    "diagnostics": True,
    "out": "results",
}


class ConfigError(InputError):
    pass


# --- configuration ----------------------------------------------------------------

def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return normalize_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def normalize_config(raw, base_dir="."):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(DEFAULTS) - {"oracle", "tie_break", "frozen", "shadow", "spectrum"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = copy.deepcopy(DEFAULTS)
    for key, val in raw.items():
        if isinstance(val, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **val} if key != "mdp" or "kind" not in val else dict(val)
        else:
            cfg[key] = val
    if cfg["mode"] not in ("kovi", "novi", "spectrum", "validate"):
        raise ConfigError(f"unknown mode {cfg['mode']!r}")
    mdp = cfg["mdp"]
    if mdp.get("kind") == "file":
        p = mdp.get("path")
        if not p:
            raise ConfigError("mdp.kind 'file' needs a path")
        mdp["path"] = p if os.path.isabs(p) else os.path.join(base_dir, p)
        if not os.path.exists(mdp["path"]):
            raise ConfigError(f"fixture not found: {mdp['path']}")
    if not isinstance(cfg["seeds"], list) or not all(isinstance(s, int) for s in cfg["seeds"]):
        raise ConfigError("seeds must be a list of integers")
    if not isinstance(cfg["T"], int) or cfg["T"] < 1:
        raise ConfigError("T must be a positive integer")
    return cfg


def build_mdp(spec):
    kind = spec.get("kind", "linear")
    try:
        if kind == "file":
            return EpisodicMdp.from_json(spec["path"]), None
        if kind == "linear":
            return make_linear_mdp(spec["d"], spec["n_states"], spec["n_actions"], spec["H"],
                                   rng_seed=spec.get("seed", 0))
        if kind == "sphere":
            return make_sphere_mdp(spec["d"], spec["n_states"], spec["n_actions"], spec["H"],
                                   rng_seed=spec.get("seed", 0)), None
        if kind == "chain":
            return make_chain_mdp(spec.get("H", 2)), None
    except KeyError as exc:
        raise ConfigError(f"mdp spec missing {exc}") from exc
    raise ConfigError(f"unknown mdp kind {kind!r}")


def build_kernel(spec, mdp, default):
    kind = spec.get("kind", "linear")
    if kind == "linear":
        return default if default is not None else linear_kernel(DecayClass.finite(mdp.dim, d=mdp.dim))
    if kind == "rbf":
        return rbf_kernel(float(spec.get("sigma", 1.0)))
    if kind == "ntk":
        return ntk_closed_form(spec.get("activation", "quadratic"), mdp.dim)
    raise ConfigError(f"unknown kernel kind {kind!r}")


def resolve_beta(cfg, decay, H):
    """Explicit number, or ``{"schedule": {"C_b": .., "decay": {..} | "auto"}}``."""
    beta = cfg["beta"]
    if isinstance(beta, (int, float)) and not isinstance(beta, bool):
        return float(beta)
    if isinstance(beta, dict) and "schedule" in beta:
        sched = beta["schedule"] or {}
        spec = sched.get("decay", "auto")
        if spec != "auto":
            try:
                decay = DecayClass(**spec)
            except TypeError as exc:
                raise ConfigError(f"bad decay spec: {exc}") from exc
        if decay is None:
            raise ConfigError("beta schedule needs a decay class")
        return float(bt_schedule(decay, H, cfg["T"], float(sched.get("C_b", 1.0))))
    raise ConfigError("beta must be a number or {'schedule': {...}}")


# --- runs -------------------------------------------------------------------------

def run_one(cfg, seed):
    """One seed of one config; returns (record, report)."""
    mdp, default_kernel = build_mdp(cfg["mdp"])
    lam = cfg["lam"]
    if cfg["mode"] == "novi":
        net_spec = cfg["net"]
        net = init_symmetric(int(net_spec["m"]), mdp.dim, int(net_spec.get("seed", 0)),
                             net_spec.get("activation", "quadratic"))
        beta = resolve_beta(cfg, ntk_decay(net_spec.get("activation", "quadratic"), mdp.dim), mdp.H)
        ncfg = NoviConfig(cfg["T"], beta, lam, cfg.get("tie_break", "lowest"),
                          frozen=bool(cfg.get("frozen", False)), shadow=bool(cfg.get("shadow", False)),
                          oracle=dict(cfg.get("oracle", {})))
        record, agent, trace = run_novi(mdp, net, ncfg, rng_seed=seed)
        blocks = agent.precision
    else:
        kernel = build_kernel(cfg["kernel"], mdp, default_kernel)
        beta = resolve_beta(cfg, kernel.decay, mdp.H)
        kcfg = KoviConfig(cfg["T"], beta, lam, cfg.get("tie_break", "lowest"))
        record, agent, trace = run_kovi(mdp, kernel, kcfg, rng_seed=seed)
        blocks = agent.blocks
    report = dg.audit_run(trace, mdp, blocks) if cfg["diagnostics"] else None
    return record, report


def _check_invariants(report):
    if report is None:
        return
    if report.max_decomp_residual > INVARIANT_TOL:
        raise InvariantViolation(f"decomposition residual {report.max_decomp_residual:.3e}")
    if report.telescope_min_slack < -INVARIANT_TOL:
        raise InvariantViolation(f"telescope slack {report.telescope_min_slack:.3e}")
    if report.ledger_max_err > INVARIANT_TOL:
        raise InvariantViolation(f"info-gain ledger error {report.ledger_max_err:.3e}")


def _workers():
    try:
        return max(1, int(os.environ.get("OVILAB_WORKERS", "1")))
    except ValueError as exc:
        raise ConfigError("OVILAB_WORKERS must be an integer") from exc


def _map(fn, jobs):
    n = _workers()
    if n == 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _seed_job(cfg, seed):
    record, report = run_one(cfg, seed)
    out = cfg["out"]
    record.to_csv(os.path.join(out, f"regret_seed{seed}.csv"))
    if report is not None:
        report.to_json(os.path.join(out, f"diagnostics_seed{seed}.json"))
    return seed, float(record.cum_regret[-1]), record.exponent(), report


def cmd_run(args):
    cfg = load_config(args.config)
    if args.out:
        cfg["out"] = args.out
    if cfg["mode"] == "spectrum":
        sp = cfg.get("spectrum", {})
        return _spectrum(sp.get("activation", "quadratic"), int(sp.get("d", 3)), int(sp.get("jmax", 8)),
                         os.path.join(cfg["out"], "spectrum.json"))
    if cfg["mode"] == "validate":
        return cmd_validate(argparse.Namespace(fast=True))
    seeds = [args.seed] if args.seed is not None else cfg["seeds"]
    results = _map(_seed_job, [(cfg, s) for s in seeds])
    for seed, final, expo, report in results:
        print(f"seed={seed} mode={cfg['mode']} T={cfg['T']} final_regret={final:.6g} exponent={expo:.4f}")
    for *_, report in results:
        _check_invariants(report)
    return EXIT_OK


def grid_cells(grid):
    if not isinstance(grid, dict):
        raise ConfigError("grid must be a JSON object mapping parameter -> list")
    bad = set(grid) - set(SWEEP_KEYS)
    if bad:
        raise ConfigError(f"unsupported grid keys {sorted(bad)}; allowed {list(SWEEP_KEYS)}")
    if not grid or any(len(v) == 0 for v in grid.values()):
        return []
    keys = sorted(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def _cell_job(cfg, cell_id, cell, seed):
    c = copy.deepcopy(cfg)
    for k, v in cell.items():
        if k == "m":
            c["net"]["m"] = int(v)
        elif k == "beta" and v == "schedule":
            if not isinstance(cfg["beta"], dict):
                c["beta"] = {"schedule": {}}
        else:
            c[k] = v
    record, report = run_one(c, seed)
    lam = c["lam"] if c["lam"] is not None else 1.0 + 1.0 / c["T"]
    diag = [repr(float(getattr(report, k))) if report else "" for k in
            ("optimism_violation_frac", "max_decomp_residual", "telescope_min_slack", "ledger_max_err")]
    gap = record.extra.get("linearization_gap")
    m = c["net"]["m"] if c["mode"] == "novi" else ""
    return [cell_id, repr(record.beta), repr(float(lam)), c["T"], m, seed,
            repr(float(record.cum_regret[-1])), repr(record.exponent()), *diag,
            repr(float(np.max(gap))) if gap is not None else ""]


def cmd_sweep(args):
    cfg = load_config(args.config)
    if args.out:
        cfg["out"] = args.out
    try:
        with open(args.grid, encoding="utf-8") as fh:
            grid = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read grid {args.grid}: {exc}") from exc
    cells = grid_cells(grid)
    jobs = [(cfg, i, cell, seed) for i, cell in enumerate(cells) for seed in cfg["seeds"]]
    rows = _map(_cell_job, jobs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    w.writerows(rows)
    path = os.path.join(cfg["out"], "sweep.csv")
    atomic_write(path, buf.getvalue())
    print(f"sweep cells={len(cells)} rows={len(rows)} -> {path}")
    return EXIT_OK


def _spectrum(activation, d, jmax, path=None):
    parse_activation(activation)
    spec = spherical_spectrum(ntk_kfun(activation, d), d, jmax, kernel=f"ntk_{activation}")
    data = spec.to_dict()
    data["activation"] = activation
    data["nonzero_count"] = spec.nonzero_count()
    text = json.dumps(data)
    print(text)
    if path:
        atomic_write(path, text + "\n")
    return EXIT_OK


def cmd_spectrum(args):
    return _spectrum(args.activation, args.d, args.jmax, args.out)


def cmd_validate(args):
    from .validation import checks

    failed = 0
    for name, fn in checks(fast=args.fast):
        ok, msg = fn()
        print(f"{'PASS' if ok else 'FAIL'} {name}: {msg}")
        failed += not ok
    return EXIT_INVARIANT if failed else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="ovilab", description="Optimistic value iteration laboratory")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run KOVI/NOVI experiments from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", help="grid over beta, lam, T or m")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)
    sp = sub.add_parser("spectrum", help="Funk-Hecke spectrum of a limiting NTK")
    sp.add_argument("--activation", required=True)
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--jmax", type=int, default=8)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_spectrum)
    v = sub.add_parser("validate", help="invariant suite on bundled fixtures")
    v.add_argument("--fast", action="store_true")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValueError, KeyError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
