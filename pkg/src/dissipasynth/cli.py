"""Config-driven experiment runner: record data, synthesize, verify, sweep
alpha, emit curves.  All structured artifacts are JSON, curves are CSV, and
identical configs plus seeds give byte-identical outputs."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import synthesis as syn
from .analysis import worst_case_check
from .model import Controller, Plant, close_loop, frequency_response

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2


class ConfigError(ValueError):
    pass


def _event(level, message, **extra):
    doc = {"level": level, "message": message}
    doc.update(extra)
    print(json.dumps(doc), file=sys.stderr)


def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            cell if isinstance(cell, str) else _fmt(cell) for cell in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _load_matrix_doc(doc, base_dir):
    if isinstance(doc, dict) and "file" in doc:
        with open(base_dir / doc["file"]) as f:
            return json.load(f)
    return doc


def load_plant(cfg, base_dir) -> Plant:
    doc = _load_matrix_doc(cfg["plant"], base_dir)
    try:
        return Plant(A=doc["A"], B1=doc["B1"], B=doc["B"], C1=doc["C1"],
                     D1=doc["D1"], E=doc["E"], C=doc["C"], F=doc["F"])
    except KeyError as e:
        raise ConfigError(f"plant definition missing matrix {e}") from e


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        cfg = json.load(f)
    for section in ("plant", "recording", "supply", "synthesis",
                    "verification"):
        if section not in cfg:
            raise ConfigError(f"config missing section {section!r}")
    rec = cfg["recording"]
    eps = rec.get("noise", {}).get("energy_eps")
    if eps is None or eps <= 0:
        raise ConfigError("energy_eps must be positive")
    if rec.get("N", 0) < 1:
        raise ConfigError("recording N must be >= 1")
    supply = cfg["supply"]
    if ("hinf" in supply) == ("general" in supply):
        raise ConfigError("supply must have exactly one of 'hinf'/'general'")
    inp = rec.get("input", {})
    if inp.get("policy") == "file":
        p = Path(path).parent / inp.get("path", "")
        if not p.exists():
            raise ConfigError(f"input file not found: {p}")
    return cfg


def _feas_tol():
    raw = os.environ.get("DISSIPASYNTH_SOLVER_TOL")
    return float(raw) if raw else None


def generate_inputs(cfg, plant, base_dir, seed_override=None):
    rec = cfg["recording"]
    n, p, m, q, l = plant.dims
    N = rec["N"]
    inp = rec.get("input", {"policy": "prbs", "seed": 0})
    policy = inp.get("policy", "prbs")
    seed = inp.get("seed", 0) if seed_override is None else seed_override
    if policy == "prbs":
        rng = np.random.default_rng(seed)
        u_seq = [2.0 * rng.integers(0, 2, m) - 1.0 for _ in range(N)]
    elif policy == "sine":
        freqs = inp.get("freqs") or [0.1 * (j + 1) for j in range(m)]
        u_seq = [np.array([np.sin(f * k) for f in freqs[:m]])
                 for k in range(N)]
    elif policy == "file":
        with open(base_dir / inp["path"]) as f:
            u_seq = [np.asarray(u, dtype=float) for u in json.load(f)]
        if len(u_seq) < N:
            raise ConfigError("input file shorter than recording horizon")
        u_seq = u_seq[:N]
    else:
        raise ConfigError(f"unknown input policy {policy!r}")
    noise = rec["noise"]
    nseed = noise.get("seed", 1) if seed_override is None else seed_override + 1
    rng = np.random.default_rng(nseed)
    eps = noise["energy_eps"]
    # componentwise uniform(-eps/sqrt(p), eps/sqrt(p)) keeps the Gram
    # matrix of the disturbance under eps^2 N I
    w_seq = [rng.uniform(-eps, eps, p) / np.sqrt(p) for _ in range(N)]
    x0 = np.asarray(rec.get("x0", np.zeros(n)), dtype=float)
    return u_seq, w_seq, x0


def make_supply(cfg, p, q, gamma_override=None):
    supply = cfg["supply"]
    if "hinf" in supply:
        h = supply["hinf"]
        if gamma_override is not None:
            return syn.hinf_supply(gamma_override, p, q), False
        if h.get("minimize"):
            return syn.hinf_supply(1.0, p, q), True
        gamma = h.get("gamma")
        if gamma is None or gamma <= 0:
            raise ConfigError("hinf supply needs positive 'gamma' or "
                              "'minimize': true")
        return syn.hinf_supply(gamma, p, q), False
    g = supply["general"]
    return syn.supply_factor(g["Q"], g["S"], g["R"]), False


def make_strategy(cfg, alpha_grid=None):
    if alpha_grid is not None:
        lo, hi, steps = alpha_grid
        return syn.GridStrategy(lo=lo, hi=hi, steps=steps)
    a = cfg["synthesis"].get("alpha")
    if not a:
        return None
    if a.get("strategy") == "grid":
        return syn.GridStrategy(lo=a.get("lo", 1e-2), hi=a.get("hi", 1e4),
                                steps=a.get("steps", 32))
    if a.get("strategy") == "golden":
        return syn.GoldenStrategy(lo=a.get("lo", 1e-2), hi=a.get("hi", 1e4),
                                  iters=a.get("iters", 16))
    raise ConfigError(f"unknown alpha strategy {a.get('strategy')!r}")


def stage_record(cfg, base_dir, out_dir, seed_override=None):
    plant = load_plant(cfg, base_dir)
    u_seq, w_seq, x0 = generate_inputs(cfg, plant, base_dir, seed_override)
    rec = data_mod.record(plant, u_seq, w_seq, x0)
    rec.to_json(out_dir / "record.json")
    _event("info", "record written", N=rec.N, n=rec.n, m=rec.m)
    return rec


def _consistency(cfg, rec, plant):
    eps = cfg["recording"]["noise"]["energy_eps"]
    p = plant.dims[1]
    bound = data_mod.energy_phi(eps, rec.N, p)
    cs = data_mod.complete(rec, bound, plant.B1)
    report = data_mod.check_assumptions(rec, cs)
    if not all(report.values()):
        raise ConfigError(f"data assumptions violated: {report}")
    return cs


def _controller_doc(res):
    ctrl = res.controller
    return {
        "alpha": res.vars.alpha,
        "gamma": res.performance,
        "slack": res.slack,
        "decision_vars": {
            "X": res.vars.X.tolist(), "Y": res.vars.Y.tolist(),
            "Atc": res.vars.Atc.tolist(), "Btc": res.vars.Btc.tolist(),
            "Ctc": res.vars.Ctc.tolist(), "Dc": res.vars.Dc.tolist(),
        },
        "controller": {
            "Ac": ctrl.Ac.tolist(), "Bc": ctrl.Bc.tolist(),
            "Cc": ctrl.Cc.tolist(), "Dc": ctrl.Dc.tolist(),
        },
    }


def _write_trace(out_dir, trace):
    rows = [(a, "" if np.isnan(v) else _fmt(v), s)
            for a, v, s in sorted(trace, key=lambda r: r[0])]
    _write_csv(out_dir / "alpha_trace.csv",
               ["alpha", "gamma_or_slack", "status"],
               [(_fmt(a), v, s) for a, v, s in rows])


def stage_synth(cfg, base_dir, out_dir, rec=None, alpha_grid=None):
    plant = load_plant(cfg, base_dir)
    if rec is None:
        rec_path = out_dir / "record.json"
        if not rec_path.exists():
            raise ConfigError(f"missing intermediate file: {rec_path}")
        rec = data_mod.DataRecord.from_json(str(rec_path))
    cs = _consistency(cfg, rec, plant)
    cs.to_json(out_dir / "consistency.json")
    n, p, m, q, l = plant.dims
    supply, minimize = make_supply(cfg, p, q)
    ing = syn.SynthesisIngredients(cs=cs, supply=supply, B1=plant.B1,
                                  C1=plant.C1, D1=plant.D1, E=plant.E,
                                  C=plant.C, F=plant.F)
    strategy = make_strategy(cfg, alpha_grid)
    objective = "minimize_gamma_sq" if minimize else "none"
    tol = _feas_tol()
    kwargs = {} if tol is None else {"feas_tol": tol}
    try:
        res = syn.search_alpha(ing, strategy=strategy, objective=objective,
                               **kwargs)
    except syn.SynthesisInfeasible as e:
        _write_trace(out_dir, e.trace)
        _event("error", "synthesis infeasible over searched range")
        return None
    _write_trace(out_dir, res.trace)
    doc = _controller_doc(res)
    if not minimize:
        doc["gamma"] = cfg["supply"].get("hinf", {}).get("gamma")
    with open(out_dir / "result.json", "w") as f:
        json.dump(doc, f)
    _event("info", "synthesis done", alpha=res.vars.alpha,
           gamma=doc["gamma"], slack=res.slack)
    return res, ing


def stage_verify(cfg, base_dir, out_dir):
    plant = load_plant(cfg, base_dir)
    res_path = out_dir / "result.json"
    rec_path = out_dir / "record.json"
    for pth in (res_path, rec_path):
        if not pth.exists():
            raise ConfigError(f"missing intermediate file: {pth}")
    with open(res_path) as f:
        doc = json.load(f)
    ctrl = Controller(**doc["controller"])
    rec = data_mod.DataRecord.from_json(str(rec_path))
    cs = _consistency(cfg, rec, plant)
    n, p, m, q, l = plant.dims
    gamma = doc.get("gamma")
    supply, _ = make_supply(cfg, p, q, gamma_override=gamma)
    ing = syn.SynthesisIngredients(cs=cs, supply=supply, B1=plant.B1,
                                  C1=plant.C1, D1=plant.D1, E=plant.E,
                                  C=plant.C, F=plant.F)
    ver = cfg["verification"]
    samples = ver.get("samples", 20)
    grid_size = ver.get("grid_size", 512)
    seed = ver.get("seed", 0)
    report = worst_case_check(ing, ctrl, samples, seed, grid_size=grid_size)
    with open(out_dir / "report.json", "w") as f:
        json.dump(report, f)
    # gain curves: nominal closed loop plus every Schur-stable sample
    nominal = close_loop(plant.with_dynamics(cs.As, cs.Bs), ctrl)
    if nominal.spectral_radius() < 1.0:
        curve = frequency_response(nominal, grid_size)
        _write_csv(out_dir / "gain_curve.csv", ["theta", "gain"],
                   list(zip(curve.grid, curve.gain)))
    else:
        _event("warning", "nominal closed loop unstable; gain curve skipped")
    if samples > 0:
        pairs, _ = data_mod.sample_members(cs, samples, seed)
        for k, (A, B) in enumerate(pairs):
            loop = close_loop(plant.with_dynamics(A, B), ctrl)
            if loop.spectral_radius() >= 1.0:
                continue
            c = frequency_response(loop, grid_size)
            _write_csv(out_dir / f"gain_curve_sample_{k:03d}.csv",
                       ["theta", "gain"], list(zip(c.grid, c.gain)))
    _event("info", "verification done",
           all_certified=report["all_certified"])
    return report


def _parse_alpha_grid(raw):
    try:
        lo, hi, steps = raw.split(":")
        return float(lo), float(hi), int(steps)
    except ValueError as e:
        raise ConfigError(
            f"--alpha-grid must be lo:hi:steps, got {raw!r}") from e


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="dissipasynth",
        description="data-driven dissipative output-feedback synthesis")
    parser.add_argument("command",
                        choices=["run", "record", "synth", "verify", "sweep"])
    parser.add_argument("config", help="experiment config (JSON)")
    parser.add_argument("--out", help="output directory override")
    parser.add_argument("--seed", type=int, help="base seed override")
    parser.add_argument("--alpha-grid", dest="alpha_grid",
                        help="lo:hi:steps for the sweep/synth alpha grid")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        base_dir = Path(args.config).parent
        out_dir = Path(args.out or cfg.get("output_dir", "out"))
        out_dir.mkdir(parents=True, exist_ok=True)
        alpha_grid = (_parse_alpha_grid(args.alpha_grid)
                      if args.alpha_grid else None)
        if args.seed is not None:
            cfg["recording"].setdefault("input", {})["seed"] = args.seed
            cfg["recording"]["noise"]["seed"] = args.seed + 1
            cfg["verification"]["seed"] = args.seed + 2

        if args.command == "record":
            stage_record(cfg, base_dir, out_dir)
        elif args.command == "synth":
            if stage_synth(cfg, base_dir, out_dir,
                           alpha_grid=alpha_grid) is None:
                return EXIT_INFEASIBLE
        elif args.command == "verify":
            stage_verify(cfg, base_dir, out_dir)
        elif args.command == "sweep":
            rec = stage_record(cfg, base_dir, out_dir)
            if stage_synth(cfg, base_dir, out_dir, rec=rec,
                           alpha_grid=alpha_grid) is None:
                return EXIT_INFEASIBLE
        else:  # run
            rec = stage_record(cfg, base_dir, out_dir)
            if stage_synth(cfg, base_dir, out_dir, rec=rec,
                           alpha_grid=alpha_grid) is None:
                return EXIT_INFEASIBLE
            stage_verify(cfg, base_dir, out_dir)
        return EXIT_OK
    except (ConfigError, ValueError, OSError) as e:
        _event("error", str(e))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
