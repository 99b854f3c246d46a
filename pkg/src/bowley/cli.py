"""Configuration-driven command line: generate data, solve, run oracles.

    bowley gen-data --seed 7 --n 50 [--basis-risk 0.5] [--rows 6] --out DIR
    bowley solve  --config cfg.json [--out DIR] [--seed S]
    bowley oracle --config cfg.json [--out DIR]
    bowley sweep  --config cfg.json [--out DIR] [--seed S]
    bowley verify report.json

Exit codes: 0 ok, 2 config/usage error, 3 solver divergence (partial report
written), 4 oracle instance refused as too large.  Environment overrides:
BOWLEY_OUT (output directory) and BOWLEY_SEED (solver seed) only.

Config files are strict JSON: unknown keys are rejected with their path.
Grids are [min, max, step] triples, endpoints inclusive.  See README for a
full example.
"""

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio, oracle as oracle_mod, vpbgd
from .game import FarmerPreference, GameConfig, ScenarioSet
from .payoff import PayoffArch
from .premium import CostModel

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_REFUSED = 4


class ConfigError(Exception):
    def __init__(self, path, message):
        super().__init__(f"config error at {path or '<root>'}: {message}")


# allowed keys and the default for each section
_SCHEMA = {
    "problem": "P1",
    "mode": "indemnity",
    "out_dir": "out",
    "data": {"scenarios_csv": None, "yields_csv": None, "weather_csv": None,
             "price": 1.0,
             "synthetic": {"seed": 0, "n": 50, "basis_risk": 0.5,
                           "rows": dataio.DEFAULT_ROWS}},
    "farmer": {"kind": "cvar", "alpha": 0.8, "lambda": 0.0},
    "cost": {"mu": 0.02},
    "leader_init": {"theta": 0.1, "rho": 1.0, "curve_scale": None, "knots": 100},
    "payoff_net": {"kind": "mlp", "hidden": [8, 8], "conv_channels": [32, 32],
                   "dense": [32], "kernel": [2, 2], "pool": [2, 2]},
    "solver": {"alpha0": 0.1, "beta": None, "decay": 0.96, "gamma": 10.0,
               "outer_iters": 300, "inner_iters": 50, "seed": 0,
               "curve_step_scale": 25.0},
    "oracle": {"theta_grid": [0.0, 4.0, 0.05], "rho_grid": None,
               "d_grid": None, "knots": 100,
               "reservation_scales": [0.9, 0.99, 0.999]},
    "sweep": {"path": None, "values": []},
}

_SWEEPABLE = ("farmer.lambda", "farmer.alpha", "solver.gamma", "solver.seed",
              "leader_init.theta", "data.synthetic.seed")


def _check_keys(raw, schema, path=""):
    if not isinstance(raw, dict):
        raise ConfigError(path, f"expected an object, got {type(raw).__name__}")
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"{path}{key}", "unknown key")
        if isinstance(schema[key], dict) and value is not None:
            _check_keys(value, schema[key], f"{path}{key}.")


def _merged(raw, schema):
    out = {}
    for key, default in schema.items():
        if key in raw and raw[key] is not None:
            if isinstance(default, dict):
                out[key] = _merged(raw[key], default)
            else:
                out[key] = raw[key]
        else:
            out[key] = copy.deepcopy(default)
    return out


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError("", f"cannot read {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError("", f"invalid JSON in {path}: {e}")
    _check_keys(raw, _SCHEMA)
    return _merged(raw, _SCHEMA)


def _grid(triple, name):
    if triple is None:
        return None
    if not (isinstance(triple, list) and len(triple) == 3):
        raise ConfigError(name, "grids are [min, max, step] triples")
    lo, hi, step = (float(v) for v in triple)
    if step <= 0 or hi < lo:
        raise ConfigError(name, f"bad grid bounds {triple}")
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


def _load_scenarios(cfg) -> ScenarioSet:
    data = cfg["data"]
    if data.get("scenarios_csv"):
        return dataio.read_scenarios_csv(data["scenarios_csv"])
    if data.get("yields_csv"):
        yields = dataio.read_yields_csv(data["yields_csv"])
        weather = (dataio.read_weather_csv(data["weather_csv"])
                   if data.get("weather_csv") else None)
        return dataio.scenarios_from_records(yields, weather, price=data["price"])
    syn = data["synthetic"]
    return dataio.synth_generate(seed=int(syn["seed"]), n=int(syn["n"]),
                                 basis_risk_level=float(syn["basis_risk"]),
                                 rows=int(syn["rows"]))


def _game_config(cfg) -> GameConfig:
    f = cfg["farmer"]
    li = cfg["leader_init"]
    try:
        return GameConfig(
            problem=cfg["problem"],
            mode=cfg["mode"],
            cost=CostModel(float(cfg["cost"]["mu"])),
            farmer=FarmerPreference(kind=f["kind"], alpha=float(f["alpha"]),
                                    lam=float(f["lambda"])),
            theta0=float(li["theta"]),
            rho0=float(li["rho"]),
            curve_scale0=(None if li["curve_scale"] is None
                          else float(li["curve_scale"])),
            knots=int(li["knots"]),
        )
    except ValueError as e:
        raise ConfigError("", str(e))


def _solver_config(cfg) -> vpbgd.SolverConfig:
    s = cfg["solver"]
    try:
        return vpbgd.SolverConfig(
            alpha0=float(s["alpha0"]),
            beta=None if s["beta"] is None else float(s["beta"]),
            decay=float(s["decay"]),
            gamma=float(s["gamma"]),
            outer_iters=int(s["outer_iters"]),
            inner_iters=int(s["inner_iters"]),
            seed=int(s["seed"]),
            curve_step_scale=float(s["curve_step_scale"]),
        )
    except ValueError as e:
        raise ConfigError("solver", str(e))


def _arch(cfg) -> PayoffArch:
    p = cfg["payoff_net"]
    if p["kind"] not in ("mlp", "cnn"):
        raise ConfigError("payoff_net.kind", f"must be 'mlp' or 'cnn', got {p['kind']!r}")
    return PayoffArch(kind=p["kind"], hidden=tuple(p["hidden"]),
                      conv_channels=tuple(p["conv_channels"]),
                      dense=tuple(p["dense"]), kernel=tuple(p["kernel"]),
                      pool=tuple(p["pool"]))


def _apply_overrides(cfg, out_dir, seed):
    env_out = os.environ.get("BOWLEY_OUT")
    env_seed = os.environ.get("BOWLEY_SEED")
    if out_dir:
        cfg["out_dir"] = out_dir
    elif env_out:
        cfg["out_dir"] = env_out
    if seed is not None:
        cfg["solver"]["seed"] = int(seed)
    elif env_seed is not None:
        cfg["solver"]["seed"] = int(env_seed)


def _write_report_files(out_dir: Path, report: vpbgd.EquilibriumReport,
                        stem: str = "report"):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.json").write_text(report.to_json(), encoding="utf-8")
    curves = report.curves
    with open(out_dir / "curves.csv", "w", encoding="utf-8", newline="") as f:
        f.write("iter,up_loss,lp_loss,value_gap\n")
        for i, (u, l, g) in enumerate(zip(curves["up_loss"], curves["lp_loss"],
                                          curves["value_gap"]), start=1):
            f.write(f"{i},{u!r},{l!r},{g!r}\n")
    with open(out_dir / "payoff.csv", "w", encoding="utf-8", newline="") as f:
        f.write("scenario,loss,payoff\n")
        for row in report.payoff_trace:
            f.write(f"{row['id']},{row['loss']!r},{row['payoff']!r}\n")


def cmd_gen_data(args) -> int:
    if args.n < 2:
        print("gen-data: --n must be >= 2", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(os.environ.get("BOWLEY_OUT", args.out))
    try:
        scenarios = dataio.synth_generate(seed=args.seed, n=args.n,
                                          basis_risk_level=args.basis_risk,
                                          rows=args.rows)
        out.mkdir(parents=True, exist_ok=True)
        dataio.write_scenarios_csv(out / "scenarios.csv", scenarios)
    except OSError as e:
        print(f"gen-data: cannot write {out}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {out / 'scenarios.csv'} ({args.n} scenarios)")
    return EXIT_OK


def cmd_solve(args) -> int:
    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args.out, args.seed)
        scenarios = _load_scenarios(cfg)
        game_cfg = _game_config(cfg)
        solver_cfg = _solver_config(cfg)
        arch = _arch(cfg)
    except (ConfigError, Exception) as e:
        if not isinstance(e, ConfigError):
            e = ConfigError("", str(e))
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(cfg["out_dir"])
    try:
        report = vpbgd.solve(game_cfg, solver_cfg, scenarios, arch=arch)
    except vpbgd.DivergenceError as e:
        print(f"solve diverged: {e}", file=sys.stderr)
        if e.report is not None:
            _write_report_files(out_dir, e.report)
            print(f"partial report written to {out_dir / 'report.json'}", file=sys.stderr)
        return EXIT_DIVERGED
    _write_report_files(out_dir, report)
    print(f"profit {report.insurer_profit:.6f}  premium {report.premium:.6f}  "
          f"farmer risk {report.farmer_risk:.6f}")
    print(f"report written to {out_dir / 'report.json'}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args.out, None)
        scenarios = _load_scenarios(cfg)
        game_cfg = _game_config(cfg)
        osec = cfg["oracle"]
        theta_grid = _grid(osec["theta_grid"], "oracle.theta_grid")
        rho_grid = _grid(osec["rho_grid"], "oracle.rho_grid")
        d_grid = _grid(osec["d_grid"], "oracle.d_grid")
    except (ConfigError, Exception) as e:
        if not isinstance(e, ConfigError):
            e = ConfigError("", str(e))
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    if d_grid is None:
        top = float(scenarios.losses.max())
        d_grid = np.linspace(0.0, top, 101) if top > 0 else np.array([0.0])
    try:
        if game_cfg.problem == "P1":
            result = oracle_mod.stoploss_oracle(scenarios, game_cfg.farmer,
                                                game_cfg.cost, theta_grid, d_grid)
        elif game_cfg.problem == "P2":
            if rho_grid is None:
                rho_grid = _grid([1.0, 4.0, 0.05], "oracle.rho_grid")
            result = oracle_mod.stoploss_oracle(scenarios, game_cfg.farmer,
                                                game_cfg.cost, theta_grid, d_grid,
                                                rho_grid=rho_grid)
        else:
            curves = oracle_mod.knot_curve_family(
                theta_grid, game_cfg.farmer, int(osec["knots"]),
                rho_grid=rho_grid,
                reservation_scales=tuple(osec["reservation_scales"]))
            result = oracle_mod.distortion_grid_oracle(scenarios, game_cfg.farmer,
                                                       game_cfg.cost, curves, d_grid)
    except oracle_mod.InstanceTooLarge as e:
        print(f"oracle refused: {e}", file=sys.stderr)
        return EXIT_REFUSED
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = result.to_dict()
    payload["problem"] = game_cfg.problem
    payload["mode"] = game_cfg.mode
    (out_dir / "oracle.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(f"oracle profit {result.profit:.6f}; written to {out_dir / 'oracle.json'}")
    return EXIT_OK


def _set_path(cfg, dotted, value):
    node = cfg
    parts = dotted.split(".")
    for key in parts[:-1]:
        node = node[key]
    node[parts[-1]] = value


def cmd_sweep(args) -> int:
    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args.out, args.seed)
        sweep = cfg["sweep"]
        if sweep["path"] not in _SWEEPABLE:
            raise ConfigError("sweep.path", f"must be one of {_SWEEPABLE}")
        if not sweep["values"]:
            raise ConfigError("sweep.values", "must be a nonempty list")
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    out_root = Path(cfg["out_dir"])
    summary = []
    for i, value in enumerate(sweep["values"]):
        run_cfg = copy.deepcopy(cfg)
        _set_path(run_cfg, sweep["path"], value)
        try:
            scenarios = _load_scenarios(run_cfg)
            game_cfg = _game_config(run_cfg)
            solver_cfg = _solver_config(run_cfg)
            arch = _arch(run_cfg)
        except (ConfigError, Exception) as e:
            print(f"sweep value {value!r}: {e}", file=sys.stderr)
            return EXIT_CONFIG
        try:
            report = vpbgd.solve(game_cfg, solver_cfg, scenarios, arch=arch)
        except vpbgd.DivergenceError as e:
            print(f"sweep value {value!r} diverged: {e}", file=sys.stderr)
            if e.report is not None:
                _write_report_files(out_root / f"run_{i}", e.report)
            return EXIT_DIVERGED
        _write_report_files(out_root / f"run_{i}", report)
        summary.append({
            "value": value,
            "theta": report.theta,
            "rho": report.rho,
            "insurer_profit": report.insurer_profit,
            "farmer_risk": report.farmer_risk,
            "premium": report.premium,
            "expected_payoff": report.expected_payoff,
        })
        print(f"[{sweep['path']}={value}] profit {report.insurer_profit:.6f}"
              + (f" theta {report.theta:.4f}" if report.theta is not None else ""))
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "sweep_summary.json").write_text(
        json.dumps({"path": sweep["path"], "runs": summary}, indent=2),
        encoding="utf-8")
    print(f"sweep summary written to {out_root / 'sweep_summary.json'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        print(f"verify: cannot read report: {e}", file=sys.stderr)
        return EXIT_CONFIG
    errs = vpbgd.report_consistency_errors(report)
    if errs:
        for e in errs:
            print(f"inconsistent: {e}", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    print("report is internally consistent")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bowley",
                                 description="Bowley insurance equilibria: "
                                             "solver, oracles and data tools")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic scenarios.csv")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--basis-risk", type=float, default=0.5, dest="basis_risk")
    g.add_argument("--rows", type=int, default=dataio.DEFAULT_ROWS)
    g.add_argument("--out", type=str, default="out")
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("solve", help="run the bilevel solver")
    s.add_argument("--config", type=str, required=True)
    s.add_argument("--out", type=str, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_solve)

    o = sub.add_parser("oracle", help="run the grid oracle")
    o.add_argument("--config", type=str, required=True)
    o.add_argument("--out", type=str, default=None)
    o.set_defaults(func=cmd_oracle)

    w = sub.add_parser("sweep", help="solve over a list of config values")
    w.add_argument("--config", type=str, required=True)
    w.add_argument("--out", type=str, default=None)
    w.add_argument("--seed", type=int, default=None)
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="recheck a report's internal consistency")
    v.add_argument("report", type=str)
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
