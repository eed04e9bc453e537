"""Command-line front end.

``ellada solve`` runs one solver variant on a problem instance and writes
the iteration log; ``ellada closed-loop`` runs receding-horizon simulations
of the tank benchmark; ``ellada compare`` runs all three variants.

Exit codes: 0 success, 1 configuration or runtime error, 2 iteration cap
reached or a controller failed (partial outputs are kept).
"""

from __future__ import annotations

import argparse
import copy
import json
import re
import sys
from pathlib import Path

import numpy as np

from .anderson import AndersonParams
from .driver import VARIANTS, SolverConfig, run
from .errors import ConfigError, DomainError, SolverError, StructureError
from .runtime import ExecutionMode
from .tank import CONTROLLERS, OcpSpec, TankModel, build_subsystem_ocp, closed_loop

DEFAULTS = {
    "problem": "tank",
    "algo": "ellada",
    "seed": 0,
    "mode": "sync",
    "out": "runs/latest",
    "plot": "svg",
    "steps": 20,
    "timing": False,
    "solver": {
        "beta1": 1.0,
        "lam_bound": 10.0,
        "omega": 0.75,
        "gamma": 2.0,
        "max_outer": 100,
        "max_inner": 2000,
        "nlp_max_iter": 200,
        "fair_finals": False,
        "inner_rule": "quadratic",
        "transport": "inprocess",
        "check_conditioning": True,
    },
    "accel": {
        "M": 10,
        "eta_theta": 0.5,
        "eta_w": 0.05,
        "eta_L": 0.01,
        "eta_w_tilde": 0.01,
        "sigma": 1.0,
        "regularize": True,
        "corrected_increase": False,
        "reference": "previous",
    },
    "tank": {
        "x0": [12.6, 12.4, 5.0, 4.5],
        "N": 40,
        "dt": 10.0,
        "q": 1.0,
        "r": 0.01,
        "v_min": 2.5,
        "v_max": 3.5,
    },
    "qp": {"n_agents": 3, "dim": 4, "overlap": 1, "n_eq": 1, "box": None},
    "closed_loop": {
        "controllers": list(CONTROLLERS),
        "fair_finals": True,
    },
}

_CHOICES = {
    "algo": VARIANTS,
    "plot": ("svg", "png", "none"),
    "solver.inner_rule": ("quadratic", "linear"),
    "solver.transport": ("inprocess", "loopback"),
    "accel.reference": ("previous", "plain"),
}


def _key_line(text: str, key: str):
    if not text:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(source, text, key):
    line = _key_line(text, key)
    return f"{source}:{line}" if line else source


def _check_type(value, default, where, dotted):
    if default is None:
        if value is not None and not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: '{dotted}' must be a number or null")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: '{dotted}' must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: '{dotted}' must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: '{dotted}' must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: '{dotted}' must be a string")
        choices = _CHOICES.get(dotted)
        if choices and value not in choices:
            raise ConfigError(f"{where}: '{dotted}' must be one of {list(choices)}, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: '{dotted}' must be a list")
        return value
    return value


def _merge(base: dict, user: dict, source: str, text: str, prefix=""):
    for key, value in user.items():
        dotted = prefix + key
        where = _where(source, text, key)
        if key not in base:
            raise ConfigError(f"{where}: unknown key '{dotted}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: '{dotted}' must be an object")
            _merge(base[key], value, source, text, dotted + ".")
        else:
            base[key] = _check_type(value, base[key], where, dotted)


def load_config(path=None) -> dict:
    """Defaults overlaid with a JSON file; errors name the offending line."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    source = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{source}: cannot read ({exc.strerror})") from None
    try:
        user = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{source}:1: top level must be an object")
    _merge(cfg, user, source, text)
    return cfg


def apply_flags(cfg: dict, args) -> dict:
    for key in ("problem", "algo", "seed", "mode", "out", "plot", "steps"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return validate(cfg)


def validate(cfg: dict) -> dict:
    try:
        ExecutionMode.parse(cfg["mode"])
    except ValueError as exc:
        raise ConfigError(f"mode: {exc}") from None
    if cfg["algo"] not in VARIANTS:
        raise ConfigError(f"algo must be one of {list(VARIANTS)}")
    if cfg["plot"] not in _CHOICES["plot"]:
        raise ConfigError("plot must be svg, png or none")
    if cfg["steps"] < 1:
        raise ConfigError("steps must be at least 1")
    x0 = cfg["tank"]["x0"]
    if len(x0) != 4 or any(not isinstance(v, (int, float)) for v in x0):
        raise ConfigError("tank.x0 must hold four levels")
    for c in cfg["closed_loop"]["controllers"]:
        if c not in CONTROLLERS:
            raise ConfigError(f"closed_loop.controllers: unknown controller {c!r}")
    try:
        solver_config(cfg)
        ocp_of(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def solver_config(cfg: dict, variant=None, fair_finals=None) -> SolverConfig:
    s = dict(cfg["solver"])
    if fair_finals is not None:
        s["fair_finals"] = fair_finals
    return SolverConfig(
        variant=variant or cfg["algo"],
        mode=cfg["mode"],
        seed=cfg["seed"],
        accel=AndersonParams(**cfg["accel"]),
        **s,
    )


def ocp_of(cfg):
    t = cfg["tank"]
    return OcpSpec(N=t["N"], dt=t["dt"], q=t["q"], r=t["r"], v_min=t["v_min"], v_max=t["v_max"])


def build_problem(cfg: dict):
    name = cfg["problem"]
    if name == "tank":
        return build_subsystem_ocp(TankModel(), ocp_of(cfg), np.asarray(cfg["tank"]["x0"], dtype=float))
    if name == "qp":
        from .problems import random_qp_problem

        q = cfg["qp"]
        return random_qp_problem(q["n_agents"], q["dim"], q["overlap"], q["n_eq"], seed=cfg["seed"], box=q["box"])
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        from .problems import load_problem

        return load_problem(path)
    raise ConfigError(f"problem must be 'tank', 'qp' or an existing .json description, got {name!r}")


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _prepare_out(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg)
    return out


def _fmt(v):
    return "n/a" if v is None else f"{v:.3e}"


def cmd_solve(cfg: dict) -> int:
    out = _prepare_out(cfg)
    problem = build_problem(cfg)
    res = run(problem, solver_config(cfg))
    res.log.write_csv(out / "iterations.csv")
    summary = res.summary()
    _write_json(out / "summary.json", summary)
    if cfg["plot"] != "none" and res.log.inner:
        from .plotting import plot_solve

        plot_solve(res.log, out / f"solve.{cfg['plot']}")
    print(f"{res.variant}: {res.status} after {res.outer_rounds} outer rounds")
    print(f"  inner iterations {res.inner_total}, Newton steps {res.nlp_total}")
    print("  residuals " + " ".join(f"d{j}={_fmt(summary[f'd{j}'])}" for j in range(1, 7)))
    return 0 if res.success else 2


def cmd_compare(cfg: dict) -> int:
    out = _prepare_out(cfg)
    problem = build_problem(cfg)
    results, code = {}, 0
    for v in VARIANTS:
        if v == "ellada" and not ExecutionMode.parse(cfg["mode"]).synchronous:
            continue
        res = run(problem, solver_config(cfg, variant=v))
        res.log.write_csv(out / f"iterations_{v}.csv")
        results[v] = res.summary()
        code = max(code, 0 if res.success else 2)
        print(f"{v:7s} {res.status:10s} inner {res.inner_total:6d}  Newton {res.nlp_total:6d}")
    _write_json(out / "summary.json", results)
    if cfg["plot"] != "none":
        from .plotting import plot_counts

        plot_counts(results, out / f"counts.{cfg['plot']}")
    return code


def cmd_closed_loop(cfg: dict) -> int:
    out = _prepare_out(cfg)
    if cfg["problem"] != "tank":
        raise ConfigError("closed-loop runs are defined for the tank problem only")
    model, ocp = TankModel(), ocp_of(cfg)
    scfg = solver_config(cfg, fair_finals=cfg["closed_loop"]["fair_finals"])
    logs, summary, code = {}, {}, 0
    for name in cfg["closed_loop"]["controllers"]:
        log = closed_loop(model, ocp, name, cfg["tank"]["x0"], cfg["steps"], solver_config=scfg)
        log.write_csv(out / f"trajectory_{name}.csv", timing=cfg["timing"])
        logs[name] = log
        summary[name] = {
            "steps": len(log.v),
            "failed": log.failed,
            "message": log.message,
            "cost": log.cost(model, ocp) if len(log.v) else None,
            "ultimate_deviation": log.ultimate_deviation(model),
            "newton_steps": int(np.sum(log.solve_iters)),
        }
        if log.failed:
            code = 2
            print(f"{name}: failed ({log.message})", file=sys.stderr)
        else:
            print(f"{name:13s} cost {summary[name]['cost']:.6f}  final deviation "
                  f"{summary[name]['ultimate_deviation']:.4f}")
    _write_json(out / "summary.json", summary)
    if cfg["plot"] != "none":
        from .plotting import plot_closed_loop

        plot_closed_loop(logs, model, out / f"closed_loop.{cfg['plot']}", timing=cfg["timing"])
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="ellada", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--problem", help="tank, qp, or a .json problem description")
        sp.add_argument("--algo", choices=VARIANTS)
        sp.add_argument("--config", help="JSON file overriding the built-in defaults")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--mode", help="sync or async:S")
        sp.add_argument("--plot", choices=("svg", "png", "none"))
        sp.add_argument("--steps", type=int, help="closed-loop sampling instants")

    common(sub.add_parser("solve", help="run one variant on one instance"))
    common(sub.add_parser("compare", help="run every variant on one instance"))
    common(sub.add_parser("closed-loop", help="receding-horizon tank simulation"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_flags(load_config(args.config), args)
        cmd = {"solve": cmd_solve, "compare": cmd_compare, "closed-loop": cmd_closed_loop}[args.command]
        return cmd(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SolverError, DomainError, StructureError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
