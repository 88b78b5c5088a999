"""Command-line interface: ``revsteer synthesize | simulate | evaluate | sweep``.

Exit codes: 0 success, 1 evaluation above the ``--delta`` tolerance,
2 usage or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import bench
from .dynamics import builtin_system, registered_systems
from .errors import (
    InvalidArgumentError,
    NumericalOverflowError,
    RevsteerError,
    SingularityError,
    TrainingDivergenceError,
)
from .lingauss import LinearSystem
from .score import TrainConfig, fit_feature_model_closed_form
from .sde_sim import NoiseSource, TimeGrid, simulate_auxiliary, simulate_controlled, write_trajectories_csv
from .synthesis import (
    DeterministicInput,
    SynthesizedController,
    load_bundle,
    make_exact_linear_controller,
    save_bundle,
    synthesize,
)

EXIT_OK, EXIT_THRESHOLD, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


CONFIG_SCHEMA = _obj(
    {
        "system": _obj({"name": {"type": "string"}, "params": {"type": "object"}, "epsilon": _num}, ["name"]),
        "horizon": _obj({"T": _num, "dt": _num}, ["T", "dt"]),
        "steering": _obj(
            {
                "x0": _vec,
                "xf": _vec,
                "sigma": {"type": "number", "minimum": 0},
                "det_input": _obj(
                    {"kind": {"enum": ["zero", "constant", "table"]}, "values": {"type": "array"}}, ["kind"]
                ),
            },
            ["xf"],
        ),
        "training": _obj(
            {
                "N": {"type": "integer", "minimum": 1},
                "iterations": {"type": "integer", "minimum": 0},
                "lr": _num,
                "lr_final_factor": _num,
                "k1": {"type": "integer", "minimum": 1},
                "k2": {"type": "integer", "minimum": 1},
                "model": {"enum": ["mlp", "feature", "exact-linear"]},
            }
        ),
        "evaluation": _obj(
            {
                "rollouts": {"type": "integer", "minimum": 1},
                "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                "controller": {"enum": list(bench.CONTROLLER_KINDS)},
                "wrap_angle": {"type": "boolean"},
                "success_radius": _num,
                "delta": {"type": "number", "exclusiveMinimum": 0},
            }
        ),
        "io": _obj({"out_dir": {"type": "string"}, "bundle": {"type": "string"}}),
    },
    ["system", "horizon", "steering"],
)


class StageError(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {exc}")
        self.cause = exc


def load_config(path) -> dict:
    """Parse and validate a JSON run configuration (unknown keys are rejected)."""
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidArgumentError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        msg = f"config {path}: {where}: {exc.message}"
        if "system" in exc.absolute_path or "'system'" in exc.message:
            msg += f" (registered systems: {', '.join(registered_systems())})"
        raise InvalidArgumentError(msg) from None
    return cfg


def experiment_from_config(cfg: dict, seeds=None) -> bench.ExperimentConfig:
    st, tr, ev = cfg["steering"], cfg.get("training", {}), cfg.get("evaluation", {})
    train = {k: tr[k] for k in ("iterations", "lr", "lr_final_factor", "k1", "k2") if k in tr}
    sysd = {"name": cfg["system"]["name"], "params": cfg["system"].get("params", {}),
            "epsilon": cfg["system"].get("epsilon", 0.3)}
    n = builtin_system(sysd["name"], sysd["params"], sysd["epsilon"]).state_dim
    if "x0" not in st:
        raise InvalidArgumentError("steering.x0 is required for rollouts")
    for key in ("x0", "xf"):
        if len(st[key]) != n:
            raise InvalidArgumentError(f"steering.{key} has {len(st[key])} entries, system has n={n}")
    wrap = ev.get("wrap_angle", False)
    return bench.ExperimentConfig(
        system=sysd, x0=list(st["x0"]), x_f=list(st["xf"]), T=cfg["horizon"]["T"], dt=cfg["horizon"]["dt"],
        N=tr.get("N", 1000), sigma=st.get("sigma", 0.0), seeds=list(seeds or ev.get("seeds", [0, 1, 2, 3, 4])),
        controller=ev.get("controller", "learned"), det_input=st.get("det_input", {"kind": "zero"}), train=train,
        rollouts=ev.get("rollouts"), angle_index=0 if wrap else None, success_radius=ev.get("success_radius"),
    )


def _parse_vec(text: str) -> list:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise InvalidArgumentError(f"cannot parse state vector {text!r}") from None


def _out_dir(args, cfg, default):
    return Path(args.out or cfg.get("io", {}).get("out_dir") or default)


# ----------------------------------------------------------------------------
# subcommands


def cmd_synthesize(args) -> int:
    stage = "config"
    try:
        cfg = load_config(args.config)
        s = cfg["system"]
        system = builtin_system(s["name"], s.get("params"), s.get("epsilon", 0.3))
        grid = TimeGrid(cfg["horizon"]["T"], cfg["horizon"]["dt"])
        st, tr = cfg["steering"], cfg.get("training", {})
        x_f = system.check_state(st["xf"])
        sigma = float(st.get("sigma", 0.0))
        u = DeterministicInput.from_dict(st.get("det_input"))
        u.table(grid, system.control_dim)  # validates the schedule shape
        N = int(tr.get("N", 1000))
        kind = tr.get("model", "mlp")
        tc = TrainConfig(seed=args.seed, **{k: tr[k] for k in ("iterations", "lr", "lr_final_factor", "k1", "k2")
                                            if k in tr})
        tc.validate(N if kind == "mlp" else None)
        out = _out_dir(args, cfg, "bundle")

        stage = "synthesize"
        if kind == "exact-linear":
            ctrl = make_exact_linear_controller(LinearSystem.from_system(system), grid, x_f, sigma, u, system=system)
            ctrl.seed = args.seed
            if args.save_z:
                ctrl.batch = simulate_auxiliary(system, grid, N, x_f, sigma, u.table(grid, system.control_dim),
                                                NoiseSource(args.seed))
        elif kind == "feature":
            batch = simulate_auxiliary(system, grid, N, x_f, sigma, u.table(grid, system.control_dim),
                                       NoiseSource(args.seed))
            model = fit_feature_model_closed_form(system, batch)
            ctrl = SynthesizedController(model, system, grid, u, x_f, sigma, args.seed, batch)
        else:
            ctrl = synthesize(system, grid, x_f, sigma, u, N, tc, seed=args.seed)

        stage = "write"
        extra = {"steering": {"x0": st.get("x0")}, "training": {**tc.to_dict(), "N": N, "model": kind}}
        save_bundle(ctrl, out, extra)
        if ctrl.losses is not None:
            with open(out / "losses.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["iteration", "loss"])
                w.writerows((i, format(v, ".17g")) for i, v in enumerate(ctrl.losses))
        if args.save_z and ctrl.batch is not None:
            write_trajectories_csv(ctrl.batch, out / "z.csv")
    except (RevsteerError, OSError) as exc:
        raise StageError(stage, exc) from exc
    print(f"bundle written to {out}")
    return EXIT_OK


def _x0_for(args, ctrl, man_x0):
    if args.x0 is not None:
        return ctrl.system.check_state(_parse_vec(args.x0))
    if man_x0 is None:
        raise InvalidArgumentError("no --x0 given and the bundle records none")
    return ctrl.system.check_state(man_x0)


def _manifest(bundle):
    try:
        return json.loads((Path(bundle) / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidArgumentError(f"cannot read bundle manifest in {bundle}: {exc}") from exc


def cmd_simulate(args) -> int:
    stage = "load"
    try:
        man = _manifest(args.bundle)
        ctrl = load_bundle(args.bundle)
        x0 = _x0_for(args, ctrl, man.get("steering", {}).get("x0"))
        stage = "simulate"
        batch = simulate_controlled(ctrl.system, ctrl.grid, args.n, x0, ctrl,
                                    NoiseSource(bench.EVAL_SEED_OFFSET + args.seed))
        stage = "write"
        out = Path(args.out or Path(args.bundle) / "trajectories.csv")
        write_trajectories_csv(batch, out)
    except (RevsteerError, OSError) as exc:
        raise StageError(stage, exc) from exc
    print(f"{args.n} trajectories written to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    stage = "load"
    try:
        man = _manifest(args.bundle)
        ctrl = load_bundle(args.bundle)
        ev, st = {}, {}
        if args.config:
            cfg = load_config(args.config)
            ev, st = cfg.get("evaluation", {}), cfg["steering"]
        seeds = args.seeds or ev.get("seeds", [0, 1, 2, 3, 4])
        n = args.n or ev.get("rollouts", 1000)
        if args.x0 is None and "x0" in st:
            args.x0 = ",".join(map(repr, st["x0"]))
        x0 = _x0_for(args, ctrl, man.get("steering", {}).get("x0"))
        angle = 0 if (args.wrap_angle or ev.get("wrap_angle", False)) else None
        radius = ev.get("success_radius")
        delta = args.delta if args.delta is not None else ev.get("delta")

        stage = "evaluate"
        mses, norms, succ = [], [], []
        start = time.perf_counter()
        for k, seed in enumerate(seeds):
            try:
                batch = simulate_controlled(ctrl.system, ctrl.grid, n, x0, ctrl,
                                            NoiseSource(bench.EVAL_SEED_OFFSET + seed))
            except RevsteerError as exc:
                raise type(exc)(f"seed index {k} (seed {seed}): {exc}") from exc
            mses.append(bench.mse(batch, ctrl.x_f, angle))
            norms.append(bench.u_norm(batch))
            if radius is not None:
                d = bench.terminal_errors(batch, ctrl.x_f, angle)
                succ.append(float(np.mean(np.abs(d[:, angle or 0]) <= radius)))
        report = bench.MetricsReport(mses, norms, time.perf_counter() - start,
                                     {"bundle": man, "x0": x0.tolist(), "rollouts": n, "seeds": list(seeds),
                                      "wrap_angle": angle is not None},
                                     succ if radius is not None else None)
        stage = "write"
        out = Path(args.out or Path(args.bundle) / "metrics.json")
        report.save(out)
    except (RevsteerError, OSError) as exc:
        raise StageError(stage, exc) from exc
    print(f"mse {report.mse_mean:.6g}")
    print(f"u_norm {report.unorm_mean:.6g}")
    if delta is not None:
        ok = report.mse_mean <= delta
        print(f"delta {delta:g}: {'met' if ok else 'exceeded'}")
        return EXIT_OK if ok else EXIT_THRESHOLD
    return EXIT_OK


def cmd_sweep(args) -> int:
    stage = "config"
    try:
        if not args.values:
            raise InvalidArgumentError("--values needs at least one entry")
        cfg = load_config(args.config)
        exp = experiment_from_config(cfg, args.seeds)
        out = Path(args.out or _out_dir(argparse.Namespace(out=None), cfg, ".") / f"sweep_{args.param}.jsonl")
        out.parent.mkdir(parents=True, exist_ok=True)
        stage = "sweep"
        if args.param == "dt":
            kinds = args.controllers or ("learned", "exact-linear", "open-loop")
            rows = bench.sweep_dt(exp, args.values, kinds, out_path=out)
        else:
            kinds = args.controllers or ("exact-linear",)
            rows = bench.sweep_sigma(exp, args.values, kinds, out_path=out)
    except (RevsteerError, OSError) as exc:
        raise StageError(stage, exc) from exc
    for r in rows:
        print(f"{args.param}={r[args.param]:g} {r['controller']} u={r['u']} mse={r['mse_mean']:.6g} "
              f"u_norm={r['unorm_mean']:.6g}")
    print(f"{len(rows)} rows in {out}")
    return EXIT_OK


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="revsteer", description="Time-reversal steering of control-affine SDEs.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synthesize", help="synthesize a controller bundle from a config")
    s.add_argument("config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="bundle directory (default: io.out_dir or ./bundle)")
    s.add_argument("--save-z", action="store_true", help="also write the auxiliary batch as z.csv")
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("simulate", help="roll out a bundle's closed loop")
    s.add_argument("bundle")
    s.add_argument("--x0", help="comma-separated initial state (default: the bundle's)")
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="trajectory CSV path")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("evaluate", help="terminal MSE and control energy of a bundle")
    s.add_argument("bundle")
    s.add_argument("--config", help="run config supplying the evaluation block")
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--n", type=int, help="rollouts per seed")
    s.add_argument("--x0")
    s.add_argument("--wrap-angle", action="store_true", help="reduce the first coordinate mod 2 pi")
    s.add_argument("--delta", type=float, help="exit 1 unless the mean MSE is at most this tolerance")
    s.add_argument("--out", help="metrics report path (default: <bundle>/metrics.json)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="dt or sigma sweep; resumes from an existing table")
    s.add_argument("config")
    s.add_argument("--param", choices=("dt", "sigma"), required=True)
    s.add_argument("--values", type=float, nargs="*", required=True)
    s.add_argument("--controllers", nargs="+", choices=bench.CONTROLLER_KINDS)
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--out", help="JSON-lines table path")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.command != "synthesize" and getattr(args, "n", None) is not None and args.n < 1:
        print("error: --n must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        numerical = (SingularityError, NumericalOverflowError, TrainingDivergenceError)
        return EXIT_NUMERICAL if isinstance(err.cause, numerical) else EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
