"""Command-line front end.

Four subcommands: ``simulate`` writes a trajectory CSV, ``estimate`` fits a
model to one and writes a JSON record, ``diagnose`` evaluates the
consistency probes on a grid, and ``mc`` runs a replicated scenario.

Every subcommand accepts ``--config FILE`` with the same keys as the flags
(flags win).  Nothing is written until the inputs have parsed and
validated.  Exit codes: 0 success, 2 usage or config error, 3 I/O error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Mapping, Sequence

import numpy as np

from . import asymptotics, diagnostics, estimators, io, montecarlo
from .models import Trajectory, model_from_config, simulate_arch, simulate_bgw, simulate_pcr

_MODEL_CHOICES = ("bgw", "m1", "m2", "m3", "arch")
_M3_ORDER = ("k", "s_alpha", "alpha")
_M2_ORDER = ("k", "c", "s")


class _UsageError(Exception):
    """Bad or missing configuration (maps to exit code 2)."""


# ---------------------------------------------------------------------------
# small parsers
# ---------------------------------------------------------------------------


def _parse_offspring(spec: str) -> tuple[str, float]:
    try:
        law, raw = spec.split(":", 1)
        value = float(raw)
    except ValueError:
        raise _UsageError(f"--offspring must look like binary:0.5, got {spec!r}")
    if law not in ("binary", "poisson"):
        raise _UsageError(f"offspring law must be binary or poisson, got {law!r}")
    return law, value


def _parse_pair(spec: str, what: str, sep: str) -> tuple[float, float]:
    parts = spec.split(sep)
    if len(parts) != 2:
        raise _UsageError(f"{what} must be two numbers separated by {sep!r}, got {spec!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise _UsageError(f"{what}: could not parse {spec!r}")


def _parse_floats(spec: str, what: str) -> list[float]:
    try:
        return [float(v) for v in spec.split(",") if v != ""]
    except ValueError:
        raise _UsageError(f"{what}: could not parse {spec!r}")


def _parse_ints(spec: str, what: str) -> list[int]:
    try:
        return [int(v) for v in spec.split(",") if v != ""]
    except ValueError:
        raise _UsageError(f"{what}: could not parse {spec!r}")


def _parse_fixed(items: Sequence[str] | None) -> dict[str, float]:
    fixed: dict[str, float] = {}
    for item in items or ():
        if "=" not in item:
            raise _UsageError(f"--fixed expects name=value, got {item!r}")
        name, raw = item.split("=", 1)
        try:
            fixed[name.strip()] = float(raw)
        except ValueError:
            raise _UsageError(f"--fixed {item!r}: value is not a number")
    return fixed


def _load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        data = io.read_json(path)
    except json.JSONDecodeError as exc:
        raise _UsageError(f"config {path}: invalid JSON ({exc})")
    if not isinstance(data, dict):
        raise _UsageError(f"config {path}: top level must be an object")
    return data


def _merged(ns: argparse.Namespace, keys: Sequence[str]) -> dict[str, Any]:
    """Config-file values overridden by any flag the user actually set."""
    cfg = _load_config(getattr(ns, "config", None))
    for key in keys:
        value = getattr(ns, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _require(cfg: Mapping[str, Any], key: str, command: str) -> Any:
    if key not in cfg or cfg[key] is None:
        raise _UsageError(f"{command}: missing required option --{key.replace('_', '-')}")
    return cfg[key]


def _fit_model_config(cfg: Mapping[str, Any], command: str) -> dict[str, Any]:
    """Translate CLI model options into a model-factory config."""
    name = _require(cfg, "model", command)
    if name == "bgw":
        law = "binary"
        if cfg.get("offspring"):
            law, _ = _parse_offspring(cfg["offspring"])
        return {"kind": "bgw", "law": law}
    if name == "arch":
        return {"kind": "arch"}
    if name == "m1":
        return {"kind": "pcr_m1"}
    order = _M2_ORDER if name == "m2" else _M3_ORDER
    fixed = _parse_fixed(cfg.get("fixed")) if not isinstance(cfg.get("fixed"), dict) else dict(cfg["fixed"])
    unknown = set(fixed) - set(order)
    if unknown:
        raise _UsageError(f"{command}: fixed coordinate(s) {sorted(unknown)} not in {order}")
    free = cfg.get("free")
    if free is None:
        free = [n for n in order if n not in fixed]
    elif isinstance(free, str):
        free = [v.strip() for v in free.split(",") if v.strip()]
    out: dict[str, Any] = {"kind": f"pcr_{name}", "free": list(free), "fixed": fixed}
    if name == "m3":
        out["s_sat"] = float(cfg.get("s_sat") or 0.0)
    return out


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_simulate(ns: argparse.Namespace) -> int:
    keys = (
        "model", "offspring", "k", "alpha", "s", "c",
        "alpha0", "alpha1", "xi0", "n0", "steps", "seed", "output",
    )
    cfg = _merged(ns, keys)
    name = _require(cfg, "model", "simulate")
    if name not in _MODEL_CHOICES:
        raise _UsageError(f"simulate: unknown model {name!r}")
    steps = int(_require(cfg, "steps", "simulate"))
    seed = int(_require(cfg, "seed", "simulate"))
    output = _require(cfg, "output", "simulate")

    if name == "bgw":
        law, param = _parse_offspring(str(_require(cfg, "offspring", "simulate")))
        traj = simulate_bgw(law, param, int(_require(cfg, "n0", "simulate")), steps, seed)
    elif name == "arch":
        traj = simulate_arch(
            alpha0=float(_require(cfg, "alpha0", "simulate")),
            alpha1=float(_require(cfg, "alpha1", "simulate")),
            steps=steps,
            seed=seed,
            xi0=float(cfg.get("xi0") or 0.0),
        )
    else:
        params: dict[str, float] = {"k": float(_require(cfg, "k", "simulate"))}
        if name == "m2":
            params["c"] = float(_require(cfg, "c", "simulate"))
            params["s"] = float(_require(cfg, "s", "simulate"))
        elif name == "m3":
            params["alpha"] = float(_require(cfg, "alpha", "simulate"))
            params["s"] = float(_require(cfg, "s", "simulate"))
        traj = simulate_pcr(name, params, int(_require(cfg, "n0", "simulate")), steps, seed)
    traj.to_csv(output)
    print(f"wrote {traj.values.shape[0]} states to {output}")
    return 0


def _estimator_record(
    traj: Trajectory, cfg: Mapping[str, Any], command: str
) -> dict[str, Any]:
    kind = _require(cfg, "estimator", command)
    window = cfg.get("window")
    if isinstance(window, str):
        h, n = _parse_pair(window, "--window", ",")
        window = (int(h), int(n))
    elif window is not None:
        window = (int(window[0]), int(window[1]))

    opt_keys = ("grid_resolution", "n_starts", "qle_weighting")
    opt = {k: cfg[k] for k in opt_keys if cfg.get(k) is not None}
    config = estimators.OptimizerConfig(**opt) if opt else None

    def _boxes(key: str, required: bool) -> list[tuple[float, float]] | None:
        raw = cfg.get(key)
        if raw is None:
            if required:
                raise _UsageError(f"{command}: missing required option --{key.replace('_', '-')}")
            return None
        if isinstance(raw, str):
            raw = [raw]
        out = []
        for item in raw:
            if isinstance(item, str):
                out.append(_parse_pair(item, f"--{key.replace('_', '-')}", ":"))
            else:
                out.append((float(item[0]), float(item[1])))
        return out

    if kind in ("clse", "qle"):
        model = model_from_config(_fit_model_config(cfg, command))
        box = _boxes("box", required=True)
        fit = estimators.clse if kind == "clse" else estimators.qle
        res = fit(traj, model, box, window=window, config=config)
        return res.to_record()
    if kind in ("harris", "lotka_nagaev"):
        values = traj.values
        if kind == "harris":
            value = estimators.harris_closed_form(traj, window=window)
            w = window or (0, values.shape[0] - 1)
        else:
            value = estimators.lotka_nagaev(traj)
            w = (values.shape[0] - 2, values.shape[0] - 1)
        return {"theta_hat": [float(value)], "window": [int(w[0]), int(w[1])]}
    if kind == "two_stage":
        res = estimators.two_stage_pcr(
            traj,
            n0=int(_require(cfg, "pilot", command)),
            n=int(cfg.get("n") or traj.values.shape[0] - 1),
            stage1_box=_boxes("stage1_box", required=cfg.get("stage1_nuisance") is None),
            stage2_box=_boxes("stage2_box", required=True),
            mode=cfg.get("mode") or "scalar",
            s_sat=float(cfg.get("s_sat") or 0.0),
            config=config,
            stage1_nuisance=cfg.get("stage1_nuisance"),
        )
        return {
            "stage1": None if res.stage1 is None else res.stage1.to_record(),
            "stage2": res.stage2.to_record(),
            "nuisance": {k: float(v) for k, v in sorted(res.nuisance.items())},
            "mode": res.mode,
        }
    raise _UsageError(f"{command}: unknown estimator {kind!r}")


def _cmd_estimate(ns: argparse.Namespace) -> int:
    keys = (
        "input", "model", "offspring", "free", "fixed", "s_sat", "estimator",
        "window", "box", "grid_resolution", "n_starts", "qle_weighting",
        "pilot", "n", "mode", "stage1_box", "stage2_box", "output",
    )
    cfg = _merged(ns, keys)
    path = _require(cfg, "input", "estimate")
    output = _require(cfg, "output", "estimate")
    traj = Trajectory.from_csv(path)
    record = _estimator_record(traj, cfg, "estimate")
    record["config"] = io.jsonable({k: v for k, v in cfg.items() if k != "output"})
    io.write_json(output, record)
    print(f"wrote estimate record to {output}")
    return 0


def _cmd_diagnose(ns: argparse.Namespace) -> int:
    keys = (
        "input", "model", "offspring", "free", "fixed", "s_sat",
        "theta0", "box", "grid_resolution", "delta", "checkpoints",
        "theta_near", "output", "plot",
    )
    cfg = _merged(ns, keys)
    path = _require(cfg, "input", "diagnose")
    output = _require(cfg, "output", "diagnose")
    theta0 = cfg.get("theta0")
    if isinstance(theta0, str):
        theta0 = _parse_floats(theta0, "--theta0")
    theta0 = np.asarray(_require({"theta0": theta0}, "theta0", "diagnose"), dtype=np.float64)
    raw_box = _require(cfg, "box", "diagnose")
    if isinstance(raw_box, str):
        raw_box = [raw_box]
    box = [
        _parse_pair(b, "--box", ":") if isinstance(b, str) else (float(b[0]), float(b[1]))
        for b in raw_box
    ]
    checkpoints = cfg.get("checkpoints")
    if isinstance(checkpoints, str):
        checkpoints = _parse_ints(checkpoints, "--checkpoints")
    checkpoints = _require({"checkpoints": checkpoints}, "checkpoints", "diagnose")
    resolution = int(cfg.get("grid_resolution") or 33)
    delta = float(_require(cfg, "delta", "diagnose"))
    theta_near = cfg.get("theta_near")
    if isinstance(theta_near, str):
        theta_near = _parse_floats(theta_near, "--theta-near")

    model = model_from_config(_fit_model_config(cfg, "diagnose"))
    traj = Trajectory.from_csv(path)
    try:
        grid = diagnostics.ThetaGrid.build(theta0, box, resolution, delta)
    except ValueError as exc:
        raise _UsageError(f"diagnose: {exc}")
    report = diagnostics.diagnostics_report(
        model,
        traj,
        grid,
        checkpoints,
        theta_near=None if theta_near is None else np.asarray(theta_near, dtype=np.float64),
    )
    record = report.to_record()
    record["config"] = io.jsonable({k: v for k, v in cfg.items() if k not in ("output", "plot")})
    io.write_json(output, record)
    if cfg.get("plot"):
        rows = []
        series = {
            "inf_d": record["inf_d_outside"],
            "var_sum_sup": record["var_sum_sup"],
            "sllnsm_sup": record["sllnsm_sup"],
            "rat_sup": record["rat_sup"],
        }
        if record["an_ratio_at_checkpoint"] is not None:
            series["an_ratio"] = record["an_ratio_at_checkpoint"]
        for name, values in series.items():
            for n, v in zip(record["checkpoints"], values):
                if v is not None:
                    rows.append((name, n, v))
        io.write_plot_csv(cfg["plot"], rows)
    print(f"wrote diagnostics report to {output}")
    return 0


def _cmd_mc(ns: argparse.Namespace) -> int:
    cfg = _merged(ns, ("scenario", "workers", "output", "samples"))
    path = _require(cfg, "scenario", "mc")
    data = _load_config(str(path))
    try:
        scenario = montecarlo.Scenario.from_dict(data)
        scenario.validate()
    except (ValueError, KeyError, TypeError) as exc:
        raise _UsageError(f"mc: invalid scenario: {exc}")
    workers = None if cfg.get("workers") is None else int(cfg["workers"])
    if ns.dry_run:
        print("replicate,seed")
        for r, seed in montecarlo.replicate_plan(scenario):
            print(f"{r},{seed}")
        return 0
    summary = montecarlo.run_mc(scenario, workers=workers)
    record = summary.to_record()
    if cfg.get("output"):
        io.write_json(cfg["output"], record)
        print(f"wrote summary to {cfg['output']}")
    else:
        print(io.json_text(record), end="")
    if cfg.get("samples"):
        montecarlo.write_samples_csv(cfg["samples"], summary)
        print(f"wrote samples to {cfg['samples']}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=_MODEL_CHOICES, help="model family")
    p.add_argument("--offspring", help="offspring law, e.g. binary:0.5 or poisson:1.4")
    p.add_argument("--free", help="comma list of free coordinates (m2/m3 fits)")
    p.add_argument(
        "--fixed", action="append", metavar="NAME=VALUE",
        help="freeze a coordinate at a value (repeatable)",
    )
    p.add_argument("--s-sat", dest="s_sat", type=float, help="saturation floor (m3)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clse-lab",
        description="Simulation, estimation and consistency diagnostics "
        "for branching-type stochastic regressions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a trajectory and write it as CSV")
    p.add_argument("--config", help="JSON file with the same keys as the flags")
    p.add_argument("--model", choices=_MODEL_CHOICES)
    p.add_argument("--offspring", help="bgw offspring law, e.g. binary:0.5")
    p.add_argument("--k", type=float, help="efficiency scale (m1/m2/m3)")
    p.add_argument("--alpha", type=float, help="decay exponent (m3)")
    p.add_argument("--s", type=float, help="threshold scale (m2/m3)")
    p.add_argument("--c", type=float, help="onset rate (m2)")
    p.add_argument("--alpha0", type=float, help="volatility level (arch)")
    p.add_argument("--alpha1", type=float, help="volatility slope (arch)")
    p.add_argument("--xi0", type=float, help="initial innovation (arch)")
    p.add_argument("--n0", type=int, help="initial population")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("estimate", help="fit a model to a trajectory CSV")
    p.add_argument("--config")
    p.add_argument("--input", help="trajectory CSV")
    _add_model_flags(p)
    p.add_argument(
        "--estimator",
        choices=("clse", "qle", "harris", "lotka_nagaev", "two_stage"),
    )
    p.add_argument("--window", help="h,n")
    p.add_argument("--box", action="append", metavar="LO:HI",
                   help="search box, one per coordinate (repeatable)")
    p.add_argument("--grid-resolution", dest="grid_resolution", type=int)
    p.add_argument("--n-starts", dest="n_starts", type=int)
    p.add_argument("--qle-weighting", dest="qle_weighting", choices=("variance", "lambda"))
    p.add_argument("--pilot", type=int, help="two_stage pilot window length")
    p.add_argument("--n", type=int, help="two_stage final window length")
    p.add_argument("--mode", choices=("scalar", "pair"))
    p.add_argument("--stage1-box", dest="stage1_box", action="append", metavar="LO:HI")
    p.add_argument("--stage2-box", dest="stage2_box", action="append", metavar="LO:HI")
    p.add_argument("-o", "--output")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("diagnose", help="evaluate the consistency probes on a grid")
    p.add_argument("--config")
    p.add_argument("--input")
    _add_model_flags(p)
    p.add_argument("--theta0", help="comma-separated truth point")
    p.add_argument("--box", action="append", metavar="LO:HI", help="grid box (repeatable)")
    p.add_argument("--grid-resolution", dest="grid_resolution", type=int)
    p.add_argument("--delta", type=float, help="exclusion-ball radius")
    p.add_argument("--checkpoints", help="comma-separated step counts")
    p.add_argument("--theta-near", dest="theta_near", help="comma-separated nearby point")
    p.add_argument("-o", "--output")
    p.add_argument("--plot", help="also write a series,x,y CSV of the probes")
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("mc", help="run a replicated scenario")
    p.add_argument("--config")
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--workers", type=int)
    p.add_argument("--dry-run", action="store_true",
                   help="print the replicate/seed plan and write nothing")
    p.add_argument("-o", "--output", help="summary JSON path (default: stdout)")
    p.add_argument("--samples", help="also write the standardized samples CSV")
    p.set_defaults(func=_cmd_mc)
    return parser


def execute(argv: Sequence[str] | None = None) -> int:
    """Parse and run one command; returns the process exit code."""
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 2
    try:
        return ns.func(ns)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OverflowError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


def main() -> None:
    sys.exit(execute(sys.argv[1:]))


if __name__ == "__main__":
    main()
