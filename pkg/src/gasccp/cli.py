"""Command-line entry point: ``python -m gasccp <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from importlib import resources
from pathlib import Path

import jsonschema

from . import ann, pipeline
from .ccp import CcpConfig, cold_start, run_ccp, warm_start_from_pressures
from .model import build_instance
from .network import (
    GasNetwork,
    NetworkParseError,
    NetworkValidationError,
    Scenario,
    dump_network,
    load_network,
    sample_scenarios,
    scenarios_from_csv,
    scenarios_to_csv,
)
from .synthetic import SYNTHETIC

BUILTIN_FILES = {"t1": "t1.json", "t2": "t2.json"}


class CliError(Exception):
    pass


def resolve_network(ref: str) -> GasNetwork:
    """A file path, a packaged tiny network (t1, t2) or a synthetic one (seven, twenty)."""
    key = ref.lower()
    if key in SYNTHETIC:
        return SYNTHETIC[key]()
    if key in BUILTIN_FILES:
        return load_network(resources.files("gasccp").joinpath("networks", BUILTIN_FILES[key]).read_text())
    path = Path(ref)
    if not path.is_file():
        raise CliError(f"no network file or built-in network named {ref!r}")
    return load_network(path.read_text())


def load_config(path: str | None) -> tuple[CcpConfig, ann.TrainConfig]:
    """Overrides from a flat JSON object; keys are routed to the solver or the
    trainer by field name."""
    ccp, trn = CcpConfig(), ann.TrainConfig()
    if path is None:
        return ccp, trn
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise CliError("config file must hold a JSON object")
    ccp_keys = {f.name for f in fields(CcpConfig)}
    trn_keys = {f.name for f in fields(ann.TrainConfig)}
    unknown = sorted(set(doc) - ccp_keys - trn_keys)
    if unknown:
        raise CliError(f"unknown config key(s): {', '.join(unknown)}")
    ccp = ccp.replace(**{k: v for k, v in doc.items() if k in ccp_keys})
    t = {k: v for k, v in doc.items() if k in trn_keys}
    if "hidden" in t and t["hidden"] is not None:
        t["hidden"] = tuple(t["hidden"])
    trn = ann.TrainConfig(**{**{f.name: getattr(trn, f.name) for f in fields(trn)}, **t})
    return ccp, trn


def emit(text: str, out: str | None) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _scenarios(args, net: GasNetwork) -> list[Scenario]:
    if getattr(args, "scenarios", None):
        return scenarios_from_csv(net, Path(args.scenarios).read_text())
    return sample_scenarios(net, args.count, args.fluctuation, args.horizon, args.seed)


def _with_linepack(net, scenarios, ccp, seed):
    if all(sc.horizon == 1 for sc in scenarios):
        return scenarios
    lp = pipeline.default_initial_linepack(net, seed=seed, config=ccp)
    return [sc if sc.horizon == 1 else sc.with_initial_linepack(lp) for sc in scenarios]


def _load_predictor(path: str, net: GasNetwork) -> pipeline.PressurePredictor:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"model file {path!r} not found")
    return pipeline.PressurePredictor(ann.load_models(p.read_text()), len(net.nodes))


def cmd_gen_net(args, ccp, trn):
    net = SYNTHETIC[args.kind]() if args.seed is None else SYNTHETIC[args.kind](args.seed)
    emit(dump_network(net), args.out)


def cmd_sample(args, ccp, trn):
    net = resolve_network(args.network)
    emit(scenarios_to_csv(net, sample_scenarios(net, args.count, args.fluctuation, args.horizon, args.seed)), args.out)


def cmd_presolve(args, ccp, trn):
    net = resolve_network(args.network)
    scs = _with_linepack(net, _scenarios(args, net), ccp, args.seed)
    data, summary = pipeline.build_training_set(
        net, scs, args.restarts, args.seed, ccp, args.neighbors, args.workers
    )
    emit(pipeline.dataset_to_csv(net, data), args.out)
    print(
        f"presolved {summary.kept}/{summary.requested} scenarios "
        f"({summary.dropped} dropped, {summary.refined} improved by neighbour warm starts)",
        file=sys.stderr,
    )


def cmd_train(args, ccp, trn):
    net = resolve_network(args.network)
    data = pipeline.dataset_from_csv(net, Path(args.dataset).read_text()).split(args.test_fraction, args.seed)
    cfg = ann.TrainConfig(trn.eta, trn.epsilon, trn.decay, trn.epochs, trn.batch_size, args.seed, trn.hidden)
    hidden = tuple(args.hidden) if args.hidden else None
    predictor, hist = pipeline.train_predictor(data, len(net.nodes), cfg, hidden)
    emit(ann.save_models(predictor.models), args.out)
    _, mae = ann.evaluate_mae(predictor, data)
    _, dummy = ann.evaluate_mae(ann.dummy_mean_predictor(net, predictor.horizon), data)
    summary = {
        "train_rows": int(len(data.train_idx)),
        "test_rows": int(len(data.test_idx)),
        "final_train_mse": [h[-1] if h else None for h in hist],
        "test_mae": mae,
        "dummy_mae": dummy,
        "mae_ratio": mae / dummy if dummy > 0 else None,
    }
    sys.stderr.write(_dumps(summary))


def cmd_solve(args, ccp, trn):
    net = resolve_network(args.network)
    scs = scenarios_from_csv(net, Path(args.scenario).read_text())
    pick = [sc for sc in scs if args.scenario_id is None or sc.scenario_id == args.scenario_id]
    if not pick:
        raise CliError(f"scenario id {args.scenario_id} not in {args.scenario}")
    sc = _with_linepack(net, pick[:1], ccp, args.seed)[0]
    inst = build_instance(net, sc)
    if args.warm:
        point = warm_start_from_pressures(inst, _load_predictor(args.warm, net).pressures(sc))
    else:
        point = cold_start(inst, args.seed)
    res = run_ccp(inst, point, ccp)
    doc = res.to_json()
    doc["start"] = "warm" if args.warm else "cold"
    doc["scenario_id"] = sc.scenario_id
    emit(_dumps(doc), args.out)
    return 0 if res.converged else 3


def cmd_bench(args, ccp, trn):
    net = resolve_network(args.network)
    scs = _with_linepack(net, _scenarios(args, net), ccp, args.seed)
    methods = args.methods.split(",")
    if "warm-ccp" in methods and args.model is None:
        raise CliError("warm-ccp needs --model")
    predictor = _load_predictor(args.model, net) if "warm-ccp" in methods else None
    cfg = pipeline.BenchmarkConfig(ccp, args.seed, args.reference_restarts, args.resolution, args.workers)
    report = pipeline.run_benchmark(net, scs, methods, cfg, predictor)
    doc = report.to_json()
    pipeline.validate_report(doc)
    emit(_dumps(doc), args.out)
    if args.csv:
        emit(report.to_csv(), args.csv)
    for row in report.rows:
        gap = "n/a" if row["mean_gap"] is None else f"{row['mean_gap']:.3e}"
        print(
            f"{row['method']:>9}  converged {row['converged']}/{row['scenarios']}  "
            f"iterations {row['mean_iterations']:.2f}  gap {gap}  time {row['mean_wall_time']:.3f}s",
            file=sys.stderr,
        )


def cmd_oracle(args, ccp, trn):
    net = resolve_network(args.network)
    scs = scenarios_from_csv(net, Path(args.scenario).read_text()) if args.scenario else [Scenario.constant(net)]
    out = []
    for sc in scs:
        r = pipeline.brute_force_oracle(net, sc, args.resolution)
        out.append({"scenario_id": sc.scenario_id, "objective": r.objective, "evaluations": r.evaluations,
                    "resolution": r.resolution, "point": r.point})
    emit(_dumps(out), args.out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--config", help="JSON file overriding solver/training parameters")
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    sampling = argparse.ArgumentParser(add_help=False)
    sampling.add_argument("--scenarios", help="scenario CSV; sampled when omitted")
    sampling.add_argument("--count", type=int, default=50)
    sampling.add_argument("--fluctuation", type=float, default=0.1)
    sampling.add_argument("--horizon", type=int, default=1)

    p = argparse.ArgumentParser(prog="gasccp", description="Warm-started convex-concave optimal gas flow.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("gen-net", help="emit a synthetic network")
    s.add_argument("--kind", choices=sorted(SYNTHETIC), required=True)
    s.add_argument("--seed", type=int, help="design seed (default: the built-in one)")
    s.add_argument("--config", help=argparse.SUPPRESS)
    s.add_argument("--out", help="output path (default stdout)")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_gen_net)

    s = sub.add_parser("sample", parents=[common], help="sample load scenarios")
    s.add_argument("--network", required=True)
    s.add_argument("--count", type=int, default=50)
    s.add_argument("--fluctuation", type=float, default=0.1)
    s.add_argument("--horizon", type=int, default=1)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("presolve", parents=[common, sampling], help="build a training set")
    s.add_argument("--network", required=True)
    s.add_argument("--restarts", type=int, default=6)
    s.add_argument("--neighbors", type=int, default=3)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_presolve)

    s = sub.add_parser("train", parents=[common], help="train the pressure predictor")
    s.add_argument("--network", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--hidden", type=int, nargs="+")
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("solve", parents=[common], help="solve one scenario")
    s.add_argument("--network", required=True)
    s.add_argument("--scenario", required=True, help="scenario CSV")
    s.add_argument("--scenario-id", type=int)
    s.add_argument("--warm", metavar="MODEL", help="warm start from a trained model file")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("bench", parents=[common, sampling], help="compare methods over many scenarios")
    s.add_argument("--network", required=True)
    s.add_argument("--methods", default="cold-ccp,warm-ccp")
    s.add_argument("--model")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--reference-restarts", type=int, default=4)
    s.add_argument("--resolution", type=float, default=1e-3)
    s.add_argument("--csv", help="also write the per-scenario table as CSV")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("oracle", parents=[common], help="grid reference on a tiny network")
    s.add_argument("--network", required=True)
    s.add_argument("--scenario", help="scenario CSV (nominal load when omitted)")
    s.add_argument("--resolution", type=float, default=1e-3)
    s.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        ccp, trn = load_config(args.config)
        return args.func(args, ccp, trn) or 0
    except jsonschema.ValidationError as exc:
        print(f"{parser.prog} {args.command}: report failed schema validation: {exc.message}", file=sys.stderr)
        return 1
    except (CliError, ValueError, RuntimeError, OSError, NetworkParseError, NetworkValidationError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
