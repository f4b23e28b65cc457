"""Command line interface: ``reconfig run | adapt | validate | plant | demo``."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from . import __version__, demo_scenario_path
from .model import ScenarioError, load_scenario
from .pipeline import (
    EXIT_INTERNAL,
    EXIT_INVALID,
    EXIT_OK,
    ModelStore,
    RunManifest,
    adapt_models,
    derive_seed,
    operator_keys,
    run_pipeline,
)
from .plant import Disturbance, Excitation, OperatingDataset, generate_dataset


def _dataset_arg(text: str) -> tuple[str | None, str]:
    key, sep, path = text.partition("=")
    return (key, path) if sep else (None, text)


def _key_from_file(path: str) -> str:
    return Path(path).stem.replace("__", "/")


def cmd_run(args) -> int:
    manifest = RunManifest(
        scenario=args.scenario,
        models=args.models,
        seed=args.seed,
        jobs=args.jobs,
        deterministic=args.deterministic,
        trace=args.trace,
        out=args.out,
        strict=not args.lenient,
    )
    outcome = run_pipeline(manifest)
    if outcome.message:
        print(outcome.message, file=sys.stderr)
    if outcome.report:
        print(f"{outcome.status}: report written to {Path(args.out) / 'report.json'}")
        if outcome.ranked:
            best = outcome.ranked[0]
            seq = " > ".join(f"{s.module}:{s.configuration}" for s in best.steps)
            print(f"selected: {seq} (utility {best.utility:.4f})")
    return outcome.exit_code


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario, strict=not args.lenient)
    except ScenarioError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: {len(scenario.modules)} modules, {len(scenario.layout.locations)} locations, {len(scenario.process_models)} process models")
    return EXIT_OK


def cmd_adapt(args) -> int:
    try:
        scenario = load_scenario(args.scenario, strict=not args.lenient)
    except (ScenarioError, OSError, json.JSONDecodeError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    datasets = {}
    for item in args.data or []:
        key, path = _dataset_arg(item)
        try:
            datasets[key or _key_from_file(path)] = OperatingDataset.from_csv(path)
        except (OSError, ValueError) as exc:
            print(f"cannot read dataset {path}: {exc}", file=sys.stderr)
            return EXIT_INVALID
    seed = scenario.seed if args.seed is None else args.seed
    store = ModelStore(args.models)
    if not datasets:
        report = {"status": "no-updates", "seed": seed, "updates": []}
    else:
        results = adapt_models(scenario, store, datasets, seed)
        report = {"status": "adapted", "seed": seed, "updates": [r.to_json() for r in results], "model_versions": store.versions()}
    text = json.dumps(report, indent=2)
    (store.root / "adapt_report.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    failed = any(u["status"] in ("unknown-model", "missing-model") for u in report["updates"])
    return EXIT_INVALID if failed else EXIT_OK


def cmd_plant(args) -> int:
    try:
        scenario = load_scenario(args.scenario, strict=not args.lenient)
    except (ScenarioError, OSError, json.JSONDecodeError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    keys = operator_keys(scenario)
    if args.model not in keys:
        print(f"unknown model key {args.model!r}; known: {', '.join(sorted(keys))}", file=sys.stderr)
        return EXIT_INVALID
    spec = scenario.process_models[keys[args.model]]
    if spec.plant is None:
        print(f"process model {spec.id!r} declares no plant", file=sys.stderr)
        return EXIT_INVALID
    module, cfg, op_id = args.model.split("/")
    op = scenario.module(module).configuration(cfg).operator(op_id)
    plant = spec.plant
    if args.disturbance is not None:
        plant = plant.with_disturbance(Disturbance(args.disturbance, args.magnitude, args.onset, args.period))
    seed = scenario.seed if args.seed is None else args.seed
    data = generate_dataset(plant, Excitation(op.lower, op.upper, args.hold), args.cycles, derive_seed(seed, "plant", args.model))
    data.to_csv(args.out)
    print(f"wrote {len(data)} records to {args.out}")
    return EXIT_OK


def cmd_demo(args) -> int:
    out = Path(args.directory)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("demo.json", "demo_feasible.json"):
        with demo_scenario_path(name).open("rb") as src, open(out / name, "wb") as dst:
            shutil.copyfileobj(src, dst)
        print(out / name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reconfig", description="Reconfiguration management for modular production.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-v info, -vv debug)")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        sp.add_argument("--scenario", required=True, help="scenario JSON file")
        sp.add_argument("--lenient", action="store_true", help="unknown keys are warnings instead of errors")

    r = sub.add_parser("run", help="check demand, optimise alternatives, rank and select")
    scenario_args(r)
    r.add_argument("--models", required=True, help="process model directory (created and filled if missing)")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--jobs", type=int, default=1, help="parallel optimisation workers")
    r.add_argument("--deterministic", action="store_true", help="omit the timestamp so reports are byte-identical")
    r.add_argument("--trace", action="store_true", help="write the selected configuration's event trace")
    r.add_argument("--out", default="out", help="report directory")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("adapt", help="retrain process models on new operating data")
    scenario_args(a)
    a.add_argument("--models", required=True)
    a.add_argument("--data", nargs="*", metavar="[KEY=]CSV", help="dataset per model key (module/configuration/operator); "
                   "without KEY the file name module__configuration__operator.csv gives it")
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_adapt)

    v = sub.add_parser("validate", help="validate a scenario file")
    scenario_args(v)
    v.set_defaults(func=cmd_validate)

    g = sub.add_parser("plant", help="generate operating data from a declared plant")
    scenario_args(g)
    g.add_argument("--model", required=True, help="model key module/configuration/operator")
    g.add_argument("--cycles", type=int, default=200)
    g.add_argument("--hold", type=int, default=1, help="cycles per random parameter value")
    g.add_argument("--seed", type=int)
    g.add_argument("--disturbance", choices=["none", "step", "drift", "periodic"])
    g.add_argument("--magnitude", type=float, default=0.0)
    g.add_argument("--onset", type=int, default=1)
    g.add_argument("--period", type=int, default=20)
    g.add_argument("--out", required=True, help="CSV file")
    g.set_defaults(func=cmd_plant)

    d = sub.add_parser("demo", help="copy the bundled example scenarios")
    d.add_argument("directory", nargs="?", default=".")
    d.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001
        logging.getLogger("reconfig").exception("unexpected failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
