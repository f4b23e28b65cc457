"""End-to-end reconfiguration run, process model storage and model adaptation."""

from __future__ import annotations

import datetime as _dt
import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .capability import SearchLimits, generate_alternatives, identify_demand
from .des import ResolvedStep, model_key, resolve_steps, simulate, write_trace
from .evaluator import rank
from .layout import enumerate_layouts, reconfiguration_effort, sequence_modules
from .model import CriteriaWeights, OptimizerSettings, Scenario, ScenarioError, Step, SystemConfiguration, load_scenario
from .narx import NarxModel, TrainingDivergence, one_step_mse, train
from .optimizer import ConfigurationOptimum, ConfigurationProblem, optimize_configuration
from .plant import Disturbance, Excitation, OperatingDataset, generate_dataset

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3
EXIT_INTERNAL = 4

HELD_OUT_FRACTION = 0.25


def derive_seed(seed: int, *names: str) -> int:
    """Independent sub-seed for a named consumer of randomness."""
    entropy = [int(seed)] + [zlib.crc32(n.encode("utf-8")) for n in names]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def operator_keys(scenario: Scenario) -> dict[str, str]:
    """Model key ("module/configuration/operator") -> process model id, for every operator."""
    out = {}
    for m in scenario.modules:
        for cfg in m.configurations:
            for op in cfg.operators:
                out[model_key(Step(m.id, cfg.id, op.id))] = op.model
    return out


# --- model store -----------------------------------------------------------


class ModelStore:
    """Directory of versioned process models.

    ``index.json`` maps each model key to its current file, version and the
    provenance of every version; the model file itself holds the latest
    parameters only.
    """

    INDEX = "index.json"

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / self.INDEX
        if path.exists():
            self.index = json.loads(path.read_text(encoding="utf-8"))
        else:
            self.index = {"format": 1, "models": {}}

    @staticmethod
    def filename(key: str) -> str:
        return key.replace("/", "__") + ".json"

    def __contains__(self, key: str) -> bool:
        return key in self.index["models"] and (self.root / self.index["models"][key]["file"]).exists()

    def version(self, key: str) -> int:
        return int(self.index["models"][key]["version"])

    def versions(self) -> dict[str, int]:
        return {k: int(v["version"]) for k, v in sorted(self.index["models"].items())}

    def load(self, key: str) -> NarxModel:
        return NarxModel.load(self.root / self.index["models"][key]["file"])

    def save(self, key: str, model: NarxModel, provenance: str) -> int:
        entry = self.index["models"].get(key)
        version = 1 if entry is None else int(entry["version"]) + 1
        history = [] if entry is None else list(entry["history"])
        history.append({"version": version, "provenance": provenance})
        model.save(self.root / self.filename(key))
        self.index["models"][key] = {"file": self.filename(key), "version": version, "history": history}
        (self.root / self.INDEX).write_text(json.dumps(self.index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return version


def bootstrap_model(scenario: Scenario, key: str, seed: int) -> NarxModel:
    """Design-time model: train on nominal (undisturbed) data of the declared plant."""
    spec = scenario.process_models[operator_keys(scenario)[key]]
    module, cfg, op_id = key.split("/")
    op = scenario.module(module).configuration(cfg).operator(op_id)
    data = generate_dataset(spec.plant.with_disturbance(Disturbance()), Excitation(op.lower, op.upper), spec.horizon, derive_seed(seed, "design-data", key))
    model, _ = train(NarxModel.from_spec(spec, name=key), data, seed=derive_seed(seed, "design-training", key))
    return model


def ensure_models(scenario: Scenario, store: ModelStore, seed: int) -> tuple[dict[str, NarxModel], list[str]]:
    """Load every operator's model, creating missing ones from their plant declaration."""
    models, created = {}, []
    for key, spec_id in operator_keys(scenario).items():
        if key not in store:
            if scenario.process_models[spec_id].plant is None:
                raise FileNotFoundError(f"no stored model for {key} and process model {spec_id!r} declares no plant to train one")
            store.save(key, bootstrap_model(scenario, key, seed), "design-time")
            created.append(key)
        model = store.load(key)
        if model.spec != scenario.process_models[spec_id]:
            log.warning("stored model %s was trained for a different declaration of %s", key, spec_id)
        models[key] = model
    return models, created


# --- reconfiguration run -----------------------------------------------------


@dataclass
class RunManifest:
    scenario: str | Path
    models: str | Path
    seed: int | None = None
    jobs: int = 1
    deterministic: bool = False
    trace: bool = False
    out: str | Path = "out"
    strict: bool = True


@dataclass
class RunOutcome:
    exit_code: int
    status: str
    report: dict[str, Any] = field(default_factory=dict)
    ranked: list[SystemConfiguration] = field(default_factory=list)
    message: str = ""


def _optimize_task(task) -> ConfigurationOptimum:
    steps, lot, weights, settings, seed = task
    return optimize_configuration(ConfigurationProblem(steps, lot), weights, settings, seed)


def _key_text(steps: Sequence[Step]) -> str:
    return " > ".join(f"{s.module}:{s.configuration}:{s.operator}" for s in steps)


def optimize_sequences(
    sequences: Sequence[Sequence[ResolvedStep]],
    lot_size: int,
    weights: CriteriaWeights,
    settings: OptimizerSettings,
    seed: int,
    jobs: int = 1,
) -> list[ConfigurationOptimum]:
    """Optimise each sequence's parameters; results are independent of ``jobs``."""
    base = settings.seed if settings.seed is not None else seed
    tasks = [
        (list(steps), lot_size, weights, settings, derive_seed(base, "search", _key_text([Step(s.module, s.configuration.id, s.operator.id) for s in steps])))
        for steps in sequences
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_optimize_task, tasks))
    return [_optimize_task(t) for t in tasks]


def _candidate_json(cfg: SystemConfiguration, position: int) -> dict[str, Any]:
    return {"rank": position + 1, **cfg.to_json()}


def _text_report(report: Mapping[str, Any]) -> str:
    lines = [f"status: {report['status']}", f"seed: {report['seed']}"]
    if report["status"] == "no-reconfiguration-needed":
        lines.append("current configuration can produce the order:")
        lines += [f"  {s}" for s in report["feasible_sequences"]]
        return "\n".join(lines) + "\n"
    cands = report.get("candidates", [])
    lines.append(f"candidates: {len(cands)}")
    head = f"{'rank':>4} {'utility':>8} {'r_time':>7} {'r_energy':>8} {'r_cost':>7} {'time/s':>10} {'energy/J':>12} {'cost':>10}  sequence | layout"
    lines.append(head)
    for c in cands:
        r, t = c["evaluation"], c["total"]
        seq = " > ".join(f"{s['module']}:{s['configuration']}" for s in c["sequence"])
        lay = " ".join(f"{m}@{loc}" for m, loc in c["layout"].items())
        lines.append(
            f"{c['rank']:>4} {c['utility']:>8.4f} {r['time']:>7.3f} {r['energy']:>8.3f} {r['cost']:>7.3f} "
            f"{t['time']:>10.1f} {t['energy']:>12.1f} {t['cost']:>10.2f}  {seq} | {lay}"
        )
    if cands:
        lines.append(f"selected: rank 1 (utility {cands[0]['utility']:.4f})")
    return "\n".join(lines) + "\n"


def _write_reports(out: Path, report: dict[str, Any]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    (out / "report.txt").write_text(_text_report(report), encoding="utf-8")


def run_pipeline(manifest: RunManifest) -> RunOutcome:
    """Demand check, alternatives, layouts, optimisation, ranking and reports."""
    out = Path(manifest.out)
    try:
        scenario = load_scenario(manifest.scenario, strict=manifest.strict)
    except ScenarioError as exc:
        return RunOutcome(EXIT_INVALID, "invalid-scenario", message=str(exc))
    except (OSError, json.JSONDecodeError) as exc:
        return RunOutcome(EXIT_INVALID, "invalid-scenario", message=f"cannot read scenario: {exc}")
    try:
        return _run(scenario, manifest, out)
    except FileNotFoundError as exc:
        return RunOutcome(EXIT_INVALID, "missing-models", message=str(exc))
    except Exception as exc:  # noqa: BLE001 - reported as exit status 4
        log.exception("run failed")
        return RunOutcome(EXIT_INTERNAL, "internal-error", message=f"{type(exc).__name__}: {exc}")


def _run(scenario: Scenario, manifest: RunManifest, out: Path) -> RunOutcome:
    seed = scenario.seed if manifest.seed is None else int(manifest.seed)
    stages: list[dict[str, Any]] = []
    store = ModelStore(manifest.models)
    models, created = ensure_models(scenario, store, seed)
    # the report describes the store, not this invocation, so a rerun is byte-identical
    for key in created:
        log.info("trained design-time model %s", key)
    stages.append({"stage": "models", "loaded": len(models)})

    order = scenario.order
    limits = SearchLimits(scenario.optimizer.max_depth, scenario.optimizer.max_branches)
    report: dict[str, Any] = {
        "tool_version": __version__,
        "seed": seed,
        "scenario": str(manifest.scenario),
        "model_versions": store.versions(),
        "order": {"lot_size": order.lot_size, "weights": order.weights.to_json()},
        "stages": stages,
    }
    if not manifest.deterministic:
        report["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")

    demand = identify_demand(scenario.modules, order, limits)
    stages.append({"stage": "demand", "demand": demand.demand, "current_sequences": len(demand.sequences)})
    if not demand.demand:
        report["status"] = "no-reconfiguration-needed"
        report["feasible_sequences"] = [_key_text(s) for s in demand.sequences]
        _write_reports(out, report)
        return RunOutcome(EXIT_OK, report["status"], report)

    pruned: list[str] = []
    drafts = generate_alternatives(scenario.modules, order, limits, pruned=pruned)
    stages.append({"stage": "alternatives", "sequences": len(drafts), "pruned": pruned})

    feasible: list[tuple[list[Step], list[tuple[dict, Any]]]] = []
    n_layouts = n_infeasible = 0
    for d in drafts:
        used = set(sequence_modules(d.steps))
        occupied = [m.location for m in scenario.modules if m.id not in used and m.location is not None]
        layouts = []
        for v in enumerate_layouts(d.steps, scenario.layout, occupied):
            effort = reconfiguration_effort(v, scenario.modules, d.steps, scenario.layout)
            if effort is None:
                n_infeasible += 1
                continue
            layouts.append((v.placement, effort))
        n_layouts += len(layouts)
        if layouts:
            feasible.append((list(d.steps), layouts))
    stages.append({"stage": "layouts", "feasible": n_layouts, "infeasible": n_infeasible, "sequences_with_layout": len(feasible)})

    if not feasible:
        report["status"] = "no-feasible-configuration"
        report["candidates"] = []
        _write_reports(out, report)
        return RunOutcome(EXIT_INFEASIBLE, report["status"], report, message="no production sequence has a feasible layout")

    resolved = [resolve_steps(scenario, steps, models) for steps, _ in feasible]
    optima = optimize_sequences(resolved, order.lot_size, order.weights, scenario.optimizer, seed, manifest.jobs)
    stages.append({"stage": "optimisation", "sequences": len(optima), "strategy": scenario.optimizer.strategy})

    candidates = []
    for (steps, layouts), opt in zip(feasible, optima):
        params = tuple(tuple(float(v) for v in p) for p in ConfigurationProblem(resolve_steps(scenario, steps, models), 1).split(opt.parameters))
        for placement, effort in layouts:
            candidates.append(SystemConfiguration(tuple(steps), placement, effort, params, opt.production))
    ranked = list(rank(candidates, order.weights).configurations)
    stages.append({"stage": "evaluation", "candidates": len(ranked)})

    report["status"] = "reconfiguration-selected"
    report["sequences"] = [
        {"sequence": _key_text(steps), "optimisation": opt.to_json()} for (steps, _), opt in zip(feasible, optima)
    ]
    report["candidates"] = [_candidate_json(c, i) for i, c in enumerate(ranked)]
    report["warnings"] = sorted({w for opt in optima for w in opt.weighted.warnings})
    _write_reports(out, report)
    selected = {"seed": seed, "model_versions": report["model_versions"], **ranked[0].to_json()}
    (out / "selected.json").write_text(json.dumps(selected, indent=2) + "\n", encoding="utf-8")

    if manifest.trace:
        tdir = out / "trace"
        tdir.mkdir(parents=True, exist_ok=True)
        best = ranked[0]
        sim = simulate(resolve_steps(scenario, best.steps, models), best.parameters, order.lot_size, trace=True)
        write_trace(sim.events, tdir / "selected.csv")
    return RunOutcome(EXIT_OK, report["status"], report, ranked)


# --- model adaptation --------------------------------------------------------


@dataclass
class AdaptationResult:
    key: str
    status: str
    pre_mse: float | None = None
    post_mse: float | None = None
    version: int | None = None
    message: str = ""

    def to_json(self) -> dict[str, Any]:
        return {k: v for k, v in self.__dict__.items() if v is not None and v != ""}


def split_dataset(data: OperatingDataset, held_out: float = HELD_OUT_FRACTION) -> tuple[OperatingDataset, OperatingDataset, int]:
    """Chronological split; returns (training part, whole dataset, first held-out index)."""
    cut = int(round(len(data) * (1.0 - held_out)))
    cut = min(max(cut, 1), len(data) - 1)
    return data.slice(0, cut), data, cut


def adapt_model(model: NarxModel, data: OperatingDataset, seed: int) -> tuple[NarxModel, float, float]:
    """Retrain on the first 75 % of ``data``; return the model and held-out MSE before and after."""
    if len(data) < 2:
        raise ValueError("need at least two records to adapt a model")
    train_part, whole, cut = split_dataset(data)
    pre = one_step_mse(model, whole, start=cut)
    adapted, _ = train(model, train_part, seed=seed)
    post = one_step_mse(adapted, whole, start=cut)
    return adapted, pre, post


def adapt_models(scenario: Scenario, store: ModelStore, datasets: Mapping[str, OperatingDataset], seed: int) -> list[AdaptationResult]:
    """Adapt every model with new operating data; a diverging run leaves the stored model untouched."""
    keys = operator_keys(scenario)
    results = []
    for key in sorted(datasets):
        if key not in keys:
            results.append(AdaptationResult(key, "unknown-model", message=f"no operator {key} in the scenario"))
            continue
        if key not in store:
            results.append(AdaptationResult(key, "missing-model", message=f"no stored model for {key}"))
            continue
        model = store.load(key)
        try:
            adapted, pre, post = adapt_model(model, datasets[key], derive_seed(seed, "adapt", key))
        except TrainingDivergence as exc:
            results.append(AdaptationResult(key, "diverged", version=store.version(key), message=str(exc)))
            continue
        version = store.save(key, adapted, f"adapted on {len(datasets[key])} records")
        results.append(AdaptationResult(key, "updated", pre, post, version))
    return results
