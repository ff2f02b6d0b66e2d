"""Command-line surface.

Subcommands: ``run`` (the full evolution loop), ``tune`` (standalone HPO of a
candidate file), ``eval`` (score a stored candidate on the full set),
``tournament`` (ratings over trajectory directories), ``gen-instances``
(benchmark instance generation) and ``export`` (plot CSVs from a run).
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from evotune import glicko2
from evotune.benchmarks import PROBLEMS
from evotune.benchmarks import bbob as bbob_mod
from evotune.benchmarks import binpack as binpack_mod
from evotune.benchmarks import tsp as tsp_mod
from evotune.benchmarks.recorded import RecordedEvaluator
from evotune.benchmarks.runners import DEFAULT_SHIM_COMMAND, SandboxRunner
from evotune.configspace import ConfigSpace, parse_assignment, parse_space, validate
from evotune.engine import EvolutionConfig, run_evolution
from evotune.hpo import Tuner, TunerConfig
from evotune.llm import LLMUnavailable, OpenAIGateway, ScriptedSource, ScriptExhausted
from evotune.sandbox import SandboxLimits
from evotune.store import CorruptLog, LogicalClock, RunStore, export_convergence

log = logging.getLogger(__name__)


def _add_benchmark_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--binpack-instances", type=int, default=5)
    parser.add_argument("--binpack-items", type=int, default=1000)
    parser.add_argument("--capacity", type=int, default=100)
    parser.add_argument("--weibull-shape", type=float, default=3.0)
    parser.add_argument("--weibull-scale", type=float, default=45.0)
    parser.add_argument("--dim", type=int, default=5)
    parser.add_argument("--functions", default="1-24", help="continuous function ids, e.g. 1-24 or 1,3,8")
    parser.add_argument("--instances-per-fn", type=int, default=3)
    parser.add_argument("--fn-seeds", type=int, default=3)
    parser.add_argument("--opt-budget", type=int, default=2000, help="evaluations per continuous run slot")
    parser.add_argument("--tsp-n", type=int, default=10)
    parser.add_argument("--tsp-count", type=int, default=8)
    parser.add_argument("--gls-iters", type=int, default=50)
    parser.add_argument("--gls-time-limit", type=float, default=10.0)
    parser.add_argument("--train-count", type=int, default=None, help="training instances (default: problem-specific)")
    parser.add_argument("--instance-dir", type=Path, default=None, help="load instances from files instead of generating")


def _add_sandbox_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--shim-cmd", default=None, help="command line for the candidate shim")
    parser.add_argument("--call-timeout", type=float, default=60.0)
    parser.add_argument("--session-timeout", type=float, default=600.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evotune", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the evolution loop")
    p_run.add_argument("--problem", required=True, choices=PROBLEMS)
    p_run.add_argument("--llm", choices=("openai-compatible", "mock"), default="mock")
    p_run.add_argument("--script-dir", type=Path, default=None, help="scripted responses for --llm mock")
    p_run.add_argument("--llm-budget", type=int, default=10)
    p_run.add_argument("--hpo-budget", type=int, default=40)
    p_run.add_argument("--hpo-strategy", choices=("random", "surrogate"), default="surrogate")
    p_run.add_argument("--min-instances", type=int, default=1)
    p_run.add_argument("--max-instances", type=int, default=4)
    p_run.add_argument("--seed", type=int, default=1)
    p_run.add_argument("--out", type=Path, required=True)
    p_run.add_argument("--model", default="gpt-4o")
    p_run.add_argument("--temperature", type=float, default=1.0)
    p_run.add_argument("--system-message", default="")
    p_run.add_argument("--endpoint", default="https://api.openai.com/v1/chat/completions")
    p_run.add_argument("--api-key-env", default="OPENAI_API_KEY")
    p_run.add_argument("--llm-retries", type=int, default=3)
    p_run.add_argument("--recorded-evals", type=Path, default=None,
                       help="JSON of pre-recorded per-candidate results; skips code execution")
    _add_benchmark_flags(p_run)
    _add_sandbox_flags(p_run)

    p_tune = sub.add_parser("tune", help="standalone HPO of a candidate file")
    p_tune.add_argument("--problem", required=True, choices=PROBLEMS)
    p_tune.add_argument("--code", type=Path, required=True)
    p_tune.add_argument("--space", type=Path, required=True)
    p_tune.add_argument("--hpo-budget", type=int, default=40)
    p_tune.add_argument("--hpo-strategy", choices=("random", "surrogate"), default="surrogate")
    p_tune.add_argument("--min-instances", type=int, default=1)
    p_tune.add_argument("--max-instances", type=int, default=4)
    p_tune.add_argument("--seed", type=int, default=1)
    p_tune.add_argument("--out", type=Path, default=None)
    _add_benchmark_flags(p_tune)
    _add_sandbox_flags(p_tune)

    p_eval = sub.add_parser("eval", help="evaluate a candidate + assignment on the full set")
    p_eval.add_argument("--problem", required=True, choices=PROBLEMS)
    p_eval.add_argument("--code", type=Path, required=True)
    p_eval.add_argument("--space", type=Path, default=None)
    p_eval.add_argument("--params", type=Path, default=None, help="assignment literal file (default: empty)")
    p_eval.add_argument("--seed", type=int, default=1)
    _add_benchmark_flags(p_eval)
    _add_sandbox_flags(p_eval)

    p_tour = sub.add_parser("tournament", help="rate algorithms from trajectory directories")
    p_tour.add_argument("dirs", nargs="+", type=Path, help="one directory of trajectory CSVs per algorithm")
    p_tour.add_argument("--games", type=int, default=200)
    p_tour.add_argument("--seed", type=int, default=1)
    p_tour.add_argument("--max-budget", type=int, default=10_000)
    p_tour.add_argument("--out-csv", type=Path, default=None)

    p_gen = sub.add_parser("gen-instances", help="generate benchmark instances")
    p_gen.add_argument("--problem", required=True, choices=PROBLEMS)
    p_gen.add_argument("--seed", type=int, default=1)
    p_gen.add_argument("--out", type=Path, required=True)
    p_gen.add_argument("--count", type=int, default=5)
    p_gen.add_argument("--items", type=int, default=5000)
    p_gen.add_argument("--capacity", type=int, default=100)
    p_gen.add_argument("--weibull-shape", type=float, default=3.0)
    p_gen.add_argument("--weibull-scale", type=float, default=45.0)
    p_gen.add_argument("--n", type=int, default=100)
    p_gen.add_argument("--reference-starts", type=int, default=50)
    p_gen.add_argument("--functions", default="1-24")
    p_gen.add_argument("--dim", type=int, default=5)
    p_gen.add_argument("--instances-per-fn", type=int, default=3)

    p_export = sub.add_parser("export", help="export convergence CSVs from a run directory")
    p_export.add_argument("run_dir", type=Path)
    p_export.add_argument(
        "--series",
        choices=("fitness-vs-llm-queries", "fitness-vs-full-evals", "both"),
        default="both",
    )
    p_export.add_argument("--out", type=Path, default=None, help="file (single series) or directory (both)")
    return parser


def _parse_function_ids(spec: str) -> List[int]:
    ids: List[int] = []
    for part in spec.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            ids.extend(range(int(lo), int(hi) + 1))
        elif part:
            ids.append(int(part))
    return ids


def _shim_command(args) -> Tuple[str, ...]:
    if args.shim_cmd:
        return tuple(shlex.split(args.shim_cmd))
    return DEFAULT_SHIM_COMMAND


def _make_runner(args, stderr_dir: Optional[Path] = None) -> SandboxRunner:
    limits = SandboxLimits(
        wall_timeout_per_call=args.call_timeout,
        wall_timeout_total=args.session_timeout,
    )
    return SandboxRunner(_shim_command(args), limits, stderr_dir=stderr_dir)


def _build_evaluator(args, runner):
    """Materialize instances deterministically from the seed and wrap them in
    the problem's evaluator."""
    problem = args.problem
    # only `run` has a run directory to drop artifacts into
    run_dir = Path(args.out) if getattr(args, "command", "") == "run" else None
    if problem == "binpack":
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0xB1]))
        if args.instance_dir:
            files = sorted(Path(args.instance_dir).glob("*.json"))
            instances = {p.stem: binpack_mod.read_instance(p) for p in files}
        else:
            instances = {
                f"weibull-{i}": binpack_mod.gen_weibull_instance(
                    args.binpack_items, args.capacity, args.weibull_shape, args.weibull_scale, rng
                )
                for i in range(args.binpack_instances)
            }
        ids = sorted(instances)
        train_count = args.train_count or max(1, len(ids) - 1)
        return binpack_mod.BinpackEvaluator(
            instances, ids[:train_count], ids, runner, base_seed=args.seed
        )
    if problem == "bbob":
        slots = bbob_mod.make_suite(
            _parse_function_ids(args.functions), args.dim, args.instances_per_fn, args.fn_seeds
        )
        training = [s for s in slots if s.instance_id == 1]
        if args.train_count:
            training = training[: args.train_count]
        return bbob_mod.BbobEvaluator(
            training,
            slots,
            dim=args.dim,
            budget=args.opt_budget,
            runner=runner,
            base_seed=args.seed,
            trajectory_dir=run_dir / "trajectories" if run_dir else None,
        )
    if problem == "tsp":
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0x75]))
        if args.instance_dir:
            instances = {}
            for path in sorted(Path(args.instance_dir).iterdir()):
                if path.suffix == ".json":
                    instances[path.stem] = tsp_mod.read_instance(path)
                elif path.suffix == ".tsp":
                    inst = tsp_mod.read_tsplib(path)
                    inst.optimum_length = tsp_mod.multi_start_reference(inst, 50, rng)
                    log.warning("%s: gap measured against a multi-start reference", path.name)
                    instances[path.stem] = inst
            if not instances:
                raise FileNotFoundError(f"no .json or .tsp instances in {args.instance_dir}")
        else:
            instances = {}
            for i in range(args.tsp_count):
                inst = tsp_mod.gen_instance(args.tsp_n, rng)
                if inst.n <= 13:
                    _, inst.optimum_length = tsp_mod.optimal_tour(inst)
                else:
                    inst.optimum_length = tsp_mod.multi_start_reference(inst, 50, rng)
                    log.warning("instance %d uses a multi-start reference, not a proven optimum", i)
                instances[f"tsp-{i}"] = inst
        ids = sorted(instances)
        train_count = args.train_count or max(1, (3 * len(ids)) // 4)
        return tsp_mod.TspEvaluator(
            instances,
            ids[:train_count],
            ids,
            runner,
            gls_iterations=args.gls_iters,
            time_limit_s=args.gls_time_limit,
            base_seed=args.seed,
            results_dir=run_dir / "tsp_results" if run_dir else None,
        )
    raise ValueError(f"unknown problem {problem!r}")


def _cmd_run(args) -> int:
    out = Path(args.out)
    store = RunStore(out, clock=LogicalClock() if args.llm == "mock" else time.time)
    store.repair()  # the run command owns the log; drop any torn tail now
    resume = store.build_resume()

    if args.llm == "mock":
        if not args.script_dir:
            print("error: --llm mock requires --script-dir", file=sys.stderr)
            return 2
        gateway = ScriptedSource.from_dir(args.script_dir)
        if resume is not None:
            gateway.advance(resume.responses_consumed)
    else:
        gateway = OpenAIGateway(
            endpoint=args.endpoint, api_key_env=args.api_key_env, retries=args.llm_retries
        )

    if args.recorded_evals:
        evaluator = RecordedEvaluator.from_file(args.recorded_evals, args.problem)
    else:
        evaluator = _build_evaluator(args, _make_runner(args, stderr_dir=out / "stderr"))

    config = EvolutionConfig(
        problem=args.problem,
        llm_budget=args.llm_budget,
        hpo_budget=args.hpo_budget,
        seeds=(args.seed,),
        training_instances=tuple(evaluator.training_instances),
        full_instances=tuple(evaluator.full_instances),
        model_name=args.model,
        temperature=args.temperature,
        system_message=args.system_message,
    )
    tuner = Tuner(
        TunerConfig(
            budget=args.hpo_budget,
            min_instances=args.min_instances,
            max_instances=min(args.max_instances, len(evaluator.training_instances)),
            strategy=args.hpo_strategy,
            seed=args.seed,
        )
    )
    if resume is None:
        store.write_config(_flat_config(args))
    else:
        log.info("resuming run at t=%d (candidate %d)", resume.t, resume.next_candidate_id)
        try:
            stored = store.read_config()
        except FileNotFoundError:
            stored = None
        current = _flat_config(args)
        if stored is not None and stored != current:
            changed = sorted(
                key for key in set(stored) | set(current)
                if stored.get(key) != current.get(key)
            )
            log.warning(
                "resume flags differ from the original run (%s); instances are "
                "rebuilt from the current flags", ", ".join(changed)
            )

    try:
        best, state = run_evolution(config, gateway, tuner, evaluator, store, resume=resume)
    except (LLMUnavailable, ScriptExhausted) as exc:
        print(f"error: LLM gateway failed: {exc}", file=sys.stderr)
        print("the run directory remains resumable", file=sys.stderr)
        return 1
    finally:
        store.close()
    print(f"best candidate: {best.name} (id {best.id})")
    print(f"fitness: {best.fitness!r} +/- {best.fitness_std!r}")
    print(f"LLM queries used: {state.t}")
    print(f"full benchmark evaluations: {float(state.full_benchmark_evals):.4f}")
    return 0


def _flat_config(args) -> Dict[str, object]:
    skip = {"command", "verbose", "out", "script_dir", "instance_dir", "recorded_evals"}
    flat = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        flat[key.replace("_", "-")] = str(value) if isinstance(value, Path) else value
    for key in ("script_dir", "instance_dir", "recorded_evals"):
        value = getattr(args, key, None)
        flat[key.replace("_", "-")] = str(value) if value else None
    return flat


def _cmd_tune(args) -> int:
    runner = _make_runner(args)
    evaluator = _build_evaluator(args, runner)
    code = args.code.read_text()
    space = parse_space(args.space.read_text())
    bound = evaluator.bind(code, space, args.code.stem)
    tuner = Tuner(
        TunerConfig(
            budget=args.hpo_budget,
            min_instances=args.min_instances,
            max_instances=min(args.max_instances, len(evaluator.training_instances)),
            strategy=args.hpo_strategy,
            seed=args.seed,
        )
    )
    incumbent, trials = tuner.tune(space, bound.instance_cost, evaluator.training_instances)
    doc = {
        "assignment": incumbent.assignment,
        "mean_cost": incumbent.mean_cost,
        "instances_seen": incumbent.instances_seen,
        "objective_calls": len(trials),
    }
    text = json.dumps(doc, sort_keys=True, indent=2)
    if args.out:
        args.out.write_text(text)
    print(text)
    return 0


def _cmd_eval(args) -> int:
    runner = _make_runner(args)
    evaluator = _build_evaluator(args, runner)
    code = args.code.read_text()
    space = parse_space(args.space.read_text()) if args.space else ConfigSpace(())
    assignment = parse_assignment(args.params.read_text()) if args.params else {}
    if not assignment:
        space = ConfigSpace(())  # no injected parameters: constructor defaults
    else:
        violations = validate(assignment, space)
        if violations:
            for violation in violations:
                print(f"error: {violation}", file=sys.stderr)
            return 2
    bound = evaluator.bind(code, space, args.code.stem)
    result = bound.final_evaluation(assignment)
    print(
        json.dumps(
            {
                "fitness": result.fitness,
                "std": result.std,
                "instance_evals": result.instance_evals,
                "error": result.error,
                "raw": result.raw,
            },
            sort_keys=True,
            indent=2,
        )
    )
    return 0 if result.error is None else 1


def _load_trajectory_dir(path: Path) -> Dict[object, List[List[float]]]:
    per_function: Dict[object, List[List[float]]] = {}
    for csv_path in sorted(path.glob("*.csv")):
        function_id = csv_path.name.split("_")[0]
        per_function.setdefault(function_id, []).append(bbob_mod.read_trajectory(csv_path))
    if not per_function:
        raise FileNotFoundError(f"no trajectory CSVs in {path}")
    return per_function


def _cmd_tournament(args) -> int:
    trajectories = {Path(d).name: _load_trajectory_dir(Path(d)) for d in args.dirs}
    result = glicko2.tournament(
        trajectories,
        games_per_function=args.games,
        rng=np.random.default_rng(args.seed),
        max_budget=args.max_budget,
    )
    table = glicko2.format_table(result.rows)
    print(table)
    if args.out_csv:
        with open(args.out_csv, "w") as fh:
            fh.write("id,rating,deviation,volatility,games,win,draw,loss\n")
            for row in result.rows:
                fh.write(
                    f"{row.algorithm},{row.rating!r},{row.deviation!r},{row.volatility!r},"
                    f"{row.games},{row.wins},{row.draws},{row.losses}\n"
                )
    return 0


def _cmd_gen_instances(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.problem == "binpack":
        rng = np.random.default_rng(args.seed)
        for i in range(args.count):
            instance = binpack_mod.gen_weibull_instance(
                args.items, args.capacity, args.weibull_shape, args.weibull_scale, rng
            )
            binpack_mod.write_instance(out / f"instance_{i:03d}.json", instance)
        print(f"wrote {args.count} bin-packing instances to {out}")
        return 0
    if args.problem == "tsp":
        rng = np.random.default_rng(args.seed)
        for i in range(args.count):
            instance = tsp_mod.gen_instance(args.n, rng)
            reference = False
            if instance.n <= 13:
                _, instance.optimum_length = tsp_mod.optimal_tour(instance)
            else:
                instance.optimum_length = tsp_mod.multi_start_reference(
                    instance, args.reference_starts, rng
                )
                reference = True
            tsp_mod.write_instance(out / f"instance_{i:03d}.json", instance, reference=reference)
        print(f"wrote {args.count} TSP instances to {out}")
        return 0
    slots = bbob_mod.make_suite(
        _parse_function_ids(args.functions), args.dim, args.instances_per_fn, 1
    )
    bbob_mod.write_suite_manifest(out / "suite_manifest.json", slots, args.dim)
    print(f"wrote suite manifest ({len(slots)} slots) to {out}")
    return 0


def _cmd_export(args) -> int:
    try:
        series_a, series_b = export_convergence(args.run_dir)
    except CorruptLog as exc:
        print(f"error: corrupt event log: {exc}", file=sys.stderr)
        return 1
    if args.series == "fitness-vs-llm-queries":
        _emit(series_a, args.out)
    elif args.series == "fitness-vs-full-evals":
        _emit(series_b, args.out)
    else:
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / "fitness_vs_llm_queries.csv").write_text(series_a)
            (args.out / "fitness_vs_full_evals.csv").write_text(series_b)
        else:
            sys.stdout.write(series_a)
            sys.stdout.write(series_b)
    return 0


def _emit(text: str, out: Optional[Path]) -> None:
    if out:
        out.write_text(text)
    else:
        sys.stdout.write(text)


_COMMANDS = {
    "run": _cmd_run,
    "tune": _cmd_tune,
    "eval": _cmd_eval,
    "tournament": _cmd_tournament,
    "gen-instances": _cmd_gen_instances,
    "export": _cmd_export,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
