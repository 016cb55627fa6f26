"""Command line: ``earl-lab generate | rollout | train``.

Exit codes: 0 success, 1 usage or parameter error, 2 bad input data, 3 runtime
failure. Any configuration key can be overridden from the environment with
``EARL_LAB_<SECTION>__<KEY>`` (sections nest with double underscores), e.g.
``EARL_LAB_TRAIN__LEARNING_RATE=0.001`` or ``EARL_LAB_SUITE_SIZE=100``. Values
are parsed as JSON when possible and kept as strings otherwise.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .env import run_episode, save_trajectories
from .errors import EarlError, InfeasiblePlacement, MalformedRecord
from .policy import OraclePolicy, RandomPolicy, SoftmaxPolicy, load_checkpoint, save_checkpoint
from .reward import RewardBreakdown, total_reward
from .seeding import substream
from .synth import (
    GenerationParams,
    generate_suite,
    load_annotations,
    load_tasks,
    save_annotations,
    save_tasks,
)
from .trainer import ABLATIONS, TrainConfig, ablation_config, run_training

ENV_PREFIX = "EARL_LAB_"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

DEFAULT_RUN = {
    "seed": 0,
    "suite_size": 500,
    "eval_size": 500,
    "generation": {},
    "train": {},
}

AUDIT_COLUMNS = (
    "task_id", "rollout", "correct", "iou", "r_action", "r_relevance", "r_correct",
    "alpha", "beta", "r_total", "recomposition",
)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --- configuration ----------------------------------------------------------------


def _parse_env_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_env_overrides(config: dict, environ=None) -> dict:
    """Copy of ``config`` with every ``EARL_LAB_*`` variable applied."""
    environ = os.environ if environ is None else environ
    out = json.loads(json.dumps(config))
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX):].split("__") if p]
        if not path:
            continue
        node = out
        for key in path[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise UsageError(f"{name}: {key!r} is not a section")
        node[path[-1]] = _parse_env_value(environ[name])
    return out


def load_run_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise DataError(f"{path}: config must be a JSON object")
    cfg = json.loads(json.dumps(DEFAULT_RUN))
    cfg.update(raw)
    return cfg


def resolve_run(cfg: dict):
    """Validated ``(GenerationParams, TrainConfig)`` from a run configuration."""
    unknown = set(cfg) - set(DEFAULT_RUN) - {"out"}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    try:
        gen = GenerationParams.from_dict(cfg["generation"]).validate()
        train = TrainConfig.from_dict(cfg["train"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    for key in ("seed", "suite_size", "eval_size"):
        if isinstance(cfg[key], bool) or not isinstance(cfg[key], int):
            raise UsageError(f"{key} must be an integer")
    if cfg["suite_size"] < 1 or cfg["eval_size"] < 0:
        raise UsageError("suite_size must be >= 1 and eval_size >= 0")
    return gen, train


def resolved_config(cfg: dict, gen: GenerationParams, train: TrainConfig) -> dict:
    return {
        "seed": cfg["seed"],
        "suite_size": cfg["suite_size"],
        "eval_size": cfg["eval_size"],
        "generation": gen.to_dict(),
        "train": train.to_dict(),
    }


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- generate -----------------------------------------------------------------------


def cmd_generate(args) -> int:
    overrides = {"m": args.m, "k": args.k, "k_min": args.k_min,
                 "option_count": args.options}
    base = apply_env_overrides({"generation": {}})["generation"]
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        params = GenerationParams.from_dict(base).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid generation parameters: {exc}") from None
    if args.count < 1:
        raise UsageError("--count must be positive")
    # generate everything before touching the output directory
    tasks = generate_suite(args.count, args.seed, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_tasks = save_tasks(out / "tasks.jsonl", tasks)
    n_anno = save_annotations(out / "annotations.jsonl", {t.task_id: t.annotation for t in tasks})
    print(f"wrote {n_tasks} tasks to {out / 'tasks.jsonl'}")
    print(f"wrote {n_anno} annotations to {out / 'annotations.jsonl'}")
    return EXIT_OK


# --- rollout ------------------------------------------------------------------------


def make_policy_factory(name: str, seed: int):
    rng = substream(seed, "policy")
    if name == "random":
        return lambda: RandomPolicy(rng)
    if name == "oracle":
        return OraclePolicy
    if name.startswith("checkpoint:"):
        path = name[len("checkpoint:"):]
        try:
            params = load_checkpoint(path)
        except FileNotFoundError:
            raise DataError(f"{path}: checkpoint not found") from None
        return lambda: SoftmaxPolicy(params, rng)
    raise UsageError(f"unknown policy {name!r}; use random, oracle or checkpoint:<path>")


def audit_row(task_id: str, rollout: int, correct: bool, rb: RewardBreakdown) -> list:
    return [
        task_id, rollout, int(correct), repr(rb.iou), repr(float(rb.r_action)),
        repr(rb.r_relevance), repr(rb.r_correct), repr(rb.alpha), repr(rb.beta),
        repr(rb.r_total), repr(rb.recomposition_error),
    ]


def cmd_rollout(args) -> int:
    if args.group < 1:
        raise UsageError("--group must be positive")
    cfg = apply_env_overrides({"train": {}})
    try:
        train = TrainConfig.from_dict(cfg["train"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    iteration = train.total_iters if args.iteration is None else args.iteration
    if not 0 <= iteration <= train.total_iters:
        raise UsageError(f"--iteration must be in [0, {train.total_iters}]")
    factory = make_policy_factory(args.policy, args.seed)
    tasks = load_tasks(args.tasks)
    annotations = load_annotations(args.annotations)
    missing = [t.task_id for t in tasks if t.task_id not in annotations]
    if missing:
        raise DataError(f"{args.annotations}: no annotation for task(s) {missing[:5]}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trajectories, rows = [], []
    for task in tasks:
        for r in range(args.group):
            traj, _ = run_episode(task, factory(), train.env)
            rb = total_reward(
                traj, annotations[task.task_id], train.schedule, iteration,
                task.correct_option, train.reward_options,
            )
            trajectories.append(traj)
            rows.append(audit_row(task.task_id, r, traj.predicted_answer == task.correct_option, rb))
    save_trajectories(out / "trajectories.jsonl", trajectories)
    with (out / "audit.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AUDIT_COLUMNS)
        w.writerows(rows)
    acc = np.mean([int(r[2]) for r in rows])
    print(f"{len(rows)} rollouts over {len(tasks)} tasks, accuracy {acc:.3f}")
    print(f"wrote {out / 'trajectories.jsonl'} and {out / 'audit.csv'}")
    return EXIT_OK


# --- train --------------------------------------------------------------------------


def _report_text(name: str, rep) -> str:
    lines = [f"run: {name}"]
    before, after = rep.pretrain_nll
    if before is not None:
        lines.append(f"pretrain nll: {before:.6f} -> {after:.6f}")
    lines.append(f"iterations: {len(rep.rows)}")
    for key, value in rep.evaluation.items():
        lines.append(f"eval {key}: {value:.6f}")
    lines.append("final weights: " + " ".join(f"{w:.6f}" for w in rep.params.weights))
    return "\n".join(lines) + "\n"


def train_one(run_dir: Path, name: str, train: TrainConfig, suite, eval_suite, seed: int):
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "checkpoints").mkdir(exist_ok=True)
    (run_dir / "trajectories").mkdir(exist_ok=True)
    started = time.time()
    rep = run_training(train, suite, seed, eval_suite)
    elapsed = time.time() - started
    (run_dir / "metrics.csv").write_text(rep.metrics_csv(), encoding="utf-8")
    save_checkpoint(run_dir / "checkpoints" / "pretrained.txt", rep.pretrained_params)
    save_checkpoint(run_dir / "checkpoints" / "final.txt", rep.params)
    save_trajectories(run_dir / "trajectories" / "eval.jsonl", [t for t, _ in rep.eval_log])
    (run_dir / "report.txt").write_text(_report_text(name, rep), encoding="utf-8")
    # wall-clock facts live here so every other file is reproducible byte for byte
    _write_json(run_dir / "meta.json", {
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "seconds": round(elapsed, 3),
    })
    return rep


def cmd_train(args) -> int:
    cfg = load_run_config(args.config) if args.config else json.loads(json.dumps(DEFAULT_RUN))
    cfg = apply_env_overrides(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    gen, train = resolve_run(cfg)
    out = Path(args.out or cfg.get("out") or f"runs/seed{cfg['seed']}")
    seed = cfg["seed"]

    names = {"none": ["full"], "all": list(ABLATIONS)}.get(args.ablate, [args.ablate])
    suite = generate_suite(cfg["suite_size"], seed, gen)
    eval_suite = generate_suite(cfg["eval_size"], seed, gen, stream="eval-task") or None

    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", resolved_config(cfg, gen, train))
    summary = []
    for name in names:
        run_dir = out if len(names) == 1 else out / name
        rep = train_one(run_dir, name, ablation_config(train, name), suite, eval_suite, seed)
        ev = rep.evaluation
        summary.append((name, ev))
        print(f"{name:5s} accuracy={ev['accuracy']:.3f} iou={ev['mean_iou']:.3f} "
              f"reward={ev['mean_reward']:.3f}")
    if len(names) > 1:
        lines = ["run,accuracy,mean_iou,mean_reward,selection_rate"]
        for name, ev in summary:
            lines.append(",".join([name] + [repr(ev[k]) for k in
                                            ("accuracy", "mean_iou", "mean_reward",
                                             "selection_rate")]))
        (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"run directory: {out}")
    return EXIT_OK


# --- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="earl-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic task suite and its annotations")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--m", type=int, default=None, help="frames per video (default 512)")
    g.add_argument("--k", type=int, default=None, help="evidence frames per task (1-8)")
    g.add_argument("--k-min", type=int, default=None, help="draw K uniformly from [k-min, k]")
    g.add_argument("--options", type=int, default=None, help="answer options per task")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("rollout", help="run a policy over a task file and audit its rewards")
    r.add_argument("--tasks", required=True)
    r.add_argument("--annotations", required=True)
    r.add_argument("--policy", required=True, help="random | oracle | checkpoint:<path>")
    r.add_argument("--group", type=int, default=1, help="rollouts per task")
    r.add_argument("--iteration", type=int, default=None,
                   help="training iteration whose reward weights are used (default: T)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default="rollout", help="output directory")
    r.set_defaults(func=cmd_rollout)

    t = sub.add_parser("train", help="pretrain and train, writing a run directory")
    t.add_argument("--config", default=None, help="JSON run configuration")
    t.add_argument("--ablate", default="none", choices=["none", *ABLATIONS[1:], "all"])
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default=None, help="run directory")
    t.set_defaults(func=cmd_train)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"earl-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, MalformedRecord, InfeasiblePlacement, FileNotFoundError) as exc:
        print(f"earl-lab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EarlError, ArithmeticError, OSError) as exc:
        print(f"earl-lab: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
