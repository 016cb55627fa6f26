"""Imitation pretraining and group-rollout policy-gradient training.

Training loop: optionally clone the oracle (negative log-likelihood descent),
then for each iteration ``t = 1..T`` draw a batch of prompts, roll out ``G``
episodes per prompt, score them with the scheduled EARL reward, centre and
scale rewards within each group, and take one REINFORCE step.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .env import Answer, EnvConfig, Trajectory, observe, reset, run_episode, step
from .errors import DegenerateBatch, EmptyDataset
from .policy import (
    OraclePolicy,
    PolicyParams,
    RandomPolicy,
    SoftmaxPolicy,
    WEIGHT_NAMES,
    action_logprob_grad,
)
from .reward import EARL, RewardBreakdown, RewardOptions, ScheduleConfig, total_reward
from .seeding import substream
from .synth import answer_oracle

ADV_EPS = 1e-6
METRIC_COLUMNS = (
    "iter", "mean_reward", "mean_iou", "accuracy", "selection_rate", "alpha", "beta",
)
ABLATIONS = ("full", "rr", "iou", "da", "sft")


@dataclass(frozen=True)
class TrainConfig:
    group_size: int = 8
    prompts_per_batch: int = 32
    learning_rate: float = 0.002
    max_grad_norm: Optional[float] = None
    schedule: ScheduleConfig = ScheduleConfig()
    env: EnvConfig = EnvConfig()
    temperature: float = 1.0
    disable_relevance: bool = False
    disable_iou_gate: bool = False
    disable_dynamic_adjustment: bool = False
    per_op_action_reward: bool = False
    pretrain: bool = True
    pretrain_tasks: int = 100
    pretrain_epochs: int = 100
    pretrain_lr: float = 0.5
    rl: bool = True
    eval_rollouts: int = 2

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2 for advantage normalization")
        if self.prompts_per_batch < 1:
            raise ValueError("prompts_per_batch must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")

    @property
    def total_iters(self) -> int:
        return self.schedule.total_iters

    @property
    def reward_options(self) -> RewardOptions:
        return RewardOptions(
            relevance=not self.disable_relevance,
            iou_gate=not self.disable_iou_gate,
            dynamic=not self.disable_dynamic_adjustment,
            per_op_action=self.per_op_action_reward,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training parameters: {sorted(unknown)}")
        if "schedule" in d:
            d["schedule"] = ScheduleConfig(**d["schedule"])
        if "env" in d:
            d["env"] = EnvConfig(**d["env"])
        return cls(**d)


def ablation_config(base: TrainConfig, name: str) -> TrainConfig:
    """The training configuration for one cell of the ablation matrix."""
    if name == "full":
        return base
    if name == "rr":
        return replace(base, disable_relevance=True)
    if name == "iou":
        return replace(base, disable_iou_gate=True)
    if name == "da":
        return replace(base, disable_dynamic_adjustment=True)
    if name == "sft":
        return replace(base, rl=False, pretrain=True)
    raise ValueError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")


@dataclass
class Rollout:
    trajectory: Trajectory
    correct: bool
    logprob: float
    grad: np.ndarray


@dataclass
class RolloutGroup:
    task_id: str
    trajectories: list
    rewards: list
    advantages: np.ndarray
    grads: list = field(default_factory=list)
    correct: list = field(default_factory=list)


@dataclass
class TrainingReport:
    rows: list
    params: PolicyParams
    initial_params: PolicyParams
    pretrained_params: PolicyParams
    evaluation: dict
    pretrain_nll: tuple = (None, None)
    eval_log: list = field(default_factory=list)  # (trajectory, RewardBreakdown)

    def metrics_csv(self) -> str:
        return metrics_to_csv(self.rows)


def metrics_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for row in rows:
        writer.writerow([row["iter"]] + [repr(float(row[c])) for c in METRIC_COLUMNS[1:]])
    return buf.getvalue()


# --- imitation ----------------------------------------------------------------------


def oracle_demonstrations(tasks, env: EnvConfig = EnvConfig()) -> list:
    """``(observation, action)`` pairs from oracle episodes, one list entry per step."""
    demos = []
    oracle = OraclePolicy(env.n_max)
    for task in tasks:
        state = reset(task, env.initial_budget)
        while not state.terminal:
            obs = observe(state, task.timeline)
            action = oracle.act(task, state, obs)
            demos.append((obs, action))
            if isinstance(action, Answer) and action.choice is None:
                action = Answer(answer_oracle(task, state.context))
            state = step(state, action, env.n_max, env.max_steps)
    return demos


def demonstration_nll(params: PolicyParams, demos) -> tuple:
    """Mean negative log-likelihood of the demonstrations and its gradient."""
    total = 0.0
    grad = np.zeros(len(WEIGHT_NAMES))
    for obs, action in demos:
        lp, g = action_logprob_grad(params, obs, action)
        total -= lp
        grad -= g
    return total / len(demos), grad / len(demos)


def clone_pretrain(
    params: PolicyParams, demos, epochs: int, learning_rate: float = 0.5
) -> PolicyParams:
    """Full-batch gradient descent on the demonstrations' negative log-likelihood.

    Each epoch starts from ``learning_rate`` and halves the step until the loss
    goes down (backtracking line search); training stops early when no step helps.
    """
    if not demos:
        raise EmptyDataset("no demonstrations to imitate")
    nll, grad = demonstration_nll(params, demos)
    for _ in range(epochs):
        lr = learning_rate
        for _halving in range(30):
            candidate = params.with_weights(params.weights - lr * grad)
            cand_nll, cand_grad = demonstration_nll(candidate, demos)
            if cand_nll < nll:
                params, nll, grad = candidate, cand_nll, cand_grad
                break
            lr *= 0.5
        else:
            break
    return params


# --- rollouts and updates -----------------------------------------------------------


def rollout_softmax(task, params: PolicyParams, rng, env: EnvConfig = EnvConfig()) -> Rollout:
    policy = SoftmaxPolicy(params, rng)
    traj, _ = run_episode(task, policy, env)
    correct = traj.predicted_answer == task.correct_option
    return Rollout(traj, correct, policy.logprob, policy.grad)


def group_advantages(rewards) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    if np.all(r == r[0]):
        return np.zeros(len(r))
    return (r - r.mean()) / (r.std() + ADV_EPS)


def collect_group(task, params: PolicyParams, config: TrainConfig, iteration: int, rng):
    """``G`` independent episodes on one task, scored at ``iteration``."""
    options = config.reward_options
    trajs, rewards, grads, correct = [], [], [], []
    for _ in range(config.group_size):
        ro = rollout_softmax(task, params, rng, config.env)
        rb = total_reward(
            ro.trajectory, task.annotation, config.schedule, iteration,
            task.correct_option, options,
        )
        trajs.append(ro.trajectory)
        rewards.append(rb)
        grads.append(ro.grad)
        correct.append(ro.correct)
    adv = group_advantages([rb.r_total for rb in rewards])
    return RolloutGroup(task.task_id, trajs, rewards, adv, grads, correct)


def surrogate_gradient(groups) -> np.ndarray:
    """Gradient of ``sum_i A_i * log pi(trajectory_i)`` over every group."""
    grad = np.zeros(len(WEIGHT_NAMES))
    for g in groups:
        for a, gr in zip(g.advantages, g.grads):
            grad += a * gr
    return grad


def update_policy(
    params: PolicyParams, groups, learning_rate: float, max_grad_norm=None
) -> PolicyParams:
    """One REINFORCE ascent step. All-zero advantages warn and return ``params``."""
    if all(not np.any(g.advantages) for g in groups):
        warnings.warn("all advantages are zero; skipping update", DegenerateBatch)
        return params
    grad = surrogate_gradient(groups)
    if max_grad_norm is not None:
        norm = float(np.linalg.norm(grad))
        if norm > max_grad_norm:
            grad = grad * (max_grad_norm / norm)
    new = params.weights + learning_rate * grad
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("policy update produced non-finite weights")
    return params.with_weights(new)


def batch_metrics(iteration: int, groups) -> dict:
    rewards = [rb for g in groups for rb in g.rewards]
    trajs = [t for g in groups for t in g.trajectories]
    correct = [c for g in groups for c in g.correct]
    return {
        "iter": iteration,
        "mean_reward": float(np.mean([rb.r_total for rb in rewards])),
        "mean_iou": float(np.mean([rb.iou for rb in rewards])),
        "accuracy": float(np.mean(correct)),
        "selection_rate": float(np.mean([t.selection_ops > 0 for t in trajs])),
        "alpha": rewards[0].alpha,
        "beta": rewards[0].beta,
    }


# --- evaluation ---------------------------------------------------------------------


def evaluate_policy(
    policy_factory, tasks, config: TrainConfig, rollouts: int = 1, options=EARL, log=None
) -> dict:
    """Accuracy, IoU and reward of a policy, scored with the end-of-training
    (iteration ``T``) weights of the full EARL reward.

    When ``log`` is a list, ``(trajectory, breakdown)`` pairs are appended to it.
    """
    t_final = config.schedule.total_iters
    stats = {"accuracy": [], "mean_iou": [], "mean_reward": [], "selection_rate": []}
    for task in tasks:
        for _ in range(rollouts):
            traj, _ = run_episode(task, policy_factory(), config.env)
            rb = total_reward(
                traj, task.annotation, config.schedule, t_final, task.correct_option, options
            )
            if log is not None:
                log.append((traj, rb))
            stats["accuracy"].append(traj.predicted_answer == task.correct_option)
            stats["mean_iou"].append(rb.iou)
            stats["mean_reward"].append(rb.r_total)
            stats["selection_rate"].append(traj.selection_ops > 0)
    return {k: float(np.mean(v)) if v else float("nan") for k, v in stats.items()}


def evaluate(params: PolicyParams, tasks, config: TrainConfig, rng, rollouts: int = 1, log=None):
    return evaluate_policy(
        lambda: SoftmaxPolicy(params, rng), tasks, config, rollouts, log=log
    )


def evaluate_random(tasks, config: TrainConfig, rng, rollouts: int = 1):
    return evaluate_policy(lambda: RandomPolicy(rng), tasks, config, rollouts)


# --- full run -----------------------------------------------------------------------


def run_training(
    config: TrainConfig, suite, seed: int, eval_suite=None, callback=None
) -> TrainingReport:
    """Pretrain (optional) and train on ``suite``; deterministic given ``seed``.

    ``callback(row, params)`` is called after every iteration's metrics are
    computed, with the parameters that produced the rollouts.
    """
    if not suite:
        raise EmptyDataset("training suite is empty")
    suite = list(suite)
    initial = PolicyParams.initial(config.temperature)
    params = initial
    nll = (None, None)
    if config.pretrain:
        demos = oracle_demonstrations(suite[: config.pretrain_tasks], config.env)
        before = demonstration_nll(params, demos)[0]
        params = clone_pretrain(params, demos, config.pretrain_epochs, config.pretrain_lr)
        nll = (before, demonstration_nll(params, demos)[0])
    pretrained = params

    rows = []
    if config.rl:
        batch_rng = substream(seed, "batch")
        n = min(config.prompts_per_batch, len(suite))
        for t in range(1, config.total_iters + 1):
            picks = batch_rng.choice(len(suite), size=n, replace=False)
            groups = [
                collect_group(suite[i], params, config, t, substream(seed, "rollout", t, j))
                for j, i in enumerate(picks)
            ]
            row = batch_metrics(t, groups)
            rows.append(row)
            if callback is not None:
                callback(row, params)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateBatch)
                params = update_policy(
                    params, groups, config.learning_rate, config.max_grad_norm
                )

    tasks = eval_suite if eval_suite is not None else suite
    log = []
    evaluation = evaluate(
        params, tasks, config, substream(seed, "eval"), config.eval_rollouts, log
    )
    return TrainingReport(rows, params, initial, pretrained, evaluation, nll, log)
