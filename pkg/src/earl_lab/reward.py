"""EARL reward: action, relevance (frame IoU) and IoU-gated correctness terms,
combined under a two-stage weight schedule."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import MalformedAnnotation, NonTerminalTrajectory

MAX_GOLD_FRAMES = 8
IOU_GATE = 0.5


@dataclass(frozen=True)
class GoldenAnnotation:
    """Ground-truth evidence frames for one task plus the IoU match window."""

    gold_frames: frozenset
    tolerance: int = 0

    def __post_init__(self):
        gold = frozenset(int(g) for g in self.gold_frames)
        if not 1 <= len(gold) <= MAX_GOLD_FRAMES:
            raise MalformedAnnotation(
                f"gold frame set must have 1..{MAX_GOLD_FRAMES} frames, got {len(gold)}"
            )
        if min(gold) < 0:
            raise MalformedAnnotation(f"negative gold frame index: {min(gold)}")
        if self.tolerance < 0:
            raise MalformedAnnotation(f"tolerance must be >= 0, got {self.tolerance}")
        object.__setattr__(self, "gold_frames", gold)
        object.__setattr__(self, "tolerance", int(self.tolerance))


@dataclass(frozen=True)
class ScheduleConfig:
    alpha_early: float = 0.3
    alpha_late: float = 0.05
    beta_early: float = 0.1
    beta_late: float = 0.5
    threshold_p: float = 0.4
    total_iters: int = 300

    def __post_init__(self):
        if not 0.0 < self.threshold_p < 1.0:
            raise ValueError(f"threshold_p must be in (0, 1), got {self.threshold_p}")
        if self.total_iters < 1:
            raise ValueError(f"total_iters must be >= 1, got {self.total_iters}")
        for name in ("alpha_early", "alpha_late", "beta_early", "beta_late"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class RewardOptions:
    """Switches for the ablation matrix. The defaults are the full EARL reward."""

    relevance: bool = True
    iou_gate: bool = True
    dynamic: bool = True
    per_op_action: bool = False


EARL = RewardOptions()


@dataclass(frozen=True)
class RewardBreakdown:
    r_action: float
    r_relevance: float
    r_correct: float
    alpha: float
    beta: float
    r_total: float
    iou: float

    @property
    def recomposition_error(self) -> float:
        return self.r_total - (
            self.r_correct + self.alpha * self.r_action + self.beta * self.r_relevance
        )


def frame_iou(selected: Iterable[int], annotation: GoldenAnnotation) -> float:
    """IoU between a selected frame set and the gold set.

    A selected frame matches a gold frame within ``annotation.tolerance`` index
    units; matching is one-to-one, greedy in increasing index order. With zero
    tolerance this is the plain set IoU.
    """
    sel = sorted(set(int(s) for s in selected))
    if not sel:
        return 0.0
    gold = sorted(annotation.gold_frames)
    w = annotation.tolerance
    matched = 0
    j = 0
    for s in sel:
        # gold frames too far left can never match a later (larger) selection
        while j < len(gold) and gold[j] < s - w:
            j += 1
        if j < len(gold) and gold[j] <= s + w:
            matched += 1
            j += 1
    return matched / (len(sel) + len(gold) - matched)


def action_reward(trajectory_had_selection: bool) -> int:
    return 1 if trajectory_had_selection else 0


def relevance_reward(iou: float) -> float:
    if not 0.0 <= iou <= 1.0:
        raise ValueError(f"iou must be in [0, 1], got {iou}")
    return iou


def correctness_reward(answer_correct: bool, iou: float) -> float:
    if not 0.0 <= iou <= 1.0:
        raise ValueError(f"iou must be in [0, 1], got {iou}")
    if not answer_correct:
        return -1.0
    return 1.0 if iou >= IOU_GATE else 0.5


def schedule_weights(config: ScheduleConfig, iteration: int) -> tuple:
    """(alpha, beta) at a training iteration; progress <= P keeps the early pair."""
    if iteration < 0 or iteration > config.total_iters:
        raise ValueError(
            f"iteration must be in [0, {config.total_iters}], got {iteration}"
        )
    if iteration / config.total_iters <= config.threshold_p:
        return config.alpha_early, config.beta_early
    return config.alpha_late, config.beta_late


def effective_weights(
    config: ScheduleConfig, iteration: int, options: RewardOptions = EARL
) -> tuple:
    if options.dynamic:
        alpha, beta = schedule_weights(config, iteration)
    else:
        if iteration < 0 or iteration > config.total_iters:
            raise ValueError(f"iteration out of range: {iteration}")
        alpha = (config.alpha_early + config.alpha_late) / 2
        beta = (config.beta_early + config.beta_late) / 2
    if not options.relevance:
        beta = 0.0
    return alpha, beta


def score(
    selection_ops: int,
    selected_union: Iterable[int],
    answer_correct: bool,
    annotation: GoldenAnnotation,
    config: ScheduleConfig,
    iteration: int,
    options: RewardOptions = EARL,
) -> RewardBreakdown:
    """Reward for a finished episode described by its selection summary."""
    iou = frame_iou(selected_union, annotation)
    if options.per_op_action:
        r_action = float(selection_ops)
    else:
        r_action = float(action_reward(selection_ops > 0))
    r_relevance = relevance_reward(iou)
    if options.iou_gate:
        r_correct = correctness_reward(answer_correct, iou)
    else:
        r_correct = 1.0 if answer_correct else -1.0
    alpha, beta = effective_weights(config, iteration, options)
    r_total = r_correct + alpha * r_action + beta * r_relevance
    return RewardBreakdown(r_action, r_relevance, r_correct, alpha, beta, r_total, iou)


def total_reward(
    trajectory,
    annotation: GoldenAnnotation,
    config: ScheduleConfig,
    iteration: int,
    correct_option: int,
    options: RewardOptions = EARL,
) -> RewardBreakdown:
    """Score a terminal trajectory.

    IoU is taken over the union of frames selected in every round. A trajectory
    that ran out of steps without answering counts as answered wrongly.
    """
    if trajectory.predicted_answer is None and not trajectory.truncated:
        raise NonTerminalTrajectory(f"trajectory {trajectory.task_id} has no answer")
    correct = (
        trajectory.predicted_answer is not None
        and trajectory.predicted_answer == correct_option
    )
    return score(
        trajectory.selection_ops,
        trajectory.selected_union,
        correct,
        annotation,
        config,
        iteration,
        options,
    )
