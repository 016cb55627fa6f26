"""Episode state machine for frame-selection reasoning.

A state is immutable; :func:`step` returns a new one. An episode starts from the
uniformly sampled context, allows at most two frame selections (each replacing
the context with a localized re-sample) and ends on an answer or when the step
budget runs out.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import records
from .errors import (
    EmptySelection,
    InvalidAction,
    MalformedRecord,
    SelectionBudgetExhausted,
    SelectionOutsideContext,
    StepOnTerminalState,
)
from .synth import answer_oracle
from .timeline import VideoTimeline, VisualContext, localized_resample, uniform_sample

MAX_SELECTIONS = 2
DEFAULT_INITIAL_BUDGET = 32
DEFAULT_N_MAX = 16
DEFAULT_MAX_STEPS = 8


@dataclass(frozen=True)
class TextStep:
    tag = "text"


@dataclass(frozen=True)
class SelectFrames:
    frames: frozenset
    tag = "select"

    def __post_init__(self):
        object.__setattr__(self, "frames", frozenset(int(f) for f in self.frames))
        if not self.frames:
            raise EmptySelection("SelectFrames needs at least one frame")


@dataclass(frozen=True)
class Answer:
    # None defers the choice to the simulated model (see run_episode)
    choice: Optional[int] = None
    tag = "answer"


@dataclass(frozen=True)
class EnvConfig:
    initial_budget: int = DEFAULT_INITIAL_BUDGET
    n_max: int = DEFAULT_N_MAX
    max_steps: int = DEFAULT_MAX_STEPS


@dataclass(frozen=True)
class EpisodeState:
    context: VisualContext
    frame_count: int
    option_count: int
    selections_used: int = 0
    selected_union: frozenset = frozenset()
    terminal: bool = False
    truncated: bool = False
    step_count: int = 0
    predicted_answer: Optional[int] = None

    @property
    def selections_remaining(self) -> int:
        return MAX_SELECTIONS - self.selections_used

    @property
    def can_select(self) -> bool:
        return self.selections_used < MAX_SELECTIONS and len(self.context) >= 2


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    steps: tuple  # (action, context size after the action)
    predicted_answer: Optional[int] = None
    truncated: bool = False

    @property
    def selection_ops(self) -> int:
        return sum(1 for a, _ in self.steps if isinstance(a, SelectFrames))

    @property
    def selected_union(self) -> frozenset:
        out = set()
        for a, _ in self.steps:
            if isinstance(a, SelectFrames):
                out |= a.frames
        return frozenset(out)


@dataclass(frozen=True)
class Observation:
    """What a policy sees: the current frames with their signals, plus budget info."""

    frames: np.ndarray
    signals: np.ndarray
    selections_remaining: int
    option_count: int
    selections_used: int = 0

    @property
    def can_select(self) -> bool:
        return self.selections_remaining > 0 and len(self.frames) >= 2

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(zip(self.frames.tolist(), self.signals.tolist()))


def reset(task, initial_budget: int = DEFAULT_INITIAL_BUDGET) -> EpisodeState:
    return EpisodeState(
        context=uniform_sample(task.timeline, initial_budget),
        frame_count=task.frame_count,
        option_count=task.option_count,
    )


def step(
    state: EpisodeState,
    action,
    n_max: int = DEFAULT_N_MAX,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> EpisodeState:
    if state.terminal:
        raise StepOnTerminalState("episode already finished")
    if isinstance(action, TextStep):
        new = replace(state, step_count=state.step_count + 1)
    elif isinstance(action, SelectFrames):
        if state.selections_used >= MAX_SELECTIONS:
            raise SelectionBudgetExhausted(
                f"at most {MAX_SELECTIONS} frame selections per episode"
            )
        outside = sorted(f for f in action.frames if f not in state.context)
        if outside:
            raise SelectionOutsideContext(f"selected frames not in context: {outside}")
        context = localized_resample(state.frame_count, state.context, action.frames, n_max)
        new = replace(
            state,
            context=context,
            selections_used=state.selections_used + 1,
            selected_union=state.selected_union | action.frames,
            step_count=state.step_count + 1,
        )
    elif isinstance(action, Answer):
        if action.choice is None or not 0 <= action.choice < state.option_count:
            raise InvalidAction(f"answer choice {action.choice!r} is not a valid option")
        return replace(
            state,
            terminal=True,
            predicted_answer=int(action.choice),
            step_count=state.step_count + 1,
        )
    else:
        raise InvalidAction(f"unknown action {action!r}")
    if new.step_count >= max_steps:
        new = replace(new, terminal=True, truncated=True)
    return new


def observe(state: EpisodeState, timeline: VideoTimeline) -> Observation:
    frames = np.asarray(state.context.frames, dtype=np.int64)
    return Observation(
        frames=frames,
        signals=timeline.signals[frames],
        selections_remaining=state.selections_remaining,
        option_count=state.option_count,
        selections_used=state.selections_used,
    )


def run_episode(task, policy, config: EnvConfig = EnvConfig()):
    """Roll ``policy`` out on ``task``; returns ``(trajectory, final_state)``.

    ``policy.act(task, state, observation)`` returns the next action. An
    ``Answer()`` without a choice is answered by the simulated model from the
    current context.
    """
    state = reset(task, config.initial_budget)
    steps = []
    while not state.terminal:
        action = policy.act(task, state, observe(state, task.timeline))
        if isinstance(action, Answer) and action.choice is None:
            action = Answer(answer_oracle(task, state.context))
        state = step(state, action, config.n_max, config.max_steps)
        steps.append((action, len(state.context)))
    traj = Trajectory(task.task_id, tuple(steps), state.predicted_answer, state.truncated)
    return traj, state


# --- serialization ----------------------------------------------------------------


def _step_record(action, size):
    if isinstance(action, SelectFrames):
        return ["select", sorted(action.frames), size]
    if isinstance(action, Answer):
        return ["answer", action.choice, size]
    return ["text", None, size]


def trajectory_to_record(traj: Trajectory) -> dict:
    return {
        "task_id": traj.task_id,
        "steps": [_step_record(a, n) for a, n in traj.steps],
        "predicted_answer": traj.predicted_answer,
        "truncated": traj.truncated,
    }


def trajectory_from_record(rec: dict, path=None, line=None) -> Trajectory:
    tid = records.require(rec, "task_id", str, path, line)
    raw_steps = records.require(rec, "steps", list, path, line)
    pred = rec.get("predicted_answer")
    if pred is not None and (isinstance(pred, bool) or not isinstance(pred, int)):
        raise MalformedRecord("predicted_answer must be an integer or null", path, line)
    steps = []
    for item in raw_steps:
        if not (isinstance(item, list) and len(item) == 3):
            raise MalformedRecord("each step must be [tag, payload, size]", path, line)
        tag, payload, size = item
        try:
            if tag == "select":
                action = SelectFrames(frozenset(payload))
            elif tag == "answer":
                action = Answer(payload)
            elif tag == "text":
                action = TextStep()
            else:
                raise MalformedRecord(f"unknown step tag {tag!r}", path, line)
        except (TypeError, ValueError, EmptySelection) as exc:
            raise MalformedRecord(f"bad step payload: {exc}", path, line) from None
        steps.append((action, int(size)))
    truncated = bool(rec.get("truncated", False))
    return Trajectory(tid, tuple(steps), pred, truncated)


def save_trajectories(path, trajectories) -> int:
    return records.write_records(path, (trajectory_to_record(t) for t in trajectories))


def load_trajectories(path) -> list:
    return [
        trajectory_from_record(rec, path, line) for line, rec in records.read_records(path)
    ]
