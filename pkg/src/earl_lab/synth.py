"""Synthetic video-reasoning tasks with planted off-grid evidence.

Evidence frames are hidden from policies; the only observable cue is a per-frame
signal made of a Gaussian bump around each evidence frame plus uniform noise.
The answer oracle returns the correct option only once enough evidence frames
have been seen, so correctness depends entirely on evidence acquisition.
"""

from __future__ import annotations

import bisect
import itertools
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import records
from .errors import (
    ContextTooSmall,
    InfeasiblePlacement,
    MalformedAnnotation,
    MalformedRecord,
)
from .reward import MAX_GOLD_FRAMES, GoldenAnnotation
from .seeding import derive_seeds
from .timeline import (
    VideoTimeline,
    VisualContext,
    localized_resample,
    nearest_neighbor_interval,
    uniform_sample,
)


@dataclass(frozen=True)
class GenerationParams:
    m: int = 512
    k: int = 2
    k_min: Optional[int] = None  # draw K uniformly from [k_min, k] when set
    option_count: int = 4
    signal_noise: float = 0.1
    sigma: Optional[float] = None  # defaults to m / 64
    reveal_radius: int = 0
    required_coverage: float = 1.0
    iou_tolerance: int = 0
    initial_budget: int = 32
    min_grid_distance: int = 2
    n_max: int = 16
    select_cap: int = 4
    ensure_reachable: bool = True
    max_tries: int = 200

    def validate(self):
        if self.m < 64:
            raise ValueError(f"m must be >= 64, got {self.m}")
        if not 1 <= self.k <= MAX_GOLD_FRAMES:
            raise ValueError(f"k must be in 1..{MAX_GOLD_FRAMES}, got {self.k}")
        if self.k_min is not None and not 1 <= self.k_min <= self.k:
            raise ValueError(f"k_min must be in 1..k, got {self.k_min}")
        if self.option_count < 2:
            raise ValueError(f"option_count must be >= 2, got {self.option_count}")
        if not 0.0 < self.required_coverage <= 1.0:
            raise ValueError("required_coverage must be in (0, 1]")
        if self.signal_noise < 0 or self.reveal_radius < 0 or self.iou_tolerance < 0:
            raise ValueError("noise, reveal_radius and iou_tolerance must be >= 0")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        return self

    @property
    def resolved_sigma(self) -> float:
        return self.sigma if self.sigma is not None else self.m / 64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generation parameters: {sorted(unknown)}")
        return cls(**d)


# The setting used for the ablation experiments. One or two evidence frames per
# task keeps pretraining meaningful, and an IoU tolerance of one grid stride
# (m / n_max) lets a grid frame next to the evidence count as a match, so the
# relevance reward credits first-round keys that point in the right direction.
# With exact matching those keys never match and IoU only penalizes key count.
DESK_PRESET = GenerationParams(k=2, k_min=1, iou_tolerance=16)


@dataclass(frozen=True)
class SyntheticTask:
    task_id: str
    timeline: VideoTimeline
    evidence: frozenset
    annotation: GoldenAnnotation
    option_count: int
    correct_option: int
    reveal_radius: int = 0
    required_coverage: float = 1.0
    seed: Optional[int] = None
    params: GenerationParams = field(default_factory=GenerationParams)

    @property
    def frame_count(self) -> int:
        return self.timeline.frame_count


def evidence_signals(m: int, evidence, sigma: float) -> np.ndarray:
    """Noise-free signal: Gaussian in the distance to the nearest evidence frame."""
    idx = np.arange(m)
    ev = np.fromiter(sorted(evidence), dtype=int)
    dist = np.abs(idx[:, None] - ev[None, :]).min(axis=1)
    return np.exp(-(dist.astype(float) ** 2) / (2.0 * sigma * sigma))


def allowed_positions(params: GenerationParams) -> np.ndarray:
    """Frames at least ``min_grid_distance`` away from every initial-grid frame."""
    grid = np.asarray(uniform_sample(params.m, params.initial_budget).frames)
    idx = np.arange(params.m)
    dist = np.abs(idx[:, None] - grid[None, :]).min(axis=1)
    return idx[dist >= params.min_grid_distance]


def generate_task(
    seed: int, params: GenerationParams = GenerationParams(), task_id=None
) -> SyntheticTask:
    """Deterministic task for ``seed``.

    Raises InfeasiblePlacement when no placement satisfies the grid-distance rule,
    or (with ``ensure_reachable``) none of ``max_tries`` placements can be fully
    revealed within two selection rounds.
    """
    params.validate()
    rng = np.random.default_rng(seed)
    k = params.k if params.k_min is None else int(rng.integers(params.k_min, params.k + 1))
    allowed = allowed_positions(params)
    if len(allowed) < k:
        raise InfeasiblePlacement(
            f"only {len(allowed)} off-grid positions for {k} evidence frames "
            f"(m={params.m})",
            seed,
        )
    grid = uniform_sample(params.m, params.initial_budget)
    for _ in range(params.max_tries):
        evidence = frozenset(int(e) for e in rng.choice(allowed, size=k, replace=False))
        if not params.ensure_reachable:
            break
        if plan_reveal(grid, evidence, params.reveal_radius, params.n_max,
                       params.select_cap) is not None:
            break
    else:
        raise InfeasiblePlacement(
            f"no placement revealable in two rounds after {params.max_tries} tries", seed
        )
    clean = evidence_signals(params.m, evidence, params.resolved_sigma)
    noise = rng.uniform(-params.signal_noise, params.signal_noise, size=params.m)
    signals = np.clip(clean + noise, 0.0, 1.0)
    correct = int(rng.integers(params.option_count))
    return SyntheticTask(
        task_id=task_id if task_id is not None else f"task-{seed}",
        timeline=VideoTimeline(params.m, signals),
        evidence=evidence,
        annotation=GoldenAnnotation(evidence, params.iou_tolerance),
        option_count=params.option_count,
        correct_option=correct,
        reveal_radius=params.reveal_radius,
        required_coverage=params.required_coverage,
        seed=int(seed),
        params=params,
    )


def generate_suite(
    count: int, seed: int, params: GenerationParams = GenerationParams(), stream="task"
):
    """``count`` tasks with ids ``t00000...`` from the named seed stream."""
    seeds = derive_seeds(seed, stream, count)
    return [generate_task(s, params, task_id=f"t{i:05d}") for i, s in enumerate(seeds)]


# --- answer oracle -------------------------------------------------------------


def is_revealed(frames, e: int, radius: int) -> bool:
    """True when some frame of the sorted sequence ``frames`` is within ``radius`` of ``e``."""
    i = bisect.bisect_left(frames, e - radius)
    return i < len(frames) and frames[i] <= e + radius


def revealed_fraction(evidence, frames, radius: int = 0) -> float:
    frames = frames.frames if isinstance(frames, VisualContext) else tuple(frames)
    hits = sum(is_revealed(frames, e, radius) for e in evidence)
    return hits / len(evidence)


def answer_oracle(task: SyntheticTask, final_context) -> int:
    """The simulated model's answer given what it has seen."""
    frac = revealed_fraction(task.evidence, final_context, task.reveal_radius)
    if frac >= task.required_coverage:
        return task.correct_option
    return (task.correct_option + 1) % task.option_count


# --- two-round reachability ----------------------------------------------------


def key_candidates(context: VisualContext, e: int, radius: int = 0) -> list:
    """Context frames worth selecting to reveal ``e``, most direct first.

    The frame equal to ``e``, then flanking frames whose nearest-neighbour
    interval straddles ``e``, then any other frame already within ``radius``.
    """
    frames = context.frames
    out = []
    lo = bisect.bisect_left(frames, e)
    hi = bisect.bisect_right(frames, e)
    if hi > lo:
        out.append(e)
    flank = []
    if lo > 0:
        flank.append(frames[lo - 1])
    if hi < len(frames):
        flank.append(frames[hi])
    if len(frames) >= 2:
        for c in sorted(flank, key=lambda c: (abs(c - e), c)):
            iv = nearest_neighbor_interval(context, c)
            if iv.lo < e < iv.hi:
                out.append(c)
    if radius:
        a = bisect.bisect_left(frames, e - radius)
        b = bisect.bisect_right(frames, e + radius)
        near = sorted(frames[a:b], key=lambda c: (abs(c - e), c))
        out.extend(c for c in near if c not in out)
    return out


def _search_keys(context, evidence, radius, n_max, cap, accept):
    options = [key_candidates(context, e, radius) for e in evidence]
    if any(not o for o in options):
        return None
    seen = set()
    for combo in itertools.product(*options):
        keys = frozenset(combo)
        if len(keys) > cap or keys in seen:
            continue
        seen.add(keys)
        try:
            new_ctx = localized_resample(None, context, keys, n_max)
        except ContextTooSmall:
            continue
        if accept(new_ctx):
            return keys, new_ctx
    return None


def all_revealed(ctx, evidence, radius):
    return all(is_revealed(ctx.frames, e, radius) for e in evidence)


def plan_final_round(context: VisualContext, evidence, radius=0, n_max=16, cap=4):
    """Keys for one selection after which every evidence frame is revealed, or None."""
    found = _search_keys(
        context, sorted(evidence), radius, n_max, cap,
        lambda c: all_revealed(c, evidence, radius),
    )
    return None if found is None else found[0]


def plan_reveal(context: VisualContext, evidence, radius=0, n_max=16, cap=4):
    """A two-round selection plan ``(first_keys, second_keys)`` revealing all
    evidence from ``context``, or None when the planner finds none.

    ``second_keys`` is None when the first round already reveals everything.
    """
    evidence = sorted(evidence)
    plan = {}

    def accept(ctx):
        if all_revealed(ctx, evidence, radius):
            plan["second"] = None
            return True
        second = plan_final_round(ctx, evidence, radius, n_max, cap)
        if second is not None:
            plan["second"] = second
            return True
        return False

    found = _search_keys(context, evidence, radius, n_max, cap, accept)
    if found is None:
        return None
    return found[0], plan["second"]


# --- files -----------------------------------------------------------------------


def save_annotations(path, annotations: dict) -> int:
    """Write ``task_id -> GoldenAnnotation`` as line records, in the given order."""
    return records.write_records(
        path,
        (
            {"task_id": tid, "gold_frames": sorted(a.gold_frames), "tolerance": a.tolerance}
            for tid, a in annotations.items()
        ),
    )


def load_annotations(path) -> dict:
    out = {}
    try:
        for line, rec in records.read_records(path):
            tid = records.require(rec, "task_id", str, path, line)
            gold = records.require(rec, "gold_frames", list, path, line)
            tol = records.require(rec, "tolerance", int, path, line)
            if any(isinstance(g, bool) or not isinstance(g, int) for g in gold):
                raise MalformedAnnotation("gold frames must be integers", path, line)
            if any(b <= a for a, b in zip(gold, gold[1:])):
                raise MalformedAnnotation(
                    "gold frames must be sorted and distinct", path, line
                )
            if tid in out:
                raise MalformedAnnotation(f"duplicate task_id {tid!r}", path, line)
            try:
                out[tid] = GoldenAnnotation(frozenset(gold), tol)
            except MalformedAnnotation as exc:
                raise MalformedAnnotation(str(exc), path, line) from None
    except MalformedRecord as exc:
        if isinstance(exc, MalformedAnnotation):
            raise
        err = MalformedAnnotation(str(exc))
        err.path, err.line = exc.path, exc.line
        raise err from None
    return out


def task_record(task: SyntheticTask) -> dict:
    return {
        "task_id": task.task_id,
        "m": task.frame_count,
        "evidence": sorted(task.evidence),
        "seed": task.seed,
        "params": task.params.to_dict(),
    }


def save_tasks(path, tasks) -> int:
    """Task lines hold the seed and parameters; signals are regenerated on load."""
    return records.write_records(path, (task_record(t) for t in tasks))


def load_tasks(path) -> list:
    tasks = []
    for line, rec in records.read_records(path):
        tid = records.require(rec, "task_id", str, path, line)
        m = records.require(rec, "m", int, path, line)
        evidence = records.require(rec, "evidence", list, path, line)
        seed = records.require(rec, "seed", int, path, line)
        raw = records.require(rec, "params", dict, path, line)
        try:
            params = GenerationParams.from_dict(raw)
            task = generate_task(seed, params, task_id=tid)
        except (TypeError, ValueError, InfeasiblePlacement) as exc:
            raise MalformedRecord(f"cannot regenerate task: {exc}", path, line) from None
        if task.frame_count != m or sorted(task.evidence) != evidence:
            raise MalformedRecord(
                "stored m/evidence disagree with the regenerated task", path, line
            )
        tasks.append(task)
    return tasks
