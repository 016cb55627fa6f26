"""Frame-selection policies: random baseline, privileged oracle, and a small
learnable policy with exact log-probabilities and their gradients.

Learnable policy
----------------
Each context frame gets features ``(signal, rank, 1, contrast)``:

* ``rank``: 1 for the highest signal in the context, 0 for the lowest.
* ``contrast``: half the signal difference between the next and the previous
  context frame (forward slope; a missing neighbour is replaced by the frame
  itself).

A frame's selection logit is ``weights[:4] @ features / temperature``. Frames are
drawn by independent Bernoulli trials; if more than ``SELECT_CAP`` come up, the
most probable ones are kept (lower index wins exact ties), and if none come up,
the single most probable frame is taken. Before selecting, the policy answers
with probability ``sigmoid(answer_logit / temperature)`` where

    answer_logit = ANSWER_SHARPNESS * (max signal - weights[4]) + weights[5] * selections_used

so ``weights[4]`` is a signal threshold and ``weights[5]`` shifts the answer
tendency after each selection already made. Once no selection is possible the
policy always answers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import Answer, Observation, SelectFrames
from .errors import EmptyObservation, MalformedRecord
from .records import HEADER
from .synth import all_revealed, key_candidates, plan_final_round, plan_reveal

SELECT_CAP = 4
ANSWER_SHARPNESS = 4.0
WEIGHT_NAMES = ("signal", "rank", "bias", "contrast", "answer_threshold", "answer_per_selection")
N_FEATURES = 4


@dataclass(frozen=True, eq=False)
class PolicyParams:
    weights: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (len(WEIGHT_NAMES),):
            raise ValueError(f"expected {len(WEIGHT_NAMES)} weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("policy weights must be finite")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "temperature", float(self.temperature))

    @classmethod
    def initial(cls, temperature: float = 1.0) -> "PolicyParams":
        """Uninformed start: every frame at p=0.5, answering around signal 1.0."""
        return cls(np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]), temperature)

    def with_weights(self, weights) -> "PolicyParams":
        return PolicyParams(weights, self.temperature)

    def __eq__(self, other):
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return self.temperature == other.temperature and np.array_equal(
            self.weights, other.weights
        )

    __hash__ = None


def features(signals: np.ndarray) -> np.ndarray:
    s = np.asarray(signals, dtype=float)
    n = len(s)
    if n == 0:
        raise EmptyObservation("observation has no frames")
    rank = np.empty(n)
    order = np.argsort(-s, kind="stable")
    rank[order] = np.arange(n)
    rank_norm = 1.0 - rank / (n - 1) if n > 1 else np.ones(1)
    prev = np.concatenate((s[:1], s[:-1]))
    nxt = np.concatenate((s[1:], s[-1:]))
    out = np.empty((n, N_FEATURES))
    out[:, 0] = s
    out[:, 1] = rank_norm
    out[:, 2] = 1.0
    out[:, 3] = 0.5 * (nxt - prev)
    return out


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def _sigmoid(z):
    return np.exp(_log_sigmoid(z))


def _priority(logits: np.ndarray) -> np.ndarray:
    """Frame positions ordered from most to least probable."""
    return np.argsort(-logits, kind="stable")


class _Scores:
    """Per-observation quantities shared by sampling and log-prob evaluation."""

    __slots__ = (
        "feats", "logits", "log_pos", "log_neg", "p", "order", "answer_logit", "p_answer",
    )

    def __init__(self, params: PolicyParams, obs: Observation):
        if len(obs.frames) == 0:
            raise EmptyObservation("observation has no frames")
        t = params.temperature
        self.feats = features(obs.signals)
        self.logits = self.feats @ params.weights[:N_FEATURES] / t
        self.log_pos = _log_sigmoid(self.logits)
        self.log_neg = _log_sigmoid(-self.logits)
        self.p = np.exp(self.log_pos)
        self.order = _priority(self.logits)
        self.answer_logit = (
            ANSWER_SHARPNESS * (float(obs.signals.max()) - params.weights[4])
            + params.weights[5] * obs.selections_used
        ) / t
        self.p_answer = float(_sigmoid(self.answer_logit))


def _selection_logprob_grad(sc: _Scores, chosen: np.ndarray, cap: int):
    """log P(selected set) and its derivative with respect to each frame logit.

    ``chosen`` is a boolean mask over context positions.
    """
    n = len(sc.logits)
    k = int(chosen.sum())
    if k == 0 or k > cap:
        return -np.inf, np.zeros(n)
    pos = np.empty(n, dtype=int)
    pos[sc.order] = np.arange(n)
    if k == cap:
        # non-members ranked above the lowest-priority member must have failed
        last = pos[chosen].max()
        constrained = (~chosen) & (pos < last)
    else:
        constrained = ~chosen
    log_pos, log_neg = sc.log_pos, sc.log_neg
    log_a = log_pos[chosen].sum() + log_neg[constrained].sum()
    d_a = np.where(chosen, 1.0 - sc.p, 0.0) - np.where(constrained, sc.p, 0.0)
    if k == 1 and chosen[sc.order[0]]:
        # the all-failed draw also falls back to the top frame
        log_b = log_neg.sum()
        d_b = -sc.p
        log_total = np.logaddexp(log_a, log_b)
        w_a = np.exp(log_a - log_total)
        return float(log_total), w_a * d_a + (1.0 - w_a) * d_b
    return float(log_a), d_a


def _logprob_grad(
    params: PolicyParams, obs: Observation, action, sc=None, cap=SELECT_CAP, chosen=None
):
    sc = sc if sc is not None else _Scores(params, obs)
    t = params.temperature
    grad = np.zeros(len(WEIGHT_NAMES))
    if not obs.can_select:
        return (0.0, grad) if isinstance(action, Answer) else (-np.inf, grad)
    # d answer_logit / d (weights[4], weights[5])
    d_answer = np.array([-ANSWER_SHARPNESS, obs.selections_used]) / t
    if isinstance(action, Answer):
        grad[4:] = (1.0 - sc.p_answer) * d_answer
        return float(_log_sigmoid(sc.answer_logit)), grad
    if not isinstance(action, SelectFrames):
        return -np.inf, grad
    if chosen is None:
        members = action.frames
        chosen = np.fromiter((f in members for f in obs.frames.tolist()), bool, len(obs))
        if int(chosen.sum()) != len(members):
            return -np.inf, grad
    lp_sel, d_logits = _selection_logprob_grad(sc, chosen, cap)
    grad[:N_FEATURES] = sc.feats.T @ d_logits / t
    grad[4:] = -sc.p_answer * d_answer
    return float(_log_sigmoid(-sc.answer_logit)) + lp_sel, grad


def action_logprob(params: PolicyParams, obs: Observation, action) -> float:
    """Exact log-probability that :func:`act_softmax` emits ``action`` on ``obs``.

    An answer's choice is ignored: the policy only decides *when* to answer.
    """
    return _logprob_grad(params, obs, action)[0]


def action_logprob_grad(params: PolicyParams, obs: Observation, action):
    """``(log-prob, d log-prob / d weights)`` for ``action`` on ``obs``."""
    return _logprob_grad(params, obs, action)


def sample_softmax(params: PolicyParams, obs: Observation, rng, cap=SELECT_CAP):
    """Draw an action; returns ``(action, log-prob, gradient)``."""
    sc = _Scores(params, obs)
    chosen = None
    if not obs.can_select or rng.random() < sc.p_answer:
        action = Answer()
    else:
        hits = rng.random(len(sc.p)) < sc.p
        picked = [i for i in sc.order.tolist() if hits[i]][:cap]
        if not picked:
            picked = [int(sc.order[0])]
        chosen = np.zeros(len(sc.p), dtype=bool)
        chosen[picked] = True
        action = SelectFrames(frozenset(obs.frames[picked].tolist()))
    lp, grad = _logprob_grad(params, obs, action, sc, cap, chosen)
    return action, lp, grad


def act_softmax(params: PolicyParams, obs: Observation, rng) -> "Answer | SelectFrames":
    return sample_softmax(params, obs, rng)[0]


def act_random(obs: Observation, rng, p_select: float = 0.5, cap: int = SELECT_CAP):
    """Select a random subset of up to ``cap`` frames with probability ``p_select``
    while selections remain, otherwise answer a uniformly random option."""
    if obs.can_select and rng.random() < p_select:
        size = int(rng.integers(1, min(cap, len(obs.frames)) + 1))
        picked = rng.choice(obs.frames, size=size, replace=False)
        return SelectFrames(frozenset(int(f) for f in picked))
    return Answer(int(rng.integers(obs.option_count)))


def act_oracle(task, state, n_max: int = 16, cap: int = SELECT_CAP):
    """Privileged policy that reads the hidden evidence.

    First round: keys from a two-round reveal plan (falling back to the context
    frame nearest each evidence frame). Second round: evidence frames already in
    view, otherwise keys whose re-sample reveals the rest. Then answers.
    """
    evidence = sorted(task.evidence)
    radius = task.reveal_radius
    ctx = state.context
    exact = [e for e in evidence if e in ctx]
    if not state.can_select:
        return Answer()
    if len(exact) == len(evidence) and len(exact) <= cap:
        if state.selections_used == 0 or not state.selected_union >= set(exact):
            return SelectFrames(frozenset(exact))
        return Answer()
    if state.selections_used == 0:
        plan = plan_reveal(ctx, evidence, radius, n_max, cap)
        if plan is not None:
            return SelectFrames(plan[0])
    else:
        keys = plan_final_round(ctx, evidence, radius, n_max, cap)
        if keys is not None:
            return SelectFrames(keys)
        if all_revealed(ctx, evidence, radius):
            return Answer()
    return SelectFrames(_nearest_keys(ctx, evidence, cap))


def _nearest_keys(ctx, evidence, cap):
    keys = []
    for e in evidence:
        cands = key_candidates(ctx, e) or [min(ctx.frames, key=lambda c: (abs(c - e), c))]
        if cands[0] not in keys:
            keys.append(cands[0])
    return frozenset(keys[:cap])


class RandomPolicy:
    def __init__(self, rng, p_select: float = 0.5):
        self.rng = rng
        self.p_select = p_select

    def act(self, task, state, obs):
        return act_random(obs, self.rng, self.p_select)


class OraclePolicy:
    def __init__(self, n_max: int = 16):
        self.n_max = n_max

    def act(self, task, state, obs):
        return act_oracle(task, state, self.n_max)


class SoftmaxPolicy:
    """Samples from :func:`act_softmax`, recording log-prob and gradient per step."""

    def __init__(self, params: PolicyParams, rng):
        self.params = params
        self.rng = rng
        self.logprob = 0.0
        self.grad = np.zeros(len(WEIGHT_NAMES))

    def act(self, task, state, obs):
        action, lp, g = sample_softmax(self.params, obs, self.rng)
        self.logprob += lp
        self.grad = self.grad + g
        return action


# --- checkpoints ------------------------------------------------------------------


def save_checkpoint(path, params: PolicyParams) -> None:
    lines = [
        HEADER,
        f"temperature={params.temperature!r}",
        "weights=" + ",".join(repr(float(w)) for w in params.weights),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> PolicyParams:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0] != HEADER:
        raise MalformedRecord(f"expected header {HEADER!r}", path, 1)
    fields = {}
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise MalformedRecord("expected key=value", path, lineno)
        fields[key.strip()] = (lineno, value.strip())
    try:
        temperature = float(fields["temperature"][1])
        weights = [float(x) for x in fields["weights"][1].split(",")]
        return PolicyParams(np.array(weights), temperature)
    except KeyError as exc:
        raise MalformedRecord(f"missing field {exc.args[0]!r}", path) from None
    except ValueError as exc:
        raise MalformedRecord(str(exc), path) from None
