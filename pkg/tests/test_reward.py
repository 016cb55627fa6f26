import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from earl_lab.env import Answer, SelectFrames, TextStep, Trajectory
from earl_lab.errors import MalformedAnnotation, NonTerminalTrajectory
from earl_lab.reward import (
    GoldenAnnotation,
    RewardOptions,
    ScheduleConfig,
    action_reward,
    correctness_reward,
    frame_iou,
    relevance_reward,
    schedule_weights,
    score,
    total_reward,
)

frame_sets = st.sets(st.integers(0, 60), max_size=10)
gold_sets = st.sets(st.integers(0, 60), min_size=1, max_size=8)


def max_matching(selected, gold, w):
    """Largest one-to-one matching within window ``w``, by exhaustive search."""
    sel, gold = sorted(selected), sorted(gold)

    def best(i, used):
        if i == len(sel):
            return 0
        out = best(i + 1, used)
        for j, g in enumerate(gold):
            if j not in used and abs(sel[i] - g) <= w:
                out = max(out, 1 + best(i + 1, used | {j}))
        return out

    return best(0, frozenset())


@pytest.mark.parametrize(
    "selected, gold, w, expected",
    [
        ({3, 7}, {3, 7}, 0, 1.0),
        (set(), {5}, 0, 0.0),
        ({2, 5, 9}, {5, 9, 12, 14}, 0, 0.4),
        ({24}, {25}, 2, 1.0),
    ],
)
def test_frame_iou_examples(selected, gold, w, expected):
    assert frame_iou(selected, GoldenAnnotation(frozenset(gold), w)) == expected


@given(frame_sets, gold_sets)
def test_frame_iou_zero_window_is_set_iou(selected, gold):
    got = frame_iou(selected, GoldenAnnotation(frozenset(gold)))
    assert got == len(selected & gold) / len(selected | gold)
    assert 0.0 <= got <= 1.0
    assert (got == 1.0) == (selected == gold)


@given(gold_sets, gold_sets)
def test_frame_iou_symmetric_at_zero_window(a, b):
    assert frame_iou(a, GoldenAnnotation(frozenset(b))) == frame_iou(
        b, GoldenAnnotation(frozenset(a))
    )


@given(frame_sets, gold_sets, st.integers(0, 4))
def test_greedy_window_matching_is_maximal(selected, gold, w):
    m = max_matching(selected, gold, w)
    expected = 0.0 if not selected else m / (len(selected) + len(gold) - m)
    assert frame_iou(selected, GoldenAnnotation(frozenset(gold), w)) == pytest.approx(
        expected, abs=0
    )


@given(frame_sets, gold_sets, st.data())
def test_adding_unmatched_gold_frame_never_lowers_iou(selected, gold, data):
    ann = GoldenAnnotation(frozenset(gold))
    missing = sorted(gold - selected)
    if not missing:
        return
    g = data.draw(st.sampled_from(missing))
    assert frame_iou(selected | {g}, ann) >= frame_iou(selected, ann)


@pytest.mark.parametrize("frames", [set(), set(range(9))])
def test_annotation_size_constraint(frames):
    with pytest.raises(MalformedAnnotation):
        GoldenAnnotation(frozenset(frames))


def test_action_reward_is_binary():
    assert action_reward(True) == 1
    assert action_reward(False) == 0
    anno = GoldenAnnotation(frozenset({5}))
    cfg = ScheduleConfig(total_iters=10)
    one = score(1, {4}, True, anno, cfg, 0)
    two = score(2, {4}, True, anno, cfg, 0)
    assert one.r_action == two.r_action == 1


@pytest.mark.parametrize("x", [0.0, 1.0, 0.4])
def test_relevance_is_identity(x):
    assert relevance_reward(x) == x


@pytest.mark.parametrize(
    "correct, iou, expected",
    [(True, 0.6, 1.0), (True, 0.4, 0.5), (False, 0.9, -1.0), (True, 0.5, 1.0)],
)
def test_correctness_examples(correct, iou, expected):
    assert correctness_reward(correct, iou) == expected


def test_correctness_table_exhaustive():
    for correct, high in itertools.product((True, False), (True, False)):
        iou = 0.75 if high else 0.25
        expected = {(True, True): 1.0, (True, False): 0.5}.get((correct, high), -1.0)
        assert correctness_reward(correct, iou) == expected


@pytest.mark.parametrize(
    "it, early", [(30, True), (50, True), (51, False), (0, True), (100, False)]
)
def test_schedule_examples(it, early):
    cfg = ScheduleConfig(0.3, 0.05, 0.1, 0.5, threshold_p=0.5, total_iters=100)
    assert schedule_weights(cfg, it) == ((0.3, 0.1) if early else (0.05, 0.5))


@given(st.floats(0.01, 0.99), st.integers(1, 400))
def test_schedule_single_switch(p, T):
    cfg = ScheduleConfig(threshold_p=p, total_iters=T)
    seq = [schedule_weights(cfg, t) for t in range(T + 1)]
    early = (cfg.alpha_early, cfg.beta_early)
    late = (cfg.alpha_late, cfg.beta_late)
    assert set(seq) <= {early, late}
    switches = sum(1 for a, b in zip(seq, seq[1:]) if a != b)
    assert switches <= 1
    assert seq[0] == early


def test_schedule_validation():
    with pytest.raises(ValueError):
        ScheduleConfig(threshold_p=1.0)
    with pytest.raises(ValueError):
        ScheduleConfig(total_iters=0)


def _traj(selections, answer, truncated=False):
    steps = [(SelectFrames(frozenset(s)), 10) for s in selections]
    if answer is not None:
        steps.append((Answer(answer), 10))
    return Trajectory("t", tuple(steps), answer, truncated)


def test_total_reward_examples():
    gold = GoldenAnnotation(frozenset({1, 2, 3, 4, 5}))
    cfg = ScheduleConfig(0.2, 0.2, 0.5, 0.5, 0.5, 10)
    # correct, one selection, iou = 2/5 = 0.4 -> 0.5 + 0.2 + 0.5 * 0.4
    rb = total_reward(_traj([{1, 2}], 0), gold, cfg, 1, correct_option=0)
    assert rb.iou == 0.4
    assert rb.r_total == pytest.approx(0.9, abs=1e-15)
    rb = total_reward(_traj([], 1), gold, cfg, 1, correct_option=0)
    assert rb.r_total == -1.0
    cfg01 = ScheduleConfig(0.0, 0.0, 1.0, 1.0, 0.5, 10)
    rb = total_reward(_traj([{1, 2, 3}, {4, 5}], 0), gold, cfg01, 1, correct_option=0)
    assert rb.r_total == 2.0


def test_total_reward_union_over_rounds_and_truncation():
    gold = GoldenAnnotation(frozenset({10, 20}))
    cfg = ScheduleConfig(total_iters=10)
    rb = total_reward(_traj([{10}, {20}], 2), gold, cfg, 0, correct_option=2)
    assert rb.iou == 1.0 and rb.r_correct == 1.0
    truncated = Trajectory("t", ((TextStep(), 32),) * 8, None, True)
    assert total_reward(truncated, gold, cfg, 0, 2).r_correct == -1.0
    with pytest.raises(NonTerminalTrajectory):
        total_reward(Trajectory("t", (), None, False), gold, cfg, 0, 2)


@given(
    st.lists(st.sets(st.integers(0, 50), min_size=1, max_size=4), max_size=2),
    gold_sets,
    st.booleans(),
    st.integers(0, 100),
    st.tuples(*[st.floats(0, 2, allow_subnormal=False)] * 4),
    st.sampled_from([RewardOptions(), RewardOptions(False, False, False, True)]),
)
def test_recomposition_exact(selections, gold, correct, it, weights, options):
    cfg = ScheduleConfig(*weights, threshold_p=0.4, total_iters=100)
    traj = _traj(selections, 0 if correct else 1)
    rb = total_reward(traj, GoldenAnnotation(frozenset(gold)), cfg, it, 0, options)
    assert rb.r_total - (rb.r_correct + rb.alpha * rb.r_action + rb.beta * rb.r_relevance) == 0
    assert rb.r_correct in {1.0, 0.5, -1.0}


def test_zero_weights_reduce_to_correctness():
    cfg = ScheduleConfig(0.0, 0.0, 0.0, 0.0, 0.4, 10)
    gold = GoldenAnnotation(frozenset({3}))
    for it in range(11):
        rb = total_reward(_traj([{3}], 0), gold, cfg, it, 0)
        assert rb.r_total == rb.r_correct == 1.0


def test_ablation_options():
    gold = GoldenAnnotation(frozenset({3, 9}))
    cfg = ScheduleConfig(0.3, 0.05, 0.1, 0.5, 0.4, 10)
    traj = _traj([{3}], 0)  # iou 0.5, correct
    full = total_reward(traj, gold, cfg, 10, 0)
    no_rr = total_reward(traj, gold, cfg, 10, 0, RewardOptions(relevance=False))
    no_gate = total_reward(_traj([{4}], 0), gold, cfg, 10, 0, RewardOptions(iou_gate=False))
    no_da = total_reward(traj, gold, cfg, 10, 0, RewardOptions(dynamic=False))
    per_op = total_reward(_traj([{3}, {9}], 0), gold, cfg, 10, 0,
                          RewardOptions(per_op_action=True))
    assert (full.alpha, full.beta) == (0.05, 0.5)
    assert no_rr.beta == 0.0 and no_rr.alpha == 0.05
    assert no_gate.r_correct == 1.0 and no_gate.iou == 0.0
    assert no_da.alpha == pytest.approx(0.175) and no_da.beta == pytest.approx(0.3)
    assert per_op.r_action == 2.0
