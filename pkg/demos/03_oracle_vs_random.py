"""How far apart the two reference policies sit: the oracle plans its keys, the
random policy picks blindly."""

# %%
import numpy as np

from earl_lab.env import run_episode
from earl_lab.policy import OraclePolicy, RandomPolicy
from earl_lab.reward import ScheduleConfig, total_reward
from earl_lab.synth import DESK_PRESET, generate_suite

tasks = generate_suite(300, 0, DESK_PRESET)
cfg = ScheduleConfig()
rng = np.random.default_rng(0)


def summarize(make_policy):
    acc, iou, reward = [], [], []
    for task in tasks:
        traj, _ = run_episode(task, make_policy())
        rb = total_reward(traj, task.annotation, cfg, cfg.total_iters, task.correct_option)
        acc.append(traj.predicted_answer == task.correct_option)
        iou.append(rb.iou)
        reward.append(rb.r_total)
    return np.mean(acc), np.mean(iou), np.mean(reward)


# %%
for name, make in [("oracle", OraclePolicy), ("random", lambda: RandomPolicy(rng))]:
    acc, iou, reward = summarize(make)
    print(f"{name:7s} accuracy {acc:.3f}  IoU {iou:.3f}  reward {reward:.3f}")
# random still scores about one in four by guessing among four options
