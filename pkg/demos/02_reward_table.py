"""The reward for every (answer, IoU) cell, and how the schedule moves alpha and
beta over a run."""

# %%
from earl_lab.reward import GoldenAnnotation, ScheduleConfig, correctness_reward, score, schedule_weights

for correct in (True, False):
    row = [correctness_reward(correct, iou) for iou in (0.0, 0.25, 0.5, 0.75, 1.0)]
    print("correct" if correct else "wrong  ", row)
# a correct answer backed by poor evidence earns half credit; IoU 0.5 is enough

# %%
cfg = ScheduleConfig(total_iters=10)
for t in range(1, 11):
    print(t, schedule_weights(cfg, t))
# early iterations pay for selecting at all, late ones for selecting the right frames

# %%
gold = GoldenAnnotation(frozenset({100, 300}))
for picked in ({100}, {100, 300}, {100, 300, 50, 60}, {7}):
    rb = score(1, picked, True, gold, cfg, 10)
    print(sorted(picked), f"iou={rb.iou:.2f} total={rb.r_total:.3f}", rb.recomposition_error)
