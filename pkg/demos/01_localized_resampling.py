"""Walk through one episode's frame axis: the uniform grid, a selection, and the
frames that localized re-sampling brings in around it."""

# %%
import numpy as np

from earl_lab.synth import generate_task, GenerationParams
from earl_lab.timeline import localized_resample, resample_plan, uniform_sample

task = generate_task(7, GenerationParams(k=1))
(evidence,) = task.evidence
print("video length:", task.frame_count, "evidence frame:", evidence)

# %%
# The model starts from 32 evenly spaced frames. The generator keeps evidence at
# least two frames away from every grid point, so nothing is visible yet.
ctx = uniform_sample(task.timeline, 32)
print("grid:", ctx.frames[:8], "...")
print("closest grid frame:", min(ctx.frames, key=lambda f: abs(f - evidence)))

# %%
# Signals rise near the evidence; the two grid frames on either side are the
# obvious keys to select.
signals = task.timeline.signals[list(ctx.frames)]
top = np.argsort(-signals)[:2]
keys = sorted(ctx.frames[i] for i in top)
print("selected keys:", keys, "signals:", np.round(signals[top], 3))

# %%
# Each key opens the interval to its nearest grid neighbour; 16 slots are shared
# across the merged intervals in proportion to their length.
_, intervals, slots = resample_plan(ctx, keys, 16)
for iv, s in zip(intervals, slots):
    print(f"interval ({iv.lo}, {iv.hi}) capacity {iv.capacity} -> {s} slots")
refined = localized_resample(task.timeline, ctx, keys, 16)
print("new context:", refined.frames)
print("evidence visible:", evidence in refined)
