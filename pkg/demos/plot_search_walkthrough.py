"""
A constrained mixed-precision search, end to end
=================================================

Search bit-widths and layer widths of a three-layer net on ``blobs2d``
under a 300-byte model-size bound.  Trials are logged to JSON lines and the
run can be resumed from its state snapshot.
"""

import tempfile
from pathlib import Path

from kmtpe import Configuration, resume, run_search

out = Path(tempfile.mkdtemp()) / "run"
cfg = {"schema_version": 1, "seed": 0, "tpe": {"n0": 20, "n": 100},
       "constraints": {"model_size_bytes": 300}, "output": {"dir": str(out)}}

###############################################################################
# Stop after 40 trials, then pick the run back up.

run_search(cfg, stop_after=40)
state = resume(out / "state.json")
print("trials:", len(state.trials), "log:", out / "trials.jsonl")

###############################################################################
# The best configuration and how the surrogate phase improved on random.

best = state.best
conf = Configuration.from_point(best.point)
print("bits  ", conf.bits)
print("widths", conf.widths)
print("objective", round(best.objective, 4), "metrics", best.metrics)
print("best random-phase objective",
      round(max(t.objective for t in state.trials if t.phase == "random"), 4))
print("k used per surrogate iteration:", [t.k_used for t in state.trials if t.k_used][::10])
