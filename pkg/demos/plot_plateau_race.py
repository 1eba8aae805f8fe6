"""
Racing k-means TPE against classic TPE on a flat landscape
===========================================================

Most cells of a ``plateau_grid`` objective score exactly zero.  A quantile
threshold then cuts through a block of ties, and the "good" set is mostly
noise.  Clustering the objective values keeps the zero block together.
"""

import numpy as np

from kmtpe import BenchObjective, TpeParams, run_race

obj = BenchObjective("plateau_grid", dims=6, levels=4, flat_fraction=0.9, steps=10, seed=0)
print("grid cells:", obj.levels ** obj.dims, "optimum:", obj.optimum_point)

###############################################################################
# Twenty seeds per optimizer, 20 random trials then 80 surrogate trials.

race = run_race(obj, ["kmeans-tpe", "classic-tpe", "random"], list(range(20)), n=100,
                params=TpeParams(n0=20, n=100))

for name, stats in race.summary()["optimizers"].items():
    print(f"{name:12s} median evals to target {stats['median_evals_to_target']:6.1f}"
          f"   median final best {stats['median_final_best']:.2f}")

###############################################################################
# Median best-so-far curves, printed every ten evaluations.

for name, runs in race.trajectories.items():
    curve = np.median(np.array(list(runs.values())), axis=0)
    print(f"{name:12s}", " ".join(f"{v:.2f}" for v in curve[9::10]))
