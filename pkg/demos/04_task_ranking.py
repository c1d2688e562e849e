"""
Ranking four-task subsets of eight candidate tasks
==================================================

Each of the 70 subsets is scored by cross-validation on a balanced trial
pool; Kruskal-Wallis with a Bonferroni correction counts how many other
subsets it beats or loses to.  This run is cut down to keep it short:
with 50 one-second trials per task the scores stay close together and
the Bonferroni-corrected test rarely separates any two subsets.
"""

from smallnet.evaluation import rank_combinations
from smallnet.network import Architecture, TrainConfig
from smallnet.protocol import stage2_pool
from smallnet.signal import default_signature_config

cfg = default_signature_config(gain=4.0)
print("candidate tasks:", ", ".join(cfg.tasks))
pool = stage2_pool(cfg, n_per_task=50, seed=0)
print(f"pool: {len(pool)} one-second trials")

ranking = rank_combinations(pool, Architecture(feature_maps=16, fc_width=64), TrainConfig(max_epochs=4),
                            n_seeds=1, k=3, seed=0)
print(f"\n{len(ranking.rows)} subsets; best five:")
for row in ranking.rows[:5]:
    print(f"  {'-'.join(row.tasks):28s} TA {row.mean_ta:.3f}  significant differences {row.n_sig_diff}")
print(f"worst: {'-'.join(ranking.rows[-1].tasks)} TA {ranking.rows[-1].mean_ta:.3f}")
