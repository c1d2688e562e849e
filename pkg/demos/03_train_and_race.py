"""
Train a decoder and drive the race avatar with it
=================================================

Block-design training data, chronological cross-validation, then a race
where every 300 ms the newest EEG tensor picks the command.
"""

import numpy as np

from smallnet.dataset import ORIGIN_VIDEO
from smallnet.evaluation import cross_validate
from smallnet.features import ElectrodeGrid
from smallnet.game import (EEGFeed, ModelDecoder, OracleDecoder, WrongDecoder, generate_track, run_race)
from smallnet.network import Architecture, TrainConfig, init, train
from smallnet.protocol import recording_examples
from smallnet.signal import apply_chain, default_signature_config, generate_recording

grid = ElectrodeGrid.load()
cfg = default_signature_config(gain=4.0).restricted(("RH", "feet", "relax", "humming"))

# 24 blocks of 10 s in shuffled order
rng = np.random.default_rng(0)
order = np.concatenate([rng.permutation(4) for _ in range(6)])
rec = apply_chain(generate_recording([(cfg.tasks[i], 10.0) for i in order], cfg, seed=0))
data = recording_examples(rec, grid, None, cfg.tasks, ORIGIN_VIDEO, 0.0)
print(f"{len(data)} examples, class counts {np.bincount(data.labels)}")

arch = Architecture("SmallNet", feature_maps=16, fc_width=64)
tc = TrainConfig(learning_rate=0.05, max_epochs=5)
cv = cross_validate(data, arch, tc, n_seeds=1, k=5, purge_s=1.2)
print(f"5-fold chronological CV: {cv.mean:.3f} +- {cv.std:.3f}")

params, history = train(init(arch, 1), data, tc)
print(f"trained {len(history)} epochs, last holdout accuracy {history[-1]['holdout_acc']:.3f}")

# the same track with a perfect, a useless and the trained decoder
track = generate_track(seed=5)
for name, decoder, feed in [("oracle", OracleDecoder(), None), ("always wrong", WrongDecoder(), None),
                            ("model", ModelDecoder(params), EEGFeed(cfg, 9, grid))]:
    r = run_race(track, decoder, feed=feed, task_names=cfg.tasks)
    print(f"{name:13s} {r.completion_time_s:6.1f} s  acc1 {r.acc1:.3f}  acc2 {r.acc2:.3f}  "
          f"max decode {1e3 * r.decode_wall_max_s:.1f} ms")
