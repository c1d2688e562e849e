"""
A shortened adaptive session
============================

Video calibration, warm-up races with the video-trained decoder, then
retraining on game data between races.  The game condition differs from
the videos (weaker signatures, extra noise).  With six short videos the
video-trained model is weak and every number is noisy; ``smallnet session``
runs the full-length protocol.
"""

from smallnet.network import Architecture, TrainConfig
from smallnet.protocol import SessionPlan, run_session
from smallnet.signal import default_signature_config

plan = SessionPlan(n_videos=6, pads_per_video=12, n_warmup_races=3, n_retrain_races=2, n_adaptive_races=2,
                   cv_folds=3, seed=0)
gen = default_signature_config(gain=4.0).restricted(("RH", "feet", "relax", "humming"))
report = run_session(plan, Architecture(), TrainConfig(max_epochs=8), gen)

print(report.to_csv())
print(report.summary_text())
