"""
Removing eye blinks with ICA
============================

Unmix a calibration recording, find the components that track the EOG
channel, and build the matrix that projects them out.
"""

import numpy as np

from smallnet.ica import apply_correction, correction_matrix, fit_ica, flag_eog_components
from smallnet.signal import EOG_INDEX, apply_chain, default_signature_config, generate_recording

cfg = default_signature_config(gain=4.0, blink_rate_hz=0.5).restricted(("RH", "feet", "relax", "humming"))
script = [(t, 10.0) for t in cfg.tasks]
rec = apply_chain(generate_recording(script, cfg, seed=1))
print(f"calibration recording: {rec.duration_s:.0f} s")

model = fit_ica(rec, seed=0)
flagged = flag_eog_components(model, rec)
print(f"FastICA converged in {model.n_iter} iterations, flagged components {sorted(flagged)}")

c = correction_matrix(model)
print(f"C @ C == C within {np.max(np.abs(c @ c - c)):.1e}")

# frontal channels carry the blinks; compare their EOG correlation before and after
eog = rec.samples[EOG_INDEX]
cleaned = apply_correction(rec.eeg, c)
for ch in (0, 1):
    r0 = np.corrcoef(rec.eeg[ch], eog)[0, 1]
    r1 = np.corrcoef(cleaned[ch], eog)[0, 1]
    print(f"channel {ch}: correlation with EOG {r0:+.3f} -> {r1:+.3f}")
