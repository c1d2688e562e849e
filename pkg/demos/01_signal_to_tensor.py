"""
From raw synthetic EEG to a spectral-topographic tensor
=======================================================

A few seconds of motor-imagery EEG, the acquisition filters, and the
(129, 7, 11) tensor the decoder sees every 300 ms.
"""

import numpy as np

from smallnet.features import ElectrodeGrid, frequencies, stream
from smallnet.signal import CHANNEL_NAMES, apply_chain, default_signature_config, generate_recording

# four tasks, each with its own band and electrodes; gain 4 makes them easy
cfg = default_signature_config(gain=4.0).restricted(("RH", "feet", "relax", "humming"))
for task in cfg.tasks:
    for sig in cfg.signatures[task]:
        print(f"{task:8s} {sig.low_hz:g}-{sig.high_hz:g} Hz over {', '.join(sig.electrodes)}")

# 3 s of right-hand imagery then 3 s of relaxing
rec = generate_recording([("RH", 3.0), ("relax", 3.0)], cfg, seed=0)
print(f"\nrecording: {rec.samples.shape[0]} channels x {rec.n_samples} samples ({rec.duration_s:.1f} s)")

# high-pass and 50 Hz notch, as the amplifier would apply them
clean = apply_chain(rec)
line = np.abs(np.fft.rfft(rec.eeg[0]))[np.argmin(np.abs(np.fft.rfftfreq(rec.n_samples, 1 / 500) - 50))]
line_f = np.abs(np.fft.rfft(clean.eeg[0]))[np.argmin(np.abs(np.fft.rfftfreq(rec.n_samples, 1 / 500) - 50))]
print(f"50 Hz magnitude on {CHANNEL_NAMES[0]}: {line:.0f} before, {line_f:.0f} after the notch")

# one tensor per 300 ms, each covering the last 1.2 s
grid = ElectrodeGrid.load()
tensors = list(stream(clean, grid))
print(f"\n{len(tensors)} tensors of shape {tensors[0].values.shape}, starts "
      + ", ".join(f"{t.origin_time_s:.1f}" for t in tensors[:5]) + " ... s")

# mu-band power at C3 (row 3, column 3) is higher while imagining the right hand
f = frequencies()
band = (f >= 8) & (f <= 12)
first, last = tensors[0].values, tensors[-1].values
print(f"8-12 Hz power at C3: {first[band, 3, 3].mean():.2f} during RH, {last[band, 3, 3].mean():.2f} during relax")
