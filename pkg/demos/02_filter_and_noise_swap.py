"""
High-pass filter and noise-swap augmentation
============================================

Design the 8th-order Butterworth high-pass, check its response, split a
trial into low-band signal and high-band noise, and grow a training set by
swapping noise between trials.
"""
import numpy as np

from eeg_inception import SynthConfig, augment, design_butterworth_highpass, synth_generate
from eeg_inception.dsp import export_coefficients, extract_noise, magnitude_db

fs = 250.0
hp = design_butterworth_highpass(8, 100.0, fs)

# magnitude at a few frequencies: deep stop band, -3 dB at the cutoff, flat at Nyquist
for f, db in zip((10, 80, 90, 100, 125), magnitude_db(hp, [10, 80, 90, 100, 125])):
    print(f"{f:4d} Hz  {db:8.2f} dB")
print("poles inside unit circle:", hp.is_stable())
print(export_coefficients(hp))

# a 10 Hz rhythm is signal, a 120 Hz tone is noise
trials = synth_generate(SynthConfig(n_trials_per_class=4, high_noise_std=1.0, seed=0))
noise = extract_noise(trials[0], hp).samples
settle = int(fs)                                    # skip the filter's start-up transient
share = np.sum(noise[:, settle:] ** 2) / np.sum(trials[0].samples[:, settle:] ** 2)
print(f"high-band share of trial 0 power: {share:.3f}")

# factor 3: every trial gains two synthetic copies built from another trial's noise
result = augment(trials, factor=3, rng_seed=0)
print(f"{len(trials)} trials -> {len(result.trials)} trials")
for trial, (i, k) in list(zip(result.trials.trials[len(trials):], result.provenance))[:4]:
    print(f"{trial.id}: signal of trial {i} + noise of trial {k}, label {trial.label}")
