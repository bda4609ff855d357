import numpy as np
import pytest
import scipy.signal
from hypothesis import given, settings
from hypothesis import strategies as st

from eeg_inception.data import Trial, TrialSet
from eeg_inception.dsp import (augment, design_butterworth_highpass, export_coefficients, extract_noise,
                               frequency_response, magnitude_db, parse_coefficients, sos_filter, swap_noise)
from eeg_inception.errors import DataError

FS = 250.0
TRANSIENT = 250


@pytest.fixture(scope="module")
def hp():
    return design_butterworth_highpass(8, 100.0, FS)


def sine(freq, n, amp=1.0, phase=0.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / FS + phase)


def tone_amplitude(x, freq):
    """Amplitude of a tone at ``freq`` over a window holding a whole number of its periods."""
    t = np.arange(len(x)) / FS
    c = np.cos(2 * np.pi * freq * t)
    s = np.sin(2 * np.pi * freq * t)
    return 2 * np.hypot(x @ c, x @ s) / len(x)


def make_set(signals, labels, subjects=None):
    subjects = subjects or ["S1"] * len(signals)
    trials = [Trial(id=f"t{i}", subject=subjects[i], label=int(labels[i]), samples=np.asarray(s))
              for i, s in enumerate(signals)]
    return TrialSet(trials, [f"ch{j}" for j in range(signals[0].shape[0])], 2)


# ---------------------------------------------------------------- design

def test_section_count_and_metadata(hp):
    assert len(hp.sections) == 4
    assert (hp.order, hp.cutoff_hz, hp.sample_rate_hz) == (8, 100.0, 250.0)


def test_cutoff_is_minus_3db(hp):
    assert magnitude_db(hp, [100.0])[0] == pytest.approx(-3.0103, abs=0.1)
    assert abs(frequency_response(hp, [100.0])[0]) == pytest.approx(1 / np.sqrt(2), abs=1e-9)


def test_stopband_at_10hz(hp):
    assert magnitude_db(hp, [10.0])[0] <= -80.0


def test_nyquist_gain_is_unity(hp):
    assert magnitude_db(hp, [125.0])[0] == pytest.approx(0.0, abs=0.1)


def test_all_poles_inside_unit_circle(hp):
    assert hp.is_stable()
    assert np.all(np.abs(hp.poles()) < 1.0)
    for s in hp.sections:
        assert abs(s.a2) < 1 and abs(s.a1) < 1 + s.a2


def test_design_rejects_bad_arguments():
    with pytest.raises(ValueError, match="Nyquist"):
        design_butterworth_highpass(8, 125.0, FS)
    with pytest.raises(ValueError, match="Nyquist"):
        design_butterworth_highpass(8, 130.0, FS)
    with pytest.raises(ValueError, match="even"):
        design_butterworth_highpass(7, 100.0, FS)


def test_design_matches_scipy_oracle(hp):
    ref = scipy.signal.butter(8, 100.0, btype="highpass", fs=FS, output="sos")
    freqs = np.linspace(0.5, 125, 400)
    _, h_ref = scipy.signal.sosfreqz(ref, worN=freqs, fs=FS)
    np.testing.assert_allclose(frequency_response(hp, freqs), h_ref, atol=1e-12)
    ref_poles = np.sort_complex(np.concatenate([np.roots([1, *row[4:]]) for row in ref]))
    np.testing.assert_allclose(np.sort_complex(hp.poles()), ref_poles, atol=1e-12)


@pytest.mark.parametrize("order,cutoff", [(2, 30.0), (4, 60.0), (6, 100.0)])
def test_other_designs_match_scipy(order, cutoff):
    filt = design_butterworth_highpass(order, cutoff, FS)
    ref = scipy.signal.butter(order, cutoff, btype="highpass", fs=FS, output="sos")
    freqs = np.linspace(1, 124, 100)
    _, h_ref = scipy.signal.sosfreqz(ref, worN=freqs, fs=FS)
    np.testing.assert_allclose(frequency_response(filt, freqs), h_ref, atol=1e-12)


def test_coefficient_export_round_trip(hp):
    text = export_coefficients(hp)
    rows = [line for line in text.splitlines() if not line.startswith("#")]
    assert len(rows) == 4
    assert all(len(r.split()) == 5 for r in rows)
    assert all(len(v.lstrip("-").replace(".", "").split("e")[0]) >= 15 for r in rows for v in r.split()
               if v not in ("0", "-0"))
    np.testing.assert_array_equal(parse_coefficients(text), hp.as_array())


# ---------------------------------------------------------------- filtering

def test_zero_in_zero_out(hp):
    np.testing.assert_array_equal(sos_filter(hp, np.zeros((3, 500))), 0)


def test_output_length_and_channel_independence(hp):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 300))
    y = sos_filter(hp, x)
    assert y.shape == x.shape
    np.testing.assert_array_equal(y[1], sos_filter(hp, x[1]))


def test_rejects_non_finite(hp):
    x = np.zeros(10)
    x[3] = np.nan
    with pytest.raises(DataError):
        sos_filter(hp, x)


def test_matches_scipy_sosfilt(hp):
    x = np.random.default_rng(1).standard_normal((2, 1000))
    coeffs = hp.as_array()
    sos = np.c_[coeffs[:, :3], np.ones(len(coeffs)), coeffs[:, 3:]]
    np.testing.assert_allclose(sos_filter(hp, x), scipy.signal.sosfilt(sos, x), atol=1e-12)


def test_impulse_response_spectrum_matches_design(hp):
    n = 4096
    impulse = np.zeros(n)
    impulse[0] = 1.0
    h = sos_filter(hp, impulse)
    freqs = np.fft.rfftfreq(n, 1 / FS)
    np.testing.assert_allclose(np.abs(np.fft.rfft(h)), np.abs(frequency_response(hp, freqs)), atol=1e-3)


def test_impulse_response_decays(hp):
    impulse = np.zeros(int(10 * FS))
    impulse[0] = 1.0
    h = np.abs(sos_filter(hp, impulse))
    assert h[-int(FS):].max() < 1e-9 * h.max()


def test_steady_state_120hz(hp):
    y = sos_filter(hp, sine(120.0, 750))[TRANSIENT:]
    expect = abs(frequency_response(hp, [120.0])[0])
    assert tone_amplitude(y, 120.0) == pytest.approx(expect, rel=0.02)


def test_zero_phase_option_squares_magnitude(hp):
    y = sos_filter(hp, sine(100.0, 3000), zero_phase=True)[TRANSIENT:-TRANSIENT * 4]
    assert tone_amplitude(y, 100.0) == pytest.approx(0.5, rel=0.02)


# ---------------------------------------------------------------- noise extraction

def trial_of(x, rate=FS):
    return Trial(id="x", subject="S1", label=0, samples=np.atleast_2d(x), sample_rate_hz=rate)


def test_10hz_is_not_noise(hp):
    noise = extract_noise(trial_of(sine(10.0, 750)), hp).samples
    assert np.max(np.abs(noise[:, TRANSIENT:])) <= 1e-4


def test_120hz_is_noise(hp):
    noise = extract_noise(trial_of(sine(120.0, 750)), hp).samples[0, TRANSIENT:]
    assert tone_amplitude(noise, 120.0) == pytest.approx(1.0, rel=0.02)


def test_mixture_noise_is_120hz_part(hp):
    high = sine(120.0, 750, phase=0.3)
    mixed = extract_noise(trial_of(sine(10.0, 750) + high), hp).samples[0, TRANSIENT:]
    alone = extract_noise(trial_of(high), hp).samples[0, TRANSIENT:]
    rms = np.sqrt(np.mean(alone ** 2))
    assert np.sqrt(np.mean((mixed - alone) ** 2)) <= 0.01 * rms


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10), seed=st.integers(0, 2 ** 16))
def test_extraction_is_linear(hp, a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 2, 200))
    lhs = extract_noise(trial_of(a * x + b * y), hp).samples
    rhs = a * extract_noise(trial_of(x), hp).samples + b * extract_noise(trial_of(y), hp).samples
    scale = max(np.max(np.abs(rhs)), 1e-300)
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * scale + 1e-12


def test_rate_mismatch_rejected(hp):
    with pytest.raises(DataError, match="Hz"):
        extract_noise(trial_of(np.zeros(50), rate=500.0), hp)


# ---------------------------------------------------------------- noise swap

def test_self_swap_is_bitwise_identity(hp):
    x = np.random.default_rng(2).standard_normal((3, 750))
    noise = extract_noise(trial_of(x), hp).samples
    out = swap_noise(x, noise, noise)
    assert out.dtype == np.float64
    assert np.array_equal(out, x)


def test_swap_formula():
    s, ni, nk = np.random.default_rng(3).standard_normal((3, 2, 20))
    np.testing.assert_allclose(swap_noise(s, ni, nk), s - ni + nk, atol=1e-14)


def small_set(n, seed=0, length=200, subjects=None):
    rng = np.random.default_rng(seed)
    signals = [rng.standard_normal((2, length)).astype(np.float32) for _ in range(n)]
    return make_set(signals, [i % 2 for i in range(n)], subjects)


def test_factor3_size_law_678():
    out = augment(small_set(678, length=32), 3, rng_seed=0)
    assert len(out.trials) == 2034
    assert len(out.provenance) == 2 * 678


@settings(max_examples=15, deadline=None)
@given(n=st.integers(2, 12), factor=st.integers(1, 4), seed=st.integers(0, 1000))
def test_size_law_and_donor_rules(n, factor, seed):
    ts = small_set(n, seed=seed, length=16)
    out = augment(ts, factor, rng_seed=seed)
    assert len(out.trials) == factor * n
    assert all(a is b for a, b in zip(out.trials.trials[:n], ts.trials))
    for trial, (i, k) in zip(out.trials.trials[n:], out.provenance):
        assert k != i
        assert trial.label == ts[i].label
        assert trial.provenance == (i, k)


def test_augment_is_deterministic():
    ts = small_set(10)
    a, b = augment(ts, 3, rng_seed=4), augment(ts, 3, rng_seed=4)
    assert a.provenance == b.provenance
    for x, y in zip(a.trials, b.trials):
        assert np.array_equal(x.samples, y.samples)
    assert augment(ts, 3, rng_seed=5).provenance != a.provenance


def test_donors_stay_within_subject():
    ts = small_set(12, subjects=["A"] * 6 + ["B"] * 6)
    out = augment(ts, 4, rng_seed=0)
    for i, k in out.provenance:
        assert ts[i].subject == ts[k].subject


def test_same_class_donor_switch():
    ts = small_set(12)
    out = augment(ts, 4, rng_seed=0, same_class_donors=True)
    assert all(ts[i].label == ts[k].label for i, k in out.provenance)
    mixed = augment(ts, 4, rng_seed=0)
    assert any(ts[i].label != ts[k].label for i, k in mixed.provenance)


def test_donor_draw_is_roughly_uniform():
    ts = small_set(5, length=8)
    out = augment(ts, 401, rng_seed=0)
    counts = np.zeros((5, 5), int)
    for i, k in out.provenance:
        counts[i, k] += 1
    assert np.all(np.diag(counts) == 0)
    off = counts[~np.eye(5, dtype=bool)]
    # 400 draws over 4 donors per trial: 100 expected, 5 sigma is about 43
    assert off.min() > 57 and off.max() < 143


def test_augment_rejections():
    with pytest.raises(ValueError, match="at least 2"):
        augment(small_set(1), 3)
    with pytest.raises(ValueError, match=">= 1"):
        augment(small_set(4), 0)
    ts = small_set(4)
    assert augment(ts, 1).trials is ts


def test_synthetic_trial_is_eq2_of_its_pair(hp):
    ts = small_set(6, length=300)
    out = augment(ts, 2, rng_seed=1)
    for trial, (i, k) in zip(out.trials.trials[6:], out.provenance):
        s = ts[i].samples.astype(np.float64)
        expect = s - sos_filter(hp, s) + sos_filter(hp, ts[k].samples.astype(np.float64))
        np.testing.assert_allclose(trial.samples, expect.astype(np.float32), rtol=1e-6, atol=1e-6)


# ---------------------------------------------------------------- spectral preservation

def band_limited_pair(seed, low_top=90.0, length=750, window=500):
    """Two trials of equal-amplitude, random-phase tones on every analysis bin
    below ``low_top`` plus random tones between 101 and 125 Hz.

    All tones are periodic in the final ``window`` samples, so once the filter
    transient has passed each DFT bin holds one tone exactly.
    """
    rng = np.random.default_rng(seed)
    df = FS / window
    low = np.arange(1, int(np.ceil(low_top / df))) * df
    high = np.arange(int(101 / df), int(125 / df)) * df
    out = []
    for _ in range(2):
        x = sum(sine(f, length, 1.0, rng.uniform(0, 2 * np.pi)) for f in low)
        x = x + sum(sine(f, length, rng.uniform(0, 3), rng.uniform(0, 2 * np.pi)) for f in high)
        out.append(x[None, :])
    return out, low


def sub_band_change(seed, top):
    (si, sk), low = band_limited_pair(seed, low_top=top)
    ts = make_set([si, sk], [0, 1])
    aug = augment(ts, 2, rng_seed=0).trials[2]
    assert aug.provenance == (0, 1)
    window = 500
    orig = np.fft.rfft(si[0, -window:])
    new = np.fft.rfft(aug.samples[0, -window:].astype(np.float64))
    idx = np.rint(low * window / FS).astype(int)
    return np.abs(np.abs(new[idx]) - np.abs(orig[idx])) / np.abs(orig[idx]), low, orig[idx], new[idx], sk


def test_sub_band_change_follows_designed_response(hp):
    # bin f of the swapped trial is S_i + H(f) (S_k - S_i), to float32 storage precision
    _, low, orig, new, sk = sub_band_change(0, 90.0)
    donor = np.fft.rfft(sk[0, -500:])[np.rint(low * 2).astype(int)]
    predicted = orig + frequency_response(hp, low) * (donor - orig)
    np.testing.assert_allclose(new, predicted, atol=5e-3)


def test_spectrum_below_80hz_preserved_within_2_percent():
    # |H| <= 0.5% up to 80 Hz, so a swap changes no bin by more than about 1%
    for seed in range(3):
        rel, *_ = sub_band_change(seed, 80.0)
        assert rel.max() <= 0.02


def test_spectrum_below_90hz_preserved_within_2_percent_per_bin():
    rel, low, *_ = sub_band_change(0, 90.0)
    worst = low[np.argmax(rel)]
    assert rel.max() <= 0.02, f"largest change {rel.max():.3%} at {worst:.1f} Hz"
