import math
import wave

import numpy as np
import pytest

from sedkit.errors import ContractError, FormatError, ParseError
from sedkit.frontend import (
    AugmentPolicy,
    FbankConfig,
    Waveform,
    compute_fbank,
    load_wav,
    spec_augment,
    write_wav,
)


def _write_raw(path, frames: bytes, channels=1, width=2, rate=16000):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(width)
        fh.setframerate(rate)
        fh.writeframes(frames)


def test_silence_loads_as_zeros(tmp_path):
    p = tmp_path / "s.wav"
    _write_raw(p, b"\x00\x00" * 16000)
    w = load_wav(p)
    assert len(w) == 16000 and not w.samples.any()


def test_square_wave_scaling(tmp_path):
    p = tmp_path / "sq.wav"
    ints = np.tile([32767, -32767], 100).astype("<i2")
    _write_raw(p, ints.tobytes())
    w = load_wav(p)
    assert set(np.unique(w.samples)) == {np.float32(32767 / 32768), np.float32(-32767 / 32768)}


def test_stereo_rejected(tmp_path):
    p = tmp_path / "st.wav"
    _write_raw(p, b"\x00\x00" * 200, channels=2)
    with pytest.raises(FormatError, match="channels=2"):
        load_wav(p)


def test_wrong_rate_and_width(tmp_path):
    p = tmp_path / "r.wav"
    _write_raw(p, b"\x00\x00" * 200, rate=8000)
    with pytest.raises(FormatError, match="sample_rate=8000"):
        load_wav(p)
    q = tmp_path / "w.wav"
    _write_raw(q, b"\x00" * 200, width=1)
    with pytest.raises(FormatError, match="sample_width=8"):
        load_wav(q)


def test_truncated_file(tmp_path):
    p = tmp_path / "t.wav"
    _write_raw(p, b"\x01\x00" * 1000)
    data = p.read_bytes()
    p.write_bytes(data[: len(data) - 500])
    with pytest.raises(ParseError):
        load_wav(p)
    p.write_bytes(data[:20])
    with pytest.raises(ParseError):
        load_wav(p)


def test_write_then_load_roundtrip(tmp_path):
    x = np.random.default_rng(0).uniform(-0.9, 0.9, 800)
    write_wav(tmp_path / "x.wav", x)
    np.testing.assert_allclose(load_wav(tmp_path / "x.wav").samples, x, atol=1 / 32768)


# -- fbank ----------------------------------------------------------------------

def test_one_second_gives_98_frames():
    feats = compute_fbank(Waveform(np.zeros(16000, dtype=np.float32)))
    assert feats.shape == (98, 80)


def test_silence_hits_floor():
    feats = compute_fbank(Waveform(np.zeros(4000, dtype=np.float32)))
    np.testing.assert_array_equal(feats, np.float32(math.log(1e-10)))


def test_too_short():
    with pytest.raises(ContractError):
        compute_fbank(Waveform(np.zeros(399, dtype=np.float32)))


def test_frame_count_formula_random_lengths():
    rng = np.random.default_rng(5)
    for n in rng.integers(400, 20000, size=100):
        n = int(n)
        feats = compute_fbank(Waveform(rng.normal(0, 0.1, n).astype(np.float32)))
        assert feats.shape == (1 + (n - 400) // 160, 80)


def test_deterministic():
    x = np.random.default_rng(1).normal(0, 0.1, 5000).astype(np.float32)
    a = compute_fbank(Waveform(x))
    b = compute_fbank(Waveform(x.copy()))
    assert a.tobytes() == b.tobytes()


def test_doubling_amplitude_adds_two_ln2():
    x = np.random.default_rng(2).normal(0, 0.05, 8000).astype(np.float32)
    a = compute_fbank(Waveform(x))
    b = compute_fbank(Waveform(2 * x))
    np.testing.assert_allclose(b - a, 2 * math.log(2), atol=1e-3)


def _oracle_mel_energies(frame: np.ndarray) -> list[float]:
    """Direct O(N^2) DFT and a per-bin triangle evaluation, no shared helpers."""
    n_fft, sr, n_mel = 512, 16000, 80
    x = list(frame)
    for i in range(len(x) - 1, 0, -1):
        x[i] = x[i] - 0.97 * x[i - 1]
    x[0] = x[0] - 0.97 * x[0]
    N = len(x)
    x = [x[n] * (0.54 - 0.46 * math.cos(2 * math.pi * n / (N - 1))) for n in range(N)]
    x += [0.0] * (n_fft - N)
    spectrum = []
    for k in range(n_fft // 2 + 1):
        re = sum(x[i] * math.cos(2 * math.pi * k * i / n_fft) for i in range(N))
        im = sum(x[i] * math.sin(2 * math.pi * k * i / n_fft) for i in range(N))
        spectrum.append(re * re + im * im)

    def mel(f):
        return 1127.0 * math.log(1.0 + f / 700.0)

    lo, hi = mel(20.0), mel(7600.0)
    step = (hi - lo) / (n_mel + 1)
    energies = []
    for m in range(n_mel):
        left, center, right = lo + m * step, lo + (m + 1) * step, lo + (m + 2) * step
        total = 0.0
        for k, p in enumerate(spectrum):
            f = k * sr / n_fft
            if f < 20.0 or f > 7600.0:
                continue
            fm = mel(f)
            if left < fm <= center:
                total += p * (fm - left) / (center - left)
            elif center < fm < right:
                total += p * (right - fm) / (right - center)
        energies.append(total)
    return energies


def test_tone_argmax_matches_brute_force_oracle():
    t = np.arange(16000) / 16000.0
    x = (0.5 * np.sin(2 * math.pi * 1000.0 * t)).astype(np.float32)
    feats = compute_fbank(Waveform(x))
    oracle = _oracle_mel_energies(x[:400].astype(np.float64))
    assert int(np.argmax(feats[0])) == int(np.argmax(oracle))
    np.testing.assert_allclose(feats[0], np.log(np.maximum(oracle, 1e-10)), atol=1e-3)


# -- SpecAugment ----------------------------------------------------------------

def _feats(T=98):
    return np.random.default_rng(0).normal(size=(T, 80)).astype(np.float32)


def test_disabled_policy_is_identity():
    f = _feats()
    out = spec_augment(f, AugmentPolicy(enabled=False), np.random.default_rng(0))
    assert out.tobytes() == f.tobytes()


def test_zero_widths_identity():
    f = _feats()
    out = spec_augment(f, AugmentPolicy(max_freq_width=0, max_time_width=0), np.random.default_rng(0))
    assert out.tobytes() == f.tobytes()


def test_masked_cell_budget_and_unmasked_cells_untouched():
    f = _feats()
    policy = AugmentPolicy(2, 10, 2, 50)
    for seed in range(50):
        out, mask = spec_augment(f, policy, np.random.default_rng(seed), return_mask=True)
        assert out.shape == f.shape
        changed = out != f
        assert changed.sum() <= 2 * 10 * 98 + 2 * 50 * 80
        assert not (changed & ~mask).any()
        np.testing.assert_array_equal(out[~mask], f[~mask])
        if mask.any():
            np.testing.assert_allclose(out[mask], f.mean())


def test_zero_fill_option():
    f = _feats() + 5.0
    out, mask = spec_augment(f, AugmentPolicy(2, 10, 2, 50, fill="zero"), np.random.default_rng(3), return_mask=True)
    assert mask.any() and (out[mask] == 0).all()


def test_config_overrides_window():
    cfg = FbankConfig(num_mel_bins=40)
    feats = compute_fbank(Waveform(np.random.default_rng(0).normal(0, 0.1, 1600).astype(np.float32)), cfg)
    assert feats.shape == (8, 40)
