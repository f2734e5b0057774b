import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aia_cyclegan import signal as sig


def interior_rel_rms(x, y):
    a, b = x[512:-512], y[512:-512]
    return np.sqrt(np.mean((a - b) ** 2)) / np.sqrt(np.mean(a**2))


class TestStft:
    def test_zero_signal_frame_count(self):
        spec = sig.stft(np.zeros(14208))
        assert spec.shape == (108, 257)
        assert not np.any(spec)

    def test_constant_signal_dc_bin(self):
        spec = sig.stft(np.ones(2048))
        np.testing.assert_allclose(spec[:, 0], np.sum(sig.WINDOW), rtol=1e-12)
        assert np.max(np.abs(spec[:, 2:])) < 1e-9

    def test_one_second_frame_count(self):
        assert sig.stft(np.zeros(16000)).shape[0] == 122
        assert sig.frame_count(16000) == 122

    def test_matches_direct_dft_on_one_frame(self, rng):
        x = rng.standard_normal(512)
        k = np.arange(257)[:, None]
        n = np.arange(512)[None, :]
        direct = np.sum(x * sig.WINDOW * np.exp(-2j * np.pi * k * n / 512), axis=1)
        np.testing.assert_allclose(sig.stft(x)[0], direct, atol=1e-9)

    def test_too_short(self):
        with pytest.raises(ValueError, match="shorter"):
            sig.stft(np.zeros(511))


class TestIstft:
    def test_round_trip_interior(self, rng):
        x = rng.uniform(-1, 1, 16000)
        y = sig.istft(sig.stft(x))
        assert interior_rel_rms(x, y) <= 1e-5

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1536, 6000), st.integers(0, 2**31 - 1))
    def test_round_trip_arbitrary_lengths(self, n, seed):
        x = np.random.default_rng(seed).standard_normal(n)
        y = sig.istft(sig.stft(x))
        assert y.size == (sig.frame_count(n) - 1) * sig.HOP + sig.N_FFT
        assert interior_rel_rms(x[: y.size], y) <= 1e-5

    def test_zero_spectrogram(self):
        assert not np.any(sig.istft(np.zeros((5, 257), complex)))

    def test_single_frame(self, rng):
        x = rng.standard_normal(512)
        y = sig.istft(sig.stft(x))
        assert y.size == 512
        safe = sig.WINDOW**2 > 1e-11
        np.testing.assert_allclose(y[safe], x[safe], rtol=1e-9, atol=1e-12)

    def test_idempotent_projection(self, rng):
        spec = sig.stft(rng.standard_normal(4096))
        again = sig.stft(sig.istft(spec))
        np.testing.assert_allclose(again, spec, atol=1e-9)

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            sig.istft(np.zeros((3, 256), complex))


class TestCompression:
    def test_square_root(self):
        mag, phase = sig.compress(np.array([[4.0 + 0j]]), 0.5)
        assert mag.values[0, 0] == 2.0 and mag.exponent == 0.5 and phase[0, 0] == 0.0

    def test_exponent_one_unchanged(self, rng):
        spec = rng.standard_normal((3, 257)) + 1j * rng.standard_normal((3, 257))
        mag, _ = sig.compress(spec, 1.0)
        np.testing.assert_array_equal(mag.values, np.abs(spec))

    def test_zero_entry_phase_zero(self):
        mag, phase = sig.compress(np.array([[0j, -0.0 - 0.0j]]), 0.5)
        assert np.all(mag.values == 0) and np.all(phase == 0)

    def test_phase_range(self):
        _, phase = sig.compress(np.array([[-1 + 0j, -1 - 0j, 1j, -1j]]), 0.5)
        assert np.all(phase > -np.pi) and np.all(phase <= np.pi)
        assert phase[0, 0] == np.pi and phase[0, 1] == np.pi

    @pytest.mark.parametrize("exponent", [0.0, -0.5, 1.5])
    def test_exponent_range(self, exponent):
        with pytest.raises(ValueError):
            sig.compress(np.ones((1, 1), complex), exponent)

    def test_reconstruct_square(self):
        out = sig.reconstruct(sig.CompressedMagnitude(np.array([[3.0, 0.0]]), 0.5), np.array([[0.0, 1.0]]))
        np.testing.assert_array_equal(out, [[9.0 + 0j, 0j]])

    def test_round_trip(self, rng):
        spec = rng.standard_normal((20, 257)) + 1j * rng.standard_normal((20, 257))
        back = sig.reconstruct(*sig.compress(spec, 0.5))
        assert np.max(np.abs(back - spec) / np.abs(spec)) <= 1e-6

    def test_reconstruct_shape_mismatch(self):
        with pytest.raises(ValueError):
            sig.reconstruct(sig.CompressedMagnitude(np.ones((2, 3)), 0.5), np.zeros((3, 2)))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(0.05, 0.95))
    def test_monotone_and_narrowing(self, a, b, exponent):
        a, b = max(a, b), min(a, b)
        if a / b < 1 + 1e-9:
            return
        assert a**exponent > b**exponent
        assert a**exponent / b**exponent < a / b


class TestMix:
    def test_equal_power_unit_gain(self, rng):
        clean = rng.standard_normal(8000)
        clean *= 0.1 / np.sqrt(np.mean(clean**2))
        noise = rng.standard_normal(8000)
        noise *= 0.1 / np.sqrt(np.mean(noise**2))
        assert sig.mix(clean, noise, 0.0).noise_gain == pytest.approx(1.0)
        assert sig.mix(clean, noise, 20.0).noise_gain == pytest.approx(0.1)

    @pytest.mark.parametrize("snr", [0.0, 5.0, 10.0, 15.0, -3.5])
    def test_achieves_requested_snr(self, rng, snr):
        clean = 0.3 * np.sin(np.linspace(0, 300, 14400))
        noise = rng.standard_normal(14400)
        res = sig.mix(clean, noise, snr)
        assert abs(sig.measured_snr(clean, res.noise_gain * noise) - snr) <= 0.01
        # peak normalization scales both components, preserving their ratio
        scaled_clean = res.peak_scale * clean
        assert abs(sig.measured_snr(scaled_clean, res.mixture - scaled_clean) - snr) <= 0.01
        assert np.max(np.abs(res.mixture)) <= 1.0

    def test_peak_normalization_reported(self, rng):
        res = sig.mix(np.full(100, 0.9), rng.standard_normal(100), 0.0)
        assert res.peak_scale < 1.0
        assert np.max(np.abs(res.mixture)) == pytest.approx(1.0)

    def test_zero_noise(self):
        with pytest.raises(ValueError, match="noise"):
            sig.mix(np.ones(10), np.zeros(10), 5.0)

    def test_zero_clean(self):
        with pytest.raises(ValueError, match="clean"):
            sig.mix(np.zeros(10), np.ones(10), 5.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            sig.mix(np.ones(10), np.ones(11), 5.0)


class TestWav:
    def test_round_trip(self, tmp_path, rng):
        x = rng.uniform(-0.9, 0.9, 1000)
        sig.write_wav(tmp_path / "a.wav", x)
        y = sig.read_wav(tmp_path / "a.wav")
        assert np.max(np.abs(x - y)) <= 0.5 / 32768 + 1e-12
        assert np.all(np.abs(y) <= 1.0)

    def test_clipping(self, tmp_path):
        sig.write_wav(tmp_path / "c.wav", np.array([2.0, -2.0]))
        y = sig.read_wav(tmp_path / "c.wav")
        assert y[0] == 32767 / 32768 and y[1] == -1.0

    def test_rejects_wrong_rate(self, tmp_path):
        import wave

        with wave.open(str(tmp_path / "r.wav"), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(8000)
            fh.writeframes(b"\x00\x00" * 10)
        with pytest.raises(ValueError, match="Hz"):
            sig.read_wav(tmp_path / "r.wav")

    def test_rejects_stereo(self, tmp_path):
        import wave

        with wave.open(str(tmp_path / "s.wav"), "wb") as fh:
            fh.setnchannels(2)
            fh.setsampwidth(2)
            fh.setframerate(16000)
            fh.writeframes(b"\x00\x00" * 10)
        with pytest.raises(ValueError, match="mono"):
            sig.read_wav(tmp_path / "s.wav")

    def test_rejects_non_wav(self, tmp_path):
        (tmp_path / "x.wav").write_bytes(b"not a wav file at all")
        with pytest.raises(ValueError):
            sig.read_wav(tmp_path / "x.wav")
