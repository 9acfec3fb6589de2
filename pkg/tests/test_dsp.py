import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monosep import dsp


class TestWindow:
    def test_periodic_symmetry(self):
        w = dsp.sqrt_hann(20)
        for k in range(1, 20):
            assert w[k] == pytest.approx(w[20 - k], abs=1e-12)

    def test_cola(self):
        w = dsp.sqrt_hann(20)
        np.testing.assert_allclose(w[:10] ** 2 + w[10:] ** 2, 1.0, atol=1e-12)

    def test_starts_at_zero(self):
        assert dsp.sqrt_hann(20)[0] == 0.0

    def test_odd_length_rejected(self):
        with pytest.raises(dsp.ConfigError):
            dsp.sqrt_hann(21)


class TestFrame:
    def test_count(self):
        assert dsp.frame(np.zeros(40)).shape == (3, 20)

    def test_zero_signal(self):
        assert not dsp.frame(np.zeros(55)).any()

    def test_slice_definition(self):
        x = np.arange(40.0)
        np.testing.assert_array_equal(dsp.frame(x)[1], x[10:30] * dsp.sqrt_hann())

    def test_too_short(self):
        with pytest.raises(dsp.LengthError, match="20"):
            dsp.frame(np.zeros(19))


class TestSpectrogram:
    def test_dc(self):
        fr = dsp.frame(np.ones(20))
        s = dsp.logmag_spectrogram(fr)
        assert s.shape == (1, 11)
        assert np.argmax(s[0]) == 0

    def test_cosine_2khz(self):
        n = np.arange(20)
        x = np.cos(2 * np.pi * 2000 * n / 8000)
        # direct 20-point DFT of the windowed frame
        fr = x * dsp.sqrt_hann()
        direct = np.abs([np.sum(fr * np.exp(-2j * np.pi * k * n / 20)) for k in range(11)])
        assert np.argmax(direct) == 5
        assert np.argmax(dsp.logmag_spectrogram(fr[None])[0]) == 5

    def test_rect_dc_floor(self):
        # an un-windowed constant frame has energy in bin 0 only
        s = dsp.logmag_spectrogram(np.ones((1, 20)))
        assert s[0, 0] == pytest.approx(np.log(20 + dsp.LOG_FLOOR))
        assert np.all(s[0, 1:] < np.log(1e-6))

    def test_zero_frame(self):
        s = dsp.logmag_spectrogram(np.zeros((2, 20)))
        np.testing.assert_array_equal(s, np.log(dsp.LOG_FLOOR))


class TestOverlapAdd:
    def test_single_frame(self):
        np.testing.assert_array_equal(dsp.overlap_add(np.ones((1, 20))), dsp.sqrt_hann())

    def test_zero_frames(self):
        y = dsp.overlap_add(np.zeros((4, 20)))
        assert len(y) == 50 and not y.any()

    def test_matches_loop(self, rng):
        fr = rng.standard_normal((7, 20))
        ref = np.zeros(80)
        for t in range(7):
            ref[10 * t : 10 * t + 20] += fr[t] * dsp.sqrt_hann()
        np.testing.assert_allclose(dsp.overlap_add(fr), ref, atol=1e-15)

    def test_uneven_hop_fallback(self, rng):
        fr = rng.standard_normal((5, 20))
        ref = np.zeros(4 * 7 + 20)
        for t in range(5):
            ref[7 * t : 7 * t + 20] += fr[t]
        np.testing.assert_allclose(dsp.ola_sum(fr, 7), ref)

    def test_split_is_adjoint(self, rng):
        fr = rng.standard_normal((6, 20))
        y = rng.standard_normal(70)
        assert np.sum(dsp.ola_sum(fr) * y) == pytest.approx(np.sum(fr * dsp.ola_split(y, 6)))


@given(st.integers(160, 8000), st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_round_trip_interior(length, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, length).astype(np.float32)
    y = dsp.overlap_add(dsp.frame(x))
    n = len(y)
    assert np.max(np.abs(y[10 : n - 10] - x[10 : n - 10])) < 1e-6


@given(st.integers(20, 4000))
def test_shared_frame_count(length):
    from monosep.encoder import conv_encode

    basis = np.ones((2, 1, 20), dtype=np.float32)
    x = np.zeros(length, dtype=np.float32)
    assert conv_encode(x, basis).shape[1] == dsp.frame(x).shape[0] == dsp.num_frames(length)
