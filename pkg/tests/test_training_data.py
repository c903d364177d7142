"""Synthetic pair generator: exact SNR, determinism, grids."""

import numpy as np
import pytest

from slowfast_se.training.data import (
    EVAL_SNRS_DB,
    TRAIN_SNRS_DB,
    make_batch,
    make_synthetic_pair,
)


class TestMakeSyntheticPair:
    @pytest.mark.parametrize("snr_db", [0.0, 5.0, 10.0, 15.0, -3.0])
    def test_measured_snr_is_exact(self, snr_db):
        noisy, clean = make_synthetic_pair(seed=123, snr_db=snr_db)
        noise = noisy - clean
        measured = 10.0 * np.log10(np.sum(clean**2) / np.sum(noise**2))
        assert measured == pytest.approx(snr_db, abs=0.01)

    def test_deterministic_in_seed(self):
        a = make_synthetic_pair(7, 5.0)
        b = make_synthetic_pair(7, 5.0)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_different_seeds_differ(self):
        a = make_synthetic_pair(1, 5.0)
        b = make_synthetic_pair(2, 5.0)
        assert not np.array_equal(a[1], b[1])

    def test_one_second_at_16k(self):
        noisy, clean = make_synthetic_pair(0, 10.0)
        assert noisy.shape == clean.shape == (16000,)

    def test_peak_normalized(self):
        noisy, clean = make_synthetic_pair(5, 0.0)
        peak = max(np.max(np.abs(noisy)), np.max(np.abs(clean)))
        assert peak == pytest.approx(0.95, abs=1e-9)

    def test_snr_grids_match_protocol(self):
        assert TRAIN_SNRS_DB == (0.0, 5.0, 10.0, 15.0)
        assert EVAL_SNRS_DB == (2.5, 7.5, 12.5, 17.5)

    def test_non_finite_snr_rejected(self):
        with pytest.raises(ValueError):
            make_synthetic_pair(0, float("nan"))

    def test_clean_has_harmonic_structure(self):
        # strongest spectral peaks of the clean signal line up near multiples
        # of one fundamental
        _, clean = make_synthetic_pair(11, 20.0)
        spec = np.abs(np.fft.rfft(clean))
        freqs = np.fft.rfftfreq(len(clean), d=1.0 / 16000.0)
        peak = freqs[np.argmax(spec)]
        assert 60.0 < peak < 6000.0


class TestMakeBatch:
    def test_shapes_and_zip(self):
        noisy, clean = make_batch([1, 2, 3], [0.0, 5.0, 10.0])
        assert noisy.shape == clean.shape == (3, 16000)

    def test_rows_match_single_pairs(self):
        noisy, clean = make_batch([4, 5], [5.0, 15.0])
        n0, c0 = make_synthetic_pair(4, 5.0)
        assert np.array_equal(noisy[0], n0) and np.array_equal(clean[0], c0)
