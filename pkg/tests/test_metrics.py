import numpy as np
import pytest

from drumbench.metrics import (
    ClipPair,
    MelStatsEmbedder,
    MetricRow,
    aggregate_row,
    compute_pair_metrics,
    fad_infinity,
    frechet_audio_distance,
    level_metrics,
    make_pair,
    mel_mae,
    onset_flux_cosine,
    real_time_factor,
    spectral_metrics,
)

SR = 16000.0


def tone(freq, seconds=1.0, amp=0.1):
    t = np.arange(int(SR * seconds)) / SR
    return amp * np.sin(2 * np.pi * freq * t)


def impulse_train(period_s, seconds=1.0, offset=0):
    out = np.zeros(int(SR * seconds))
    idx = np.arange(offset, len(out), int(period_s * SR))
    out[idx] = 1.0
    return out


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(0)


class TestMelMae:
    def test_identical_zero(self):
        a = tone(440)
        assert mel_mae(ClipPair(a, a, SR)) == 0.0

    def test_double_gain_six_db(self):
        # broadband content keeps every mel band above the log floor, where
        # the gain becomes an exact constant dB offset
        a = np.random.default_rng(1).standard_normal(16000) * 0.2
        assert mel_mae(ClipPair(2 * a, a, SR)) == pytest.approx(20 * np.log10(2), abs=1e-9)

    def test_sign_flip_invariant(self, rng):
        a = rng.standard_normal(16000) * 0.1
        b = rng.standard_normal(16000) * 0.1
        assert mel_mae(ClipPair(a, b, SR)) == pytest.approx(mel_mae(ClipPair(-a, b, SR)), abs=1e-12)


class TestFluxCosine:
    def test_self_is_one(self):
        a = impulse_train(0.25)
        assert onset_flux_cosine(ClipPair(a, a, SR)) == pytest.approx(1.0)

    def test_silence_convention(self):
        z = np.zeros(16000)
        assert onset_flux_cosine(ClipPair(z, z, SR)) == 1.0
        assert onset_flux_cosine(ClipPair(impulse_train(0.25), z, SR)) == 0.0

    def test_shifted_impulse_train_matches_envelope_oracle(self):
        from drumbench.metrics import _flux_envelope

        a = impulse_train(0.25)
        b = impulse_train(0.25, offset=int(0.125 * SR))
        got = onset_flux_cosine(ClipPair(a, b, SR))
        ea, eb = _flux_envelope(a, SR, "broad"), _flux_envelope(b, SR, "broad")
        expected = ea @ eb / (np.linalg.norm(ea) * np.linalg.norm(eb))
        assert got == pytest.approx(expected)
        assert got < 0.6  # misaligned trains disagree

    def test_band_values_in_range(self, rng):
        a = rng.standard_normal(16000) * 0.2
        b = tone(3000) + tone(80)
        pair = ClipPair(a, b, SR)
        for band in ("broad", "low", "mid", "high"):
            v = onset_flux_cosine(pair, band)
            assert 0.0 <= v <= 1.0


class TestLevels:
    def test_identical_all_zero(self):
        a = tone(200)
        m = level_metrics(ClipPair(a, a, SR))
        assert m == {"rms_mae_db_raw": 0.0, "rms_mae_db_peaknorm": 0.0, "crest_mae_db": 0.0}

    def test_double_gain(self):
        a = tone(200, amp=0.2)
        m = level_metrics(ClipPair(2 * a, a, SR))
        assert m["rms_mae_db_raw"] == pytest.approx(20 * np.log10(2), abs=1e-9)
        assert m["rms_mae_db_peaknorm"] == pytest.approx(0.0, abs=1e-9)

    def test_sine_crest_is_three_db(self):
        from drumbench.metrics import _crest_db

        assert _crest_db(tone(100, amp=1.0)) == pytest.approx(20 * np.log10(np.sqrt(2)), abs=0.01)


class TestSpectral:
    def test_identical_all_zero(self):
        a = tone(500)
        m = spectral_metrics(ClipPair(a, a, SR))
        assert all(v == 0.0 for v in m.values())

    def test_single_tone_centroid_difference(self):
        f1, f2 = 1000.0, 3000.0
        m = spectral_metrics(ClipPair(tone(f1), tone(f2), SR))
        bin_width = SR / 1024
        assert m["centroid_mae_hz"] == pytest.approx(abs(f1 - f2), abs=2 * bin_width)

    def test_waveform_l1_of_negation(self, rng):
        a = rng.standard_normal(8000) * 0.3
        m = spectral_metrics(ClipPair(a, -a, SR))
        assert m["waveform_l1"] == pytest.approx(2 * np.mean(np.abs(a)), rel=1e-9)

    def test_waveform_l1_not_sign_invariant(self, rng):
        a = rng.standard_normal(8000) * 0.3
        b = rng.standard_normal(8000) * 0.3
        l1 = spectral_metrics(ClipPair(a, b, SR))["waveform_l1"]
        l1_flipped = spectral_metrics(ClipPair(-a, b, SR))["waveform_l1"]
        assert abs(l1 - l1_flipped) > 1e-6

    def test_mrstft_sign_invariant(self, rng):
        a = rng.standard_normal(8000) * 0.3
        b = rng.standard_normal(8000) * 0.3
        assert spectral_metrics(ClipPair(a, b, SR))["mrstft_l1"] == pytest.approx(
            spectral_metrics(ClipPair(-a, b, SR))["mrstft_l1"], abs=1e-12
        )


class TestSymmetryAndMask:
    def test_paired_metrics_symmetric(self, rng):
        a = rng.standard_normal(16000) * 0.2
        b = rng.standard_normal(16000) * 0.2
        ab = compute_pair_metrics(ClipPair(a, b, SR))
        ba = compute_pair_metrics(ClipPair(b, a, SR))
        for key, v in ab.items():
            assert abs(v - ba[key]) <= 1e-9, key

    def test_mask_ignores_tail_content(self, rng):
        hop = 186
        ref = rng.standard_normal(hop * 10) * 0.2
        gen = rng.standard_normal(hop * 10) * 0.2
        mask = np.ones(10, dtype=bool)
        mask[-2:] = False
        base = compute_pair_metrics(make_pair(gen, ref, SR, mask, hop))
        noisy_tail = gen.copy()
        noisy_tail[8 * hop :] = 5.0
        modified = compute_pair_metrics(make_pair(noisy_tail, ref, SR, mask, hop))
        assert base == modified

    def test_make_pair_aligns_lengths(self):
        pair = make_pair(np.ones(500), np.ones(800), SR)
        assert len(pair.generated) == len(pair.reference) == 800
        assert pair.generated[600] == 0.0


class TestFad:
    def test_identical_sets_zero(self, rng):
        emb = rng.standard_normal((40, 8))
        assert frechet_audio_distance(emb, emb) <= 1e-6

    def test_one_dim_gaussian_mean_offset(self):
        rng = np.random.default_rng(7)
        d = 1.5
        a = rng.standard_normal((20000, 1))
        b = rng.standard_normal((20000, 1)) + d
        assert frechet_audio_distance(a, b) == pytest.approx(d**2, rel=0.05)

    def test_extrapolation_runs(self, rng):
        a = rng.standard_normal((60, 6))
        b = rng.standard_normal((60, 6)) + 0.3
        fad_inf, r2 = fad_infinity(a, b, runs=8, seed=3)
        assert np.isfinite(fad_inf)
        assert -1.0 <= r2 <= 1.0

    def test_constant_ladder_r2_one(self, monkeypatch):
        import drumbench.metrics as m

        monkeypatch.setattr(m, "frechet_audio_distance", lambda g, r: 0.42)
        rng = np.random.default_rng(0)
        fad_inf, r2 = m.fad_infinity(rng.standard_normal((40, 4)), rng.standard_normal((40, 4)))
        assert fad_inf == pytest.approx(0.42)
        assert r2 == 1.0

    def test_embedder_shape_and_determinism(self, rng):
        emb = MelStatsEmbedder()
        a = rng.standard_normal(16000) * 0.1
        va, vb = emb.embed(a, SR), emb.embed(a, SR)
        assert va.shape == (emb.dim,)
        np.testing.assert_array_equal(va, vb)


class TestRtfAndRows:
    def test_rtf(self):
        assert real_time_factor(0.5, 1.0) == 0.5
        assert real_time_factor(2.0, 2.0) == 1.0
        with pytest.raises(ValueError):
            real_time_factor(1.0, 0.0)

    def test_aggregate_row_and_validation(self, rng):
        a = rng.standard_normal(16000) * 0.1
        b = rng.standard_normal(16000) * 0.1
        per_clip = [compute_pair_metrics(ClipPair(a, b, SR)) for _ in range(3)]
        row = aggregate_row("sysA", "baseline", per_clip, fad_inf=0.1, fad_r2=0.9, rtf=0.2)
        row.validate(expected_clips=3)
        csv = row.as_csv()
        assert csv.startswith("sysA,baseline,3,")
        assert len(csv.split(",")) == len(MetricRow.HEADER.split(","))
        with pytest.raises(ValueError):
            row.validate(expected_clips=4)
