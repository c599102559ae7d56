import numpy as np
import pytest

from syncforge import correction, sync, synth

import oracles


def dist_from_probs(probs, temperature=0.07):
    probs = np.asarray(probs, dtype=np.float64)
    return sync.OffsetDistribution(probs=probs, radius=(len(probs) - 1) // 2,
                                   temperature=temperature)


def delta_dist(lag, radius):
    p = np.zeros(2 * radius + 1)
    p[lag + radius] = 1.0
    return dist_from_probs(p)


class TestSoftCorrect:
    def test_delta_at_zero_is_identity(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((12, 3))
        out, valid = correction.soft_correct(m, delta_dist(0, 2))
        assert np.array_equal(out, m)
        assert valid.all()

    def test_delta_at_lag_is_a_delay(self):
        rng = np.random.default_rng(1)
        m = rng.standard_normal((14, 2))
        for k0 in (3, -2):
            out, _ = correction.soft_correct(m, delta_dist(k0, 4))
            for i in range(14):
                src = i - k0
                if 0 <= src < 14:
                    assert np.array_equal(out[i], m[src])
                else:
                    assert np.all(out[i] == 0.0)

    def test_uniform_pair_averages_neighbors(self):
        rng = np.random.default_rng(2)
        m = rng.standard_normal((10, 3))
        d = dist_from_probs([0.5, 0.0, 0.5])  # lags -1, 0, +1
        out, _ = correction.soft_correct(m, d)
        interior = 0.5 * (m[:-2] + m[2:])
        assert np.abs(out[1:-1] - interior).max() < 1e-12

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        m = rng.standard_normal((15, 4))
        probs = rng.dirichlet(np.ones(7))
        out, _ = correction.soft_correct(m, dist_from_probs(probs))
        want = oracles.soft_correct_scalar(m, probs, 3)
        assert np.abs(out - want).max() < 1e-12

    def test_rejects_short_sequences(self):
        with pytest.raises(ValueError, match="kernel support"):
            correction.soft_correct(np.ones((8, 2)), delta_dist(0, 4))

    def test_linearity(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((16, 3))
        y = rng.standard_normal((16, 3))
        d = dist_from_probs(rng.dirichlet(np.ones(9)))
        a, b = 1.7, -0.4
        combined, _ = correction.soft_correct(a * x + b * y, d)
        xa, _ = correction.soft_correct(x, d)
        yb, _ = correction.soft_correct(y, d)
        assert np.abs(combined - (a * xa + b * yb)).max() < 1e-12


class TestHardCorrect:
    def test_zero_lag_identity(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((9, 2))
        out, valid = correction.hard_correct(m, 0)
        assert np.array_equal(out, m)
        assert valid.all()

    def test_positive_lag_invalidates_leading_frames(self):
        rng = np.random.default_rng(6)
        m = rng.standard_normal((10, 2))
        out, valid = correction.hard_correct(m, 3)
        assert not valid[:3].any() and valid[3:].all()
        assert np.all(out[:3] == 0.0)
        assert np.array_equal(out[3:], m[:7])

    def test_negative_lag_invalidates_trailing_frames(self):
        rng = np.random.default_rng(7)
        m = rng.standard_normal((10, 2))
        out, valid = correction.hard_correct(m, -2)
        assert valid[:8].all() and not valid[8:].any()
        assert np.array_equal(out[:8], m[2:])
        assert np.all(out[8:] == 0.0)

    def test_lag_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            correction.hard_correct(np.ones((5, 2)), 5)

    def test_round_trip_restores_doubly_valid_frames(self):
        rng = np.random.default_rng(8)
        m = rng.standard_normal((12, 3))
        for k in (4, -3):
            once, v1 = correction.hard_correct(m, k)
            back, v2 = correction.hard_correct(once, -k)
            # every frame valid after the round trip maps into the first
            # correction's valid window, so all of them are restored
            assert v2.sum() == 12 - abs(k)
            assert np.array_equal(back[v2], m[v2])
            assert np.all(back[~v2] == 0.0)


class TestLosses:
    def test_equal_inputs_zero(self):
        m = np.random.default_rng(9).standard_normal((8, 3))
        assert correction.soft_correction_loss(m, m.copy()) == 0.0

    def test_constant_offset_gives_one(self):
        m = np.random.default_rng(10).standard_normal((8, 3))
        assert abs(correction.soft_correction_loss(m, m + 1.0) - 1.0) < 1e-12

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((9, 4))
        b = rng.standard_normal((9, 4))
        valid = rng.integers(0, 2, 9).astype(bool)
        valid[0] = True
        got = correction.hard_correction_loss(a, b, valid)
        assert abs(got - oracles.mse_scalar(a, b, valid)) < 1e-12

    def test_zero_valid_frames_errors(self):
        m = np.ones((5, 2))
        with pytest.raises(ValueError, match="valid"):
            correction.hard_correction_loss(m, m, np.zeros(5, dtype=bool))

    def test_hard_recovery_and_mismatch(self):
        rng = np.random.default_rng(12)
        mel, recon, truth = synth.gen_mel_pair(synth.AsyncScenario(
            kind="features", duration_s=1.0, data_offset_ms=60, seed=4, channels=8))
        k0 = truth.lag_frames
        fixed, valid = correction.hard_correct(recon, k0)
        assert correction.hard_correction_loss(mel, fixed, valid) == 0.0
        wrong, wrong_valid = correction.hard_correct(recon, k0 + 2)
        assert correction.hard_correction_loss(mel, wrong, wrong_valid) > 1e-3


class TestSelfSyncLoss:
    def test_sharp_delta_tends_to_zero(self):
        for eps in (1e-3, 1e-6, 1e-9):
            probs = np.full(7, eps / 6)
            probs[3] = 1.0 - eps
            loss = correction.self_sync_loss(dist_from_probs(probs))
            assert 0.0 < loss < 2 * eps

    def test_uniform_seven_is_log_seven(self):
        loss = correction.self_sync_loss(dist_from_probs(np.full(7, 1 / 7)))
        assert abs(loss - np.log(7.0)) < 1e-6

    def test_half_is_log_two(self):
        probs = np.array([0.125, 0.125, 0.5, 0.125, 0.125])
        loss = correction.self_sync_loss(dist_from_probs(probs))
        assert abs(loss - np.log(2.0)) < 1e-6

    def test_nonnegative(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            probs = rng.dirichlet(np.ones(9))
            assert correction.self_sync_loss(dist_from_probs(probs)) >= 0.0


class TestSoftHardConsistency:
    def test_delta_distribution_matches_hard(self):
        rng = np.random.default_rng(14)
        for _ in range(30):
            t = int(rng.integers(12, 24))
            d = int(rng.integers(2, 6))
            radius = int(rng.integers(1, (t - 1) // 2))
            lag = int(rng.integers(-radius, radius + 1))
            m = rng.standard_normal((t, d))
            ref = rng.standard_normal((t, d))
            soft, _ = correction.soft_correct(m, delta_dist(lag, radius))
            hard, hard_valid = correction.hard_correct(m, lag)
            l_soft = correction.soft_correction_loss(ref, soft, hard_valid)
            l_hard = correction.hard_correction_loss(ref, hard, hard_valid)
            assert abs(l_soft - l_hard) < 1e-12


class TestCorrectionStep:
    def _oracle_like_params(self, d):
        # near-identity extractor: center-tap identity conv, pass-through norms
        eye3 = np.zeros((3, d, d))
        eye3[1] = np.eye(d)
        return sync.ExtractorParams(
            conv1_w=eye3, conv1_b=np.zeros(d),
            norm1_scale=np.ones(d), norm1_shift=np.zeros(d),
            conv2_w=np.eye(d)[None, :, :], conv2_b=np.zeros(d),
            norm2_scale=np.ones(d), norm2_shift=np.zeros(d),
            fc_w=np.eye(d), fc_b=np.zeros(d),
        )

    def test_aligned_input_zero_hard_loss(self):
        from syncforge.training import PredictorParams
        sc = synth.AsyncScenario(kind="features", duration_s=1.0,
                                 data_offset_ms=0, seed=21, channels=6)
        video, mel, recon, _ = synth.training_triple(sc)
        p = self._oracle_like_params(6)
        out = correction.correction_step(video, mel, recon,
                                         PredictorParams(video=p, audio=p),
                                         radius=10, temperature=0.07)
        assert out.lag == 0
        assert out.hard_loss == 0.0

    def test_shifted_reconstruction_recovers_lag(self):
        from syncforge.training import PredictorParams
        sc = synth.AsyncScenario(kind="features", duration_s=1.2,
                                 data_offset_ms=-70, seed=22, channels=6)
        video, mel, recon, truth = synth.training_triple(sc)
        p = self._oracle_like_params(6)
        out = correction.correction_step(video, mel, recon,
                                         PredictorParams(video=p, audio=p),
                                         radius=12, temperature=0.07)
        assert out.lag == truth.lag_frames == -7
        assert out.hard_loss < 1e-12
        assert out.soft_loss < 0.2  # blend spreads a little mass off the peak
