"""Scikit-learn style wrappers around the offset predictor and the mel pipeline."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import dsp, sync, training


class OffsetPredictor(BaseEstimator):
    """Trainable audio-visual offset predictor.

    fit() consumes an iterable of (video_features_25hz, reference_matrix,
    reconstruction_matrix) triples, or TrainingSample objects, and learns
    the offset without any lag labels: the predictor is driven purely by
    how well offset-corrected reconstructions match their references.
    predict() maps (video_features, reference_matrix) pairs to integer
    lags in frames (multiply by 10 for milliseconds).
    """

    def __init__(self, radius=20, temperature=0.07, ssm_weight=1.0,
                 hidden_dim=128, embed_dim=64, learning_rate=5e-4,
                 warmup_steps=1000, total_steps=2000, batch_size=1, seed=0):
        self.radius = radius
        self.temperature = temperature
        self.ssm_weight = ssm_weight
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps
        self.batch_size = batch_size
        self.seed = seed

    def _config(self):
        return training.TrainConfig(
            radius=self.radius, temperature=self.temperature,
            ssm_weight=self.ssm_weight, hidden_dim=self.hidden_dim,
            embed_dim=self.embed_dim, learning_rate=self.learning_rate,
            warmup_steps=self.warmup_steps, total_steps=self.total_steps,
            batch_size=self.batch_size, seed=self.seed)

    @staticmethod
    def _as_samples(X):
        samples = []
        for item in X:
            if isinstance(item, training.TrainingSample):
                samples.append(item)
            else:
                video, mel, recon = item
                samples.append(training.TrainingSample(
                    video=np.asarray(video, float), mel=np.asarray(mel, float),
                    recon=np.asarray(recon, float), lag=0))
        return samples

    def fit(self, X, y=None):
        samples = self._as_samples(X)
        if not samples:
            raise ValueError("fit requires at least one training triple")
        config = self._config()
        weights = training.init_weights(samples[0].video.shape[1],
                                        samples[0].mel.shape[1], config)
        result = training.train_offset_predictor(samples, weights, config)
        self.weights_ = result.weights
        self.history_ = result.log
        self.n_video_channels_ = samples[0].video.shape[1]
        self.n_reference_channels_ = samples[0].mel.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError("OffsetPredictor is not fitted yet; call fit first")

    def _estimates(self, X):
        self._check_fitted()
        params = training.predictor_params(self.weights_, "data")
        for video, reference in X:
            yield sync.estimate_offset(np.asarray(video, float),
                                       np.asarray(reference, float),
                                       params=params, radius=self.radius,
                                       temperature=self.temperature)

    def predict(self, X):
        """Integer lag (frames) for each (video_features, reference) pair."""
        return np.array([est.lag for est in self._estimates(X)], dtype=int)

    def predict_proba(self, X):
        """Offset distributions, one row of 2 * radius + 1 values per pair."""
        return np.vstack([est.distribution.probs for est in self._estimates(X)])

    def score(self, X, y):
        """Exact-lag accuracy against integer lag labels."""
        pred = self.predict(X)
        y = np.asarray(y, dtype=int)
        return float((pred == y).mean())


class MelTransform(BaseEstimator, TransformerMixin):
    """Stateless transformer: mono 16 kHz waveforms to log-mel matrices."""

    def __init__(self, window=dsp.WINDOW, hop=dsp.HOP, n_mels=dsp.N_MELS,
                 f_min=dsp.F_MIN, f_max=dsp.F_MAX, normalize=False):
        self.window = window
        self.hop = hop
        self.n_mels = n_mels
        self.f_min = f_min
        self.f_max = f_max
        self.normalize = normalize

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        out = []
        for waveform in X:
            mel = dsp.mel_spectrogram(waveform, window=self.window, hop=self.hop,
                                      n_mels=self.n_mels, f_min=self.f_min,
                                      f_max=self.f_max)
            out.append(dsp.normalize_channels(mel) if self.normalize else mel)
        return out
