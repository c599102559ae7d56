"""syncforge: offset estimation, correction losses, and alignment-aware
evaluation for paired audio / feature streams."""

from .correction import (CorrectionOutcome, correction_step, hard_correct,
                         hard_correction_loss, self_sync_loss, soft_correct,
                         soft_correction_loss)
from .dsp import mel_filterbank, mel_spectrogram, normalize_channels, stft_magnitude
from .estimator import MelTransform, OffsetPredictor
from .frontend import AlignmentResult, align, aligned_metric
from .metrics import mcd, mel_cepstra, offset_r2
from .sync import (ExtractorParams, OffsetDistribution, OffsetEstimate, SyncVector,
                   argmax_lag, estimate_offset, extract_local, offset_distribution,
                   sync_vector, upsample_linear)
from .synth import (AsyncScenario, GroundTruth, gen_audio_pair, gen_mel_pair,
                    gen_pair, make_offset_pairs, make_training_set)
from .training import (PredictorParams, TrainConfig, TrainingSample,
                       TrainingDivergedError, TrainResult, init_weights,
                       load_checkpoint, save_checkpoint, train_offset_predictor)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
