"""Forecasting architectures, training and evaluation."""

from .baselines import (LstmForecaster, MlpForecaster, RandomForecaster, lstm_next_action, mlp_next_action,
                        random_forecast)
from .checkpoint import MODEL_KINDS, build_model, load_checkpoint, read_checkpoint, save_checkpoint
from .decoder import AttnDecoder, DecodeResult
from .evaluation import evaluate_frames, evaluate_sequences
from .samples import TrainExample, augment_sequences, protocol_examples
from .seqforecast import Forecast, SeqForecaster, forecast_sequence, train_step
from .training import TrainConfig, fit, initialize, training_examples
from .vocab import ActionVocabulary
from .weak import (FrameForecast, WeakForecaster, forecast_frames_supervised, forecast_frames_weak,
                   train_step_weak)

__all__ = [
    "ActionVocabulary", "AttnDecoder", "DecodeResult", "Forecast", "FrameForecast", "LstmForecaster",
    "MODEL_KINDS", "MlpForecaster", "RandomForecaster", "SeqForecaster", "TrainConfig", "TrainExample",
    "WeakForecaster", "augment_sequences", "build_model", "evaluate_frames", "evaluate_sequences", "fit",
    "forecast_frames_supervised", "forecast_frames_weak", "forecast_sequence", "initialize", "load_checkpoint",
    "lstm_next_action", "mlp_next_action", "protocol_examples", "random_forecast", "read_checkpoint",
    "save_checkpoint", "train_step", "train_step_weak", "training_examples",
]
