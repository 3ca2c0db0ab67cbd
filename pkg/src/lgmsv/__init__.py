"""Large-margin Gaussian mixture loss and a residual CNN encoder for speaker verification."""
from .data import Corpus, DataError, SynthConfig, load_corpus, make_batches, synth_corpus
from .encoder import EncoderConfig, EncoderModel, encode, encode_batch
from .evaluation import ScoreSet, Trial, acc, det_points, eer
from .lgm_loss import (Batch, GMParams, LossConfig, classification_loss, lgm_loss, lgm_loss_backward,
                       likelihood_regularization, margin_classification_check, posterior, triplet_loss)
from .numerics import NonFiniteError
from .pipeline import chunk, enroll, score, utterance_embedding
from .trainer import TrainConfig, TrainingError, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Batch", "Corpus", "DataError", "EncoderConfig", "EncoderModel", "GMParams", "LossConfig",
    "NonFiniteError", "ScoreSet", "SynthConfig", "TrainConfig", "Trial", "TrainingError",
    "acc", "chunk", "classification_loss", "det_points", "eer", "encode", "encode_batch", "enroll",
    "lgm_loss", "lgm_loss_backward", "likelihood_regularization", "load_checkpoint", "load_corpus",
    "make_batches", "margin_classification_check", "posterior", "save_checkpoint", "score",
    "synth_corpus", "train", "triplet_loss", "utterance_embedding",
]
