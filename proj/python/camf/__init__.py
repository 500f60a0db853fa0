"""Definition modeling from word embeddings (Python bindings)."""

import json

from ._camf import (
    BOS,
    EOS,
    MASK,
    PAD,
    UNK,
    DataError,
    Error,
    IndexError,
    InvalidConfig,
    InvalidInput,
    InvalidShape,
    LengthError,
    Model,
    Vocabulary,
    cross_attention,
    lemma_bleu,
    run_cli,
    sentence_bleu,
)
from ._camf import noam_lr as _noam_lr
from ._camf import profile as _profile

__all__ = [
    "BOS", "EOS", "MASK", "PAD", "UNK",
    "DataError", "Error", "IndexError", "InvalidConfig", "InvalidInput", "InvalidShape", "LengthError",
    "Model", "Vocabulary",
    "cross_attention", "lemma_bleu", "model_config", "noam_lr", "profile", "run_cli", "sentence_bleu",
]


def noam_lr(step, train_config=None):
    """Learning rate for an update at `step`; train_config overrides the defaults."""
    return _noam_lr(step, json.dumps(train_config) if train_config else "")


def profile(name):
    """The named hyperparameter profile ("paper" or "desk") as a dict."""
    return json.loads(_profile(name))


def model_config(model):
    return json.loads(model.config_json)
