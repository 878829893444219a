"""Training loop: episode pairs -> Adam updates -> early stopping on val AUC.

Per-epoch randomness is derived from the run seed so resuming a config
reproduces the exact run: the shuffle stream is default_rng([seed, epoch])
and the dropout stream default_rng([seed, epoch, 1]).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import batch_with_padding
from .errors import InvalidArgumentError, TrainingDivergedError
from .metrics import auc
from .model import KwsModel, score_batch
from .numerics import Tensor, adam_step, bce_loss, zero_grads

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    rng_seed: int = 0
    learning_rate: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 10
    dropout_p: float = 0.2
    embedding_tag: str = "E3"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if self.batch_size < 2:
            # train-mode batch statistics need at least 2 rows
            raise InvalidArgumentError("batch_size must be >= 2")
        if self.max_epochs < 1:
            raise InvalidArgumentError("max_epochs must be >= 1")
        if self.patience < 0:
            raise InvalidArgumentError("patience must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise InvalidArgumentError("dropout_p must be in [0, 1)")

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        raw = json.loads(text)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError("unknown config fields %r" % (sorted(unknown),))
        return cls(**raw)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_auc: float


@dataclass
class TrainResult:
    best_epoch: int
    best_val_auc: float
    epochs_run: int
    stopped_early: bool
    history: list = field(default_factory=list)
    wall_time_s: float = 0.0


def export_loss_log(history, path):
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("epoch,train_loss,val_loss,val_auc\n")
        for s in history:
            f.write("%d,%.9g,%.9g,%.9g\n" % (s.epoch, s.train_loss, s.val_loss, s.val_auc))


def _epoch_batches(pairs, mel_store, emb_store, batch_size, rng):
    order = rng.permutation(len(pairs))
    shuffled = [pairs[i] for i in order]
    return batch_with_padding(shuffled, mel_store, emb_store, batch_size)


def evaluate_pairs(model: KwsModel, pairs, mel_store, emb_store,
                   batch_size: int = 256):
    """-> (mean BCE loss, scores list) in eval mode, original pair order."""
    scores = []
    losses = []
    weights = []
    for batch in batch_with_padding(pairs, mel_store, emb_store, batch_size):
        probs = score_batch(model, batch.mel, batch.mel_mask,
                            batch.emb, batch.text_mask, mode="eval")
        losses.append(float(bce_loss(probs, batch.labels).data))
        weights.append(len(batch.pairs))
        scores.extend(float(v) for v in probs.data)
    loss = float(np.average(losses, weights=weights))
    return loss, scores


def train_model(model: KwsModel, train_pairs, val_pairs, mel_store, emb_store,
                config: TrainConfig) -> TrainResult:
    """Optimize in place; the model ends at its best-val-AUC state.

    Raises TrainingDivergedError the moment a batch loss turns non-finite.
    Early stopping triggers once val AUC has failed to improve for more than
    `patience` consecutive epochs.
    """
    if not train_pairs:
        raise InvalidArgumentError("no training pairs")
    if not val_pairs:
        raise InvalidArgumentError("no validation pairs")
    if not any(p.label == 1 for p in val_pairs) or not any(p.label == 0 for p in val_pairs):
        raise InvalidArgumentError("validation pairs must include both labels")

    t0 = time.monotonic()
    params = model.parameters()
    history = []
    best = None  # (val_auc, epoch, snapshot)
    stale = 0
    stopped_early = False
    recent = []

    for epoch in range(config.max_epochs):
        shuffle_rng = np.random.default_rng([config.rng_seed, epoch])
        dropout_rng = np.random.default_rng([config.rng_seed, epoch, 1])
        batch_losses = []
        batch_weights = []
        batches = _epoch_batches(train_pairs, mel_store, emb_store,
                                 config.batch_size, shuffle_rng)
        for batch_index, batch in enumerate(batches):
            if len(batch.pairs) < 2:
                continue  # a 1-row tail cannot form batch statistics
            probs = score_batch(model, batch.mel, batch.mel_mask,
                                batch.emb, batch.text_mask,
                                mode="train", rng=dropout_rng)
            loss = bce_loss(probs, batch.labels)
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(
                    "non-finite loss", epoch=epoch, batch_index=batch_index,
                    recent_losses=list(recent),
                )
            recent.append(loss_value)
            del recent[:-5]
            batch_losses.append(loss_value)
            batch_weights.append(len(batch.pairs))
            loss.backward()
            adam_step(params, learning_rate=config.learning_rate)
            zero_grads(params)

        train_loss = float(np.average(batch_losses, weights=batch_weights))
        val_loss, val_scores = evaluate_pairs(model, val_pairs, mel_store, emb_store)
        val_auc = auc([p.label for p in val_pairs], val_scores)
        history.append(EpochStats(epoch, train_loss, val_loss, val_auc))
        logger.info("epoch %d train_loss %.6f val_loss %.6f val_auc %.2f",
                    epoch, train_loss, val_loss, val_auc)

        if best is None or val_auc > best[0]:
            best = (val_auc, epoch, model.snapshot())
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                stopped_early = True
                break

    model.load_state_arrays(best[2])
    return TrainResult(
        best_epoch=best[1],
        best_val_auc=best[0],
        epochs_run=len(history),
        stopped_early=stopped_early,
        history=history,
        wall_time_s=time.monotonic() - t0,
    )
