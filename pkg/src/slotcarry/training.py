"""Class-weighted cross-entropy training with Adam and dev-F1 early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .candidates import CandidateConfig, generate_candidates, label_candidates
from .data import Dialog, SchemaCatalog, build_schema_catalog
from .embeddings import EmbeddingTable, LabelEmbeddings
from .errors import ConfigError, TrainingError
from .model import (
    CarryoverModel,
    backward_candidate,
    encode_act,
    encode_slot,
    encode_streams,
    predict_turn,
    score_candidate,
)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 3
    class_weight_mode: str = "inverse-frequency"  # or "manual"
    manual_weights: tuple[float, float] | None = None  # (w_neg, w_pos)
    grad_clip_norm: float = 5.0
    dev_tau: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.class_weight_mode not in ("inverse-frequency", "manual"):
            raise ConfigError(f"unknown class weight mode {self.class_weight_mode!r}")
        if self.class_weight_mode == "manual" and self.manual_weights is None:
            raise ConfigError("manual class weights requested but not provided")


def compute_loss(probs: Sequence[float], label: int, weights: tuple[float, float]) -> float:
    """Weighted negative log likelihood of the gold class.

    `weights` is (w_neg, w_pos); probabilities are floored at 1e-12.
    """
    idx = 1 if label == 1 else 0
    w = weights[idx]
    return -w * math.log(max(float(probs[idx]), PROB_FLOOR))


def class_weights(labels: Sequence[int]) -> tuple[float, float]:
    """Inverse-frequency weights: w_c = N / (2 * N_c). Balanced data -> (1, 1)."""
    n_pos = sum(1 for l in labels if l == 1)
    n_neg = sum(1 for l in labels if l == -1)
    if n_pos == 0 or n_neg == 0:
        raise TrainingError(
            f"both classes required for class weighting (pos={n_pos}, neg={n_neg})"
        )
    total = n_pos + n_neg
    return total / (2.0 * n_neg), total / (2.0 * n_pos)


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_model(cls, model: CarryoverModel) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in model.params.items()},
            v={k: np.zeros_like(p) for k, p in model.params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """In-place Adam update with bias correction."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    for name, grad in grads.items():
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * grad
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * grad * grad
        m_hat = state.m[name] / (1.0 - b1 ** state.t)
        v_hat = state.v[name] / (1.0 - b2 ** state.t)
        params[name] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class TrainingExample:
    """One labeled candidate, with its fixed (non-learned) encodings."""

    dialog: Dialog
    turn_index: int
    slot_vec: np.ndarray
    act_vec: np.ndarray
    distance: int
    label: int


def build_training_examples(
    dialogs: Sequence[Dialog],
    labels: LabelEmbeddings,
    table: EmbeddingTable,
    catalog: SchemaCatalog,
    cand_config: CandidateConfig,
) -> list[TrainingExample]:
    examples: list[TrainingExample] = []
    for dialog in dialogs:
        for t in dialog.user_turn_indices():
            turn = dialog.turns[t]
            cands = generate_candidates(dialog, t, labels, catalog, cand_config)
            if not cands:
                continue
            act_vec = encode_act(labels, turn.act, labels.dim)
            for cand in label_candidates(cands, turn.references or frozenset()):
                examples.append(
                    TrainingExample(
                        dialog=dialog,
                        turn_index=t,
                        slot_vec=encode_slot(labels, table, cand),
                        act_vec=act_vec,
                        distance=cand.distance,
                        label=cand.label,  # type: ignore[arg-type]
                    )
                )
    return examples


def loss_and_gradients(
    model: CarryoverModel,
    table: EmbeddingTable,
    examples: Sequence[TrainingExample],
    weights: tuple[float, float],
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean weighted cross-entropy over the batch plus parameter gradients.

    Stream encodings are shared between candidates of the same turn within
    the batch (parameters are fixed for its duration, so the forward values
    are identical); each candidate still contributes its own backward pass.
    """
    grads = model.zero_grads()
    encoded_cache: dict[tuple[str, int], object] = {}
    loss_sum = 0.0
    for ex in examples:
        key = (ex.dialog.dialog_id, ex.turn_index)
        encoded = encoded_cache.get(key)
        if encoded is None:
            encoded = encode_streams(model, table, ex.dialog, ex.turn_index)
            encoded_cache[key] = encoded
        probs, cache = score_candidate(model, encoded, ex.act_vec, ex.slot_vec, ex.distance)
        idx = 1 if ex.label == 1 else 0
        w = weights[idx]
        loss_sum += -w * math.log(max(float(probs[idx]), PROB_FLOOR))
        dlogits = w * probs.copy()
        dlogits[idx] -= w
        backward_candidate(model, encoded, cache, dlogits, grads)
    n = len(examples)
    for g in grads.values():
        g /= n
    return loss_sum / n, grads


def evaluate_f1(
    model: CarryoverModel,
    labels: LabelEmbeddings,
    table: EmbeddingTable,
    dialogs: Sequence[Dialog],
    catalog: SchemaCatalog,
    cand_config: CandidateConfig,
    tau: float,
) -> tuple[float, float, float]:
    """Micro-averaged (precision, recall, f1) of predict_turn over a corpus."""
    tp = fp = fn = 0
    for dialog in dialogs:
        for t in dialog.user_turn_indices():
            refs = {
                (s.key, s.value.lower()) for s in (dialog.turns[t].references or frozenset())
            }
            hyps = {
                (s.key, s.value.lower())
                for s in predict_turn(model, labels, table, dialog, t, catalog, cand_config, tau)
            }
            tp += len(hyps & refs)
            fp += len(hyps - refs)
            fn += len(refs - hyps)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class TrainResult:
    model: CarryoverModel
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_f1: float = 0.0
    class_weights: tuple[float, float] = (1.0, 1.0)


def train(
    model: CarryoverModel,
    train_dialogs: Sequence[Dialog],
    dev_dialogs: Sequence[Dialog],
    labels: LabelEmbeddings,
    table: EmbeddingTable,
    train_config: TrainConfig,
    cand_config: CandidateConfig,
    catalog: SchemaCatalog | None = None,
) -> TrainResult:
    """Minibatch Adam over shuffled candidates; keeps the best-dev-F1 params.

    Candidates (not dialogs) are the shuffling and batching unit. Stops after
    `patience` epochs without strict dev-F1 improvement, or at `epochs`.
    """
    if catalog is None:
        catalog = build_schema_catalog(train_dialogs)
    examples = build_training_examples(train_dialogs, labels, table, catalog, cand_config)
    if not examples:
        raise TrainingError("no training candidates were generated")
    if train_config.class_weight_mode == "manual":
        weights = train_config.manual_weights  # validated by TrainConfig
    else:
        weights = class_weights([ex.label for ex in examples])

    rng = np.random.default_rng(train_config.seed)
    adam = AdamState.for_model(model)
    result = TrainResult(model=model, class_weights=weights)
    best_params = model.copy_params()
    best_f1 = -1.0
    epochs_since_improvement = 0

    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(len(examples))
        epoch_loss = 0.0
        for start in range(0, len(order), train_config.batch_size):
            batch = [examples[i] for i in order[start:start + train_config.batch_size]]
            loss, grads = loss_and_gradients(model, table, batch, weights)
            if not math.isfinite(loss):
                norms = {k: float(np.linalg.norm(p)) for k, p in model.params.items()}
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // train_config.batch_size}"
                    f"; parameter norms: {norms}"
                )
            clip_gradients(grads, train_config.grad_clip_norm)
            adam_step(model.params, grads, adam, train_config)
            epoch_loss += loss * len(batch)
        epoch_loss /= len(examples)

        precision, recall, f1 = evaluate_f1(
            model, labels, table, dev_dialogs, catalog, cand_config, train_config.dev_tau
        )
        improved = f1 > best_f1
        if improved:
            best_f1 = f1
            best_params = model.copy_params()
            result.best_epoch = epoch
            epochs_since_improvement = 0
        else:
            epochs_since_improvement += 1
        result.log.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss,
                "dev_precision": precision,
                "dev_recall": recall,
                "dev_f1": f1,
                "improved": improved,
            }
        )
        if epochs_since_improvement >= train_config.patience:
            break

    model.params = best_params
    result.best_dev_f1 = best_f1
    return result
