import math

import numpy as np
import pytest

from slotcarry.candidates import CandidateConfig
from slotcarry.data import build_schema_catalog
from slotcarry.embeddings import build_label_embeddings
from slotcarry.errors import TrainingError
from slotcarry.model import CarryoverModel, ModelConfig, param_shapes
from slotcarry.synthetic import (
    default_generator_config,
    generate_synthetic,
    synthetic_embedding_table,
)
from slotcarry.training import (
    AdamState,
    TrainConfig,
    TrainingExample,
    adam_step,
    class_weights,
    clip_gradients,
    compute_loss,
    loss_and_gradients,
    train,
)

from gradcheck import build_toy_setup


def test_loss_uniform_prediction():
    assert math.isclose(compute_loss((0.5, 0.5), 1, (1.0, 1.0)), math.log(2), rel_tol=1e-12)


def test_loss_perfect_prediction_vanishes():
    assert compute_loss((1e-9, 1.0 - 1e-9), 1, (1.0, 3.0)) < 1e-8


def test_loss_weighted_example():
    # hand arithmetic: -2 * ln 0.1
    assert math.isclose(compute_loss((0.9, 0.1), 1, (1.0, 2.0)), -2 * math.log(0.1),
                        rel_tol=1e-12)


def test_loss_floors_probability():
    assert math.isfinite(compute_loss((1.0, 0.0), 1, (1.0, 1.0)))


def test_class_weights_balanced():
    assert class_weights([1] * 100 + [-1] * 100) == (1.0, 1.0)


def test_class_weights_imbalanced():
    w_neg, w_pos = class_weights([-1] * 400 + [1] * 40)
    assert math.isclose(w_neg, 0.55)
    assert math.isclose(w_pos, 5.5)


def test_class_weights_one_class_errors():
    with pytest.raises(TrainingError):
        class_weights([-1] * 10)


def test_adam_single_step_matches_hand_formula():
    config = TrainConfig(learning_rate=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
    theta0, grad = 3.0, 6.0  # gradient of 0.5 * theta^2 at theta0 times 2
    params = {"p": np.array([theta0])}
    grads = {"p": np.array([grad])}
    state = AdamState(m={"p": np.zeros(1)}, v={"p": np.zeros(1)})
    adam_step(params, grads, state, config)
    # bias-corrected first step: m_hat = g, v_hat = g^2
    expected = theta0 - config.learning_rate * grad / (math.sqrt(grad * grad) + config.eps)
    assert params["p"][0] == expected


def test_clip_gradients_scales_to_norm():
    grads = {"a": np.array([3.0, 4.0])}
    total = clip_gradients(grads, 1.0)
    assert math.isclose(total, 5.0)
    assert np.allclose(grads["a"], [0.6, 0.8])
    grads2 = {"a": np.array([0.3, 0.4])}
    clip_gradients(grads2, 1.0)
    assert np.allclose(grads2["a"], [0.3, 0.4])


def test_batch_loss_invariant_to_ordering():
    model, table, examples, weights = build_toy_setup(use_word_attention=True)
    loss_a, _ = loss_and_gradients(model, table, examples, weights)
    loss_b, _ = loss_and_gradients(model, table, list(reversed(examples)), weights)
    assert math.isclose(loss_a, loss_b, rel_tol=1e-12)


def test_zero_decoder_initial_loss_is_ln2():
    model, table, examples, _ = build_toy_setup()
    model.params["w_out"] = np.zeros_like(model.params["w_out"])
    model.params["b_out"] = np.zeros_like(model.params["b_out"])
    balanced = examples[:2]
    assert {ex.label for ex in balanced} == {1, -1}
    loss, _ = loss_and_gradients(model, table, balanced, (1.0, 1.0))
    assert abs(loss - math.log(2)) < 1e-6


def _small_corpus(num_dialogs, seed):
    config = default_generator_config(num_dialogs, num_domains=2)
    dialogs = generate_synthetic(config, seed=seed)
    table = synthetic_embedding_table(config, dim=8, seed=seed)
    labels = build_label_embeddings(table, dialogs)
    return config, dialogs, table, labels


def _quick_train(dialogs, table, labels, train_config, model_config, cand_config=None):
    catalog = build_schema_catalog(dialogs)
    model = CarryoverModel.initialize(model_config)
    cand_config = cand_config or CandidateConfig(window=model_config.window)
    return train(model, dialogs, dialogs, labels, table, train_config, cand_config, catalog)


def test_training_is_deterministic():
    _, dialogs, table, labels = _small_corpus(10, seed=21)
    model_config = ModelConfig(embedding_dim=table.dim, hidden_dim=8, decoder_hidden_dim=12,
                               window=2, seed=5)
    train_config = TrainConfig(epochs=2, batch_size=8, seed=5)
    r1 = _quick_train(dialogs, table, labels, train_config, model_config)
    r2 = _quick_train(dialogs, table, labels, train_config, model_config)
    for name in param_shapes(model_config):
        assert np.array_equal(r1.model.params[name], r2.model.params[name])
    assert r1.log == r2.log


def test_small_overfit_reaches_high_f1():
    _, dialogs, table, labels = _small_corpus(25, seed=33)
    model_config = ModelConfig(embedding_dim=table.dim, hidden_dim=12, decoder_hidden_dim=16,
                               window=2, seed=7)
    train_config = TrainConfig(epochs=12, batch_size=16, seed=7)
    result = _quick_train(dialogs, table, labels, train_config, model_config)
    assert result.best_dev_f1 >= 0.9


def test_early_stopping_with_patience_one():
    _, dialogs, table, labels = _small_corpus(6, seed=44)
    model_config = ModelConfig(embedding_dim=table.dim, hidden_dim=4, decoder_hidden_dim=6,
                               window=2, seed=9)
    # learning rate 0 never improves after the first epoch
    train_config = TrainConfig(epochs=20, batch_size=8, learning_rate=0.0, patience=1, seed=9)
    result = _quick_train(dialogs, table, labels, train_config, model_config)
    assert len(result.log) < 20


def test_best_kept_f1_bounds_later_epochs():
    _, dialogs, table, labels = _small_corpus(12, seed=55)
    model_config = ModelConfig(embedding_dim=table.dim, hidden_dim=6, decoder_hidden_dim=8,
                               window=2, seed=3)
    train_config = TrainConfig(epochs=6, batch_size=16, seed=3)
    result = _quick_train(dialogs, table, labels, train_config, model_config)
    best_seen = max(record["dev_f1"] for record in result.log)
    assert result.best_dev_f1 == best_seen


def test_manual_class_weights():
    _, dialogs, table, labels = _small_corpus(6, seed=66)
    model_config = ModelConfig(embedding_dim=table.dim, hidden_dim=4, decoder_hidden_dim=6,
                               window=2, seed=1)
    train_config = TrainConfig(epochs=1, batch_size=8, seed=1,
                               class_weight_mode="manual", manual_weights=(1.0, 4.0))
    result = _quick_train(dialogs, table, labels, train_config, model_config)
    assert result.class_weights == (1.0, 4.0)
