"""Central-finite-difference gradient checking shared by the test modules."""

import numpy as np

from slotcarry.data import Dialog, Slot, Turn
from slotcarry.embeddings import EmbeddingTable, LabelEmbeddings
from slotcarry.model import CarryoverModel, ModelConfig
from slotcarry.training import TrainingExample, loss_and_gradients


def build_toy_setup(
    embedding_dim=4,
    hidden_dim=3,
    decoder_hidden_dim=5,
    window=2,
    seed=3,
    use_word_attention=False,
    use_stream_attention=False,
    share_stream_params=False,
):
    """A small dialog, embeddings and a mixed candidate batch for checking."""
    rng = np.random.default_rng(seed)
    tokens = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot"]
    table = EmbeddingTable(
        dim=embedding_dim, vectors={t: rng.normal(size=embedding_dim) for t in tokens}
    )
    turns = (
        Turn("user", "ask", ("alpha", "bravo"), frozenset({Slot("K1", "bravo")}), 0, "d",
             frozenset()),
        Turn("system", "ans", ("charlie",), frozenset({Slot("K2", "delta")}), 1, "d"),
        Turn("user", "ask", ("delta", "echo"), frozenset(), 2, "d", frozenset()),
        Turn("system", "ans", ("foxtrot", "alpha"), frozenset(), 3, "d"),
        Turn("user", "ask", ("echo", "foxtrot", "alpha"), frozenset(), 4, "d",
             frozenset({Slot("K1", "bravo")})),
    )
    dialog = Dialog("gradcheck", turns)
    labels = LabelEmbeddings(
        dim=embedding_dim,
        key_vectors={"K1": rng.normal(size=embedding_dim), "K2": rng.normal(size=embedding_dim)},
        act_vectors={"ask": rng.normal(size=embedding_dim)},
    )
    config = ModelConfig(
        embedding_dim=embedding_dim,
        hidden_dim=hidden_dim,
        decoder_hidden_dim=decoder_hidden_dim,
        window=window,
        use_word_attention=use_word_attention,
        use_stream_attention=use_stream_attention,
        share_stream_params=share_stream_params,
        seed=seed,
    )
    model = CarryoverModel.initialize(config)
    act_vec = labels.act_vectors["ask"]
    examples = []
    # cover both labels, both context streams, and a clamped distance
    for distance, label, key in ((1, 1, "K1"), (2, -1, "K2"), (9, -1, "K1"), (3, 1, "K2")):
        slot_vec = np.concatenate([labels.key_vectors[key], rng.normal(size=embedding_dim)])
        examples.append(
            TrainingExample(
                dialog=dialog,
                turn_index=4,
                slot_vec=slot_vec,
                act_vec=act_vec,
                distance=distance,
                label=label,
            )
        )
    weights = (0.7, 2.3)
    return model, table, examples, weights


def max_relative_errors(model, table, examples, weights, eps=1e-4):
    """Per-parameter-group worst relative error of analytic vs numeric grads."""
    _, grads = loss_and_gradients(model, table, examples, weights)
    errors: dict[str, float] = {}
    for name, param in model.params.items():
        analytic = grads[name]
        worst = 0.0
        iterator = np.nditer(param, flags=["multi_index"])
        for _ in iterator:
            idx = iterator.multi_index
            original = param[idx]
            param[idx] = original + eps
            loss_plus, _ = loss_and_gradients(model, table, examples, weights)
            param[idx] = original - eps
            loss_minus, _ = loss_and_gradients(model, table, examples, weights)
            param[idx] = original
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            rel = abs(analytic[idx] - numeric) / max(abs(analytic[idx]), abs(numeric), 1e-7)
            worst = max(worst, rel)
        errors[name] = worst
    return errors
