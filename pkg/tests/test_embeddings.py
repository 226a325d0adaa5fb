import random

import numpy as np
import pytest

from slotcarry.embeddings import (
    EmbeddingTable,
    build_label_embeddings,
    embed_phrase,
    load_embeddings,
    load_label_embeddings,
    save_label_embeddings,
)
from slotcarry.errors import EmbeddingError

from conftest import make_dialog


def _write(tmp_path, text, name="emb.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_two_line_file(tmp_path):
    table = load_embeddings(_write(tmp_path, "a 1 0\nb 0 1\n"))
    assert table.dim == 2
    assert np.array_equal(table.lookup("a"), [1.0, 0.0])


def test_oov_zero_policy(tmp_path):
    table = load_embeddings(_write(tmp_path, "a 1 0\nb 0 1\n"), oov_policy="zero")
    assert np.array_equal(table.lookup("missing"), [0.0, 0.0])


def test_oov_mean_policy(tmp_path):
    table = load_embeddings(_write(tmp_path, "a 1 0\nb 0 1\n"), oov_policy="mean")
    # hand-computed mean of [1,0] and [0,1]
    assert np.allclose(table.lookup("missing"), [0.5, 0.5])


def test_inconsistent_dimension_names_line(tmp_path):
    path = _write(tmp_path, "a 1 0\nb 0 1 2\n")
    with pytest.raises(EmbeddingError, match=":2:"):
        load_embeddings(path)


def test_duplicate_token_last_wins(tmp_path):
    table = load_embeddings(_write(tmp_path, "a 1 0\na 0 1\n"))
    assert table.duplicates == 1
    assert np.array_equal(table.lookup("a"), [0.0, 1.0])


def test_embed_phrase_examples(tiny_table):
    assert np.allclose(embed_phrase(tiny_table, ["san", "francisco"]), [0.5, 0.5])
    assert np.array_equal(embed_phrase(tiny_table, ["a"]), [1.0, 0.0])
    # hand-computed mean of a, a, b
    assert np.allclose(embed_phrase(tiny_table, ["a", "a", "b"]), [2 / 3, 1 / 3])


def test_embed_phrase_empty_errors(tiny_table):
    with pytest.raises(EmbeddingError):
        embed_phrase(tiny_table, [])


def test_embed_phrase_repetition_invariance(tiny_table):
    single = embed_phrase(tiny_table, ["b"])
    for n in (2, 3, 5, 7):
        assert np.allclose(embed_phrase(tiny_table, ["b"] * n), single, rtol=1e-12)


def test_label_embeddings_key_mean(tiny_table):
    dialog = make_dialog(
        [
            ("user", "ask", ["a"], [("City", "san francisco")], "d"),
            ("system", "ans", ["b"], [("City", "boston")], "d"),
            ("user", "ask", ["a"], [], "d"),
        ]
    )
    labels = build_label_embeddings(tiny_table, [dialog])
    # hand-computed: mean of [0.5, 0.5] and [1, 0]
    assert np.allclose(labels.key_vectors["City"], [0.75, 0.25])
    assert labels.key_counts["City"] == 2


def test_label_embeddings_single_observation(tiny_table):
    dialog = make_dialog([("user", "ask", ["a"], [("K", "boston")], "d")])
    labels = build_label_embeddings(tiny_table, [dialog])
    assert np.array_equal(labels.key_vectors["K"], embed_phrase(tiny_table, ["boston"]))


def test_label_embeddings_act_mean(tiny_table):
    dialog = make_dialog(
        [
            ("user", "ask", ["a"], [], "d"),
            ("system", "ans", ["b"], [], "d"),
            ("user", "ask", ["b"], [], "d"),
        ]
    )
    labels = build_label_embeddings(tiny_table, [dialog])
    assert np.allclose(labels.act_vectors["ask"], [0.5, 0.5])
    assert labels.act_counts["ask"] == 2


def test_label_embeddings_permutation_bit_identical(tiny_table):
    rng = random.Random(5)
    dialogs = []
    values = ["san francisco", "boston", "a b", "b a", "a a b"]
    for i in range(12):
        dialogs.append(
            make_dialog(
                [
                    (
                        "user",
                        rng.choice(["ask", "tell"]),
                        [rng.choice("ab") for _ in range(rng.randint(1, 4))],
                        [("City", rng.choice(values))],
                        "d",
                    )
                ],
                dialog_id=f"d{i}",
            )
        )
    base = build_label_embeddings(tiny_table, dialogs)
    for _ in range(5):
        shuffled = dialogs[:]
        rng.shuffle(shuffled)
        other = build_label_embeddings(tiny_table, shuffled)
        for key, vec in base.key_vectors.items():
            assert np.array_equal(vec, other.key_vectors[key])
        for act, vec in base.act_vectors.items():
            assert np.array_equal(vec, other.act_vectors[act])


def test_label_embedding_infinity_norm_convexity():
    rng = np.random.default_rng(3)
    tokens = {f"t{i}": rng.normal(size=4) for i in range(20)}
    table = EmbeddingTable(dim=4, vectors=tokens)
    token_names = sorted(tokens)
    dialogs = []
    py_rng = random.Random(9)
    for i in range(10):
        value = " ".join(py_rng.sample(token_names, py_rng.randint(1, 3)))
        dialogs.append(
            make_dialog([("user", "a", ["t0"], [("K", value)], "d")], dialog_id=f"d{i}")
        )
    labels = build_label_embeddings(table, dialogs)
    contributing = {
        tok
        for dialog in dialogs
        for slot in dialog.turns[0].slots
        for tok in slot.value.split()
    }
    bound = max(np.max(np.abs(tokens[t])) for t in contributing)
    assert np.max(np.abs(labels.key_vectors["K"])) <= bound + 1e-12


def test_label_embeddings_round_trip(tmp_path, tiny_table):
    dialog = make_dialog(
        [
            ("user", "ask", ["a", "b"], [("City", "san francisco")], "d"),
            ("system", "ans", ["b"], [("Temperature", "boston")], "d"),
            ("user", "more", ["a"], [], "d"),
        ]
    )
    labels = build_label_embeddings(tiny_table, [dialog])
    path = tmp_path / "labels.txt"
    save_label_embeddings(labels, path)
    loaded = load_label_embeddings(path)
    assert set(loaded.key_vectors) == set(labels.key_vectors)
    assert set(loaded.act_vectors) == set(labels.act_vectors)
    for key, vec in labels.key_vectors.items():
        assert np.array_equal(loaded.key_vectors[key], vec)
