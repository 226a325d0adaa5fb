import math

import numpy as np
import pytest

from slotcarry.candidates import (
    CandidateConfig,
    CandidateSlot,
    collect_candidates,
    expand_entity,
    label_candidates,
    transform_candidates,
)
from slotcarry.data import Slot
from slotcarry.embeddings import LabelEmbeddings
from slotcarry.errors import CorpusError

from conftest import make_dialog


def brute_force_transform(cands, labels, target_schema, beta):
    """Independent double loop with plain-python dot products."""
    out = []
    for cand in cands:
        src = labels.key_vectors.get(cand.original_key)
        for key in sorted(set(target_schema)):
            identity = key == cand.original_key
            if key == "Entity" and not identity:
                continue
            dst = labels.key_vectors.get(key)
            if src is None or dst is None:
                continue
            sim = sum(float(a) * float(b) for a, b in zip(src, dst))
            if identity or sim > beta:
                out.append((cand.original_key, key, cand.value, cand.distance, sim))
    return out


def as_tuples(cands):
    return [(c.original_key, c.mapped_key, c.value, c.distance, c.similarity) for c in cands]


def test_collect_at_followup_turn(demo_dialog):
    cands = collect_candidates(demo_dialog, 2, CandidateConfig(window=2))
    pairs = {(c.original_key, c.value, c.distance, c.stream) for c in cands}
    assert ("WeatherLocation", "san francisco", 2, "user") in pairs
    assert ("Temperature", "42F", 1, "system") in pairs
    assert len(cands) == 2


def test_collect_first_turn_empty(demo_dialog):
    assert collect_candidates(demo_dialog, 0, CandidateConfig()) == []


def test_collect_excluding_system_candidates(demo_dialog):
    cands = collect_candidates(
        demo_dialog, 4, CandidateConfig(window=2, include_system_candidates=False)
    )
    keys = {c.original_key for c in cands}
    assert "Entity" not in keys and "Temperature" not in keys
    assert keys == {"WeatherLocation", "PlaceType"}


def test_collect_window_distances(demo_dialog):
    cands = collect_candidates(demo_dialog, 4, CandidateConfig(window=2))
    by_key = {c.original_key: c.distance for c in cands}
    assert by_key == {"Entity": 1, "PlaceType": 2, "Temperature": 3, "WeatherLocation": 4}


def test_collect_rejects_system_turn(demo_dialog):
    with pytest.raises(CorpusError):
        collect_candidates(demo_dialog, 1, CandidateConfig())


def test_transform_keeps_close_keys():
    labels = LabelEmbeddings(
        dim=2,
        key_vectors={"City": np.array([0.75, 0.25]), "Town": np.array([0.8, 0.2])},
        act_vectors={},
    )
    cand = CandidateSlot("City", "City", "boston", "user", 1, 0)
    out = transform_candidates([cand], labels, {"Town"}, CandidateConfig(beta=0.6))
    assert len(out) == 1
    # hand-computed: 0.75*0.8 + 0.25*0.2 = 0.65
    assert math.isclose(out[0].similarity, 0.65)
    assert out[0].mapped_key == "Town"


def test_transform_infinite_beta_identity_only(toy_labels):
    cands = [
        CandidateSlot("City", "City", "x", "user", 1, 0),
        CandidateSlot("WeatherLocation", "WeatherLocation", "y", "user", 2, 0),
    ]
    out = transform_candidates(
        cands, toy_labels, {"City", "Town"}, CandidateConfig(beta=math.inf)
    )
    assert as_tuples(out) == [("City", "City", "x", 1, 1.0)]


def test_transform_skips_missing_keys(toy_labels):
    cands = [CandidateSlot("Unknown", "Unknown", "x", "user", 1, 0)]
    stats = {}
    out = transform_candidates(cands, toy_labels, {"City"}, CandidateConfig(), stats=stats)
    assert out == []
    assert stats["skipped_pairs"] == 1


def test_transform_demo_mapping(demo_dialog, toy_labels):
    cands = collect_candidates(demo_dialog, 2, CandidateConfig(window=2))
    out = transform_candidates(
        cands, toy_labels, {"PlaceType", "Entity", "City"}, CandidateConfig(beta=0.5)
    )
    assert {(c.mapped_key, c.value) for c in out} == {("City", "san francisco")}


def test_expand_entity(toy_labels):
    cand = CandidateSlot("Entity", "Entity", "la taqueria", "system", 1, 3)
    out = expand_entity([cand], {"Place", "Town"}, CandidateConfig())
    assert {(c.mapped_key, c.value, c.similarity) for c in out} == {
        ("Place", "la taqueria", 0.0),
        ("Town", "la taqueria", 0.0),
    }


def test_expand_entity_noop_and_singleton():
    plain = CandidateSlot("City", "City", "x", "user", 1, 0)
    assert expand_entity([plain], {"A", "B"}, CandidateConfig()) == [plain]
    ent = CandidateSlot("Entity", "Entity", "x", "system", 1, 0)
    out = expand_entity([ent], {"OnlyKey"}, CandidateConfig())
    assert [(c.mapped_key, c.value) for c in out] == [("OnlyKey", "x")]


def test_expand_entity_dedups_transform_copies():
    # the transform may emit several mapped copies of one Entity origin slot
    copies = [
        CandidateSlot("Entity", "Place", "x", "system", 1, 3, similarity=0.9),
        CandidateSlot("Entity", "Spot", "x", "system", 1, 3, similarity=0.8),
    ]
    out = expand_entity(copies, {"Place", "Town"}, CandidateConfig())
    assert sorted((c.mapped_key, c.value) for c in out) == [("Place", "x"), ("Town", "x")]


def test_label_candidates(demo_dialog):
    cands = [
        CandidateSlot("WeatherLocation", "City", "san francisco", "user", 2, 0),
        CandidateSlot("Temperature", "Temperature", "42F", "system", 1, 1),
    ]
    refs = demo_dialog.turns[2].references
    labeled = label_candidates(cands, refs)
    assert [c.label for c in labeled] == [1, -1]


def test_label_lowercases_values():
    cands = [CandidateSlot("K", "K", "Some VALUE", "user", 1, 0)]
    labeled = label_candidates(cands, {Slot("K", "some value")})
    assert labeled[0].label == 1


def test_label_empty_references_all_negative():
    cands = [CandidateSlot("K", "K", "v", "user", 1, 0)]
    assert label_candidates(cands, frozenset())[0].label == -1


def _random_instance(rng):
    n_keys = rng.integers(2, 10)
    keys = [f"k{i}" for i in range(n_keys)]
    labels = LabelEmbeddings(
        dim=3,
        key_vectors={k: rng.normal(size=3) for k in keys},
        act_vectors={},
    )
    cands = [
        CandidateSlot(
            original_key=str(rng.choice(keys)),
            mapped_key="",
            value=f"v{i}",
            stream="user",
            distance=int(rng.integers(1, 5)),
            origin_index=0,
        )
        for i in range(rng.integers(1, 6))
    ]
    cands = [CandidateSlot(c.original_key, c.original_key, c.value, c.stream, c.distance, 0)
             for c in cands]
    target = set(rng.choice(keys, size=rng.integers(1, n_keys), replace=False))
    return cands, labels, target


def test_transform_matches_brute_force_oracle():
    rng = np.random.default_rng(17)
    for _ in range(50):
        cands, labels, target = _random_instance(rng)
        beta = float(rng.normal())
        got = transform_candidates(cands, labels, target, CandidateConfig(beta=beta))
        expected = brute_force_transform(cands, labels, target, beta)
        got_t = as_tuples(got)
        assert len(got_t) == len(expected)
        for (ok, mk, v, d, sim), (ok2, mk2, v2, d2, sim2) in zip(
            sorted(got_t), sorted(expected)
        ):
            assert (ok, mk, v, d) == (ok2, mk2, v2, d2)
            assert math.isclose(sim, sim2, rel_tol=1e-12, abs_tol=1e-12)


def test_raising_beta_never_adds_candidates():
    rng = np.random.default_rng(23)
    for _ in range(20):
        cands, labels, target = _random_instance(rng)
        previous = None
        for beta in (-2.0, -0.5, 0.0, 0.5, 2.0):
            out = {
                (c.original_key, c.mapped_key, c.value)
                for c in transform_candidates(cands, labels, target, CandidateConfig(beta=beta))
            }
            if previous is not None:
                assert out <= previous
            previous = out


def test_pipeline_is_pure(demo_dialog, toy_labels):
    config = CandidateConfig(window=2, beta=0.5)
    runs = []
    for _ in range(2):
        cands = collect_candidates(demo_dialog, 4, config)
        cands = transform_candidates(cands, toy_labels, {"Place", "Town"}, config)
        cands = expand_entity(cands, {"Place", "Town"}, config)
        cands = label_candidates(cands, demo_dialog.turns[4].references)
        runs.append([(c.original_key, c.mapped_key, c.value, c.label) for c in cands])
    assert runs[0] == runs[1]
