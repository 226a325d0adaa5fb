import numpy as np
import pytest

from slotcarry.data import Dialog, Slot, Turn, demo_corpus_path, load_corpus
from slotcarry.embeddings import EmbeddingTable, LabelEmbeddings


@pytest.fixture(scope="session")
def demo_dialog() -> Dialog:
    """The bundled weather -> local search -> traffic dialog."""
    dialogs = load_corpus(demo_corpus_path())
    assert len(dialogs) == 1
    return dialogs[0]


@pytest.fixture()
def tiny_table() -> EmbeddingTable:
    """2-dim table over the tokens the hand-computed examples use."""
    return EmbeddingTable(
        dim=2,
        vectors={
            "a": np.array([1.0, 0.0]),
            "b": np.array([0.0, 1.0]),
            "san": np.array([1.0, 0.0]),
            "francisco": np.array([0.0, 1.0]),
            "boston": np.array([1.0, 0.0]),
        },
    )


def clustered_label_embeddings() -> LabelEmbeddings:
    """Toy label embeddings: city keys share one axis, venue keys another."""
    city = np.array([1.0, 0.0, 0.0, 0.0])
    venue = np.array([0.0, 1.0, 0.0, 0.0])
    temperature = np.array([0.0, 0.0, 1.0, 0.0])
    place_type = np.array([0.0, 0.0, 0.0, 1.0])
    return LabelEmbeddings(
        dim=4,
        key_vectors={
            "City": city.copy(),
            "Town": city.copy(),
            "WeatherLocation": city.copy(),
            "Place": venue.copy(),
            "Entity": venue.copy(),
            "Temperature": temperature,
            "PlaceType": place_type,
        },
        act_vectors={},
    )


@pytest.fixture()
def toy_labels() -> LabelEmbeddings:
    return clustered_label_embeddings()


def make_dialog(turn_specs, dialog_id="test") -> Dialog:
    """Build a dialog from (stream, act, tokens, slots, domain, references) tuples."""
    turns = []
    for i, spec in enumerate(turn_specs):
        stream, act, tokens, slots, domain = spec[:5]
        references = spec[5] if len(spec) > 5 else None
        if stream == "user" and references is None:
            references = frozenset()
        turns.append(
            Turn(
                stream=stream,
                act=act,
                tokens=tuple(tokens),
                slots=frozenset(Slot(k, v) for k, v in slots),
                turn_index=i,
                domain=domain,
                references=(
                    frozenset(Slot(k, v) for k, v in references)
                    if references is not None
                    else None
                ),
            )
        )
    return Dialog(dialog_id=dialog_id, turns=tuple(turns))
