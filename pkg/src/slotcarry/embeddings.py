"""Word embedding table and corpus-derived label embeddings.

The label embedding of a slot key is the mean of the embeddings of all
slot values observed under that key; the label embedding of a dialog act
is the mean of the embeddings of all utterances tagged with that act.
Multi-word values and utterances are themselves embedded by averaging
their token vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import Dialog, tokenize
from .errors import EmbeddingError

KEY_PREFIX = "key:"
ACT_PREFIX = "act:"


@dataclass
class EmbeddingTable:
    """Token -> float64 vector map with a total OOV policy.

    Immutable after construction; lookups never fail.
    """

    dim: int
    vectors: dict[str, np.ndarray]
    oov_policy: str = "zero"  # "zero" | "mean"
    duplicates: int = 0
    _oov: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.oov_policy not in ("zero", "mean"):
            raise EmbeddingError(f"unknown OOV policy {self.oov_policy!r}")
        if self.oov_policy == "mean" and self.vectors:
            stacked = np.stack([self.vectors[t] for t in sorted(self.vectors)])
            oov = stacked.mean(axis=0)
        else:
            oov = np.zeros(self.dim)
        object.__setattr__(self, "_oov", oov)

    def lookup(self, token: str) -> np.ndarray:
        vec = self.vectors.get(token)
        return self._oov if vec is None else vec

    def __contains__(self, token: str) -> bool:
        return token in self.vectors


def load_embeddings(path: str | Path, oov_policy: str = "zero") -> EmbeddingTable:
    """Load a whitespace-delimited text embedding file (token x1 ... xE).

    Duplicate tokens: last occurrence wins, counted in `duplicates`.
    """
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    duplicates = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if not values:
                raise EmbeddingError(f"{path}:{lineno}: no vector components")
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingError(f"{path}:{lineno}: bad component: {exc}") from exc
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: dimension {vec.shape[0]} != {dim} seen earlier"
                )
            if token in vectors:
                duplicates += 1
            vectors[token] = vec
    if dim is None:
        raise EmbeddingError(f"{path}: empty embedding file")
    return EmbeddingTable(dim=dim, vectors=vectors, oov_policy=oov_policy, duplicates=duplicates)


def save_embedding_table(table: EmbeddingTable, path: str | Path) -> None:
    """Write the table back to the whitespace-delimited text format."""
    with open(path, "w", encoding="utf-8") as fh:
        for token in sorted(table.vectors):
            vec = " ".join(repr(float(x)) for x in table.vectors[token])
            fh.write(f"{token} {vec}\n")


def embed_phrase(table: EmbeddingTable, tokens: Sequence[str]) -> np.ndarray:
    """Arithmetic mean of the token vectors; errors on an empty token list."""
    if len(tokens) == 0:
        raise EmbeddingError("cannot embed an empty token list")
    total = np.zeros(table.dim)
    for tok in tokens:
        total = total + table.lookup(tok)
    return total / len(tokens)


@dataclass
class LabelEmbeddings:
    """Mean-pooled vectors for slot keys and dialog acts, with observation counts."""

    dim: int
    key_vectors: dict[str, np.ndarray]
    act_vectors: dict[str, np.ndarray]
    key_counts: dict[str, int] = field(default_factory=dict)
    act_counts: dict[str, int] = field(default_factory=dict)

    def key_vector(self, key: str) -> np.ndarray | None:
        return self.key_vectors.get(key)

    def act_vector(self, act: str) -> np.ndarray | None:
        return self.act_vectors.get(act)


def build_label_embeddings(table: EmbeddingTable, dialogs: Iterable[Dialog]) -> LabelEmbeddings:
    """Average observed value embeddings per key and utterance embeddings per act.

    Observations are accumulated with multiplicity and summed in a canonical
    sorted order, so the result is bit-identical under any permutation of the
    input dialogs. Key observations come from turn slots and from user-turn
    references (both are gold slots of their turn).
    """
    key_obs: dict[str, list[str]] = {}
    act_obs: dict[str, list[tuple[str, ...]]] = {}
    for dialog in dialogs:
        for turn in dialog.turns:
            observed = set(turn.slots)
            if turn.references:
                observed |= set(turn.references)
            for slot in observed:
                key_obs.setdefault(slot.key, []).append(slot.value)
            if turn.act:
                act_obs.setdefault(turn.act, []).append(turn.tokens)

    key_vectors: dict[str, np.ndarray] = {}
    key_counts: dict[str, int] = {}
    for key, values in key_obs.items():
        vecs = [embed_phrase(table, tokenize(v)) for v in sorted(values)]
        key_vectors[key] = np.mean(np.stack(vecs), axis=0)
        key_counts[key] = len(values)

    act_vectors: dict[str, np.ndarray] = {}
    act_counts: dict[str, int] = {}
    for act, utterances in act_obs.items():
        vecs = [embed_phrase(table, toks) for toks in sorted(utterances)]
        act_vectors[act] = np.mean(np.stack(vecs), axis=0)
        act_counts[act] = len(utterances)

    return LabelEmbeddings(
        dim=table.dim,
        key_vectors=key_vectors,
        act_vectors=act_vectors,
        key_counts=key_counts,
        act_counts=act_counts,
    )


def save_label_embeddings(labels: LabelEmbeddings, path: str | Path) -> None:
    """Persist as embedding-format text; keys prefixed `key:`, acts `act:`."""
    with open(path, "w", encoding="utf-8") as fh:
        for name in sorted(labels.key_vectors):
            if name.split() != [name]:
                raise EmbeddingError(f"slot key {name!r} contains whitespace")
            vec = " ".join(repr(float(x)) for x in labels.key_vectors[name])
            fh.write(f"{KEY_PREFIX}{name} {vec}\n")
        for name in sorted(labels.act_vectors):
            if name.split() != [name]:
                raise EmbeddingError(f"act {name!r} contains whitespace")
            vec = " ".join(repr(float(x)) for x in labels.act_vectors[name])
            fh.write(f"{ACT_PREFIX}{name} {vec}\n")


def load_label_embeddings(path: str | Path) -> LabelEmbeddings:
    """Inverse of save_label_embeddings; observation counts load as 1."""
    table = load_embeddings(path)
    key_vectors: dict[str, np.ndarray] = {}
    act_vectors: dict[str, np.ndarray] = {}
    for token, vec in table.vectors.items():
        if token.startswith(KEY_PREFIX):
            key_vectors[token[len(KEY_PREFIX):]] = vec
        elif token.startswith(ACT_PREFIX):
            act_vectors[token[len(ACT_PREFIX):]] = vec
        else:
            raise EmbeddingError(f"{path}: entry {token!r} lacks a key:/act: prefix")
    return LabelEmbeddings(
        dim=table.dim,
        key_vectors=key_vectors,
        act_vectors=act_vectors,
        key_counts={k: 1 for k in key_vectors},
        act_counts={a: 1 for a in act_vectors},
    )
