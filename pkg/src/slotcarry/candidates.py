"""Candidate slot generation: context collection, schema transform, labeling.

A candidate is a context slot, possibly re-keyed into the current turn's
schema when its key embedding is close enough (dot product above beta) to a
target key embedding. Generic `Entity` slots can instead be expanded to every
key of the target schema.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .data import ENTITY_KEY, Dialog, SchemaCatalog, Slot
from .embeddings import LabelEmbeddings
from .errors import CorpusError


@dataclass(frozen=True)
class CandidateConfig:
    """Context window D (in user turns), mapping threshold and mode flags."""

    window: int = 2
    beta: float = 0.5
    include_system_candidates: bool = True
    entity_expansion: bool = True
    cosine: bool = False  # normalize key vectors before the dot product

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("context window must be >= 1")


@dataclass(frozen=True)
class CandidateSlot:
    """A context slot under consideration for carryover at the current turn.

    `distance` counts individual turns (user or system, one step each)
    between the origin turn and the current turn. `similarity` is the key
    embedding dot product that licensed the mapping; identity mappings store
    the self dot product, entity expansions store 0.
    """

    original_key: str
    mapped_key: str
    value: str
    stream: str
    distance: int
    origin_index: int
    similarity: float = 0.0
    label: int | None = None

    def __post_init__(self) -> None:
        if self.distance < 1:
            raise ValueError("candidate distance must be >= 1")


def collect_candidates(dialog: Dialog, t: int, config: CandidateConfig) -> list[CandidateSlot]:
    """Gather slots of the last D user and D system turns before turn t.

    One candidate per (slot, origin turn) pair, pre-transform; the mapped key
    equals the original key and similarity is 0 until transform_candidates runs.
    """
    if t < 0 or t >= len(dialog.turns) or not dialog.turns[t].is_user:
        raise CorpusError(f"dialog {dialog.dialog_id}: turn {t} is not a user turn")
    user_left = config.window
    system_left = config.window
    out: list[CandidateSlot] = []
    for i in range(t - 1, -1, -1):
        turn = dialog.turns[i]
        if turn.is_user:
            if user_left == 0:
                continue
            user_left -= 1
        else:
            if system_left == 0:
                continue
            system_left -= 1
            if not config.include_system_candidates:
                continue
        for slot in sorted(turn.slots):
            out.append(
                CandidateSlot(
                    original_key=slot.key,
                    mapped_key=slot.key,
                    value=slot.value,
                    stream=turn.stream,
                    distance=t - i,
                    origin_index=i,
                )
            )
        if user_left == 0 and system_left == 0:
            break
    return out


def _key_similarity(labels: LabelEmbeddings, a: np.ndarray, b: np.ndarray, cosine: bool) -> float:
    if cosine:
        na = float(np.linalg.norm(a))
        nb = float(np.linalg.norm(b))
        if na == 0.0 or nb == 0.0:
            return 0.0
        return float(np.dot(a, b) / (na * nb))
    return float(np.dot(a, b))


def transform_candidates(
    cands: Iterable[CandidateSlot],
    labels: LabelEmbeddings,
    target_schema: Iterable[str],
    config: CandidateConfig,
    stats: dict | None = None,
) -> list[CandidateSlot]:
    """Map candidates into the target schema via key-embedding similarity.

    Keeps (k, v) -> (k', v) whenever sim(k, k') > beta, plus identity pairs
    whose key already belongs to the target schema (those bypass the beta
    test). The generic Entity label is never a re-mapping target: a carried
    slot must land on a concrete schema key (Entity survives as an identity
    pair only). Pairings with a key missing from the label embeddings are
    skipped and counted under stats["skipped_pairs"].
    """
    targets = sorted(set(target_schema))
    out: list[CandidateSlot] = []
    skipped = 0
    for cand in cands:
        src = labels.key_vector(cand.original_key)
        for key in targets:
            identity = key == cand.original_key
            if key == ENTITY_KEY and not identity:
                continue
            dst = labels.key_vector(key)
            if src is None or dst is None:
                skipped += 1
                continue
            sim = _key_similarity(labels, src, dst, config.cosine)
            if identity or sim > config.beta:
                out.append(replace(cand, mapped_key=key, similarity=sim))
    if stats is not None:
        stats["skipped_pairs"] = stats.get("skipped_pairs", 0) + skipped
    return out


def expand_entity(
    cands: Iterable[CandidateSlot],
    target_schema: Iterable[str],
    config: CandidateConfig,
) -> list[CandidateSlot]:
    """Replace generic Entity candidates by one candidate per target-schema key.

    Candidates derived from the same origin slot expand exactly once; the
    expansion records similarity 0. The generic label itself is not an
    expansion target.
    """
    targets = sorted(set(target_schema) - {ENTITY_KEY})
    out: list[CandidateSlot] = []
    seen_origins: set[tuple[int, str, str]] = set()
    for cand in cands:
        if cand.original_key != ENTITY_KEY:
            out.append(cand)
            continue
        origin = (cand.origin_index, cand.original_key, cand.value)
        if origin in seen_origins:
            continue
        seen_origins.add(origin)
        for key in targets:
            out.append(replace(cand, mapped_key=key, similarity=0.0))
    return out


def label_candidates(
    cands: Iterable[CandidateSlot], references: Iterable[Slot]
) -> list[CandidateSlot]:
    """Label +1 candidates whose (mapped key, lowercased value) is referenced."""
    ref_set = {(slot.key, slot.value.lower()) for slot in references}
    return [
        replace(cand, label=1 if (cand.mapped_key, cand.value.lower()) in ref_set else -1)
        for cand in cands
    ]


def generate_candidates(
    dialog: Dialog,
    t: int,
    labels: LabelEmbeddings,
    catalog: SchemaCatalog,
    config: CandidateConfig,
    stats: dict | None = None,
) -> list[CandidateSlot]:
    """Full pre-scoring pipeline: collect -> transform -> expand.

    The target schema is the catalog entry for the current turn's domain.
    Candidates whose mapped key has no label embedding cannot be encoded by
    the model and are dropped (counted under stats["unscorable"]).
    """
    target_schema = catalog.keys_for(dialog.turns[t].domain)
    cands = collect_candidates(dialog, t, config)
    cands = transform_candidates(cands, labels, target_schema, config, stats=stats)
    if config.entity_expansion:
        cands = expand_entity(cands, target_schema, config)
    kept = [c for c in cands if labels.key_vector(c.mapped_key) is not None]
    if stats is not None:
        stats["unscorable"] = stats.get("unscorable", 0) + (len(cands) - len(kept))
    return kept
