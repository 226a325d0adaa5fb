"""Micro-averaged precision/recall/F1 scoring, threshold sweeps, breakdowns."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from .candidates import CandidateConfig, generate_candidates
from .data import Dialog, SchemaCatalog, Slot
from .embeddings import EmbeddingTable, LabelEmbeddings
from .errors import ConfigError
from .model import CarryoverModel, encode_act, encode_slot, encode_streams, score_candidate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalReport:
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    f1: float
    tau: float | None = None
    beta: float | None = None

    @classmethod
    def from_counts(
        cls, tp: int, fp: int, fn: int, tau: float | None = None, beta: float | None = None
    ) -> "EvalReport":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(tp, fp, fn, precision, recall, f1, tau=tau, beta=beta)

    def to_dict(self) -> dict:
        return {
            "true_positives": self.true_positives,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tau": self.tau,
            "beta": self.beta,
        }


def _normalize(slots: Sequence[Slot] | set[Slot] | frozenset[Slot]) -> set[tuple[str, str]]:
    return {(slot.key, slot.value.lower()) for slot in slots}


def score(
    hyps: Sequence[set[Slot] | frozenset[Slot]],
    refs: Sequence[set[Slot] | frozenset[Slot]],
    tau: float | None = None,
    beta: float | None = None,
) -> EvalReport:
    """Pool per-turn counts; slot equality is (key, lowercased value)."""
    if len(hyps) != len(refs):
        raise ConfigError(f"misaligned turn lists: {len(hyps)} hypotheses vs {len(refs)} references")
    tp = fp = fn = 0
    for hyp, ref in zip(hyps, refs):
        h = _normalize(hyp)
        r = _normalize(ref)
        tp += len(h & r)
        fp += len(h - r)
        fn += len(r - h)
    return EvalReport.from_counts(tp, fp, fn, tau=tau, beta=beta)


def user_turns(dialogs: Sequence[Dialog]) -> list[tuple[Dialog, int]]:
    """Canonical (dialog, user-turn index) enumeration used to align turn lists."""
    return [(d, t) for d in dialogs for t in d.user_turn_indices()]


def reference_sets(dialogs: Sequence[Dialog]) -> list[frozenset[Slot]]:
    return [d.turns[t].references or frozenset() for d, t in user_turns(dialogs)]


def predict_corpus(
    predict_fn: Callable[[Dialog, int], set[Slot]], dialogs: Sequence[Dialog]
) -> list[set[Slot]]:
    """Apply a per-turn predictor over the canonical turn enumeration."""
    return [predict_fn(d, t) for d, t in user_turns(dialogs)]


def sweep(
    model: CarryoverModel,
    labels: LabelEmbeddings,
    table: EmbeddingTable,
    dialogs: Sequence[Dialog],
    catalog: SchemaCatalog,
    cand_config: CandidateConfig,
    taus: Sequence[float],
    betas: Sequence[float],
) -> tuple[float, float, EvalReport, list[EvalReport]]:
    """Grid search over decision and mapping thresholds on a dev corpus.

    Candidate scores are computed once per beta and re-thresholded per tau.
    Ties are broken towards the smaller tau, then the smaller beta.
    """
    if not taus or not betas:
        raise ConfigError("sweep grid must contain at least one tau and one beta")
    refs = reference_sets(dialogs)
    turns = user_turns(dialogs)
    rows: list[EvalReport] = []
    best: tuple[float, float, EvalReport] | None = None
    for beta in sorted(set(betas)):
        config = replace(cand_config, beta=beta)
        scored_turns: list[list[tuple[float, str, str]]] = []
        for dialog, t in turns:
            cands = generate_candidates(dialog, t, labels, catalog, config)
            scored: list[tuple[float, str, str]] = []
            if cands:
                encoded = encode_streams(model, table, dialog, t)
                act_vec = encode_act(labels, dialog.turns[t].act, model.config.act_dim)
                vec_cache: dict[tuple[str, str], object] = {}
                for cand in cands:
                    key = (cand.mapped_key, cand.value)
                    slot_vec = vec_cache.get(key)
                    if slot_vec is None:
                        slot_vec = encode_slot(labels, table, cand)
                        vec_cache[key] = slot_vec
                    probs, _ = score_candidate(
                        model, encoded, act_vec, slot_vec, cand.distance
                    )
                    scored.append((float(probs[1]), cand.mapped_key, cand.value))
            scored_turns.append(scored)
        for tau in sorted(set(taus)):
            hyps: list[set[Slot]] = []
            for scored in scored_turns:
                carried: dict[tuple[str, str], Slot] = {}
                for prob, key, value in scored:
                    if prob > tau:
                        carried.setdefault((key, value.lower()), Slot(key, value))
                hyps.append(set(carried.values()))
            report = score(hyps, refs, tau=tau, beta=beta)
            rows.append(report)
            if best is None or report.f1 > best[2].f1:
                best = (tau, beta, report)
            elif report.f1 == best[2].f1 and (tau, beta) < (best[0], best[1]):
                best = (tau, beta, report)
    assert best is not None
    return best[0], best[1], best[2], rows


@dataclass(frozen=True)
class BreakdownResult:
    """Within/cross-domain split; `within`/`cross` are None when domains are missing."""

    combined: EvalReport
    within: EvalReport | None
    cross: EvalReport | None
    warning: str | None = None


def _origin_domain(dialog: Dialog, t: int, key: str, value: str) -> str | None:
    """Domain of the nearest context turn containing the slot.

    Exact (key, value) containment wins over value-only containment; falls
    back to the current turn's domain when nothing in context matches.
    """
    value = value.lower()
    value_only: str | None = None
    for i in range(t - 1, -1, -1):
        turn = dialog.turns[i]
        for slot in turn.slots:
            if slot.value.lower() != value:
                continue
            if slot.key == key:
                return turn.domain
            if value_only is None:
                value_only = turn.domain
    if value_only is not None:
        return value_only
    return dialog.turns[t].domain


def domain_breakdown(
    dialogs: Sequence[Dialog],
    hyps: Sequence[set[Slot] | frozenset[Slot]],
    refs: Sequence[set[Slot] | frozenset[Slot]],
) -> BreakdownResult:
    """Attribute each scored slot to the within- or cross-domain bucket.

    A slot is cross-domain when its best-matching origin turn's domain
    differs from the current turn's. Missing domain annotations collapse the
    result to the combined report with a warning.
    """
    turns = user_turns(dialogs)
    if len(hyps) != len(turns) or len(refs) != len(turns):
        raise ConfigError("hypothesis/reference lists misaligned with the corpus turns")
    combined = score(hyps, refs)
    if any(turn.domain is None for dialog, _ in turns for turn in dialog.turns):
        warning = "missing domain annotations; returning the combined report only"
        logger.warning(warning)
        return BreakdownResult(combined=combined, within=None, cross=None, warning=warning)

    counts = {"within": [0, 0, 0], "cross": [0, 0, 0]}  # [tp, fp, fn]
    for (dialog, t), hyp, ref in zip(turns, hyps, refs):
        current_domain = dialog.turns[t].domain
        h = _normalize(hyp)
        r = _normalize(ref)
        for bucket_idx, slots in ((0, h & r), (1, h - r), (2, r - h)):
            for key, value in sorted(slots):
                origin = _origin_domain(dialog, t, key, value)
                bucket = "cross" if origin != current_domain else "within"
                counts[bucket][bucket_idx] += 1
    return BreakdownResult(
        combined=combined,
        within=EvalReport.from_counts(*counts["within"]),
        cross=EvalReport.from_counts(*counts["cross"]),
    )
