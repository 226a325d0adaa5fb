"""DSTC2 session converter.

Each session directory holds a `log.json` (system side, with the user's ASR
and SLU hypotheses attached to every turn) and a `label.json` (transcriptions
and cumulative goal labels). Only the 1-best ASR and 1-best SLU hypotheses
are used. Conversion drops the leading system greeting so dialogs are
user-initiated, empties system slot sets, and derives carryover references
as the goal slots satisfied from context: goal slots at a user turn that the
turn itself does not state but an earlier user turn did.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .data import Dialog, Slot, Turn, tokenize, write_corpus
from .errors import CorpusError

logger = logging.getLogger(__name__)

DSTC2_DOMAIN = "restaurant"
NO_SPEECH_TOKEN = "<nospeech>"
REFERENCE_MAPPING = (
    "references = goal slots present at the turn, absent from the turn's own "
    "1-best SLU, and informed by an earlier user turn"
)


@dataclass
class ConversionSummary:
    dialogs_written: int = 0
    sessions_skipped: int = 0
    system_turns_dropped: int = 0
    reference_mapping: str = REFERENCE_MAPPING
    skipped_sessions: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dialogs_written": self.dialogs_written,
            "sessions_skipped": self.sessions_skipped,
            "system_turns_dropped": self.system_turns_dropped,
            "reference_mapping": self.reference_mapping,
            "skipped_sessions": self.skipped_sessions,
        }


def _tokens_or_placeholder(text: str) -> tuple[str, ...]:
    tokens = tokenize(text)
    return tokens if tokens else (NO_SPEECH_TOKEN,)


def _slu_slots(slu_acts: list[dict], slot_acts: tuple[str, ...]) -> frozenset[Slot]:
    slots = set()
    for act in slu_acts:
        if act.get("act") not in slot_acts:
            continue
        for pair in act.get("slots", []):
            if len(pair) != 2:
                continue
            key, value = str(pair[0]), str(pair[1])
            if key and value and key != "this":
                slots.add(Slot(key, value))
    return frozenset(slots)


def _best_slu(user_input: dict) -> list[dict]:
    hyps = user_input.get("live", {}).get("slu-hyps") or user_input.get("batch", {}).get(
        "slu-hyps", []
    )
    if not hyps:
        return []
    return hyps[0].get("slu-hyp", [])


def _best_asr(user_input: dict) -> str:
    hyps = user_input.get("live", {}).get("asr-hyps") or user_input.get("batch", {}).get(
        "asr-hyps", []
    )
    if not hyps:
        return ""
    return str(hyps[0].get("asr-hyp", ""))


def _acts_name(acts: list[dict]) -> str:
    names = []
    for act in acts:
        name = act.get("act")
        if name and name not in names:
            names.append(name)
    return "+".join(names) if names else "null"


def convert_session(
    log_data: dict, label_data: dict, dialog_id: str, slot_acts: tuple[str, ...]
) -> tuple[Dialog, int]:
    """Convert one session; returns the dialog and the dropped-turn count.

    Raises CorpusError when the session has no usable user turns or a
    required field is missing.
    """
    log_turns = log_data.get("turns", [])
    label_turns = label_data.get("turns", [])
    if not log_turns:
        raise CorpusError(f"session {dialog_id}: no turns")
    if len(label_turns) < len(log_turns):
        raise CorpusError(f"session {dialog_id}: labels cover fewer turns than the log")

    turns: list[Turn] = []
    informed_so_far: set[tuple[str, str]] = set()
    index = 0
    dropped = 0
    for i, (log_turn, label_turn) in enumerate(zip(log_turns, label_turns)):
        output = log_turn.get("output", {})
        if i == 0:
            dropped += 1  # dialogs are user-initiated: drop the leading system turn
        else:
            turns.append(
                Turn(
                    stream="system",
                    act=_acts_name(output.get("dialog-acts", [])),
                    tokens=_tokens_or_placeholder(str(output.get("transcript", ""))),
                    slots=frozenset(),  # system turns never produce candidates
                    turn_index=index,
                    domain=DSTC2_DOMAIN,
                )
            )
            index += 1

        user_input = log_turn.get("input")
        if user_input is None:
            raise CorpusError(f"session {dialog_id}: turn {i} has no user input")
        slu_acts = _best_slu(user_input)
        slots = _slu_slots(slu_acts, slot_acts)
        current = {(s.key, s.value.lower()) for s in slots}
        goal = {
            (str(k), str(v)) for k, v in (label_turn.get("goal-labels") or {}).items()
        }
        references = frozenset(
            Slot(k, v)
            for k, v in goal
            if (k, v.lower()) not in current and (k, v.lower()) in informed_so_far
        )
        turns.append(
            Turn(
                stream="user",
                act=_acts_name(slu_acts),
                tokens=_tokens_or_placeholder(_best_asr(user_input)),
                slots=slots,
                turn_index=index,
                domain=DSTC2_DOMAIN,
                references=references,
            )
        )
        index += 1
        informed_so_far |= current

    if not any(t.is_user for t in turns):
        raise CorpusError(f"session {dialog_id}: no user turns")
    return Dialog(dialog_id=dialog_id, turns=tuple(turns)), dropped


def iter_sessions(root: str | Path) -> Iterator[tuple[str, Path, Path]]:
    """Yield (session id, log.json path, label.json path) under the root."""
    root = Path(root)
    for log_path in sorted(root.rglob("log.json")):
        label_path = log_path.with_name("label.json")
        session_id = str(log_path.parent.relative_to(root))
        yield session_id, log_path, label_path


def convert_dstc2(
    dstc2_dir: str | Path,
    output: str | Path,
    slot_acts: tuple[str, ...] = ("inform",),
) -> ConversionSummary:
    """Convert every session under `dstc2_dir` into a native-JSONL corpus.

    Sessions with missing or unusable fields are skipped and counted.
    """
    summary = ConversionSummary()
    dialogs: list[Dialog] = []
    found = False
    for session_id, log_path, label_path in iter_sessions(dstc2_dir):
        found = True
        try:
            with open(log_path, "r", encoding="utf-8") as fh:
                log_data = json.load(fh)
            with open(label_path, "r", encoding="utf-8") as fh:
                label_data = json.load(fh)
            dialog, dropped = convert_session(
                log_data, label_data, session_id, slot_acts
            )
        except (OSError, json.JSONDecodeError, CorpusError, KeyError) as exc:
            summary.sessions_skipped += 1
            summary.skipped_sessions.append(session_id)
            logger.warning("skipping session %s: %s", session_id, exc)
            continue
        dialogs.append(dialog)
        summary.system_turns_dropped += dropped
    if not found:
        raise CorpusError(f"no log.json files found under {dstc2_dir}")
    write_corpus(dialogs, output)
    summary.dialogs_written = len(dialogs)
    logger.info("reference mapping: %s", summary.reference_mapping)
    return summary
