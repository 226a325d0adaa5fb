"""Dialog data model and native corpus IO.

A corpus is a JSONL file with one dialog per line:

    {"dialog_id": "...",
     "turns": [{"stream": "user"|"system", "domain": "...", "act": "...",
                "tokens": [...], "slots": [{"key","value"}],
                "references": [{"key","value}]   # user turns only
               }, ...]}

Dialogs are user-initiated and turns strictly alternate user/system.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Literal

from .errors import CorpusError

Stream = Literal["user", "system"]

ENTITY_KEY = "Entity"


@dataclass(frozen=True, order=True)
class Slot:
    """A key-value pair as produced by language understanding."""

    key: str
    value: str

    def __post_init__(self) -> None:
        if not self.key:
            raise CorpusError("slot key must be non-empty")
        if not self.value or not self.value.split():
            raise CorpusError(f"slot value for key {self.key!r} must tokenize to >= 1 token")


@dataclass(frozen=True)
class Turn:
    """A single user or system turn: act, slot set and token sequence."""

    stream: Stream
    act: str
    tokens: tuple[str, ...]
    slots: frozenset[Slot]
    turn_index: int
    domain: str | None = None
    references: frozenset[Slot] | None = None

    def __post_init__(self) -> None:
        if len(self.tokens) < 1:
            raise CorpusError(f"turn {self.turn_index} has an empty token sequence")
        if self.stream == "system" and self.references is not None:
            raise CorpusError(f"system turn {self.turn_index} carries references")

    @property
    def is_user(self) -> bool:
        return self.stream == "user"


@dataclass(frozen=True)
class Dialog:
    """An ordered turn sequence with gold carryover references on user turns."""

    dialog_id: str
    turns: tuple[Turn, ...]

    def __post_init__(self) -> None:
        for i, turn in enumerate(self.turns):
            if turn.turn_index != i:
                raise CorpusError(
                    f"dialog {self.dialog_id}: turn_index {turn.turn_index} at position {i}"
                )
            expected: Stream = "user" if i % 2 == 0 else "system"
            if turn.stream != expected:
                raise CorpusError(
                    f"dialog {self.dialog_id}: expected a {expected} turn at index {i}"
                )

    def user_turn_indices(self) -> list[int]:
        return [t.turn_index for t in self.turns if t.is_user]


@dataclass(frozen=True)
class SchemaCatalog:
    """Per-domain slot-key sets, built by scanning a corpus."""

    domains: dict[str, frozenset[str]] = field(default_factory=dict)

    def keys_for(self, domain: str | None) -> frozenset[str]:
        if domain is None:
            return frozenset()
        return self.domains.get(domain, frozenset())

    def to_dict(self) -> dict[str, list[str]]:
        return {d: sorted(keys) for d, keys in sorted(self.domains.items())}

    @classmethod
    def from_dict(cls, data: dict[str, list[str]]) -> "SchemaCatalog":
        return cls({d: frozenset(keys) for d, keys in data.items()})


def normalize_tokens(tokens: Iterable[str]) -> tuple[str, ...]:
    """Lowercase and drop surrounding whitespace; tokens must stay non-empty."""
    out = []
    for tok in tokens:
        tok = tok.strip().lower()
        if not tok:
            raise CorpusError("empty token after normalization")
        out.append(tok)
    return tuple(out)


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase + whitespace split, the single tokenization rule everywhere."""
    return tuple(text.lower().split())


def _slot_from_record(obj: dict, dialog_id: str) -> Slot:
    try:
        return Slot(key=str(obj["key"]), value=str(obj["value"]))
    except KeyError as exc:
        raise CorpusError(f"dialog {dialog_id}: slot record missing {exc}") from exc


def _turn_from_record(obj: dict, index: int, dialog_id: str) -> Turn:
    try:
        stream = obj["stream"]
        tokens = normalize_tokens(obj["tokens"])
        slots = frozenset(_slot_from_record(s, dialog_id) for s in obj.get("slots", []))
    except CorpusError as exc:
        raise CorpusError(f"dialog {dialog_id}: {exc}") from exc
    except KeyError as exc:
        raise CorpusError(f"dialog {dialog_id}: turn {index} missing field {exc}") from exc
    if stream not in ("user", "system"):
        raise CorpusError(f"dialog {dialog_id}: turn {index} has unknown stream {stream!r}")
    references: frozenset[Slot] | None = None
    if stream == "user":
        references = frozenset(
            _slot_from_record(s, dialog_id) for s in obj.get("references", [])
        )
    elif "references" in obj:
        raise CorpusError(f"dialog {dialog_id}: system turn {index} carries references")
    return Turn(
        stream=stream,
        act=str(obj.get("act", "")),
        tokens=tokens,
        slots=slots,
        turn_index=index,
        domain=obj.get("domain"),
        references=references,
    )


def dialog_from_record(obj: dict) -> Dialog:
    dialog_id = str(obj.get("dialog_id", ""))
    if not dialog_id:
        raise CorpusError("dialog record without dialog_id")
    turns = tuple(
        _turn_from_record(t, i, dialog_id) for i, t in enumerate(obj.get("turns", []))
    )
    if not turns:
        raise CorpusError(f"dialog {dialog_id}: no turns")
    return Dialog(dialog_id=dialog_id, turns=turns)


def dialog_to_record(dialog: Dialog) -> dict:
    turns = []
    for turn in dialog.turns:
        rec: dict = {
            "stream": turn.stream,
            "domain": turn.domain,
            "act": turn.act,
            "tokens": list(turn.tokens),
            "slots": [{"key": s.key, "value": s.value} for s in sorted(turn.slots)],
        }
        if turn.is_user:
            rec["references"] = [
                {"key": s.key, "value": s.value} for s in sorted(turn.references or frozenset())
            ]
        turns.append(rec)
    return {"dialog_id": dialog.dialog_id, "turns": turns}


def load_corpus(path: str | Path) -> list[Dialog]:
    """Load a native-JSONL corpus, enforcing the dialog invariants.

    Raises CorpusError with the 1-based line number on malformed lines.
    """
    dialogs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            try:
                dialogs.append(dialog_from_record(obj))
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return dialogs


def write_corpus(dialogs: Iterable[Dialog], path: str | Path) -> None:
    """Write dialogs as JSONL with a stable field and slot ordering."""
    with open(path, "w", encoding="utf-8") as fh:
        for dialog in dialogs:
            fh.write(json.dumps(dialog_to_record(dialog), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def build_schema_catalog(dialogs: Iterable[Dialog]) -> SchemaCatalog:
    """Scan turn slots and user-turn references into per-domain key sets."""
    domains: dict[str, set[str]] = {}
    for dialog in dialogs:
        for turn in dialog.turns:
            if turn.domain is None:
                continue
            keys = domains.setdefault(turn.domain, set())
            keys.update(slot.key for slot in turn.slots)
            if turn.references:
                keys.update(slot.key for slot in turn.references)
    return SchemaCatalog({d: frozenset(keys) for d, keys in domains.items()})


def demo_corpus_path() -> Path:
    """Path of the bundled multi-domain demo dialog (weather -> local search -> traffic)."""
    return Path(str(resources.files("slotcarry").joinpath("assets/demo_dialog.jsonl")))
