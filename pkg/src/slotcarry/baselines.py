"""Naive and rule-based carryover baselines.

The naive baseline carries every slot of the most recent slot-bearing turn.
The rule baseline detects referring expressions in the current utterance and
carries the context candidates whose type class agrees, mapped into the
current schema with the same embedding transform the model pipeline uses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from .candidates import CandidateConfig, collect_candidates, transform_candidates
from .data import Dialog, SchemaCatalog, Slot
from .embeddings import LabelEmbeddings
from .errors import ConfigError

WILDCARD = "*"


@dataclass(frozen=True)
class TypeEntry:
    """Type class plus optional agreement attributes (wildcard by default)."""

    type_class: str
    gender: str = WILDCARD
    number: str = WILDCARD


@dataclass(frozen=True)
class Rule:
    """Carry candidates of `candidate_type` when an anaphor phrase occurs."""

    anaphor_phrases: tuple[tuple[str, ...], ...]
    candidate_type: str
    gender: str = WILDCARD
    number: str = WILDCARD

    def __post_init__(self) -> None:
        if not self.anaphor_phrases or any(not p for p in self.anaphor_phrases):
            raise ConfigError("rule anaphor phrases must be non-empty")


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...]
    type_map: dict[str, TypeEntry] = field(default_factory=dict)

    def __post_init__(self) -> None:
        classes = {entry.type_class for entry in self.type_map.values()}
        for rule in self.rules:
            if rule.candidate_type not in classes and rule.candidate_type not in self.type_map:
                # a literal slot key is also acceptable as a candidate type
                if not rule.candidate_type:
                    raise ConfigError("rule with empty candidate_type")

    def entry_for(self, key: str) -> TypeEntry:
        """Keys absent from the type map form their own singleton class."""
        return self.type_map.get(key, TypeEntry(type_class=key))


def load_rules(path: str | Path) -> RuleSet:
    """Load a JSON rule file; unresolvable types are a configuration error."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    type_map: dict[str, TypeEntry] = {}
    for key, entry in data.get("type_map", {}).items():
        if isinstance(entry, str):
            type_map[key] = TypeEntry(type_class=entry)
        else:
            type_map[key] = TypeEntry(
                type_class=entry["class"],
                gender=entry.get("gender", WILDCARD),
                number=entry.get("number", WILDCARD),
            )
    rules = []
    for raw in data.get("rules", []):
        phrases = tuple(
            tuple(str(tok).lower() for tok in phrase) for phrase in raw["anaphor_phrases"]
        )
        rules.append(
            Rule(
                anaphor_phrases=phrases,
                candidate_type=raw["candidate_type"],
                gender=raw.get("gender", WILDCARD),
                number=raw.get("number", WILDCARD),
            )
        )
    ruleset = RuleSet(rules=tuple(rules), type_map=type_map)
    classes = {entry.type_class for entry in type_map.values()}
    keys = set(type_map)
    for rule in ruleset.rules:
        if rule.candidate_type not in classes and rule.candidate_type not in keys:
            raise ConfigError(
                f"rule candidate_type {rule.candidate_type!r} is neither a type class "
                f"nor a mapped slot key"
            )
    return ruleset


def demo_rules_path() -> Path:
    """Path of the bundled demonstrative rule file."""
    return Path(str(resources.files("slotcarry").joinpath("assets/demo_rules.json")))


def _contains_phrase(tokens: Sequence[str], phrase: Sequence[str]) -> bool:
    n = len(phrase)
    return any(tuple(tokens[i:i + n]) == tuple(phrase) for i in range(len(tokens) - n + 1))


def _attributes_agree(rule: Rule, entry: TypeEntry) -> bool:
    for rule_attr, cand_attr in ((rule.gender, entry.gender), (rule.number, entry.number)):
        if WILDCARD in (rule_attr, cand_attr):
            continue
        if rule_attr != cand_attr:
            return False
    return True


def naive_predict(
    dialog: Dialog, t: int, config: CandidateConfig | None = None
) -> set[Slot]:
    """Carry all slots of the nearest preceding turn that has any.

    When system candidates are excluded (DSTC2 mode) only user turns are
    considered.
    """
    if not dialog.turns[t].is_user:
        raise ConfigError(f"dialog {dialog.dialog_id}: turn {t} is not a user turn")
    include_system = config.include_system_candidates if config else True
    for i in range(t - 1, -1, -1):
        turn = dialog.turns[i]
        if not include_system and not turn.is_user:
            continue
        if turn.slots:
            return set(turn.slots)
    return set()


def rule_predict(
    dialog: Dialog,
    t: int,
    rules: RuleSet,
    labels: LabelEmbeddings,
    target_schema: frozenset[str] | set[str],
    config: CandidateConfig,
) -> set[Slot]:
    """Type-agreement rule baseline.

    For every rule whose anaphor phrase occurs contiguously in the current
    turn, carry the windowed context candidates whose key's type class
    matches; survivors are mapped into the current schema with the
    embedding-based transform and deduplicated.
    """
    if not dialog.turns[t].is_user:
        raise ConfigError(f"dialog {dialog.dialog_id}: turn {t} is not a user turn")
    tokens = dialog.turns[t].tokens
    triggered = [
        rule
        for rule in rules.rules
        if any(_contains_phrase(tokens, phrase) for phrase in rule.anaphor_phrases)
    ]
    if not triggered:
        return set()
    agreeing = []
    for cand in collect_candidates(dialog, t, config):
        entry = rules.entry_for(cand.original_key)
        for rule in triggered:
            type_ok = rule.candidate_type in (entry.type_class, cand.original_key)
            if type_ok and _attributes_agree(rule, entry):
                agreeing.append(cand)
                break
    mapped = transform_candidates(agreeing, labels, target_schema, config)
    return {Slot(c.mapped_key, c.value) for c in mapped}


def predict_with_rules(
    dialog: Dialog,
    t: int,
    rules: RuleSet,
    labels: LabelEmbeddings,
    catalog: SchemaCatalog,
    config: CandidateConfig,
) -> set[Slot]:
    """rule_predict with the target schema looked up from the catalog."""
    return rule_predict(
        dialog, t, rules, labels, catalog.keys_for(dialog.turns[t].domain), config
    )
