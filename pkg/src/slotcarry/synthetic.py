"""Deterministic multi-domain synthetic dialog generator.

Dialogs follow a search/refine/follow-up script: a user states a location
and an attribute, the system answers, and follow-up turns either carry the
location across (possibly different-schema) domains, carry the system's
generic Entity result, or start a fresh query. Carryover decisions are a
deterministic function of the act, the candidate key type and the distance,
so the corpus is learnable end to end.

The matching embedding table clusters each value pool around its own
orthogonal centroid, which makes alias keys (keys sharing a value pool) end
up with high label-embedding dot products.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ENTITY_KEY, Dialog, Slot, Turn, build_schema_catalog
from .embeddings import EmbeddingTable
from .errors import ConfigError

ACT_SEARCH = "search"
ACT_REFINE = "refine"
ACT_FOLLOWUP = "followup_entity"
ACT_OFFER = "offer"
ACT_REPORT = "report"
ACT_ACK = "ack"

_TEMPLATES = {
    ACT_SEARCH: ("find", "in"),
    ACT_REFINE: ("what", "about"),
    ACT_FOLLOWUP: ("how", "do", "i", "get", "there"),
    ACT_OFFER: ("i", "found"),
    ACT_REPORT: ("expect",),
    ACT_ACK: ("okay", "anything", "else"),
}
_FALLBACK_ATTR_TOKEN = "options"


@dataclass(frozen=True)
class AliasGroup:
    """Keys that mean the same thing under different domain schemas."""

    name: str
    keys: dict[str, str]  # domain -> key
    values: tuple[str, ...]  # shared value pool


@dataclass(frozen=True)
class DomainSpec:
    name: str
    attributes: dict[str, tuple[str, ...]]  # domain-local key -> value pool
    system_entity: bool = False  # system turns answer with a generic Entity slot
    system_attribute: str | None = None  # else this attribute key, if set


@dataclass(frozen=True)
class GeneratorConfig:
    num_dialogs: int
    domains: tuple[DomainSpec, ...]
    alias_groups: tuple[AliasGroup, ...]
    vocabulary: tuple[str, ...]
    avg_user_turns: float = 2.2
    disparate_rate: float = 0.2
    target_positive_rate: float = 0.37
    target_negative_rate: float = 4.07
    carry_probability: float = 0.7
    entity_carry_probability: float = 0.25
    system_slot_rate: float = 0.9
    attribute_rate: float = 0.85
    second_attribute_rate: float = 0.55
    max_user_turns: int = 5
    location_group: str = "location"
    venue_group: str = "venue"
    stats_window: int = 2

    def __post_init__(self) -> None:
        if self.num_dialogs < 1:
            raise ConfigError("num_dialogs must be >= 1")
        if not self.domains:
            raise ConfigError("generator config needs at least one domain")
        if not self.vocabulary:
            raise ConfigError("generator config needs a non-empty vocabulary")
        if not any(g.name == self.location_group for g in self.alias_groups):
            raise ConfigError(f"missing alias group {self.location_group!r}")

    def group(self, name: str) -> AliasGroup | None:
        for g in self.alias_groups:
            if g.name == name:
                return g
        return None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        domains = tuple(
            DomainSpec(
                name=d["name"],
                attributes={k: tuple(v) for k, v in d.get("attributes", {}).items()},
                system_entity=d.get("system_entity", False),
                system_attribute=d.get("system_attribute"),
            )
            for d in data["domains"]
        )
        groups = tuple(
            AliasGroup(name=g["name"], keys=dict(g["keys"]), values=tuple(g["values"]))
            for g in data["alias_groups"]
        )
        scalars = {
            k: data[k]
            for k in (
                "avg_user_turns", "disparate_rate", "target_positive_rate",
                "target_negative_rate", "carry_probability", "entity_carry_probability",
                "system_slot_rate", "attribute_rate", "second_attribute_rate",
                "max_user_turns", "location_group", "venue_group", "stats_window",
            )
            if k in data
        }
        return cls(
            num_dialogs=data["num_dialogs"],
            domains=domains,
            alias_groups=groups,
            vocabulary=tuple(data["vocabulary"]),
            **scalars,
        )


def load_generator_config(path: str | Path) -> GeneratorConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return GeneratorConfig.from_dict(json.load(fh))


def save_generator_config(config: GeneratorConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def default_generator_config(num_dialogs: int, num_domains: int = 3) -> GeneratorConfig:
    """A three-domain demo setup tuned to roughly match the target rates."""
    locations = (
        "san marino", "riverdale", "edgewater", "kingsport",
        "northgate", "silver lake", "maple grove", "crestwood",
    )
    venues = (
        "blue bistro", "grand plaza", "corner cafe", "union hall",
        "sunset diner", "city arena", "rose garden", "harbor house",
    )
    domains = (
        DomainSpec(
            name="weather",
            attributes={
                "Timeframe": ("today", "tonight", "tomorrow", "weekend"),
                "Condition": ("rainy", "sunny", "windy", "cloudy", "stormy"),
            },
            system_attribute="Condition",
        ),
        DomainSpec(
            name="dining",
            attributes={
                "Cuisine": ("mexican", "thai", "italian", "vegan", "korean", "seafood"),
                "Price": ("cheap", "moderate", "upscale"),
                "Rating": ("great", "decent", "any"),
            },
            system_entity=True,
        ),
        DomainSpec(
            name="traffic",
            attributes={
                "TravelMode": ("driving", "walking", "transit", "cycling"),
                "Urgency": ("now", "soon", "later"),
                "Route": ("fastest", "shortest", "scenic"),
            },
            system_entity=True,
        ),
    )[:num_domains]
    location_keys = {"weather": "WeatherLocation", "dining": "City", "traffic": "Town"}
    venue_keys = {"dining": "Place", "traffic": "Landmark"}
    groups = (
        AliasGroup(
            name="location",
            keys={d.name: location_keys[d.name] for d in domains},
            values=locations,
        ),
        AliasGroup(
            name="venue",
            keys={d.name: venue_keys[d.name] for d in domains if d.name in venue_keys},
            values=venues,
        ),
    )
    vocabulary = sorted(
        {tok for template in _TEMPLATES.values() for tok in template} | {_FALLBACK_ATTR_TOKEN}
    )
    return GeneratorConfig(
        num_dialogs=num_dialogs,
        domains=domains,
        alias_groups=groups,
        vocabulary=tuple(vocabulary),
    )


def _solve_turn_continue_prob(mean_extra: float, cap: int, bump_rate: float) -> float:
    """Continue-probability q for the capped geometric follow-up count.

    Solves sum_{k=1..cap} q^k + bump_rate * (1 - q) == mean_extra by
    bisection; the bump term accounts for single-turn dialogs that get a
    second turn forced so they can switch schemas.
    """
    if mean_extra <= 0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = (lo + hi) / 2
        value = sum(mid ** k for k in range(1, cap + 1)) + bump_rate * (1.0 - mid)
        if value < mean_extra:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def _tokens_for_value(value: str) -> list[str]:
    return value.lower().split()


def generate_synthetic(config: GeneratorConfig, seed: int) -> list[Dialog]:
    """Pure function of (config, seed); see the module docstring for the script."""
    missing = [
        tok
        for template in _TEMPLATES.values()
        for tok in template
        if tok not in config.vocabulary
    ]
    if missing or _FALLBACK_ATTR_TOKEN not in config.vocabulary:
        raise ConfigError(f"vocabulary is missing template tokens: {sorted(set(missing))}")
    location = config.group(config.location_group)
    assert location is not None  # validated in __post_init__
    venue = config.group(config.venue_group)

    rng = random.Random(seed)
    cap = max(config.max_user_turns - 1, 0)
    multi_domain = len(config.domains) >= 2
    bump_rate = config.disparate_rate if multi_domain else 0.0
    q_turn = _solve_turn_continue_prob(config.avg_user_turns - 1.0, cap, bump_rate)

    dialogs: list[Dialog] = []
    for index in range(config.num_dialogs):
        n_user = 1
        while n_user - 1 < cap and rng.random() < q_turn:
            n_user += 1
        switch_at: int | None = None
        if multi_domain and rng.random() < config.disparate_rate:
            n_user = max(n_user, 2)  # a schema switch needs a second turn
            switch_at = rng.randrange(1, n_user)

        domain = rng.choice(config.domains)
        turns: list[Turn] = []
        turn_index = 0
        prev_user_location: Slot | None = None  # in the origin domain's schema
        prev_user_location_value: str | None = None
        prev_system_entity: str | None = None

        def location_key(dom: DomainSpec) -> str | None:
            return location.keys.get(dom.name)

        def venue_key(dom: DomainSpec) -> str | None:
            return venue.keys.get(dom.name) if venue else None

        def attribute_slot(dom: DomainSpec) -> Slot | None:
            # system-answer attributes are not uttered by the user
            keys = sorted(k for k in dom.attributes if k != dom.system_attribute)
            if not keys or rng.random() >= config.attribute_rate:
                return None
            key = rng.choice(keys)
            return Slot(key, rng.choice(dom.attributes[key]))

        for user_i in range(n_user):
            if switch_at is not None and user_i == switch_at:
                others = [d for d in config.domains if d.name != domain.name]
                domain = rng.choice(others)

            act = ACT_SEARCH
            if user_i > 0:
                roll = rng.random()
                can_refine = (
                    prev_user_location_value is not None and location_key(domain) is not None
                )
                can_follow = prev_system_entity is not None and venue_key(domain) is not None
                if roll < config.carry_probability and can_refine:
                    act = ACT_REFINE
                elif (
                    roll < config.carry_probability + config.entity_carry_probability
                    and can_follow
                ):
                    act = ACT_FOLLOWUP

            slots: set[Slot] = set()
            references: set[Slot] = set()
            if act == ACT_SEARCH:
                loc_key = location_key(domain)
                loc_value = rng.choice(location.values)
                if loc_key is not None:
                    slots.add(Slot(loc_key, loc_value))
                attr = attribute_slot(domain)
                if attr is not None:
                    slots.add(attr)
                    if rng.random() < config.second_attribute_rate:
                        second = attribute_slot(domain)
                        if second is not None:
                            slots.add(second)
                attr_tokens = _tokens_for_value(attr.value) if attr else [_FALLBACK_ATTR_TOKEN]
                tokens = ["find", *attr_tokens, "in", *_tokens_for_value(loc_value)]
                prev_user_location = Slot(loc_key, loc_value) if loc_key else None
                prev_user_location_value = loc_value if loc_key else None
            elif act == ACT_REFINE:
                references.add(Slot(location_key(domain), prev_user_location_value))
                attr = attribute_slot(domain)
                if attr is not None:
                    slots.add(attr)
                attr_tokens = _tokens_for_value(attr.value) if attr else [_FALLBACK_ATTR_TOKEN]
                tokens = ["what", "about", *attr_tokens]
                # the location is carried, not restated: no location slot here
                prev_user_location = None
            else:  # ACT_FOLLOWUP
                references.add(Slot(venue_key(domain), prev_system_entity))
                tokens = list(_TEMPLATES[ACT_FOLLOWUP])
                prev_user_location = None

            turns.append(
                Turn(
                    stream="user",
                    act=act,
                    tokens=tuple(tokens),
                    slots=frozenset(slots),
                    turn_index=turn_index,
                    domain=domain.name,
                    references=frozenset(references),
                )
            )
            turn_index += 1

            if user_i == n_user - 1:
                break  # dialogs end on the user turn

            prev_system_entity = None
            if rng.random() < config.system_slot_rate:
                if domain.system_entity and venue is not None:
                    value = rng.choice(venue.values)
                    offer_slots = {Slot(ENTITY_KEY, value)}
                    attr_keys = sorted(domain.attributes)
                    n_attrs = min(len(attr_keys), 1 + (1 if rng.random() < 0.5 else 0))
                    for attr_key in rng.sample(attr_keys, n_attrs):
                        offer_slots.add(Slot(attr_key, rng.choice(domain.attributes[attr_key])))
                    sys_slots = frozenset(offer_slots)
                    sys_act = ACT_OFFER
                    sys_tokens = ("i", "found", *_tokens_for_value(value))
                    prev_system_entity = value
                elif domain.system_attribute is not None:
                    pool = domain.attributes[domain.system_attribute]
                    value = rng.choice(pool)
                    sys_slots = frozenset({Slot(domain.system_attribute, value)})
                    sys_act = ACT_REPORT
                    sys_tokens = ("expect", *_tokens_for_value(value))
                else:
                    sys_slots = frozenset()
                    sys_act = ACT_ACK
                    sys_tokens = _TEMPLATES[ACT_ACK]
            else:
                sys_slots = frozenset()
                sys_act = ACT_ACK
                sys_tokens = _TEMPLATES[ACT_ACK]
            turns.append(
                Turn(
                    stream="system",
                    act=sys_act,
                    tokens=tuple(sys_tokens),
                    slots=sys_slots,
                    turn_index=turn_index,
                    domain=domain.name,
                )
            )
            turn_index += 1

        dialogs.append(Dialog(dialog_id=f"syn-{seed}-{index:05d}", turns=tuple(turns)))
    return dialogs


def synthetic_embedding_table(
    config: GeneratorConfig, dim: int = 16, seed: int = 0
) -> EmbeddingTable:
    """Embeddings whose value pools cluster around orthogonal centroids.

    Tokens of the same pool end up with pairwise dot products near 1, tokens
    of different pools near 0, so alias keys separate cleanly under the
    default beta.
    """
    pools: list[tuple[str, ...]] = [g.values for g in config.alias_groups]
    for domain in config.domains:
        for key in sorted(domain.attributes):
            pools.append(domain.attributes[key])
    rng = np.random.default_rng(seed)
    n_pools = len(pools)
    if n_pools > dim:
        raise ConfigError(f"embedding dim {dim} too small for {n_pools} value pools")
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    centroids = basis[:n_pools]

    vectors: dict[str, np.ndarray] = {}
    noise_scale = 0.35 / np.sqrt(dim)
    for pool, centroid in zip(pools, centroids):
        for value in pool:
            for token in _tokens_for_value(value):
                if token in vectors:
                    continue
                vec = centroid + noise_scale * rng.normal(size=dim)
                vectors[token] = vec / np.linalg.norm(vec)
    for token in config.vocabulary:
        if token not in vectors:
            vec = rng.normal(size=dim)
            vectors[token] = vec / np.linalg.norm(vec)
    return EmbeddingTable(dim=dim, vectors=vectors)


def corpus_statistics(dialogs: Sequence[Dialog], config: GeneratorConfig) -> dict:
    """Corpus profile reported alongside a generated corpus.

    Candidate counts use the alias structure of the config (identity keys,
    alias-group images, Entity expansion) as a threshold-free stand-in for
    the embedding transform.
    """
    catalog = build_schema_catalog(dialogs)
    key_to_group: dict[str, AliasGroup] = {}
    for group in config.alias_groups:
        for key in group.keys.values():
            key_to_group[key] = group

    def images(key: str, domain: str | None) -> set[str]:
        schema = catalog.keys_for(domain)
        if key == ENTITY_KEY:
            return set(schema) - {ENTITY_KEY}
        out = {key} & set(schema)
        group = key_to_group.get(key)
        if group is not None and domain is not None:
            image = group.keys.get(domain)
            if image is not None and image in schema:
                out.add(image)
        return out

    total_user_turns = 0
    positives = 0
    negatives = 0
    disparate = 0
    for dialog in dialogs:
        domains_seen = {turn.domain for turn in dialog.turns if turn.domain}
        if len(domains_seen) > 1:
            disparate += 1
        for t in dialog.user_turn_indices():
            total_user_turns += 1
            turn = dialog.turns[t]
            refs = {(s.key, s.value.lower()) for s in (turn.references or frozenset())}
            user_left = system_left = config.stats_window
            for i in range(t - 1, -1, -1):
                origin = dialog.turns[i]
                if origin.is_user:
                    if user_left == 0:
                        continue
                    user_left -= 1
                else:
                    if system_left == 0:
                        continue
                    system_left -= 1
                for slot in origin.slots:
                    for image in images(slot.key, turn.domain):
                        if (image, slot.value.lower()) in refs:
                            positives += 1
                        else:
                            negatives += 1

    n = len(dialogs)
    return {
        "dialogs": n,
        "user_turns": total_user_turns,
        "avg_user_turns_per_dialog": total_user_turns / n if n else 0.0,
        "disparate_schema_fraction": disparate / n if n else 0.0,
        "avg_positive_candidates_per_turn": positives / total_user_turns if total_user_turns else 0.0,
        "avg_negative_candidates_per_turn": negatives / total_user_turns if total_user_turns else 0.0,
        "targets": {
            "avg_user_turns_per_dialog": config.avg_user_turns,
            "disparate_schema_fraction": config.disparate_rate,
            "avg_positive_candidates_per_turn": config.target_positive_rate,
            "avg_negative_candidates_per_turn": config.target_negative_rate,
        },
    }
