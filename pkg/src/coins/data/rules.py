"""Dimension clustering, rule parsing, and per-sentence rule aggregation."""

from __future__ import annotations

import re
from typing import Iterable

from .types import Flavor, GlucoseRecord, RelationType, RuleBundle, RuleText

# canonical connective spellings, matched case-insensitively with loose spacing;
# longest-first so "causes/enables" wins over "causes"
CONNECTIVES = (
    ">Causes/Enables>",
    ">Results in>",
    ">Motivates>",
    ">Enables>",
    ">Causes>",
)

_CONNECTIVE_RE = re.compile(
    r">\s*(causes\s*/\s*enables|results?\s+in|motivates|enables|causes)\s*>",
    re.IGNORECASE,
)

_CANONICAL = {
    "causes/enables": ">Causes/Enables>",
    "results in": ">Results in>",
    "result in": ">Results in>",
    "motivates": ">Motivates>",
    "enables": ">Enables>",
    "causes": ">Causes>",
}


def cluster_dimension(d: int) -> RelationType:
    """Map a rule dimension to its relation cluster: 1-5 Cause, 6-10 Effect."""
    if not 1 <= d <= 10:
        raise ValueError(f"dimension must be in 1..10, got {d}")
    return RelationType.CAUSE if d <= 5 else RelationType.EFFECT


def parse_rule(raw: str) -> RuleText:
    """Split a rule string on its first recognized connective.

    Unrecognized inputs are preserved verbatim with empty parts rather
    than rejected; downstream code falls back to ``raw``.
    """
    m = _CONNECTIVE_RE.search(raw)
    if m is None:
        return RuleText(antecedent="", connective="", consequent="", raw=raw)
    key = re.sub(r"\s+", " ", m.group(1).lower().replace(" /", "/").replace("/ ", "/"))
    return RuleText(
        antecedent=raw[: m.start()].strip(),
        connective=_CANONICAL[key],
        consequent=raw[m.end() :].strip(),
        raw=raw,
    )


def render_rule(rule: RuleText) -> str:
    if not rule.parsed:
        return rule.raw
    return f"{rule.antecedent} {rule.connective} {rule.consequent}"


def aggregate_rules(
    records: Iterable[GlucoseRecord],
    sentence_index: int,
    relation: RelationType,
    flavor: Flavor,
) -> RuleBundle:
    """Collect one sentence's rules from the requested relation cluster,
    ascending by dimension (stable within a dimension)."""
    picked = [
        r
        for r in records
        if r.sentence_index == sentence_index and cluster_dimension(r.dimension) is relation
    ]
    picked.sort(key=lambda r: r.dimension)
    return RuleBundle(
        relation=relation,
        rules=tuple((r.dimension, r.rule(flavor)) for r in picked),
        flavor=flavor,
    )
