"""Templated synthetic stories with gold rules, for self-contained runs.

Middle sentences are deterministic functions of the beginning, the
ending, and the gold rules. Two latent slot words control how much each
input variant can recover:

* the manner word (in s3) appears ONLY in the iteration-1 Effect rule,
  so it is recoverable with provided rules but not from the context;
* the tone word (in s4) also appears in the ending s5, so it is
  recoverable whenever the ending or decoded rules are available, but
  lost when the ending is withheld.

That makes oracle > self-generated rules > no-rules-no-ending a
structural property of the data rather than a tuning accident.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rules import parse_rule
from .types import GlucoseRecord, Story

NAMES = ("mia", "ben", "ava", "leo", "zoe", "max", "ivy", "sam")
OBJECTS = ("lamp", "kite", "book", "drum", "vase", "clock", "scarf", "basket")
PLACES = ("market", "garage", "library", "harbor", "bakery", "attic", "garden", "station")
MANNERS = ("quickly", "slowly", "eventually", "suddenly", "easily", "carefully")
TONES = ("proudly", "gladly", "quietly", "calmly", "warmly", "brightly")


@dataclass(frozen=True)
class StorySpec:
    name: str
    obj: str
    place: str
    manner: str
    tone: str


def _sentences(sp: StorySpec) -> tuple[str, ...]:
    return (
        f"{sp.name} wanted a {sp.obj} .",
        f"{sp.name} walked to the {sp.place} .",
        f"{sp.name} found a {sp.obj} at the {sp.place} {sp.manner} .",
        f"{sp.name} carried the {sp.obj} home {sp.tone} .",
        f"{sp.name} admired the {sp.obj} {sp.tone} .",
    )


def _records(story_id: str, sp: StorySpec) -> list[GlucoseRecord]:
    def rec(index: int, dim: int, text: str) -> GlucoseRecord:
        rule = parse_rule(text)
        return GlucoseRecord(
            story_id=story_id, sentence_index=index, dimension=dim, specific=rule, general=rule
        )

    return [
        # iteration 1: Effect of s2 carries the manner word needed for s3
        rec(2, 6, f"{sp.name} walked to the {sp.place} >Causes/Enables> "
                  f"{sp.name} found a {sp.obj} {sp.manner}"),
        # iteration 2: Effect of s3 carries the tone word needed for s4
        rec(3, 6, f"{sp.name} found a {sp.obj} {sp.manner} >Results in> "
                  f"{sp.name} carried the {sp.obj} home {sp.tone}"),
        # Cause of the ending, shared by both iterations
        rec(5, 1, f"{sp.name} carried the {sp.obj} home {sp.tone} >Causes/Enables> "
                  f"{sp.name} admired the {sp.obj}"),
        # SEG: Effect of s4 explains the ending
        rec(4, 6, f"{sp.name} carried the {sp.obj} home {sp.tone} >Causes/Enables> "
                  f"{sp.name} admired the {sp.obj} {sp.tone}"),
    ]


def generate(n_stories: int, seed: int) -> tuple[list[Story], list[GlucoseRecord]]:
    """Sample ``n_stories`` stories with pairwise-distinct visible contexts.

    The (name, object, place, tone) projection is sampled without
    replacement, so no two stories look alike outside the hidden manner
    slot; the manner is drawn independently per story. That keeps the
    context-to-rule mapping a well-defined function over any corpus.
    """
    space = len(NAMES) * len(OBJECTS) * len(PLACES) * len(TONES)
    if n_stories > space:
        raise ValueError(f"at most {space} distinct story contexts available, asked for {n_stories}")
    rng = np.random.default_rng(seed)
    picks = sorted(int(p) for p in rng.choice(space, size=n_stories, replace=False))
    manners = rng.integers(len(MANNERS), size=n_stories)
    stories: list[Story] = []
    records: list[GlucoseRecord] = []
    for i, flat in enumerate(picks):
        rest, tone_i = divmod(flat, len(TONES))
        rest, place_i = divmod(rest, len(PLACES))
        name_i, obj_i = divmod(rest, len(OBJECTS))
        sp = StorySpec(
            name=NAMES[name_i],
            obj=OBJECTS[obj_i],
            place=PLACES[place_i],
            manner=MANNERS[int(manners[i])],
            tone=TONES[tone_i],
        )
        story_id = f"syn-{i:05d}"
        stories.append(Story(id=story_id, sentences=_sentences(sp)))
        records.extend(_records(story_id, sp))
    return stories, records
