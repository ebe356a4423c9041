"""Turn candidate responses into templates and remap their tags per target query.

A response written for one scene rarely references objects that exist in
another.  Before a response can serve as a candidate for a different
query, each of its detection tags is replaced with a tag from the target
record: with probability ``p_reuse`` a class-matching tag already
mentioned in the target's query or gold response, otherwise a uniform
class-matching tag from the target's full object list.  When a class has
no candidates the chain falls back to the other pool, then to any person
tag, and finally to spelling out the class ("the <class>") so remapping
never fails.

Every (query, candidate) pair draws from its own RNG substream keyed by
the two record ids, so results do not depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Record, Token
from .scoring import STOPWORDS, content
from .seeding import derive_rng


class RemapError(ValueError):
    """Raised when template/record inputs are structurally unusable."""


@dataclass(frozen=True)
class ResponseTemplate:
    """A response with its tag tokens treated as open, class-labelled slots."""

    tokens: tuple[Token, ...]

    @property
    def slots(self) -> tuple[int, ...]:
        return tuple(i for i, t in enumerate(self.tokens) if t.is_tag)

    @property
    def slot_classes(self) -> tuple[str, ...]:
        return tuple(t.tag_class for t in self.tokens if t.is_tag)


def templatize(response: Sequence[Token]) -> ResponseTemplate:
    """Lift a response into a template; slot count equals its tag count."""
    return ResponseTemplate(tokens=tuple(response))


def fill_slots(template: ResponseTemplate,
               tags: Sequence[tuple[str, int]]) -> tuple[Token, ...]:
    """Close every slot with the given (class, index) tags, in order."""
    if len(tags) != len(template.slots):
        raise RemapError(
            f"template has {len(template.slots)} slots, got {len(tags)} tags")
    it = iter(tags)
    out = []
    for t in template.tokens:
        if t.is_tag:
            cls, idx = next(it)
            out.append(Token.tag(cls, idx))
        else:
            out.append(t)
    return tuple(out)


@dataclass(frozen=True)
class _TagPools:
    """Class-indexed draw pools for one target record."""

    mentioned: dict[str, tuple[int, ...]]  # class -> tag indices in query+gold
    objects: dict[str, tuple[int, ...]]    # class -> all tag indices
    persons: tuple[int, ...]

    @classmethod
    def for_record(cls, record: Record) -> "_TagPools":
        objects: dict[str, list[int]] = {}
        for idx, label in enumerate(record.objects, start=1):
            objects.setdefault(label, []).append(idx)
        seen: set[int] = set()
        for t in (*record.query, *record.gold):
            if t.is_tag:
                seen.add(t.tag_index)
        mentioned: dict[str, list[int]] = {}
        for idx in sorted(seen):
            mentioned.setdefault(record.objects[idx - 1], []).append(idx)
        return cls(
            mentioned={k: tuple(v) for k, v in mentioned.items()},
            objects={k: tuple(v) for k, v in objects.items()},
            persons=tuple(objects.get("person", ())),
        )


def _draw(pool: Sequence[int], rng: np.random.Generator) -> int:
    return int(pool[int(rng.integers(len(pool)))])


def _remap_with_pools(template: ResponseTemplate, record: Record,
                      pools: _TagPools, p_reuse: float,
                      rng: np.random.Generator) -> tuple[Token, ...]:
    out: list[Token] = []
    for t in template.tokens:
        if not t.is_tag:
            out.append(t)
            continue
        cls = t.tag_class
        mentioned = pools.mentioned.get(cls, ())
        allobjs = pools.objects.get(cls, ())
        first, second = ((mentioned, allobjs) if rng.random() < p_reuse
                         else (allobjs, mentioned))
        pool = first or second or pools.persons
        if pool:
            idx = _draw(pool, rng)
            out.append(Token.tag(record.objects[idx - 1], idx))
        else:
            out.append(Token.word("the"))
            out.append(Token.word(cls))
    return tuple(out)


def remap_tags(template: ResponseTemplate, target: Record, p_reuse: float,
               rng: np.random.Generator) -> tuple[Token, ...]:
    """Remap a template's slots onto the target record's objects.

    Each slot draws independently; the fallback chain is total, so this
    never fails.  Zero-slot templates return unchanged without consuming
    randomness.
    """
    if not 0.0 <= p_reuse <= 1.0:
        raise RemapError(f"p_reuse must be in [0, 1], got {p_reuse}")
    if not template.slots:
        return template.tokens
    pools = _TagPools.for_record(target)
    return _remap_with_pools(template, target, pools, p_reuse, rng)


class CandidateTable:
    """Lazy n x n table of responses remapped per target query.

    ``get(i, j)`` materializes response j remapped for query i from its
    keyed substream; nothing is cached, so memory stays O(n).  The content
    signature of a remapped response is independent of the random draws
    (every draw preserves the slot class except the deterministic person /
    spell-out fallbacks), which lets ``content(i, j)`` and the vectorized
    scoring path skip the RNG entirely.
    """

    def __init__(self, records: Sequence[Record], p_reuse: float, seed: int):
        if not 0.0 <= p_reuse <= 1.0:
            raise RemapError(f"p_reuse must be in [0, 1], got {p_reuse}")
        self._records = list(records)
        self._p_reuse = p_reuse
        self._seed = seed
        self._templates = [templatize(r.gold) for r in self._records]
        self._pools = [_TagPools.for_record(r) for r in self._records]
        self._word_content = [
            frozenset(t.text for t in r.gold
                      if t.kind == "word" and t.text not in STOPWORDS)
            for r in self._records
        ]
        self._slot_classes = [frozenset(tp.slot_classes) for tp in self._templates]
        self._obj_classes = [frozenset(r.objects) for r in self._records]
        self._has_person = ["person" in c for c in self._obj_classes]
        self._base = [content(r.gold) for r in self._records]

    def __len__(self) -> int:
        return len(self._records)

    def get(self, i: int, j: int) -> tuple[Token, ...]:
        if i == j:
            return self._records[i].gold
        rng = derive_rng(self._seed, "remap", self._records[i].id,
                         self._records[j].id)
        return _remap_with_pools(self._templates[j], self._records[i],
                                 self._pools[i], self._p_reuse, rng)

    def _translate(self, i: int, cls: str) -> str | None:
        """Content contribution of a class-``cls`` slot remapped onto record i."""
        if cls in self._obj_classes[i]:
            return cls
        if self._has_person[i]:
            return "person"
        return cls if cls not in STOPWORDS else None

    def content(self, i: int, j: int) -> frozenset[str]:
        if i == j:
            return self._base[j]
        translated = {self._translate(i, c) for c in self._slot_classes[j]}
        translated.discard(None)
        return self._word_content[j] | translated

    def base_contents(self) -> list[frozenset[str]]:
        return self._base

    def translated_pairs(self) -> list[tuple[int, int]]:
        """(i, j) pairs whose remapped content differs from response j's base."""
        # Content can only change where a slot class is absent from the
        # target's objects, so prefilter rows by class availability.
        rows_missing: dict[str, frozenset[int]] = {}
        all_classes = set().union(*self._slot_classes) if self._slot_classes else set()
        for cls in all_classes:
            rows_missing[cls] = frozenset(
                i for i, avail in enumerate(self._obj_classes) if cls not in avail)
        out = []
        for j, classes in enumerate(self._slot_classes):
            if not classes:
                continue
            suspects: set[int] = set()
            for cls in classes:
                suspects |= rows_missing[cls]
            for i in sorted(suspects):
                if i != j and self.content(i, j) != self._base[j]:
                    out.append((i, j))
        return out
