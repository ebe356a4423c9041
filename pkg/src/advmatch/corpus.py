"""Data model, JSONL parsing/validation, and fold splitting for annotated corpora.

A record pairs a query with its gold response.  Both are token sequences
mixing plain words with inline detection tags written as ``[class:index]``,
where ``index`` is 1-based into the record's object list.  Records are
grouped by ``source_key`` (the unit of provenance, e.g. one film) and folds
never split a source group, so downstream train/eval splits cannot leak
near-duplicate material across the boundary.

Corpus files are UTF-8 JSON lines, one record per line, with fields
``id``, ``source_key``, ``query``, ``gold``, ``objects``, ``task_mode``
and optional ``embedding``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from .seeding import derive_rng

TASK_MODES = ("qa", "qar")

_TAG_RE = re.compile(r"^\[([^\s\[\]:]+):([0-9]+)\]$")
_LABEL_BAD_RE = re.compile(r"[\s\[\]:]")


class CorpusError(ValueError):
    """Raised for malformed corpus input or invalid fold parameters."""


@dataclass(frozen=True)
class Token:
    """One element of a query/response stream: a word or a detection tag.

    Exactly one side is populated: words carry ``text``; tags carry
    ``tag_class`` and a 1-based ``tag_index`` into the owning record's
    object list.
    """

    kind: str  # "word" | "tag"
    text: str = ""
    tag_class: str = ""
    tag_index: int = 0

    @staticmethod
    def word(text: str) -> "Token":
        return Token(kind="word", text=text.lower())

    @staticmethod
    def tag(tag_class: str, tag_index: int) -> "Token":
        return Token(kind="tag", tag_class=tag_class, tag_index=tag_index)

    @property
    def is_tag(self) -> bool:
        return self.kind == "tag"

    def to_text(self) -> str:
        if self.kind == "tag":
            return f"[{self.tag_class}:{self.tag_index}]"
        return self.text


def parse_token_stream(text: str) -> tuple[Token, ...]:
    """Split a whitespace-delimited stream into word/tag tokens.

    Anything matching ``[class:index]`` becomes a tag; everything else is a
    lowercased word.  The inverse of :func:`tokens_to_text`.
    """
    out = []
    for piece in text.split():
        m = _TAG_RE.match(piece)
        if m:
            out.append(Token.tag(m.group(1), int(m.group(2))))
        else:
            out.append(Token.word(piece))
    return tuple(out)


def tokens_to_text(tokens: Sequence[Token]) -> str:
    return " ".join(t.to_text() for t in tokens)


@dataclass(frozen=True)
class Record:
    """One annotated example: query, gold response, and its object context."""

    id: str
    source_key: str
    query: tuple[Token, ...]
    gold: tuple[Token, ...]
    objects: tuple[str, ...]
    embedding: tuple[float, ...] | None = None
    task_mode: str = "qa"


@dataclass
class ValidationReport:
    """Outcome of validating one record; violations name field and rule."""

    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _check_tokens(name: str, tokens: Sequence[Token], objects: Sequence[str],
                  out: list[str]) -> None:
    if not tokens:
        out.append(f"{name}: empty")
        return
    for pos, tok in enumerate(tokens):
        where = f"{name}[{pos}]"
        if tok.kind == "word":
            # words must survive the round trip: no whitespace, not tag-shaped
            if not tok.text or any(c.isspace() for c in tok.text) \
                    or _TAG_RE.match(tok.text):
                out.append(f"{where}: malformed word {tok.text!r}")
            elif tok.text != tok.text.lower():
                out.append(f"{where}: word not lowercase {tok.text!r}")
        elif tok.kind == "tag":
            if tok.tag_index < 1 or tok.tag_index > len(objects):
                out.append(
                    f"{where}: dangling tag index {tok.tag_index} "
                    f"(objects has {len(objects)} entries)")
            elif objects[tok.tag_index - 1] != tok.tag_class:
                out.append(
                    f"{where}: class mismatch (tag {tok.tag_class!r} vs "
                    f"objects[{tok.tag_index}]={objects[tok.tag_index - 1]!r})")
        else:
            out.append(f"{where}: unknown token kind {tok.kind!r}")


def validate_record(record: Record) -> ValidationReport:
    """Check every record invariant; violations are data, not exceptions."""
    v: list[str] = []
    if not record.id:
        v.append("id: empty")
    if not record.source_key:
        v.append("source_key: empty")
    if record.task_mode not in TASK_MODES:
        v.append(f"task_mode: must be one of {TASK_MODES}, got {record.task_mode!r}")
    for pos, label in enumerate(record.objects, start=1):
        if not label or _LABEL_BAD_RE.search(label):
            v.append(f"objects[{pos}]: malformed class label {label!r}")
    _check_tokens("query", record.query, record.objects, v)
    _check_tokens("gold", record.gold, record.objects, v)
    if record.embedding is not None:
        if len(record.embedding) == 0:
            v.append("embedding: empty vector")
        elif not all(x == x and abs(x) != float("inf") for x in record.embedding):
            v.append("embedding: non-finite entry")
    return ValidationReport(v)


def record_to_json(record: Record, fold: int | None = None) -> str:
    """Serialize one record to its JSONL line (optionally with fold index)."""
    obj: dict = {
        "id": record.id,
        "source_key": record.source_key,
        "task_mode": record.task_mode,
        "query": tokens_to_text(record.query),
        "gold": tokens_to_text(record.gold),
        "objects": list(record.objects),
    }
    if record.embedding is not None:
        obj["embedding"] = list(record.embedding)
    if fold is not None:
        obj["fold"] = fold
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def record_from_obj(obj: dict, lineno: int = 0) -> Record:
    """Build a Record from a decoded JSONL object; structural checks only."""
    for key in ("id", "source_key", "query", "gold", "objects", "task_mode"):
        if key not in obj:
            raise CorpusError(f"line {lineno}: missing field {key!r}")
    objects = obj["objects"]
    if not isinstance(objects, list) or not all(isinstance(x, str) for x in objects):
        raise CorpusError(f"line {lineno}: objects must be a list of class labels")
    embedding = obj.get("embedding")
    if embedding is not None:
        if not isinstance(embedding, list) or not all(
                isinstance(x, (int, float)) for x in embedding):
            raise CorpusError(f"line {lineno}: embedding must be a list of numbers")
        embedding = tuple(float(x) for x in embedding)
    mode = str(obj["task_mode"]).lower()
    return Record(
        id=str(obj["id"]),
        source_key=str(obj["source_key"]),
        query=parse_token_stream(str(obj["query"])),
        gold=parse_token_stream(str(obj["gold"])),
        objects=tuple(objects),
        embedding=embedding,
        task_mode=mode,
    )


def parse_records(stream: IO[bytes] | IO[str] | Iterable[bytes | str]) -> list[Record]:
    """Parse a JSONL byte/text stream into validated records.

    Raises :class:`CorpusError` naming the offending line for malformed
    JSON, missing fields, invariant violations, duplicate ids, or
    inconsistent embedding lengths.  Blank lines are skipped; input order
    is preserved.
    """
    records: list[Record] = []
    seen: dict[str, int] = {}
    embed_len: int | None = None
    embed_line = 0
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorpusError(f"line {lineno}: not valid UTF-8 ({exc})") from exc
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise CorpusError(f"line {lineno}: expected a JSON object")
        record = record_from_obj(obj, lineno)
        report = validate_record(record)
        if not report.ok:
            raise CorpusError(f"line {lineno}: invalid record: " + "; ".join(report.violations))
        if record.id in seen:
            raise CorpusError(
                f"line {lineno}: duplicate id {record.id!r} (first seen on line {seen[record.id]})")
        seen[record.id] = lineno
        if record.embedding is not None:
            if embed_len is None:
                embed_len, embed_line = len(record.embedding), lineno
            elif len(record.embedding) != embed_len:
                raise CorpusError(
                    f"line {lineno}: embedding length {len(record.embedding)} differs "
                    f"from length {embed_len} on line {embed_line}")
        records.append(record)
    return records


def serialize_records(records: Iterable[Record],
                      folds: dict[str, int] | None = None) -> str:
    """Records back to JSONL text; inverse of :func:`parse_records`."""
    lines = []
    for r in records:
        fold = folds.get(r.source_key) if folds is not None else None
        lines.append(record_to_json(r, fold=fold))
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of every source_key to exactly one fold."""

    n_folds: int
    assignment: dict[str, int]

    def fold_of(self, record: Record) -> int:
        return self.assignment[record.source_key]

    def holdout_folds(self, n: int = 2) -> tuple[int, ...]:
        """Fold indices reserved for validation/testing (highest indices)."""
        n = min(n, self.n_folds)
        return tuple(range(self.n_folds - n, self.n_folds))


def split_folds(records: Sequence[Record], n_folds: int, seed: int) -> FoldPlan:
    """Greedy balanced fold split that keeps each source group whole.

    Groups are placed largest-first into the currently smallest fold, with
    equal-size groups ordered by a seeded shuffle, so the plan is
    deterministic given the seed and independent of record order.
    """
    if n_folds < 1:
        raise CorpusError(f"n_folds must be >= 1, got {n_folds}")
    sizes: dict[str, int] = {}
    for r in records:
        sizes[r.source_key] = sizes.get(r.source_key, 0) + 1
    if len(sizes) < n_folds:
        raise CorpusError(
            f"need at least {n_folds} distinct source keys for {n_folds} folds, "
            f"got {len(sizes)}")
    keys = sorted(sizes)
    order = derive_rng(seed, "folds").permutation(len(keys))
    rank = {keys[int(k)]: pos for pos, k in enumerate(order)}
    placed = sorted(keys, key=lambda k: (-sizes[k], rank[k]))
    load = [0] * n_folds
    assignment: dict[str, int] = {}
    for key in placed:
        fold = min(range(n_folds), key=lambda f: (load[f], f))
        assignment[key] = fold
        load[fold] += sizes[key]
    return FoldPlan(n_folds=n_folds, assignment=assignment)
