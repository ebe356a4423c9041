"""Scorer contract, built-in text/vector scorers, and score-matrix persistence.

Two square matrices drive matching over a bucket of n records:

* relevance: ``rel[i][j]`` is the probability that candidate response j
  (remapped for query i) answers query i,
* similarity: ``sim[i][j]`` is the probability that responses i and j mean
  the same thing (symmetric, unit diagonal).

Neural scorers live outside this artifact; they plug in through the
``external_matrix`` scorer kind and the file format below.  The built-in
scorers (content-word overlap, embedding cosine) are deliberately simple,
deterministic stand-ins so the pipeline is exercisable end to end.

Score-matrix files carry a one-line JSON header ``{role, n, dtype,
layout, ids}`` followed by n*n little-endian float32 values (row-major),
or a TSV body for n <= 1000.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Record, Token

DEFAULT_EPS = 1e-6

ROLE_RELEVANCE = "relevance"
ROLE_SIMILARITY = "similarity"
_ROLES = (ROLE_RELEVANCE, ROLE_SIMILARITY)

SCORER_KINDS = ("overlap", "embedding_cosine", "external_matrix")

# Fixed function-word list; shipped with the artifact so content() is
# identical in every environment.
STOPWORDS = frozenset("""
    a about above after again against all am an and any are as at be because
    been before being below between both but by did do does doing down during
    each few for from further had has have having he her here hers herself him
    himself his how i if in into is it its itself just me more most my myself
    no nor not now of off on once only or other our ours ourselves out over own
    s same she should so some such t than that the their theirs them themselves
    then there these they this those through to too under until up very was we
    were what when which while who whom why will with you your yours yourself
    yourselves
""".split())


class ScoringError(ValueError):
    """Raised for invalid probabilities, shapes, or unusable scorer specs."""


def content(tokens: Sequence[Token]) -> frozenset[str]:
    """Content signature of a token stream: non-stopword words plus tag classes."""
    out = set()
    for t in tokens:
        if t.kind == "tag":
            out.add(t.tag_class)
        elif t.text not in STOPWORDS:
            out.add(t.text)
    return frozenset(out)


def clamp_prob(p: float, eps: float = DEFAULT_EPS) -> float:
    """Pull a probability into [eps, 1-eps] so its logarithms stay finite."""
    if not 0.0 < eps < 0.5:
        raise ScoringError(f"eps must be in (0, 0.5), got {eps}")
    if not (-1e-9 <= p <= 1.0 + 1e-9):
        raise ScoringError(f"not a probability: {p}")
    return min(max(p, eps), 1.0 - eps)


def _overlap_score(a: frozenset[str], b: frozenset[str]) -> float:
    if not a or not b:
        return 0.0
    return len(a & b) / math.sqrt(len(a) * len(b))


def relevance_overlap(query: Sequence[Token], response: Sequence[Token],
                      eps: float = DEFAULT_EPS) -> float:
    """Cosine-style content overlap between a query and a response.

    Words are lowercased and stopword-filtered; tags count as their class
    label.  Returns ``|Q & R| / sqrt(|Q| * |R|)`` clamped to [eps, 1-eps].
    """
    if not query or not response:
        raise ScoringError("relevance_overlap requires non-empty token sequences")
    return clamp_prob(_overlap_score(content(query), content(response)), eps)


def similarity_cosine(u: Sequence[float], v: Sequence[float],
                      eps: float = DEFAULT_EPS) -> float:
    """Cosine of two vectors rescaled from [-1, 1] to a clamped probability."""
    ua = np.asarray(u, dtype=np.float64)
    va = np.asarray(v, dtype=np.float64)
    if ua.shape != va.shape or ua.ndim != 1:
        raise ScoringError("vectors must be 1-d and the same length")
    nu = float(np.linalg.norm(ua))
    nv = float(np.linalg.norm(va))
    if nu == 0.0 or nv == 0.0:
        raise ScoringError("zero vector has no direction")
    cos = min(1.0, max(-1.0, float(np.dot(ua, va)) / (nu * nv)))
    return clamp_prob((cos + 1.0) / 2.0, eps)


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """Dense pairwise probabilities over one bucket, tagged with a role.

    Relevance rows index queries; similarity rows index responses.
    Similarity matrices are symmetric with an exact unit diagonal.
    """

    role: str
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ScoringError(f"role must be one of {_ROLES}, got {self.role!r}")
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ScoringError(f"score matrix must be square, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ScoringError("score matrix has non-finite entries")
        if (v < 0.0).any() or (v > 1.0).any():
            raise ScoringError("score matrix has entries outside [0, 1]")
        if self.role == ROLE_SIMILARITY:
            if not np.array_equal(v, v.T):
                raise ScoringError("similarity matrix must be symmetric")
            if not (np.diag(v) == 1.0).all():
                raise ScoringError("similarity diagonal must be exactly 1.0")

    @property
    def n(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class ScorerSpec:
    """Which scorer backs a role: built-in overlap/cosine or an external file."""

    kind: str
    eps: float = DEFAULT_EPS
    path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in SCORER_KINDS:
            raise ScoringError(f"unknown scorer kind {self.kind!r}")
        if not 0.0 < self.eps < 0.5:
            raise ScoringError(f"eps must be in (0, 0.5), got {self.eps}")
        if self.kind == "external_matrix" and not self.path:
            raise ScoringError("external_matrix scorer needs a path")


def symmetrize_entailment(directed: np.ndarray | Sequence[Sequence[float]],
                          eps: float = DEFAULT_EPS) -> ScoreMatrix:
    """Fold a directed entailment matrix into a symmetric similarity matrix.

    ``out[i][j] = max(directed[i][j], directed[j][i])`` for i != j (then
    clamped); the diagonal is forced to exactly 1.0.
    """
    d = np.asarray(directed, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ScoringError(f"directed matrix must be square, got shape {d.shape}")
    if not np.isfinite(d).all() or (d < 0.0).any() or (d > 1.0).any():
        raise ScoringError("directed entailment entries must be probabilities")
    out = np.maximum(d, d.T)
    out = np.clip(out, eps, 1.0 - eps)
    np.fill_diagonal(out, 1.0)
    return ScoreMatrix(ROLE_SIMILARITY, out)


# -- candidate tables ------------------------------------------------------
#
# score_bucket consumes candidate responses through a small duck-typed
# surface so remapped text never has to be materialized n*n times:
#   get(i, j)        -> token sequence of response j prepared for query i
#   content(i, j)    -> content() of get(i, j), computable without RNG
#   base_contents()  -> per-response content assuming no class translation
#   translated_pairs() -> (i, j) pairs whose content differs from base
# remap.CandidateTable implements it for remapped candidates.


class IdentityCandidates:
    """Candidate table that serves every query the raw gold responses."""

    def __init__(self, records: Sequence[Record]):
        self._records = list(records)
        self._contents = [content(r.gold) for r in self._records]

    def get(self, i: int, j: int) -> tuple[Token, ...]:
        return self._records[j].gold

    def content(self, i: int, j: int) -> frozenset[str]:
        return self._contents[j]

    def base_contents(self) -> list[frozenset[str]]:
        return self._contents

    def translated_pairs(self) -> list[tuple[int, int]]:
        return []


def _overlap_matrix(row_contents: Sequence[frozenset[str]],
                    col_contents: Sequence[frozenset[str]]) -> np.ndarray:
    """All-pairs overlap scores, bit-identical to the per-pair formula."""
    vocab: dict[str, int] = {}
    for c in row_contents:
        for w in c:
            vocab.setdefault(w, len(vocab))
    for c in col_contents:
        for w in c:
            vocab.setdefault(w, len(vocab))
    nr, nc = len(row_contents), len(col_contents)
    if not vocab:
        return np.zeros((nr, nc))
    from scipy.sparse import csr_matrix

    def incidence(contents: Sequence[frozenset[str]]) -> csr_matrix:
        indptr = [0]
        indices: list[int] = []
        for c in contents:
            indices.extend(sorted(vocab[w] for w in c))
            indptr.append(len(indices))
        data = np.ones(len(indices), dtype=np.int64)
        return csr_matrix((data, indices, indptr), shape=(len(contents), len(vocab)))

    rows = incidence(row_contents)
    cols = incidence(col_contents)
    inter = (rows @ cols.T).toarray().astype(np.float64)
    rsize = np.array([len(c) for c in row_contents], dtype=np.float64)
    csize = np.array([len(c) for c in col_contents], dtype=np.float64)
    denom = np.sqrt(np.outer(rsize, csize))
    with np.errstate(invalid="ignore"):
        out = np.where(denom == 0.0, 0.0, inter / np.where(denom == 0.0, 1.0, denom))
    return out


def _relevance_values(bucket: Sequence[Record], spec: ScorerSpec, candidates,
                      store: "ExternalMatrixStore | None") -> np.ndarray:
    n = len(bucket)
    if spec.kind == "overlap":
        queries = [content(r.query) for r in bucket]
        vals = _overlap_matrix(queries, candidates.base_contents())
        for i, j in candidates.translated_pairs():
            vals[i, j] = _overlap_score(queries[i], candidates.content(i, j))
        return np.clip(vals, spec.eps, 1.0 - spec.eps)
    if spec.kind == "embedding_cosine":
        emb = _embedding_matrix(bucket)
        vals = _cosine_matrix(emb)
        return np.clip(vals, spec.eps, 1.0 - spec.eps)
    vals = _external_values(ROLE_RELEVANCE, bucket, spec, store)
    return np.clip(vals, spec.eps, 1.0 - spec.eps)


def _similarity_values(bucket: Sequence[Record], spec: ScorerSpec,
                       store: "ExternalMatrixStore | None") -> np.ndarray:
    if spec.kind == "overlap":
        golds = [content(r.gold) for r in bucket]
        vals = _overlap_matrix(golds, golds)
    elif spec.kind == "embedding_cosine":
        vals = _cosine_matrix(_embedding_matrix(bucket))
    else:
        directed = _external_values(ROLE_SIMILARITY, bucket, spec, store)
        return symmetrize_entailment(directed, spec.eps).values
    vals = np.clip(vals, spec.eps, 1.0 - spec.eps)
    np.fill_diagonal(vals, 1.0)
    return vals


def _embedding_matrix(bucket: Sequence[Record]) -> np.ndarray:
    missing = [r.id for r in bucket if r.embedding is None]
    if missing:
        raise ScoringError(
            "embedding_cosine scorer needs embeddings; missing for records: "
            + ", ".join(missing))
    emb = np.asarray([r.embedding for r in bucket], dtype=np.float64)
    norms = np.linalg.norm(emb, axis=1)
    zero = [bucket[i].id for i in np.nonzero(norms == 0.0)[0]]
    if zero:
        raise ScoringError("zero-norm embeddings for records: " + ", ".join(zero))
    return emb


def _cosine_matrix(emb: np.ndarray) -> np.ndarray:
    unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    return (cos + 1.0) / 2.0


def _external_values(role: str, bucket: Sequence[Record], spec: ScorerSpec,
                     store: "ExternalMatrixStore | None") -> np.ndarray:
    if store is None:
        store = ExternalMatrixStore(spec.path)
    ids = tuple(r.id for r in bucket)
    return store.for_bucket(role, ids)


def score_bucket(bucket: Sequence[Record], rel_spec: ScorerSpec,
                 sim_spec: ScorerSpec, candidates=None,
                 matrix_store: "ExternalMatrixStore | None" = None,
                 ) -> tuple[ScoreMatrix, ScoreMatrix]:
    """All-pairs relevance and similarity matrices for one bucket.

    ``rel[i][j]`` scores query i against response j as served by the
    candidate table (i.e. after any tag remapping); similarity always
    compares the original gold responses.  Pure and deterministic: repeated
    calls on the same inputs are bit-identical.
    """
    if not bucket:
        raise ScoringError("bucket is empty")
    if candidates is None:
        candidates = IdentityCandidates(bucket)
    rel = _relevance_values(bucket, rel_spec, candidates, matrix_store)
    sim = _similarity_values(bucket, sim_spec, matrix_store)
    return ScoreMatrix(ROLE_RELEVANCE, rel), ScoreMatrix(ROLE_SIMILARITY, sim)


# -- persistence -----------------------------------------------------------

TSV_MAX_N = 1000


def write_score_matrix(path: str | os.PathLike, role: str,
                       values: np.ndarray | ScoreMatrix,
                       ids: Sequence[str], fmt: str = "binary") -> None:
    """Write a score matrix file (binary float32 payload, or TSV for n <= 1000)."""
    if isinstance(values, ScoreMatrix):
        role, values = values.role, values.values
    if role not in _ROLES:
        raise ScoringError(f"role must be one of {_ROLES}, got {role!r}")
    vals = np.asarray(values, dtype=np.float64)
    n = vals.shape[0]
    if vals.shape != (n, n):
        raise ScoringError(f"matrix must be square, got shape {vals.shape}")
    if len(ids) != n:
        raise ScoringError(f"got {len(ids)} ids for an {n}x{n} matrix")
    header = json.dumps(
        {"role": role, "n": n, "dtype": "float32", "layout": "row-major",
         "ids": list(ids)},
        ensure_ascii=False, separators=(",", ":"))
    path = Path(path)
    if fmt == "binary":
        with open(path, "wb") as f:
            f.write(header.encode("utf-8") + b"\n")
            f.write(np.ascontiguousarray(vals, dtype="<f4").tobytes())
    elif fmt == "tsv":
        if n > TSV_MAX_N:
            raise ScoringError(f"TSV format only accepted for n <= {TSV_MAX_N}, got {n}")
        rows = vals.astype("<f4")
        with open(path, "w", encoding="utf-8") as f:
            f.write(header + "\n")
            for row in rows:
                f.write("\t".join(repr(float(x)) for x in row) + "\n")
    else:
        raise ScoringError(f"unknown format {fmt!r} (use 'binary' or 'tsv')")


def read_score_matrix(path: str | os.PathLike) -> tuple[str, np.ndarray, list[str]]:
    """Read a score-matrix file; returns (role, float64 values, record ids).

    Values are returned as stored (float32 precision); validation against a
    bucket happens at use time in :func:`score_bucket`.
    """
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ScoringError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ScoringError(f"{path}: malformed header ({exc})") from exc
    for key in ("role", "n", "dtype", "layout", "ids"):
        if key not in header:
            raise ScoringError(f"{path}: header missing field {key!r}")
    role, n, ids = header["role"], int(header["n"]), [str(x) for x in header["ids"]]
    if role not in _ROLES:
        raise ScoringError(f"{path}: unknown role {role!r}")
    if header["dtype"] != "float32" or header["layout"] != "row-major":
        raise ScoringError(f"{path}: unsupported dtype/layout")
    if len(ids) != n:
        raise ScoringError(f"{path}: header has {len(ids)} ids for n={n}")
    body = raw[nl + 1:]
    if len(body) == 4 * n * n:
        vals = np.frombuffer(body, dtype="<f4").reshape(n, n).astype(np.float64)
    else:
        if n > TSV_MAX_N:
            raise ScoringError(f"{path}: TSV body only accepted for n <= {TSV_MAX_N}")
        lines = [ln for ln in body.decode("utf-8").splitlines() if ln.strip()]
        if len(lines) != n:
            raise ScoringError(f"{path}: expected {n} TSV rows, got {len(lines)}")
        rows = []
        for ln in lines:
            cells = ln.split("\t")
            if len(cells) != n:
                raise ScoringError(f"{path}: TSV row has {len(cells)} cells, expected {n}")
            rows.append([float(c) for c in cells])
        vals = np.asarray(rows, dtype="<f4").astype(np.float64)
    if not np.isfinite(vals).all() or (vals < 0.0).any() or (vals > 1.0).any():
        raise ScoringError(f"{path}: values outside [0, 1]")
    return role, vals, ids


class ExternalMatrixStore:
    """Index of score-matrix files keyed by (role, record-id tuple).

    ``paths`` may name files or directories; directories are scanned
    non-recursively.  Lets multi-bucket runs resolve the right file per
    bucket by its member ids, which also catches provenance mismatches.
    """

    def __init__(self, paths: str | os.PathLike | Iterable[str | os.PathLike]):
        if isinstance(paths, (str, os.PathLike)):
            paths = [paths]
        self._matrices: dict[tuple[str, tuple[str, ...]], np.ndarray] = {}
        for p in paths:
            p = Path(p)
            files = sorted(p.iterdir()) if p.is_dir() else [p]
            for f in files:
                if f.is_dir():
                    continue
                role, vals, ids = read_score_matrix(f)
                self._matrices[(role, tuple(ids))] = vals

    def for_bucket(self, role: str, ids: tuple[str, ...]) -> np.ndarray:
        try:
            return self._matrices[(role, ids)]
        except KeyError:
            sizes = sorted({len(k[1]) for k in self._matrices if k[0] == role})
            raise ScoringError(
                f"no external {role} matrix matches bucket of {len(ids)} records "
                f"(ids {ids[0]}..{ids[-1]}); loaded {role} matrices have sizes {sizes}"
            ) from None
