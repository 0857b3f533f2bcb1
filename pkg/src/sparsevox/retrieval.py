"""Embedding ranking and retrieval metrics: AP, mAP, 11-point PR curve, AUC.

Ranking is by ascending cosine distance from the query (optionally plain
euclidean), queries are excluded from their own candidate lists, and queries
with no relevant candidate are reported as skipped rather than averaged in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

RECALL_LEVELS = np.arange(11) / 10.0


@dataclass
class EmbeddingSet:
    ids: list[str]
    vectors: np.ndarray          # (n, d)
    labels: np.ndarray           # (n,) anything comparable with ==

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        n = len(self.ids)
        if self.vectors.shape[0] != n or self.labels.shape[0] != n:
            raise ValueError("ids, vectors and labels must have equal length")

    def __len__(self) -> int:
        return len(self.ids)


def cosine_distances(query: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    qn = np.linalg.norm(query)
    vn = np.linalg.norm(vectors, axis=1)
    if qn == 0.0:
        raise ValueError("zero-norm query vector")
    if np.any(vn == 0.0):
        raise ValueError("zero-norm candidate vector")
    return 1.0 - (vectors @ query) / (vn * qn)


def l2_distances(query: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    return np.linalg.norm(vectors - query, axis=1)


def rank(query: np.ndarray, vectors: np.ndarray, metric: str = "cosine"
         ) -> np.ndarray:
    """Candidate row indices sorted by ascending distance, ties in row order."""
    if metric == "cosine":
        d = cosine_distances(np.asarray(query, dtype=np.float64), vectors)
    elif metric == "l2":
        d = l2_distances(np.asarray(query, dtype=np.float64), vectors)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return np.argsort(d, kind="stable")


def _seq_sum(values: np.ndarray) -> float:
    """Strict left-to-right summation (reproducible across array sizes)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return 0.0
    return float(np.cumsum(values)[-1])


def average_precision(ranked_labels, query_label) -> float | None:
    """Mean of precision@k over the relevant ranks; None if nothing is relevant."""
    ranked_labels = np.asarray(ranked_labels)
    relevant = ranked_labels == query_label
    total = int(relevant.sum())
    if total == 0:
        return None
    ranks = np.flatnonzero(relevant) + 1
    hits = np.arange(1, total + 1)
    return _seq_sum(hits / ranks) / total


def interpolated_precision(ranked_labels, query_label,
                           levels: np.ndarray = RECALL_LEVELS) -> np.ndarray | None:
    """Interpolated precision max_{r' >= r} p(r') at the given recall levels."""
    ranked_labels = np.asarray(ranked_labels)
    relevant = (ranked_labels == query_label).astype(np.float64)
    total = relevant.sum()
    if total == 0:
        return None
    k = np.arange(1, len(ranked_labels) + 1)
    cum = np.cumsum(relevant)
    precision = cum / k
    recall = cum / total
    # running max of precision from the tail gives the interpolation
    p_interp = np.maximum.accumulate(precision[::-1])[::-1]
    out = np.zeros(len(levels))
    for i, level in enumerate(levels):
        mask = recall >= level - 1e-12
        out[i] = p_interp[mask].max() if mask.any() else 0.0
    return out


@dataclass
class RetrievalResult:
    map: float
    auc: float
    pr_curve: np.ndarray                 # (11, 2) recall, precision columns
    per_query_ap: list[float]
    query_ids: list[str]
    ranked: list[np.ndarray] = field(repr=False)
    n_queries: int = 0
    n_skipped: int = 0

    def to_metrics_dict(self) -> dict:
        return {"map": self.map, "auc": self.auc,
                "n_queries": self.n_queries, "n_skipped": self.n_skipped}


def evaluate(emb: EmbeddingSet, query_indices=None, metric: str = "cosine"
             ) -> RetrievalResult:
    """Leave-query-out retrieval over the embedding set.

    Zero-norm rows are never admitted to ranking: as queries they count as
    skipped, as candidates they are dropped.
    """
    n = len(emb)
    if n == 0:
        raise ValueError("empty embedding set")
    if query_indices is None:
        query_indices = np.arange(n)
    query_indices = np.asarray(query_indices, dtype=np.int64)
    if len(query_indices) == 0:
        raise ValueError("empty query set")
    norms = np.linalg.norm(emb.vectors, axis=1)
    usable = norms > 0.0

    aps: list[float] = []
    curves: list[np.ndarray] = []
    ranked_lists: list[np.ndarray] = []
    kept_ids: list[str] = []
    skipped = 0
    for qi in query_indices:
        if not usable[qi]:
            skipped += 1
            continue
        cand = np.flatnonzero(usable)
        cand = cand[cand != qi]
        if metric == "cosine":
            d = cosine_distances(emb.vectors[qi], emb.vectors[cand])
        else:
            d = l2_distances(emb.vectors[qi], emb.vectors[cand])
        order = cand[np.argsort(d, kind="stable")]
        labels = emb.labels[order]
        ap = average_precision(labels, emb.labels[qi])
        if ap is None:
            skipped += 1
            continue
        aps.append(ap)
        curves.append(interpolated_precision(labels, emb.labels[qi]))
        ranked_lists.append(order)
        kept_ids.append(emb.ids[qi])
    if not aps:
        raise DataError("every query was skipped (no relevant candidates)")
    stacked = np.stack(curves)
    mean_curve = np.array([_seq_sum(stacked[:, i]) / stacked.shape[0]
                           for i in range(stacked.shape[1])])
    deltas = np.diff(RECALL_LEVELS)
    auc = _seq_sum(deltas * (mean_curve[1:] + mean_curve[:-1]) / 2.0)
    pr = np.column_stack([RECALL_LEVELS, mean_curve])
    return RetrievalResult(map=_seq_sum(aps) / len(aps), auc=auc, pr_curve=pr,
                           per_query_ap=aps, query_ids=kept_ids,
                           ranked=ranked_lists, n_queries=len(aps),
                           n_skipped=skipped)


def select_queries_per_class(labels: np.ndarray, per_class: int,
                             rng: np.random.Generator) -> np.ndarray:
    """Sample up to per_class query indices per label, capping with a warning."""
    import logging
    labels = np.asarray(labels)
    picked = []
    for value in sorted(set(labels.tolist())):
        members = np.flatnonzero(labels == value)
        if len(members) < per_class:
            logging.getLogger(__name__).warning(
                "class %r has only %d samples; capping queries at that",
                value, len(members))
            picked.append(members)
        else:
            picked.append(rng.choice(members, size=per_class, replace=False))
    return np.sort(np.concatenate(picked))


# -- file formats ---------------------------------------------------------

def write_embeddings_csv(path, ids, labels, vectors) -> None:
    """id,label,v0..v{d-1}; floats printed with repr so parsing round-trips."""
    vectors = np.asarray(vectors)
    d = vectors.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write("id,label," + ",".join(f"v{i}" for i in range(d)) + "\n")
        for sid, lab, vec in zip(ids, labels, vectors):
            row = ",".join(repr(float(x)) for x in vec)
            fh.write(f"{sid},{lab},{row}\n")


def read_embeddings_csv(path) -> EmbeddingSet:
    ids, labels, rows = [], [], []
    try:
        with open(path) as fh:
            header = fh.readline().strip()
            cols = header.split(",")
            if cols[:2] != ["id", "label"]:
                raise DataError(f"{path}: expected id,label,v0.. header")
            dim = len(cols) - 2
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != dim + 2:
                    raise DataError(f"{path}: line {lineno}: expected "
                                    f"{dim + 2} fields, got {len(parts)}")
                ids.append(parts[0])
                labels.append(parts[1])
                try:
                    rows.append([float(x) for x in parts[2:]])
                except ValueError:
                    raise DataError(
                        f"{path}: line {lineno}: non-numeric value") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    if not ids:
        raise DataError(f"{path}: no embedding rows")
    return EmbeddingSet(ids, np.array(rows, dtype=np.float64),
                        np.array(labels, dtype=object))


def write_pr_csv(path, pr_curve: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("recall,precision\n")
        for r, p in pr_curve:
            fh.write(f"{repr(float(r))},{repr(float(p))}\n")


def write_metrics_json(path, result: RetrievalResult) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_metrics_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
