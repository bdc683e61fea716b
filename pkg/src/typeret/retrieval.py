"""Manifests, cosine ranking and the retrieval evaluation protocols."""
import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from typeret.embedding import GlobalDescriptor
from typeret.errors import (
    DimensionMismatchError,
    DuplicateImageIdError,
    NoTestImagesError,
    ValidationError,
)
from typeret.esvm import EsvmConfig, NegativePool, esvm_transform_all

MANIFEST_HEADER = ["image_id", "document_id", "type_label", "split", "path"]
SPLITS = ("train", "test")
ONE_VS_ALL = "one-vs-all"
ONE_VS_OTHER_DOCS = "one-vs-other-docs"
PROTOCOLS = (ONE_VS_ALL, ONE_VS_OTHER_DOCS)


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    document_id: str
    type_label: str
    split: str
    path: str


def validate_manifest(entries):
    seen = set()
    for e in entries:
        if not e.image_id or not e.document_id or not e.type_label:
            raise ValidationError(f"empty field in manifest row {e}")
        if e.split not in SPLITS:
            raise ValidationError(f"image {e.image_id!r}: split must be train or test, got {e.split!r}")
        if e.image_id in seen:
            raise DuplicateImageIdError(f"duplicate image_id {e.image_id!r}")
        seen.add(e.image_id)
    return entries


def read_manifest(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != MANIFEST_HEADER:
            raise ValidationError(f"manifest header must be {','.join(MANIFEST_HEADER)}")
        rows = []
        for lineno, row in enumerate(rd, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ValidationError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            rows.append(ManifestEntry(*row))
    return validate_manifest(rows)


def write_manifest(path, entries):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(MANIFEST_HEADER)
        for e in entries:
            wr.writerow([e.image_id, e.document_id, e.type_label, e.split, e.path])


@dataclass
class Ranking:
    query_id: str
    items: list  # (image_id, similarity), best first


def similarity_matrix(Q, G):
    """``Q @ G.T`` computed on unique rows, so identical vectors score identically.

    BLAS may round the same dot product differently depending on where a row
    sits in the matrix, which would break exact ties.
    """
    Q = np.asarray(Q, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if Q.shape[1] != G.shape[1]:
        raise DimensionMismatchError("query and gallery dimensions differ")
    Uq, iq = np.unique(Q, axis=0, return_inverse=True)
    Ug, ig = np.unique(G, axis=0, return_inverse=True)
    return (Uq @ Ug.T)[iq.reshape(-1)][:, ig.reshape(-1)]


def _order(sims, ids):
    # descending similarity, ascending image_id on ties
    id_rank = np.argsort(np.argsort(np.asarray(ids, dtype=object), kind="stable"), kind="stable")
    return np.lexsort((id_rank, -sims))


def rank(query, gallery, exclude=None):
    """Rank ``gallery`` by dot product with ``query``; ``exclude(g)`` drops items."""
    gallery = [g for g in gallery if g.image_id != query.image_id and not (exclude and exclude(g))]
    if not gallery:
        return Ranking(query.image_id, [])
    q = np.asarray(query.vector, dtype=np.float64)
    G = np.stack([np.asarray(g.vector, dtype=np.float64) for g in gallery])
    sims = similarity_matrix(q[None], G)[0]
    ids = [g.image_id for g in gallery]
    order = _order(sims, ids)
    return Ranking(query.image_id, [(ids[i], float(sims[i])) for i in order])


def average_precision(relevant):
    """Non-interpolated AP of a boolean relevance list in rank order; None if nothing relevant."""
    rel = np.asarray(relevant, dtype=bool)
    n_rel = int(rel.sum())
    if n_rel == 0:
        return None
    hits = np.cumsum(rel)
    ranks = np.arange(1, len(rel) + 1)
    return float(np.sum(hits[rel] / ranks[rel]) / n_rel)


@dataclass
class MetricsReport:
    top1: float
    top10: float
    map: float
    n_queries_scored: int
    n_queries_excluded: int
    protocol: str = ONE_VS_OTHER_DOCS
    esvm: bool = False

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def table(self):
        rows = [("protocol", self.protocol), ("esvm", "on" if self.esvm else "off"),
                ("Top-1", f"{self.top1:.1f}"), ("Top-10", f"{self.top10:.1f}"), ("mAP", f"{self.map:.1f}"),
                ("queries scored", str(self.n_queries_scored)),
                ("queries excluded", str(self.n_queries_excluded))]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _query_terms(q, S, ids, labels, docs, id_rank, other_docs):
    keep = np.ones(len(ids), dtype=bool)
    keep[q] = False
    if other_docs:
        keep &= docs != docs[q]
    idx = np.nonzero(keep)[0]
    order = idx[np.lexsort((id_rank[idx], -S[q, idx]))]
    rel = labels[order] == labels[q]
    ap = average_precision(rel)
    if ap is None:
        return None
    return float(rel[0]), float(rel[:10].any()), ap


def metrics_from_vectors(vectors, ids, labels, docs, protocol=ONE_VS_OTHER_DOCS,
                         score_zero_relevant=False, threads=1):
    """Top-1, Top-10 and mAP (percent) with every image as a query against all others."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    n = len(ids)
    if n == 0:
        raise NoTestImagesError("no test images to evaluate")
    V = np.asarray(vectors, dtype=np.float64)
    S = similarity_matrix(V, V)
    labels = np.asarray(labels, dtype=object)
    docs = np.asarray(docs, dtype=object)
    id_rank = np.argsort(np.argsort(np.asarray(ids, dtype=object), kind="stable"), kind="stable")
    other = protocol == ONE_VS_OTHER_DOCS

    def job(q):
        return _query_terms(q, S, ids, labels, docs, id_rank, other)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            terms = list(pool.map(job, range(n)))
    else:
        terms = [job(q) for q in range(n)]
    # reduce in query order so the sums do not depend on scheduling
    top1 = top10 = ap_sum = 0.0
    scored = excluded = 0
    for t in terms:
        if t is None:
            if not score_zero_relevant:
                excluded += 1
                continue
            t = (0.0, 0.0, 0.0)
        scored += 1
        top1 += t[0]
        top10 += t[1]
        ap_sum += t[2]
    if scored == 0:
        return MetricsReport(0.0, 0.0, 0.0, 0, excluded, protocol)
    return MetricsReport(100 * top1 / scored, 100 * top10 / scored, 100 * ap_sum / scored,
                         scored, excluded, protocol)


def evaluate(manifest, encodings, protocol=ONE_VS_OTHER_DOCS, use_esvm=False, negatives=None,
             esvm_cfg=None, score_zero_relevant=False, threads=1):
    """Evaluate the test split of ``manifest``.

    ``encodings`` maps image_id to a vector (or GlobalDescriptor). With
    ``use_esvm`` every test vector is first replaced by its ESVM weights,
    trained against ``negatives`` (default: the train-split encodings).
    """
    enc = {k: np.asarray(getattr(v, "vector", v), dtype=np.float64) for k, v in encodings.items()}
    test = [e for e in manifest if e.split == "test"]
    if not test:
        raise NoTestImagesError("manifest has no test images")
    missing = [e.image_id for e in test if e.image_id not in enc]
    if missing:
        raise ValidationError(f"{len(missing)} test images lack encodings, e.g. {missing[0]!r}")
    samples = [GlobalDescriptor(e.image_id, enc[e.image_id]) for e in test]
    if use_esvm:
        if negatives is None:
            train = [enc[e.image_id] for e in manifest if e.split == "train" and e.image_id in enc]
            if not train:
                raise ValidationError("ESVM needs train-split encodings as negatives")
            negatives = NegativePool(np.stack(train))
        samples = esvm_transform_all(samples, negatives, esvm_cfg or EsvmConfig(), threads)
    report = metrics_from_vectors([g.vector for g in samples], [e.image_id for e in test],
                                  [e.type_label for e in test], [e.document_id for e in test],
                                  protocol, score_zero_relevant, threads)
    report.esvm = bool(use_esvm)
    return report
