"""Filtered ranking protocol, MRR / hits@k aggregation, PCA projection for
embedding plots, and neighbor suggestions for the inductive demonstration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .models import EvalTables


@dataclass
class QueryRank:
    triple: tuple[int, int, int]
    side: str          # "subject" or "object"
    rank: float


@dataclass
class RankingReport:
    queries: list[QueryRank]
    mrr: float
    hits1: float
    hits3: float
    model_id: str = ""
    split: str = ""
    filter_size: int = 0
    extras: dict = field(default_factory=dict)

    def table(self) -> str:
        head = f"{'split':<8} {'queries':>8} {'MRR':>8} {'hits@1':>8} {'hits@3':>8}"
        row = (f"{self.split:<8} {len(self.queries):>8d} {self.mrr:>8.4f} "
               f"{self.hits1:>8.4f} {self.hits3:>8.4f}")
        return head + "\n" + row

    def write_records(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for q in self.queries:
                f.write(json.dumps({"type": "query", "triple": list(q.triple),
                                    "side": q.side, "rank": q.rank}) + "\n")
            f.write(json.dumps({"type": "aggregate", "split": self.split,
                                "model": self.model_id, "n_queries": len(self.queries),
                                "mrr": self.mrr, "hits1": self.hits1, "hits3": self.hits3,
                                **self.extras}) + "\n")


def realistic_rank(distances: np.ndarray, truth: int, candidate_mask: np.ndarray) -> float:
    """Rank of the truth among the unfiltered candidates: 1 + #strictly better
    + #ties / 2 ('realistic' tie handling, lower distance is better)."""
    d_true = distances[truth]
    mask = candidate_mask.copy()
    mask[truth] = False
    better = int(np.count_nonzero(distances[mask] < d_true))
    ties = int(np.count_nonzero(distances[mask] == d_true))
    return 1.0 + better + 0.5 * ties


def rank_query(tables: EvalTables, triple, side: str, filter_set: set) -> float:
    """Filtered rank for one query; candidates that form another observed
    triple are removed, the truth entity itself never is."""
    s, p, o = (int(x) for x in triple)
    n = len(tables.entity)
    mask = np.ones(n, dtype=bool)
    if side == "object":
        distances = tables.distances_for_objects(s, p)
        truth = o
        for e in range(n):
            if (s, p, e) in filter_set:
                mask[e] = False
    elif side == "subject":
        distances = tables.distances_for_subjects(p, o)
        truth = s
        for e in range(n):
            if (e, p, o) in filter_set:
                mask[e] = False
    else:
        raise ConfigError(f"unknown query side {side!r}")
    mask[truth] = True
    return realistic_rank(distances, truth, mask)


def _filter_index(kg):
    """(s, p) -> observed objects and (p, o) -> observed subjects, over all splits."""
    by_sp: dict[tuple[int, int], list[int]] = {}
    by_po: dict[tuple[int, int], list[int]] = {}
    for arr in (kg.train, kg.valid, kg.test):
        for s, p, o in arr.tolist():
            by_sp.setdefault((s, p), []).append(o)
            by_po.setdefault((p, o), []).append(s)
    return by_sp, by_po


def evaluate_split(model, kg, split: str, max_queries: int | None = None,
                   tables: EvalTables | None = None) -> RankingReport:
    """Two filtered queries (subject and object side) per triple of the split."""
    triples = kg.split(split)
    if len(triples) == 0:
        raise ConfigError(f"split {split!r} is empty")
    if max_queries is not None and 2 * len(triples) > max_queries:
        keep = np.random.default_rng(0).choice(len(triples), size=max_queries // 2, replace=False)
        triples = triples[np.sort(keep)]
    if tables is None:
        tables = model.eval_tables()
    by_sp, by_po = _filter_index(kg)

    queries = []
    for s, p, o in triples.tolist():
        d_obj = tables.distances_for_objects(s, p)
        mask = np.ones(len(d_obj), dtype=bool)
        mask[by_sp[(s, p)]] = False
        mask[o] = True
        queries.append(QueryRank((s, p, o), "object", realistic_rank(d_obj, o, mask)))

        d_sub = tables.distances_for_subjects(p, o)
        mask = np.ones(len(d_sub), dtype=bool)
        mask[by_po[(p, o)]] = False
        mask[s] = True
        queries.append(QueryRank((s, p, o), "subject", realistic_rank(d_sub, s, mask)))

    ranks = np.array([q.rank for q in queries])
    return RankingReport(queries=queries,
                         mrr=float((1.0 / ranks).mean()),
                         hits1=float((ranks <= 1.0).mean()),
                         hits3=float((ranks <= 3.0).mean()),
                         model_id=getattr(model, "kind", ""),
                         split=split,
                         filter_size=kg.n_triples)


def pca_project(embeddings: np.ndarray, k: int = 2) -> np.ndarray:
    """Mean-centered projection onto the top-k principal directions with a
    deterministic sign convention (first nonzero loading positive). Degenerate
    covariance directions are padded with zeros."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise ConfigError("pca needs at least two embedding vectors")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / max(len(x) - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    out = np.zeros((len(x), k))
    for col, idx in enumerate(order):
        if eigvals[idx] <= 1e-12 * max(eigvals.max(), 1.0):
            continue  # degenerate direction stays zero
        v = eigvecs[:, idx]
        nz = np.nonzero(np.abs(v) > 1e-12)[0]
        if len(nz) and v[nz[0]] < 0:
            v = -v
        out[:, col] = centered @ v
    return out


def write_pca_csv(path, coords: np.ndarray, names: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("entity,x,y\n")
        for name, (x, y) in zip(names, coords):
            f.write(f"{name},{x:.9f},{y:.9f}\n")


def neighbor_suggestions(tables: EvalTables, new_embedding: np.ndarray,
                         relation: int, k: int) -> list[tuple[int, float]]:
    """Rank every candidate entity e by the decoder distance of
    (new node, relation, e); returns the top-k (entity, distance) ascending."""
    if not 0 <= relation < len(tables.relation):
        raise ConfigError(f"relation {relation} out of range")
    if tables.form == "l1":
        d = np.abs(new_embedding + tables.relation[relation] - tables.entity).sum(axis=1)
    else:
        d = -(tables.entity * (new_embedding * tables.relation[relation])).sum(axis=1)
    order = np.argsort(d, kind="stable")[:k]
    return [(int(e), float(d[e])) for e in order]
