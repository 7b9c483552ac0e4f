"""Relational graph convolution layer with mean-normalized neighbor pooling,
optional self-loop, frozen or trainable weights, and a hand-derived backward
pass that always propagates gradients to the initial embeddings.

Embeddings are handled in row layout here: E0T has one row per entity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, InductiveError
from .linalg import Param, init_normal, init_xavier
from .shallow import transe_distance


@dataclass
class RgcnLayer:
    w_rel: list[Param]            # one (d, d) matrix per relation direction
    w_self: Param | None          # self-loop weight, None means W_0 = 0
    activation: str = "identity"  # identity | relu
    dropout: float = 0.0
    frozen: bool = True

    def __post_init__(self):
        if self.activation not in ("identity", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def dim(self) -> int:
        return self.w_rel[0].value.shape[0]

    def params(self) -> list[Param]:
        return self.w_rel + ([self.w_self] if self.w_self is not None else [])


def build_layer(n_relation_dirs: int, dim: int, frozen: bool = True, self_loop: bool = True,
                activation: str = "identity", dropout: float = 0.0, seed=0,
                init: str = "xavier", gain: float = np.sqrt(2.0),
                normal_mean: float = 1.0, normal_std: float = 5.0,
                name_prefix: str = "conv") -> RgcnLayer:
    """Construct a layer with one weight matrix per relation direction.

    init="xavier" uses uniform Xavier with the given gain; init="normal"
    draws from N(normal_mean, normal_std^2) (used for spiking convolutions).
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = ss.spawn(n_relation_dirs + 1)

    def draw(s):
        rng = np.random.default_rng(s)
        if init == "xavier":
            return init_xavier((dim, dim), gain=gain, seed=rng)
        return init_normal((dim, dim), mean=normal_mean, std=normal_std, seed=rng)

    w_rel = [Param(f"{name_prefix}_w{r}", draw(seeds[r]), frozen=frozen)
             for r in range(n_relation_dirs)]
    w_self = Param(f"{name_prefix}_w_self", draw(seeds[-1]), frozen=frozen) if self_loop else None
    return RgcnLayer(w_rel, w_self, activation=activation, dropout=dropout, frozen=frozen)


class GraphOps:
    """Per-relation sparse averaging operators derived from the training
    neighborhoods: A_r is (m_r, n_entities) with row for center i holding
    1/|N_i^r| at the columns of N_i^r."""

    def __init__(self, kg, add_inverse: bool = False):
        self.n_entities = kg.n_entities
        self.add_inverse = add_inverse
        indexes = [kg.neighbor_index]
        if add_inverse:
            indexes.append(kg.inverse_index())
        self.n_relation_dirs = kg.n_relations * len(indexes)
        self.centers: list[np.ndarray] = []
        self.averagers: list[sp.csr_matrix] = []
        for block, index in enumerate(indexes):
            for r in range(kg.n_relations):
                rows, cols, vals = [], [], []
                centers = sorted(i for (i, p) in index if p == r)
                for row, i in enumerate(centers):
                    nbrs = index[(i, r)]
                    rows.extend([row] * len(nbrs))
                    cols.extend(nbrs.tolist())
                    vals.extend([1.0 / len(nbrs)] * len(nbrs))
                m = sp.csr_matrix((vals, (rows, cols)),
                                  shape=(len(centers), kg.n_entities), dtype=np.float64)
                self.centers.append(np.asarray(centers, dtype=np.int64))
                self.averagers.append(m)


@dataclass
class RgcnCache:
    """Forward intermediates consumed by the backward pass."""

    entities: np.ndarray                    # encoded entity ids (sorted)
    out: np.ndarray                         # (len(entities), d) layer output
    e0: np.ndarray                          # (n_entities, d) layer input rows
    pre: np.ndarray | None                  # post-dropout pre-activation (relu only)
    drop_mask: np.ndarray | None            # inverted-scale dropout mask
    rel_rows: list[tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)
    # (relation dir, center entity ids, positions into `out`)
    means: dict[int, np.ndarray] = field(default_factory=dict)  # dir -> pooled inputs (trainable only)


def rgcn_forward(layer: RgcnLayer, ops: GraphOps, e0: np.ndarray,
                 entities: np.ndarray | None = None, training: bool = False,
                 rng: np.random.Generator | None = None) -> RgcnCache:
    """out(i) = phi( sum_p mean_{j in N_i^p} W_p e0[j] + W_0 e0[i] ), with
    inverted dropout on the aggregated pre-activation while training.
    Entities with no neighbors and no self-loop map to phi(0)."""
    if entities is None:
        entities = np.arange(ops.n_entities, dtype=np.int64)
    else:
        entities = np.unique(np.asarray(entities, dtype=np.int64))
    n, d = len(entities), layer.dim
    out = np.zeros((n, d))
    cache = RgcnCache(entities=entities, out=out, e0=e0, pre=None, drop_mask=None)

    full = len(entities) == ops.n_entities
    for r in range(ops.n_relation_dirs):
        centers = ops.centers[r]
        if len(centers) == 0:
            continue
        if full:
            sel = np.arange(len(centers))
            pos = centers
        else:
            pos_in_entities = np.searchsorted(entities, centers)
            pos_in_entities = np.clip(pos_in_entities, 0, n - 1)
            mask = entities[pos_in_entities] == centers
            sel = np.nonzero(mask)[0]
            if len(sel) == 0:
                continue
            pos = pos_in_entities[sel]
        pooled = ops.averagers[r][sel] @ e0
        out[pos] += pooled @ layer.w_rel[r].value.T
        cache.rel_rows.append((r, centers[sel], pos))
        if not layer.frozen:
            cache.means[r] = pooled
    if layer.w_self is not None:
        out += e0[entities] @ layer.w_self.value.T

    if training and layer.dropout > 0.0:
        if rng is None:
            raise ConfigError("training-mode dropout needs an rng")
        keep = 1.0 - layer.dropout
        cache.drop_mask = (rng.random(out.shape) < keep) / keep
        out *= cache.drop_mask
    if layer.activation == "relu":
        cache.pre = out.copy()
        np.maximum(out, 0.0, out=out)
    return cache


def rgcn_backward(layer: RgcnLayer, ops: GraphOps, cache: RgcnCache,
                  upstream: np.ndarray) -> np.ndarray:
    """Backpropagate per-entity output gradients through the layer.

    Returns dL/de0 as an (n_entities, d) array; accumulates dL/dW into the
    layer params when the layer is trainable (frozen layers never touch a
    W gradient buffer).
    """
    if upstream.shape != cache.out.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match forward {cache.out.shape}")
    delta = upstream
    if layer.activation == "relu":
        delta = delta * (cache.pre > 0.0)
    if cache.drop_mask is not None:
        delta = delta * cache.drop_mask

    d_e0 = np.zeros_like(cache.e0)
    for r, centers_sel, pos in cache.rel_rows:
        delta_sel = delta[pos]
        full = len(cache.entities) == ops.n_entities
        if full:
            sel = np.arange(len(ops.centers[r]))
        else:
            sel = np.searchsorted(ops.centers[r], centers_sel)
        averager = ops.averagers[r][sel]
        d_e0 += averager.T @ (delta_sel @ layer.w_rel[r].value)
        if not layer.frozen:
            layer.w_rel[r].accumulate(delta_sel.T @ cache.means[r])
    if layer.w_self is not None:
        d_e0[cache.entities] += delta @ layer.w_self.value
        if not layer.frozen:
            layer.w_self.accumulate(delta.T @ cache.e0[cache.entities])
    return d_e0


def frozen_score(layer: RgcnLayer, ops: GraphOps, entity_emb: np.ndarray,
                 relation_emb: np.ndarray, triple) -> float:
    """Compose the encoder with the translational L1 decoder for one triple.

    entity_emb has one row per entity, relation_emb one row per relation.
    """
    s, p, o = (int(x) for x in triple)
    cache = rgcn_forward(layer, ops, entity_emb, entities=np.array([s, o]))
    row = {int(e): i for i, e in enumerate(cache.entities)}
    return transe_distance(cache.out[row[s]], relation_emb[p], cache.out[row[o]])


def inductive_embed(layer: RgcnLayer, e0_known: np.ndarray,
                    neighbors: list[tuple[int, int]]) -> np.ndarray:
    """Embed a node unseen during training purely from its neighborhood.

    `neighbors` lists (relation dir, entity id) pairs; e0_known is the
    (n_entities, d) matrix of trained initial embeddings. Requires a layer
    without self-loop: the center node's own embedding is never read.
    """
    if layer.w_self is not None:
        raise InductiveError("inductive embedding requires a layer without self-loop")
    if not neighbors:
        raise InductiveError("inductive embedding needs a non-empty neighborhood")
    by_rel: dict[int, list[int]] = {}
    for r, j in neighbors:
        if not 0 <= r < len(layer.w_rel):
            raise ConfigError(f"relation dir {r} out of range")
        by_rel.setdefault(int(r), []).append(int(j))
    out = np.zeros(layer.dim)
    for r, js in by_rel.items():
        out += layer.w_rel[r].value @ e0_known[sorted(set(js))].mean(axis=0)
    if layer.activation == "relu":
        np.maximum(out, 0.0, out=out)
    return out
