"""Model classes: encoder + decoder pairs with analytic gradients.

Every model exposes distances in "lower is more plausible" orientation (the
bilinear score is negated), a backward pass that accumulates d(sum_t coeff_t *
distance_t)/d(theta) into the parameter store, a smoothness signature for
finite-difference checking, and final embedding tables for ranking.

Entity embeddings are stored one row per entity (the transpose of the
d x |E| column convention; lookups are rows instead of columns).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, VocabularyError
from .graphs import KnowledgeGraph
from .linalg import Param, ParamStore, init_normal, init_xavier, load_checkpoint, save_checkpoint
from .rgcn import GraphOps, RgcnLayer, build_layer, rgcn_backward, rgcn_forward
from .spiking import (NlifConfig, SrgcnStructure, encode_populations, nonspike_penalty,
                      population_weight_grads, srgcn_backward, srgcn_encode)

XAVIER_GAIN = np.sqrt(2.0)

MODEL_KINDS = ("transe", "distmult", "rgcn-transe", "rgcn-distmult",
               "spike", "hybrid", "srgcn")
SPIKING_KINDS = ("spike", "hybrid", "srgcn")


@dataclass
class EvalTables:
    """Final per-entity embeddings and relation vectors for ranking.

    form "l1": d(s,p,o) = |F[s] + rel[p] - F[o]|_1
    form "bilinear": d(s,p,o) = -sum_k F[s,k] * rel[p,k] * F[o,k]
    """

    entity: np.ndarray
    relation: np.ndarray
    form: str

    def distances_for_objects(self, s: int, p: int) -> np.ndarray:
        if self.form == "l1":
            return np.abs(self.entity[s] + self.relation[p] - self.entity).sum(axis=1)
        return -(self.entity * (self.entity[s] * self.relation[p])).sum(axis=1)

    def distances_for_subjects(self, p: int, o: int) -> np.ndarray:
        if self.form == "l1":
            return np.abs(self.entity + self.relation[p] - self.entity[o]).sum(axis=1)
        return -(self.entity * (self.relation[p] * self.entity[o])).sum(axis=1)

    def distance(self, s: int, p: int, o: int) -> float:
        if self.form == "l1":
            return float(np.abs(self.entity[s] + self.relation[p] - self.entity[o]).sum())
        return float(-(self.entity[s] * self.relation[p] * self.entity[o]).sum())


def _rows(sorted_ids: np.ndarray, ids: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(sorted_ids, ids)
    if np.any(pos >= len(sorted_ids)) or np.any(sorted_ids[np.minimum(pos, len(sorted_ids) - 1)] != ids):
        raise ConfigError("triple references an entity outside the encoded set")
    return pos


class KbcModel:
    """Shared plumbing; subclasses implement the encoder/decoder specifics."""

    kind: str = ""
    decoder: str = "l1"

    def __init__(self, kg: KnowledgeGraph, cfg, seed_seq: np.random.SeedSequence):
        self.kg = kg
        self.cfg = cfg
        self.store = ParamStore()
        self._seeds = seed_seq.spawn(4)

    # --- interface -------------------------------------------------------
    def encode(self, entities=None, training: bool = False, rng=None):
        raise NotImplementedError

    def distances(self, cache, spo: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, cache, spo: np.ndarray, coeff: np.ndarray) -> None:
        raise NotImplementedError

    def signature(self, cache, spo: np.ndarray) -> tuple:
        return ()

    def regularizer(self, accumulate: bool = True) -> float:
        return 0.0

    def eval_tables(self) -> EvalTables:
        raise NotImplementedError

    def refresh(self) -> None:
        """Rebuild derived structures after checkpoint values were loaded."""

    # --- checkpointing ---------------------------------------------------
    def meta(self) -> dict:
        c = self.cfg
        return {"kind": self.kind, "dim": c.dim, "n_entities": self.kg.n_entities,
                "n_relations": self.kg.n_relations, "frozen": c.frozen,
                "self_loop": c.self_loop, "layers": c.layers, "activation": c.activation,
                "dropout": c.dropout, "add_inverse": c.add_inverse, "n_inputs": c.n_inputs,
                "tau_s": c.tau_s, "u_th": c.u_th, "l2_weight": c.l2_weight,
                "spike_reg": c.spike_reg, "seed": c.seed, "dataset": self.kg.name}

    def save(self, path) -> None:
        save_checkpoint(path, self.store, self.meta())


def _l2_regularize(params: list[Param], weight: float, accumulate: bool) -> float:
    loss = 0.0
    for p in params:
        loss += weight * float(np.square(p.value).sum())
        if accumulate:
            p.accumulate(2.0 * weight * p.value)
    return loss


class ShallowKbc(KbcModel):
    """Pure lookup encoder with TransE or DistMult decoding."""

    def __init__(self, kg, cfg, seed_seq):
        super().__init__(kg, cfg, seed_seq)
        self.kind = cfg.model
        self.decoder = "bilinear" if cfg.model.endswith("distmult") else "l1"
        d = cfg.dim
        self.entity = self.store.add(Param(
            "entity_emb", init_normal((kg.n_entities, d), 0.0, 1.0, self._seeds[0]),
            l2_weight=cfg.l2_weight))
        self.relation = self.store.add(Param(
            "relation_emb", init_xavier((kg.n_relations, d), XAVIER_GAIN, self._seeds[1]),
            l2_weight=cfg.l2_weight))

    def encode(self, entities=None, training=False, rng=None):
        return None

    def _triple_rows(self, spo):
        E, R = self.entity.value, self.relation.value
        return E[spo[:, 0]], R[spo[:, 1]], E[spo[:, 2]]

    def distances(self, cache, spo):
        S, P, O = self._triple_rows(spo)
        if self.decoder == "l1":
            return np.abs(S + P - O).sum(axis=1)
        return -(S * P * O).sum(axis=1)

    def backward(self, cache, spo, coeff):
        S, P, O = self._triple_rows(spo)
        if self.decoder == "l1":
            g = coeff[:, None] * np.sign(S + P - O)
            gs, gp, go = g, g, -g
        else:
            gs = -coeff[:, None] * P * O
            gp = -coeff[:, None] * S * O
            go = -coeff[:, None] * S * P
        self.entity.accumulate(gs, index=spo[:, 0])
        self.entity.accumulate(go, index=spo[:, 2])
        self.relation.accumulate(gp, index=spo[:, 1])

    def signature(self, cache, spo):
        if self.decoder != "l1":
            return ()
        S, P, O = self._triple_rows(spo)
        return (np.sign(S + P - O).astype(np.int8).tobytes(),)

    def regularizer(self, accumulate: bool = True):
        return _l2_regularize([self.entity, self.relation], self.cfg.l2_weight, accumulate)

    def eval_tables(self):
        return EvalTables(self.entity.value, self.relation.value, self.decoder)


class RgcnKbc(KbcModel):
    """Graph-convolutional encoder (frozen or trainable) with a shallow decoder."""

    def __init__(self, kg, cfg, seed_seq):
        super().__init__(kg, cfg, seed_seq)
        self.kind = cfg.model
        self.decoder = "bilinear" if cfg.model.endswith("distmult") else "l1"
        d = cfg.dim
        self.entity = self.store.add(Param(
            "entity_emb", init_normal((kg.n_entities, d), 0.0, 1.0, self._seeds[0]),
            l2_weight=cfg.l2_weight))
        self.relation = self.store.add(Param(
            "relation_emb", init_xavier((kg.n_relations, d), XAVIER_GAIN, self._seeds[1]),
            l2_weight=cfg.l2_weight))
        self.ops = GraphOps(kg, add_inverse=cfg.add_inverse)
        conv_seeds = self._seeds[2].spawn(cfg.layers)
        self.conv = [build_layer(self.ops.n_relation_dirs, d, frozen=cfg.frozen,
                                 self_loop=cfg.self_loop, activation=cfg.activation,
                                 dropout=cfg.dropout, seed=conv_seeds[i],
                                 gain=XAVIER_GAIN, name_prefix=f"conv{i}")
                     for i in range(cfg.layers)]
        for layer in self.conv:
            for p in layer.params():
                self.store.add(p)

    def encode(self, entities=None, training=False, rng=None):
        if len(self.conv) > 1:
            entities = None  # receptive field grows per layer; encode everything
        caches = []
        e0 = self.entity.value
        for i, layer in enumerate(self.conv):
            sub = entities if i == len(self.conv) - 1 else None
            cache = rgcn_forward(layer, self.ops, e0, entities=sub,
                                 training=training, rng=rng)
            caches.append(cache)
            if i < len(self.conv) - 1:
                e0 = cache.out
        return caches

    def _emb(self, caches):
        return caches[-1].entities, caches[-1].out

    def distances(self, cache, spo):
        ids, F = self._emb(cache)
        S = F[_rows(ids, spo[:, 0])]
        O = F[_rows(ids, spo[:, 2])]
        P = self.relation.value[spo[:, 1]]
        if self.decoder == "l1":
            return np.abs(S + P - O).sum(axis=1)
        return -(S * P * O).sum(axis=1)

    def backward(self, cache, spo, coeff):
        ids, F = self._emb(cache)
        srow, orow = _rows(ids, spo[:, 0]), _rows(ids, spo[:, 2])
        S, O = F[srow], F[orow]
        P = self.relation.value[spo[:, 1]]
        if self.decoder == "l1":
            g = coeff[:, None] * np.sign(S + P - O)
            gs, gp, go = g, g, -g
        else:
            gs = -coeff[:, None] * P * O
            gp = -coeff[:, None] * S * O
            go = -coeff[:, None] * S * P
        self.relation.accumulate(gp, index=spo[:, 1])
        upstream = np.zeros_like(F)
        np.add.at(upstream, srow, gs)
        np.add.at(upstream, orow, go)
        for i in reversed(range(len(self.conv))):
            upstream = rgcn_backward(self.conv[i], self.ops, cache[i], upstream)
        self.entity.accumulate(upstream)

    def signature(self, cache, spo):
        sig = []
        for c in cache:
            if c.pre is not None:
                sig.append((c.pre > 0).tobytes())
        if self.decoder == "l1":
            ids, F = self._emb(cache)
            resid = F[_rows(ids, spo[:, 0])] + self.relation.value[spo[:, 1]] - F[_rows(ids, spo[:, 2])]
            sig.append(np.sign(resid).astype(np.int8).tobytes())
        return tuple(sig)

    def regularizer(self, accumulate: bool = True):
        return _l2_regularize([self.entity, self.relation], self.cfg.l2_weight, accumulate)

    def eval_tables(self):
        cache = self.encode(entities=None, training=False)
        return EvalTables(cache[-1].out, self.relation.value, self.decoder)


class _SpikeBase(KbcModel):
    """Shared pieces of the spike-time models: the input populations and the
    spike-difference decoder."""

    def __init__(self, kg, cfg, seed_seq):
        super().__init__(kg, cfg, seed_seq)
        self.kind = cfg.model
        self.nlif = NlifConfig.evenly_spaced(cfg.n_inputs, tau_s=cfg.tau_s, u_th=cfg.u_th)
        self.weights = self.store.add(Param(
            "spike_w", init_normal((kg.n_entities, cfg.dim, cfg.n_inputs), 0.2, 1.0, self._seeds[0])))
        self.delta = self.store.add(Param(
            "rel_delta", init_xavier((kg.n_relations, cfg.dim), XAVIER_GAIN, self._seeds[1])))

    def _initial_times(self):
        return encode_populations(self.weights.value, self.nlif)

    def _decoder_grads(self, F, spo, coeff):
        """Returns (upstream dL/dF accumulated per entity row, and applies the
        relation-delta gradient). d = |F[s] - F[o] - delta_p|_1."""
        resid_sign = np.sign(F[spo[:, 0]] - F[spo[:, 2]] - self.delta.value[spo[:, 1]])
        g = coeff[:, None] * resid_sign
        upstream = np.zeros_like(F)
        np.add.at(upstream, spo[:, 0], g)
        np.add.at(upstream, spo[:, 2], -g)
        self.delta.accumulate(-g, index=spo[:, 1])
        return upstream

    def _spike_distances(self, F, spo):
        return np.abs(F[spo[:, 0]] - F[spo[:, 2]] - self.delta.value[spo[:, 1]]).sum(axis=1)

    def _input_layer_backward(self, d_times, causal, a_sel, b_sel):
        dtdw = population_weight_grads(self.weights.value, self.nlif, causal, a_sel, b_sel)
        self.weights.accumulate(d_times[:, :, None] * dtdw)

    def regularizer(self, accumulate: bool = True):
        loss, active = nonspike_penalty(self.weights.value, self.nlif, self.cfg.spike_reg)
        if accumulate and np.any(active):
            g = np.zeros_like(self.weights.value)
            g[active] = -self.cfg.spike_reg
            self.weights.accumulate(g)
        return loss

    def _penalty_signature(self):
        return (self.weights.value.sum(axis=-1) < self.nlif.u_th).tobytes()

    def eval_tables(self):
        cache = self.encode()
        return EvalTables(self._final_times(cache), -self.delta.value, "l1")

    def _final_times(self, cache):
        raise NotImplementedError


class SpikeKbc(_SpikeBase):
    """Shallow spike-time embeddings: entities are first-spike-time vectors,
    relations spike-time differences."""

    def encode(self, entities=None, training=False, rng=None):
        return self._initial_times()

    def _final_times(self, cache):
        return cache[0]

    def distances(self, cache, spo):
        return self._spike_distances(cache[0], spo)

    def backward(self, cache, spo, coeff):
        times, causal, a_sel, b_sel = cache
        upstream = self._decoder_grads(times, spo, coeff)
        self._input_layer_backward(upstream, causal, a_sel, b_sel)

    def signature(self, cache, spo):
        times, causal, a_sel, _ = cache
        resid = times[spo[:, 0]] - times[spo[:, 2]] - self.delta.value[spo[:, 1]]
        return (causal.tobytes(), np.isnan(a_sel).tobytes(), self._penalty_signature(),
                np.sign(resid).astype(np.int8).tobytes())


class HybridKbc(_SpikeBase):
    """Spike-time populations pooled through a frozen convolution of
    artificial neurons (a weighted average of spike times)."""

    def __init__(self, kg, cfg, seed_seq):
        super().__init__(kg, cfg, seed_seq)
        self.ops = GraphOps(kg, add_inverse=cfg.add_inverse)
        self.conv = build_layer(self.ops.n_relation_dirs, cfg.dim, frozen=True,
                                self_loop=cfg.self_loop, activation="identity",
                                dropout=cfg.dropout, seed=self._seeds[2],
                                gain=XAVIER_GAIN, name_prefix="conv0")
        for p in self.conv.params():
            self.store.add(p)

    def encode(self, entities=None, training=False, rng=None):
        times, causal, a_sel, b_sel = self._initial_times()
        conv = rgcn_forward(self.conv, self.ops, times, entities=None,
                            training=training, rng=rng)
        return (times, causal, a_sel, b_sel, conv)

    def _final_times(self, cache):
        return cache[4].out

    def distances(self, cache, spo):
        return self._spike_distances(cache[4].out, spo)

    def backward(self, cache, spo, coeff):
        times, causal, a_sel, b_sel, conv = cache
        upstream = self._decoder_grads(conv.out, spo, coeff)
        d_times = rgcn_backward(self.conv, self.ops, conv, upstream)
        self._input_layer_backward(d_times, causal, a_sel, b_sel)

    def signature(self, cache, spo):
        times, causal, a_sel, _, conv = cache
        resid = conv.out[spo[:, 0]] - conv.out[spo[:, 2]] - self.delta.value[spo[:, 1]]
        return (causal.tobytes(), np.isnan(a_sel).tobytes(), self._penalty_signature(),
                np.sign(resid).astype(np.int8).tobytes())


class SrgcnKbc(_SpikeBase):
    """Fully spiking convolution: the layer's units are integrate-and-fire
    neurons driven by the initial populations' spikes through frozen weights."""

    def __init__(self, kg, cfg, seed_seq):
        super().__init__(kg, cfg, seed_seq)
        self.ops = GraphOps(kg, add_inverse=cfg.add_inverse)
        self.conv = build_layer(self.ops.n_relation_dirs, cfg.dim, frozen=True,
                                self_loop=cfg.self_loop, activation="identity",
                                dropout=0.0, seed=self._seeds[2],
                                init="normal", normal_mean=1.0, normal_std=np.sqrt(5.0),
                                name_prefix="conv0")
        for p in self.conv.params():
            self.store.add(p)
        self.structure = SrgcnStructure(self.conv, self.ops, cfg.dim)
        self.last_fractions = None

    def refresh(self):
        self.structure = SrgcnStructure(self.conv, self.ops, self.cfg.dim)

    def encode(self, entities=None, training=False, rng=None):
        times, causal, a_sel, b_sel = self._initial_times()
        out = srgcn_encode(self.structure, times, self.nlif)
        self.last_fractions = out.fractions
        return (times, causal, a_sel, b_sel, out)

    def _final_times(self, cache):
        return cache[4].out_times

    def distances(self, cache, spo):
        return self._spike_distances(cache[4].out_times, spo)

    def backward(self, cache, spo, coeff):
        times, causal, a_sel, b_sel, out = cache
        upstream = self._decoder_grads(out.out_times, spo, coeff)
        d_times = srgcn_backward(self.structure, out, upstream, self.nlif)
        self._input_layer_backward(d_times, causal, a_sel, b_sel)

    def signature(self, cache, spo):
        times, causal, a_sel, _, out = cache
        resid = out.out_times[spo[:, 0]] - out.out_times[spo[:, 2]] - self.delta.value[spo[:, 1]]
        parts = [causal.tobytes(), np.isnan(a_sel).tobytes(), self._penalty_signature(),
                 np.sign(resid).astype(np.int8).tobytes()]
        for k, a_s, order in zip(out.causal, out.a_sel, out.orders):
            parts.append(k.tobytes())
            parts.append(np.isnan(a_s).tobytes())
            parts.append(order.tobytes())
        return tuple(parts)


def build_model(kg: KnowledgeGraph, cfg) -> KbcModel:
    if cfg.model not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {cfg.model!r}; choose from {MODEL_KINDS}")
    seed_seq = np.random.SeedSequence(cfg.seed)
    if cfg.model in ("transe", "distmult"):
        return ShallowKbc(kg, cfg, seed_seq)
    if cfg.model in ("rgcn-transe", "rgcn-distmult"):
        return RgcnKbc(kg, cfg, seed_seq)
    if cfg.model == "spike":
        return SpikeKbc(kg, cfg, seed_seq)
    if cfg.model == "hybrid":
        return HybridKbc(kg, cfg, seed_seq)
    return SrgcnKbc(kg, cfg, seed_seq)


def load_model(path, kg: KnowledgeGraph):
    """Rebuild a model from a checkpoint; the graph must match the one the
    checkpoint was trained on."""
    from .training import TrainConfig

    store, meta = load_checkpoint(path)
    if meta.get("n_entities") != kg.n_entities or meta.get("n_relations") != kg.n_relations:
        raise VocabularyError(
            f"checkpoint was trained on {meta.get('n_entities')} entities / "
            f"{meta.get('n_relations')} relations but the dataset has "
            f"{kg.n_entities} / {kg.n_relations}")
    cfg = TrainConfig(model=meta["kind"], dim=meta["dim"], frozen=meta["frozen"],
                      self_loop=meta["self_loop"], layers=meta["layers"],
                      activation=meta["activation"], dropout=meta["dropout"],
                      add_inverse=meta["add_inverse"], n_inputs=meta["n_inputs"],
                      tau_s=meta["tau_s"], u_th=meta["u_th"], l2_weight=meta["l2_weight"],
                      spike_reg=meta["spike_reg"], seed=meta["seed"])
    model = build_model(kg, cfg)
    model.store.load_state({p.name: p.value for p in store})
    model.refresh()
    return model, meta
