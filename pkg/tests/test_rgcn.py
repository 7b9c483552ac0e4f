import numpy as np
import pytest

from spikekg.errors import InductiveError
from spikekg.graphs import KnowledgeGraph, Vocab, gen_small_kg
from spikekg.linalg import Param, grad_check
from spikekg.models import build_model
from spikekg.rgcn import (GraphOps, RgcnLayer, build_layer, frozen_score, inductive_embed,
                          rgcn_backward, rgcn_forward)
from spikekg.shallow import transe_distance
from spikekg.training import TrainConfig, batch_loss_and_grads, corrupt_batch


def tiny_kg(triples, n_entities, n_relations=1):
    ents = Vocab([f"e{i}" for i in range(n_entities)])
    rels = Vocab([f"r{i}" for i in range(n_relations)])
    arr = np.array(triples, dtype=np.int64).reshape(len(triples), 3)
    return KnowledgeGraph(ents, rels, arr, arr[:0], arr[:0])


def identity_layer(n_rel, d, self_loop=False, scale_self=1.0):
    w_rel = [Param(f"w{r}", np.eye(d), frozen=True) for r in range(n_rel)]
    w_self = Param("w_self", scale_self * np.eye(d), frozen=True) if self_loop else None
    return RgcnLayer(w_rel, w_self, frozen=True)


def test_single_neighbor_identity_weights():
    kg = tiny_kg([(0, 0, 1)], 3)
    ops = GraphOps(kg)
    e0 = np.arange(9, dtype=float).reshape(3, 3)
    layer = identity_layer(1, 3)
    out = rgcn_forward(layer, ops, e0).out
    assert np.array_equal(out[0], e0[1])
    assert np.array_equal(out[2], np.zeros(3))  # no neighbors, no self-loop


def test_two_neighbors_mean():
    kg = tiny_kg([(0, 0, 1), (0, 0, 2)], 3)
    ops = GraphOps(kg)
    e0 = np.array([[0.0, 0.0], [2.0, 4.0], [4.0, 0.0]])
    layer = identity_layer(1, 2)
    out = rgcn_forward(layer, ops, e0).out
    assert np.allclose(out[0], [3.0, 2.0])


def test_isolated_node_with_scaled_self_loop():
    kg = tiny_kg([(1, 0, 2)], 3)
    ops = GraphOps(kg)
    e0 = np.random.default_rng(0).normal(size=(3, 4))
    layer = identity_layer(1, 4, self_loop=True, scale_self=2.0)
    out = rgcn_forward(layer, ops, e0).out
    assert np.allclose(out[0], 2.0 * e0[0])


def test_identity_weights_full_formula():
    # W_p = W_0 = I, identity activation, no dropout:
    # out(i) = sum_p mean_{j in N_i^p} e0[j] + e0[i] exactly
    kg = gen_small_kg(10, 3, 25, 3, 3, seed=5)
    ops = GraphOps(kg)
    rng = np.random.default_rng(1)
    e0 = rng.normal(size=(10, 4))
    layer = identity_layer(3, 4, self_loop=True)
    out = rgcn_forward(layer, ops, e0).out
    for i in range(10):
        expect = e0[i].copy()
        for p in range(3):
            if (i, p) in kg.neighbor_index:
                expect += e0[kg.neighbor_index[(i, p)]].mean(axis=0)
        assert np.allclose(out[i], expect)


def test_backward_identity_single_edge():
    kg = tiny_kg([(0, 0, 1)], 2)
    ops = GraphOps(kg)
    e0 = np.random.default_rng(0).normal(size=(2, 3))
    layer = identity_layer(1, 3)
    cache = rgcn_forward(layer, ops, e0)
    g = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
    d_e0 = rgcn_backward(layer, ops, cache, g)
    assert np.array_equal(d_e0[1], g[0])
    assert np.array_equal(d_e0[0], np.zeros(3))


def test_frozen_layer_has_no_grad_buffers():
    layer = build_layer(3, 4, frozen=True, self_loop=True, seed=0)
    assert all(p.grad is None for p in layer.params())


def test_forward_locality():
    # output of entity i depends only on e0 restricted to {i} union neighbors
    kg = gen_small_kg(12, 3, 30, 3, 3, seed=9)
    ops = GraphOps(kg)
    layer = build_layer(3, 4, frozen=True, self_loop=True, seed=1)
    rng = np.random.default_rng(2)
    e0 = rng.normal(size=(12, 4))
    i = 0
    receptive = {i} | {int(j) for p in range(3) for j in kg.neighbor_index.get((i, p), [])}
    outside = [e for e in range(12) if e not in receptive]
    assert outside
    base = rgcn_forward(layer, ops, e0).out[i].copy()
    e0[outside[0]] += 5.0
    assert np.array_equal(rgcn_forward(layer, ops, e0).out[i], base)


def test_subset_encode_matches_full():
    kg = gen_small_kg(15, 3, 40, 4, 4, seed=2)
    ops = GraphOps(kg)
    layer = build_layer(3, 5, frozen=True, self_loop=True, seed=3)
    e0 = np.random.default_rng(4).normal(size=(15, 5))
    full = rgcn_forward(layer, ops, e0).out
    subset = np.array([2, 7, 11])
    part = rgcn_forward(layer, ops, e0, entities=subset)
    assert np.allclose(part.out, full[subset])


def test_frozen_score_composes():
    kg = gen_small_kg(8, 2, 16, 2, 2, seed=3)
    ops = GraphOps(kg)
    layer = build_layer(2, 4, frozen=True, self_loop=True, seed=5)
    rng = np.random.default_rng(6)
    ent = rng.normal(size=(8, 4))
    rel = rng.normal(size=(2, 4))
    out = rgcn_forward(layer, ops, ent).out
    s, p, o = kg.train[0]
    expect = transe_distance(out[s], rel[p], out[o])
    assert frozen_score(layer, ops, ent, rel, (s, p, o)) == pytest.approx(expect, rel=1e-12)


def test_frozen_score_degenerates_to_shallow_transe():
    # no edges, W_0 = I: reduces exactly to shallow TransE
    kg = tiny_kg([], 4)
    ops = GraphOps(kg)
    layer = identity_layer(1, 3, self_loop=True)
    rng = np.random.default_rng(7)
    ent = rng.normal(size=(4, 3))
    rel = rng.normal(size=(1, 3))
    for s in range(4):
        for o in range(4):
            assert frozen_score(layer, ops, ent, rel, (s, 0, o)) == pytest.approx(
                transe_distance(ent[s], rel[0], ent[o]))


def test_grad_check_full_pipeline_trainable_weights():
    kg = gen_small_kg(6, 3, 12, 2, 2, seed=1)
    rng = np.random.default_rng(8)
    cfg = TrainConfig(model="rgcn-transe", dim=4, frozen=False, self_loop=True,
                      dropout=0.0, seed=4)
    model = build_model(kg, cfg)
    pos = kg.train[rng.choice(len(kg.train), size=5, replace=False)]
    neg = corrupt_batch(pos, 3, kg.n_entities, rng)

    def loss_fn():
        return batch_loss_and_grads(model, pos, neg, cfg, training=False, accumulate=False)

    model.store.zero_grads()
    batch_loss_and_grads(model, pos, neg, cfg, training=False, accumulate=True)
    assert grad_check(loss_fn, list(model.store), eps=1e-6) < 1e-4


def test_grad_check_with_fixed_dropout_mask():
    # dropout active but deterministic per evaluation: fresh rng each call
    kg = gen_small_kg(6, 3, 12, 2, 2, seed=1)
    rng = np.random.default_rng(12)
    cfg = TrainConfig(model="rgcn-transe", dim=4, frozen=True, self_loop=True,
                      dropout=0.3, seed=4)
    model = build_model(kg, cfg)
    pos = kg.train[rng.choice(len(kg.train), size=5, replace=False)]
    neg = corrupt_batch(pos, 3, kg.n_entities, rng)

    def loss_fn():
        return batch_loss_and_grads(model, pos, neg, cfg, training=True,
                                    rng=np.random.default_rng(99), accumulate=False)

    model.store.zero_grads()
    batch_loss_and_grads(model, pos, neg, cfg, training=True,
                         rng=np.random.default_rng(99), accumulate=True)
    assert grad_check(loss_fn, list(model.store), eps=1e-6) < 1e-4


def test_relu_activation_and_backward():
    kg = gen_small_kg(6, 3, 12, 2, 2, seed=1)
    rng = np.random.default_rng(21)
    cfg = TrainConfig(model="rgcn-transe", dim=4, frozen=False, self_loop=True,
                      activation="relu", dropout=0.0, seed=6)
    model = build_model(kg, cfg)
    pos = kg.train[rng.choice(len(kg.train), size=5, replace=False)]
    neg = corrupt_batch(pos, 3, kg.n_entities, rng)

    def loss_fn():
        return batch_loss_and_grads(model, pos, neg, cfg, training=False, accumulate=False)

    model.store.zero_grads()
    batch_loss_and_grads(model, pos, neg, cfg, training=False, accumulate=True)
    assert grad_check(loss_fn, list(model.store), eps=1e-6) < 1e-4


def test_two_layer_stack_grad_check():
    kg = gen_small_kg(6, 3, 12, 2, 2, seed=1)
    rng = np.random.default_rng(23)
    cfg = TrainConfig(model="rgcn-transe", dim=3, frozen=False, self_loop=True,
                      layers=2, dropout=0.0, seed=8)
    model = build_model(kg, cfg)
    pos = kg.train[rng.choice(len(kg.train), size=4, replace=False)]
    neg = corrupt_batch(pos, 2, kg.n_entities, rng)

    def loss_fn():
        return batch_loss_and_grads(model, pos, neg, cfg, training=False, accumulate=False)

    model.store.zero_grads()
    batch_loss_and_grads(model, pos, neg, cfg, training=False, accumulate=True)
    assert grad_check(loss_fn, list(model.store), eps=1e-6) < 1e-4


def test_inductive_single_neighbor_identity():
    layer = identity_layer(1, 3)
    e0 = np.random.default_rng(0).normal(size=(4, 3))
    out = inductive_embed(layer, e0, [(0, 2)])
    assert np.array_equal(out, e0[2])


def test_inductive_requires_no_self_loop():
    layer = identity_layer(1, 3, self_loop=True)
    with pytest.raises(InductiveError):
        inductive_embed(layer, np.zeros((4, 3)), [(0, 1)])


def test_inductive_empty_neighborhood():
    layer = identity_layer(1, 3)
    with pytest.raises(InductiveError):
        inductive_embed(layer, np.zeros((4, 3)), [])


def test_inductive_changes_with_neighborhood():
    layer = build_layer(2, 4, frozen=True, self_loop=False, seed=10)
    e0 = np.random.default_rng(11).normal(size=(6, 4))
    a = inductive_embed(layer, e0, [(0, 1), (0, 2)])
    b = inductive_embed(layer, e0, [(0, 1), (0, 3)])
    assert np.abs(a - b).sum() > 0


def test_add_inverse_relations_flag():
    kg = tiny_kg([(0, 0, 1)], 3)
    ops = GraphOps(kg, add_inverse=True)
    assert ops.n_relation_dirs == 2
    layer = identity_layer(2, 2)
    e0 = np.array([[1.0, 2.0], [5.0, -1.0], [0.0, 0.0]])
    out = rgcn_forward(layer, ops, e0).out
    assert np.array_equal(out[0], e0[1])  # outgoing edge
    assert np.array_equal(out[1], e0[0])  # inverse direction
