import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikekg.errors import ConfigError, ParseError, VocabularyError
from spikekg.graphs import (KnowledgeGraph, Vocab, build_neighbor_index, gen_federal_states,
                            gen_small_kg, load_dir, load_tsv, resolve_dataset, write_tsv)


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def test_load_tsv_counts(tmp_path):
    f = tmp_path / "train.tsv"
    write_lines(f, ["germany\tneighborOf\tfrance", "france\tlocatedIn\teurope"])
    triples, ents, rels = load_tsv(f)
    assert len(ents) == 3 and len(rels) == 2 and len(triples) == 2
    # first-encounter order
    assert ents.id_of("germany") == 0 and ents.id_of("france") == 1 and ents.id_of("europe") == 2


def test_load_tsv_malformed_line_reports_lineno(tmp_path):
    f = tmp_path / "bad.tsv"
    write_lines(f, ["a\tr\tb", "a\tr"])
    with pytest.raises(ParseError, match="bad.tsv:2"):
        load_tsv(f)


def test_frozen_vocab_rejects_unknown(tmp_path):
    f = tmp_path / "train.tsv"
    write_lines(f, ["a\tr\tb"])
    triples, ents, rels = load_tsv(f)
    ents.freeze()
    rels.freeze()
    g = tmp_path / "valid.tsv"
    write_lines(g, ["a\tr\tnew_entity"])
    with pytest.raises(VocabularyError):
        load_tsv(g, ents, rels)


def test_roundtrip_preserves_lines(tmp_path):
    f = tmp_path / "in.tsv"
    lines = ["a\tr1\tb", "b\tr2\tc", "c\tr1\ta"]
    write_lines(f, lines)
    triples, ents, rels = load_tsv(f)
    out = tmp_path / "out.tsv"
    write_tsv(out, triples, ents, rels)
    assert sorted(out.read_text().splitlines()) == sorted(lines)


def test_neighbor_index():
    train = np.array([[0, 0, 1], [0, 0, 2], [1, 0, 2]])
    idx = build_neighbor_index(train)
    assert idx[(0, 0)].tolist() == [1, 2]
    assert idx[(1, 0)].tolist() == [2]
    assert (2, 0) not in idx
    assert build_neighbor_index(np.empty((0, 3), dtype=np.int64)) == {}


def test_neighbor_index_order_invariant():
    rng = np.random.default_rng(0)
    train = rng.integers(0, 8, size=(40, 3))
    shuffled = train[rng.permutation(len(train))]
    a, b = build_neighbor_index(train), build_neighbor_index(shuffled)
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)


@pytest.mark.parametrize("name,stats", [
    ("countries_s1", (271, 2, 1110, 24, 24)),
    ("federal-states", (27, 2, 95, 10, 10)),
    ("synthetic-broodwar-like", (32, 5, 65, 11, 11)),
])
def test_bundled_dataset_statistics(name, stats):
    kg = resolve_dataset(name)
    assert kg.stats() == stats


def test_countries_total_triples_and_neighborhoods():
    kg = resolve_dataset("countries_s1")
    assert kg.n_triples == 1158
    # every country in the border graph has a non-empty neighborhood under
    # at least one relation
    nb = kg.relations.id_of("neighborOf")
    bordered = {s for (s, p) in kg.neighbor_index if p == nb}
    for s in bordered:
        assert any((s, p) in kg.neighbor_index for p in range(kg.n_relations))


def test_splits_pairwise_disjoint():
    for name in ("countries_s1", "federal-states", "synthetic-broodwar-like"):
        kg = resolve_dataset(name)
        sets = [set(map(tuple, arr.tolist())) for arr in (kg.train, kg.valid, kg.test)]
        assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])


def test_held_out_entities_covered_in_train():
    for name in ("countries_s1", "federal-states", "synthetic-broodwar-like"):
        kg = resolve_dataset(name)
        seen = set(kg.train[:, 0]) | set(kg.train[:, 2])
        for arr in (kg.valid, kg.test):
            assert all(s in seen and o in seen for s, _, o in arr)


def test_federal_states_generator_matches_bundled(tmp_path):
    kg = gen_federal_states()
    assert kg.stats() == (27, 2, 95, 10, 10)
    kg.write_dir(tmp_path / "fs")
    bundled = resolve_dataset("federal-states")
    regen = load_dir(tmp_path / "fs")
    for split in ("train", "valid", "test"):
        assert np.array_equal(bundled.split(split), regen.split(split))
    surf = {(kg.entities.surface_of(s), kg.relations.surface_of(p), kg.entities.surface_of(o))
            for s, p, o in kg.train.tolist() + kg.valid.tolist() + kg.test.tolist()}
    assert ("bavaria", "neighborOf", "baden-wuerttemberg") in surf


def test_gen_small_kg_deterministic(tmp_path):
    a = gen_small_kg(32, 5, 65, 11, 11, seed=7)
    b = gen_small_kg(32, 5, 65, 11, 11, seed=7)
    assert a.stats() == (32, 5, 65, 11, 11)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a.write_dir(tmp_path / "a")
    b.write_dir(tmp_path / "b")
    for split in ("train.tsv", "valid.tsv", "test.tsv", "entities.dict", "relations.dict"):
        assert (tmp_path / "a" / split).read_bytes() == (tmp_path / "b" / split).read_bytes()


def test_gen_small_kg_infeasible_counts():
    with pytest.raises(ConfigError):
        gen_small_kg(4, 1, 400, 5, 5, seed=0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gen_small_kg_splits_disjoint(seed):
    kg = gen_small_kg(14, 3, 30, 4, 4, seed=seed)
    sets = [set(map(tuple, arr.tolist())) for arr in (kg.train, kg.valid, kg.test)]
    assert len(sets[0] | sets[1] | sets[2]) == 38


def test_resolve_unknown_dataset():
    with pytest.raises(ConfigError):
        resolve_dataset("no-such-dataset")


def test_external_dataset_message():
    with pytest.raises(ConfigError, match="not bundled"):
        resolve_dataset("umls", data_root="/nonexistent")


def test_dict_files_round_trip(tmp_path):
    kg = resolve_dataset("federal-states")
    kg.write_dir(tmp_path / "fs")
    again = load_dir(tmp_path / "fs")
    assert again.entities.surfaces() == kg.entities.surfaces()
    assert again.relations.surfaces() == kg.relations.surfaces()


def test_vocab_is_case_sensitive():
    v = Vocab(["Europe"])
    assert "europe" not in v
    v.freeze()
    with pytest.raises(VocabularyError):
        v.id_of("europe")
