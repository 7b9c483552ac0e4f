#!/usr/bin/env python3
"""Regenerate the bundled countries_s1 dataset from the vendored
world-countries v1.7.3 snapshot (scripts/world_countries_v1.7.3.json,
extracted from the `world-countries` npm package, ODbL).

Construction: keep entries with a non-Antarctic region and a subregion
(244 countries, 5 regions, 22 subregions). Facts are
  country neighborOf country      (border lists as published, 648 edges)
  country locatedIn region        (244)
  country locatedIn subregion     (244)
  subregion locatedIn region      (22)
for 1,158 triples. The S1 task holds out the (country, locatedIn, region)
triple of 24 validation and 24 test countries that have at least one
neighbor; everything else is training (1,110 triples).

Usage: python scripts/make_countries_dataset.py [out_dir]
"""

import json
import os
import re
import sys

import numpy as np

SEED = 1158


def norm(name):
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        here, "..", "src", "spikekg", "data", "countries_s1")
    with open(os.path.join(here, "world_countries_v1.7.3.json"), encoding="utf-8") as f:
        raw = json.load(f)

    kept = [c for c in raw if c.get("region") and c["region"] != "Antarctic" and c.get("subregion")]
    kept.sort(key=lambda c: c["cca3"])
    by_cca3 = {c["cca3"]: c for c in kept}
    name_of = {c["cca3"]: norm(c["name"]) for c in kept}
    # the country FSM and the subregion share the label "micronesia"
    name_of["FSM"] = "federated_states_of_micronesia"

    triples = []
    for c in kept:
        me = name_of[c["cca3"]]
        for b in c["borders"]:
            if b in by_cca3:
                triples.append((me, "neighborOf", name_of[b]))
        triples.append((me, "locatedIn", norm(c["region"])))
        triples.append((me, "locatedIn", norm(c["subregion"])))
    for sub, reg in sorted({(norm(c["subregion"]), norm(c["region"])) for c in kept}):
        triples.append((sub, "locatedIn", reg))
    assert len(triples) == len(set(triples)) == 1158, len(triples)

    with_border = sorted({name_of[c["cca3"]] for c in kept if any(b in by_cca3 for b in c["borders"])})
    rng = np.random.default_rng(SEED)
    held_countries = [with_border[i] for i in rng.choice(len(with_border), size=48, replace=False)]
    regions = {norm(c["region"]) for c in kept}
    country_names = {name_of[c["cca3"]] for c in kept}
    region_triple = {s: (s, p, o) for (s, p, o) in triples
                     if p == "locatedIn" and o in regions and s in country_names}
    valid = [region_triple[c] for c in held_countries[:24]]
    test = [region_triple[c] for c in held_countries[24:]]
    held = set(valid) | set(test)
    train = [t for t in triples if t not in held]
    assert len(train) == 1110

    os.makedirs(out_dir, exist_ok=True)
    for split, rows in (("train", train), ("valid", valid), ("test", test)):
        with open(os.path.join(out_dir, f"{split}.tsv"), "w", encoding="utf-8") as f:
            for s, p, o in rows:
                f.write(f"{s}\t{p}\t{o}\n")
    # dictionaries in first-encounter order of the train split, like the loader
    ents, rels = [], []
    for s, p, o in train + valid + test:
        for e in (s, o):
            if e not in ents:
                ents.append(e)
        if p not in rels:
            rels.append(p)
    with open(os.path.join(out_dir, "entities.dict"), "w", encoding="utf-8") as f:
        for i, e in enumerate(ents):
            f.write(f"{i}\t{e}\n")
    with open(os.path.join(out_dir, "relations.dict"), "w", encoding="utf-8") as f:
        for i, r in enumerate(rels):
            f.write(f"{i}\t{r}\n")
    print(f"countries_s1: {len(ents)} entities, {len(rels)} relations, "
          f"{len(train)}/{len(valid)}/{len(test)} triples -> {out_dir}")


if __name__ == "__main__":
    main()
