"""Command-line entry point: train, eval, bench, inductive, gen-dataset.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. Thread count
is applied to the BLAS pools before numpy is imported, so the heavy modules
are imported lazily inside the command handlers.
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# hyperparameter ledger: (dataset, model) -> overrides applied on top of
# TrainConfig defaults; command-line flags win over everything
DATASET_DEFAULTS = {
    ("countries_s1", "transe"): {"dim": 32},
    ("umls", "transe"): {"dim": 64},
    ("fb15k-237", "transe"): {"dim": 128},
    ("federal-states", "transe"): {"dim": 16},
    ("synthetic-broodwar-like", "transe"): {"dim": 32},
    ("countries_s1", "distmult"): {"dim": 6, "lr": 5e-2},
    ("umls", "distmult"): {"dim": 32},
    ("fb15k-237", "distmult"): {"dim": 32},
    ("countries_s1", "rgcn-transe"): {"dim": 64, "dropout": 0.2},
    ("umls", "rgcn-transe"): {"dim": 128, "dropout": 0.2},
    ("fb15k-237", "rgcn-transe"): {"dim": 128, "dropout": 0.2, "batch_size": 20000,
                                   "encoder_subsample": 0.5, "max_epochs": 200},
    ("countries_s1", "rgcn-distmult"): {"dim": 56, "dropout": 0.2},
    ("umls", "rgcn-distmult"): {"dim": 32, "lr": 1e-2, "dropout": 0.2},
    ("fb15k-237", "rgcn-distmult"): {"dim": 128, "dropout": 0.2, "batch_size": 20000,
                                     "encoder_subsample": 0.5, "max_epochs": 200},
    ("countries_s1", "spike"): {"dim": 32, "n_inputs": 40, "lr": 1e-2},
    ("umls", "spike"): {"dim": 32, "n_inputs": 20, "lr": 1e-2},
    ("countries_s1", "hybrid"): {"dim": 64, "n_inputs": 40, "dropout": 0.2},
    ("umls", "hybrid"): {"dim": 64, "n_inputs": 40, "dropout": 0.2},
    ("federal-states", "srgcn"): {"dim": 32, "n_inputs": 16, "negatives": 5},
    ("synthetic-broodwar-like", "srgcn"): {"dim": 16, "n_inputs": 16},
}


def _apply_threads(threads):
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def _out_dir(args) -> str:
    out = args.out or os.environ.get("SPIKEKG_OUT", "runs")
    os.makedirs(out, exist_ok=True)
    return out


def _resolve_config(args):
    """Defaults <- (dataset, model) registry <- config file <- explicit flags."""
    from .training import TrainConfig

    values = {}
    if args.config:
        file_cfg, _ = TrainConfig.from_file(args.config)
        values.update(vars(file_cfg))
        if args.model is None:
            args.model = values.get("model")
    model = args.model or values.get("model") or "transe"
    if not args.config:
        values.update(DATASET_DEFAULTS.get((args.dataset, model), {}))
    values["model"] = model
    flag_map = {"dim": "dim", "inputs": "n_inputs", "lr": "lr", "margin": "margin",
                "negatives": "negatives", "batch_size": "batch_size", "epochs": "max_epochs",
                "eval_every": "eval_every", "dropout": "dropout", "l2": "l2_weight",
                "spike_reg": "spike_reg", "seed": "seed", "layers": "layers",
                "activation": "activation", "subsample": "encoder_subsample"}
    for flag, field in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[field] = v
    for flag in ("frozen", "self_loop", "add_inverse"):
        v = getattr(args, flag, None)
        if v is not None:
            values[flag] = v
    return TrainConfig(**values)


def cmd_train(args) -> int:
    from .evaluation import evaluate_split
    from .models import build_model
    from .training import fit, write_log_csv

    from .graphs import resolve_dataset

    kg = resolve_dataset(args.dataset, data_root=args.data_root)
    cfg = _resolve_config(args)
    out = _out_dir(args)
    cfg.to_file(os.path.join(out, "config.txt"), extra={"dataset": args.dataset})

    model = build_model(kg, cfg)
    result = fit(model, kg, cfg, quiet=args.quiet, eval_max_queries=args.max_queries)
    model.save(os.path.join(out, "checkpoint.ckpt"))
    write_log_csv(os.path.join(out, "train_log.csv"), result.log)
    report = evaluate_split(model, kg, "valid", max_queries=args.max_queries)
    print(f"best epoch {result.best_epoch} (valid MRR {result.best_valid_mrr:.4f})")
    print(report.table())
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import evaluate_split
    from .graphs import resolve_dataset
    from .models import load_model

    kg = resolve_dataset(args.dataset, data_root=args.data_root)
    model, meta = load_model(args.checkpoint, kg)
    out = _out_dir(args)
    tables = model.eval_tables()
    for split in args.splits.split(","):
        report = evaluate_split(model, kg, split.strip(), max_queries=args.max_queries,
                                tables=tables)
        if getattr(model, "last_fractions", None) is not None:
            fr = model.last_fractions
            report.extras["causal_fraction_mean"] = float(fr.mean())
            report.extras["causal_fraction_std"] = float(fr.std())
        print(report.table())
        if report.extras:
            print(f"  causal spike fraction: {report.extras['causal_fraction_mean']:.4f}"
                  f" +- {report.extras['causal_fraction_std']:.4f}")
        report.write_records(os.path.join(out, f"report_{split.strip()}.jsonl"))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench_backward, write_bench_csv, write_speedup_csv
    from .graphs import resolve_dataset

    kg = resolve_dataset(args.dataset, data_root=args.data_root)
    dims = [int(d) for d in args.dims.split(",")]
    records, summary = bench_backward(kg, dims, reps=args.reps,
                                      batch_size=args.batch_size or 64, seed=args.seed or 42)
    out = _out_dir(args)
    write_bench_csv(os.path.join(out, "bench_records.csv"), records)
    write_speedup_csv(os.path.join(out, "bench_speedup.csv"), summary)
    print(f"{'dim':>5} {'speedup':>9} {'mem_reduction':>14}")
    for row in summary:
        print(f"{row['dim']:>5d} {row['speedup']:>9.4f} {row['memory_reduction']:>14.4f}")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_inductive(args) -> int:
    import numpy as np

    from .evaluation import neighbor_suggestions, pca_project, write_pca_csv
    from .graphs import resolve_dataset
    from .models import load_model
    from .rgcn import inductive_embed

    kg = resolve_dataset(args.dataset, data_root=args.data_root)
    model, meta = load_model(args.checkpoint, kg)
    if not hasattr(model, "conv") or not hasattr(model, "entity"):
        from .errors import ConfigError
        raise ConfigError("the inductive demo needs a graph-convolution checkpoint")

    neighbors = []
    for part in args.neighbors.split(","):
        ent, _, rel = part.strip().partition(":")
        if not rel:
            from .errors import ConfigError
            raise ConfigError(f"bad neighbor spec {part!r}; expected entity:relation")
        neighbors.append((kg.relations.id_of(rel), kg.entities.id_of(ent)))
    layer = model.conv[0] if isinstance(model.conv, list) else model.conv
    new_emb = inductive_embed(layer, model.entity.value, neighbors)

    tables = model.eval_tables()
    out = _out_dir(args)
    coords = pca_project(np.vstack([tables.entity, new_emb[None, :]]))
    write_pca_csv(os.path.join(out, "pca.csv"),
                  coords, kg.entities.surfaces() + ["<new-node>"])
    rel = neighbors[0][0] if args.relation is None else kg.relations.id_of(args.relation)
    ranked = neighbor_suggestions(tables, new_emb, rel, args.k)
    print(f"top-{args.k} suggestions for ({kg.relations.surface_of(rel)}):")
    with open(os.path.join(out, "suggestions.txt"), "w", encoding="utf-8") as f:
        for e, d in ranked:
            line = f"{kg.entities.surface_of(e)}\t{d:.6f}"
            print("  " + line.replace("\t", "  "))
            f.write(line + "\n")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    from .graphs import gen_federal_states, gen_small_kg

    if args.name == "federal-states":
        kg = gen_federal_states()
    elif args.name == "synthetic-broodwar-like":
        kg = gen_small_kg(args.entities or 32, args.relations or 5, args.train or 65,
                          args.valid or 11, args.test or 11, seed=args.seed or 7)
    else:
        from .errors import ConfigError
        raise ConfigError(f"unknown generated dataset {args.name!r}")
    kg.write_dir(args.out_dir)
    print(f"{args.name}: entities={kg.n_entities} relations={kg.n_relations} "
          f"train/valid/test={len(kg.train)}/{len(kg.valid)}/{len(kg.test)} -> {args.out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikekg",
                                     description="knowledge-graph embeddings with frozen and "
                                                 "spiking graph convolutions")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--data-root", default=None, help="root for external datasets")
        p.add_argument("--out", default=None, help="output directory (env SPIKEKG_OUT)")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread count")
        p.add_argument("--seed", type=int, default=None)

    t = sub.add_parser("train", help="train a model and keep the best-validation checkpoint")
    common(t)
    t.add_argument("--dataset", required=True)
    t.add_argument("--model", default=None, choices=["transe", "distmult", "rgcn-transe",
                                                     "rgcn-distmult", "spike", "hybrid", "srgcn"])
    t.add_argument("--config", default=None, help="load a resolved key = value config file")
    t.add_argument("--dim", type=int, default=None)
    t.add_argument("--inputs", type=int, default=None, help="input neurons per population")
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--margin", type=float, default=None)
    t.add_argument("--negatives", type=int, default=None)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--eval-every", dest="eval_every", type=int, default=None)
    t.add_argument("--dropout", type=float, default=None)
    t.add_argument("--l2", type=float, default=None)
    t.add_argument("--spike-reg", dest="spike_reg", type=float, default=None)
    t.add_argument("--layers", type=int, default=None)
    t.add_argument("--activation", choices=["identity", "relu"], default=None)
    t.add_argument("--subsample", type=float, default=None,
                   help="fraction of encoder entities dropped per batch")
    t.add_argument("--frozen", action="store_true", default=None)
    t.add_argument("--no-frozen", dest="frozen", action="store_false")
    t.add_argument("--self-loop", dest="self_loop", action="store_true", default=None)
    t.add_argument("--no-self-loop", dest="self_loop", action="store_false")
    t.add_argument("--add-inverse", dest="add_inverse", action="store_true", default=None)
    t.add_argument("--max-queries", dest="max_queries", type=int, default=None,
                   help="cap validation queries per evaluation")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--splits", default="test")
    e.add_argument("--max-queries", dest="max_queries", type=int, default=None)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="frozen vs trained backward-pass comparison")
    common(b)
    b.add_argument("--dataset", required=True)
    b.add_argument("--dims", default="16,32,64,128")
    b.add_argument("--reps", type=int, default=100)
    b.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    b.set_defaults(func=cmd_bench, bench=True)

    i = sub.add_parser("inductive", help="embed a new node from its neighborhood")
    common(i)
    i.add_argument("--dataset", required=True)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--neighbors", required=True,
                   help="comma list of entity:relation, e.g. italy:neighborOf,greece:neighborOf")
    i.add_argument("--relation", default=None, help="relation used for suggestions")
    i.add_argument("--k", type=int, default=15)
    i.set_defaults(func=cmd_inductive)

    g = sub.add_parser("gen-dataset", help="emit a bundled dataset to disk")
    g.add_argument("name", choices=["federal-states", "synthetic-broodwar-like"])
    g.add_argument("out_dir")
    g.add_argument("--entities", type=int, default=None)
    g.add_argument("--relations", type=int, default=None)
    g.add_argument("--train", type=int, default=None)
    g.add_argument("--valid", type=int, default=None)
    g.add_argument("--test", type=int, default=None)
    g.add_argument("--seed", type=int, default=None)
    g.set_defaults(func=cmd_gen_dataset)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    threads = getattr(args, "threads", None)
    if threads is None:
        threads = os.environ.get("SPIKEKG_THREADS")
    if threads is None and getattr(args, "bench", False):
        threads = 1  # benchmarks run single-threaded by default to reduce variance
    _apply_threads(threads)

    from .errors import ConfigError, ParseError, SpikeKgError, VocabularyError

    try:
        return args.func(args)
    except (ConfigError, VocabularyError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SpikeKgError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
