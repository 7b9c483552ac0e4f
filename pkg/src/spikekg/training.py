"""Margin-ranking training: negative sampling by entity corruption, the hinge
loss over positive/negative pairs, regularization assembly, minibatching, and
best-on-validation checkpoint selection."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TrainingDiverged
from .graphs import KnowledgeGraph
from .linalg import Adam

_SENTINEL = object()


@dataclass
class TrainConfig:
    model: str = "transe"
    dim: int = 64
    frozen: bool = True
    self_loop: bool = True
    layers: int = 1
    activation: str = "identity"
    dropout: float = 0.0
    add_inverse: bool = False
    lr: float = 1e-3
    margin: float = 1.0
    negatives: int = 10
    batch_size: int = 64
    max_epochs: int = 1000
    eval_every: int = 10
    l2_weight: float = 1e-2
    spike_reg: float = 1e-2
    n_inputs: int = 16
    tau_s: float = 0.5
    u_th: float = 1.0
    encoder_subsample: float = 0.0   # fraction of needed entities dropped per batch
    seed: int = 42

    def __post_init__(self):
        if self.margin < 0:
            raise ConfigError("margin must be non-negative")
        if self.negatives < 1:
            raise ConfigError("need at least one negative per positive")
        if not 0.0 <= self.encoder_subsample < 1.0:
            raise ConfigError("encoder_subsample must be in [0, 1)")

    def to_file(self, path, extra: dict | None = None) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("# spikekg resolved run configuration\n")
            for k, v in (extra or {}).items():
                f.write(f"{k} = {v}\n")
            for field in dataclasses.fields(self):
                f.write(f"{field.name} = {getattr(self, field.name)}\n")

    @classmethod
    def from_file(cls, path) -> tuple["TrainConfig", dict]:
        """Parse a `key = value` file; keys that are not TrainConfig fields are
        returned in the extras dict."""
        known = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs, extra = {}, {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"bad config line {line!r} (expected `key = value`)")
                k, v = (part.strip() for part in line.split("=", 1))
                if k in known:
                    t = known[k]
                    if t in ("bool", bool):
                        kwargs[k] = v.lower() in ("1", "true", "yes")
                    elif t in ("int", int):
                        kwargs[k] = int(v)
                    elif t in ("float", float):
                        kwargs[k] = float(v)
                    else:
                        kwargs[k] = v
                else:
                    extra[k] = v
        return cls(**kwargs), extra


def sample_negatives(positive, k: int, n_entities: int, rng: np.random.Generator) -> np.ndarray:
    """k corruptions of one triple: side chosen uniformly, replacement entity
    uniform over all entities except the original. Not filtered against the
    training set."""
    s, p, o = (int(x) for x in positive)
    out = np.empty((k, 3), dtype=np.int64)
    sides = rng.integers(0, 2, size=k)
    repl = rng.integers(0, n_entities - 1, size=k)
    for i in range(k):
        orig = s if sides[i] == 0 else o
        e = repl[i] + (repl[i] >= orig)  # uniform over entities minus the original
        out[i] = (e, p, o) if sides[i] == 0 else (s, p, e)
    return out


def corrupt_batch(positives: np.ndarray, k: int, n_entities: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Vectorized corruption: (B, 3) -> (B * k, 3), negatives grouped by their
    positive (row i's negatives occupy rows i*k .. (i+1)*k - 1)."""
    b = len(positives)
    neg = np.repeat(positives, k, axis=0)
    sides = rng.integers(0, 2, size=b * k)
    repl = rng.integers(0, n_entities - 1, size=b * k)
    orig = np.where(sides == 0, neg[:, 0], neg[:, 2])
    repl = repl + (repl >= orig)
    neg[sides == 0, 0] = repl[sides == 0]
    neg[sides == 1, 2] = repl[sides == 1]
    return neg


def hinge_loss(d_pos, d_neg, margin: float):
    """[margin + d_pos - d_neg]_+ elementwise."""
    return np.maximum(0.0, margin + np.asarray(d_pos) - np.asarray(d_neg))


def batch_loss_and_grads(model, positives: np.ndarray, negatives: np.ndarray,
                         cfg: TrainConfig, training: bool = True, rng=None,
                         accumulate: bool = True):
    """Mean pairwise hinge loss over (positive, its k negatives) pairs plus the
    model regularizer; optionally accumulates analytic gradients.

    Returns (loss, signature); the signature identifies the smooth piece
    (model encoder signature plus the active-pair mask) for grad checking.
    """
    k = len(negatives) // len(positives)
    needed = np.unique(np.concatenate([positives[:, [0, 2]].ravel(), negatives[:, [0, 2]].ravel()]))
    pair_mask = None
    if training and cfg.encoder_subsample > 0.0:
        keep = rng.random(len(needed)) >= cfg.encoder_subsample
        kept = set(needed[keep].tolist())
        pos_ok = np.array([s in kept and o in kept for s, _, o in positives])
        neg_ok = np.array([s in kept and o in kept for s, _, o in negatives])
        pair_mask = pos_ok.repeat(k) & neg_ok
        needed = needed[keep]
        if not np.any(pair_mask):
            return 0.0, ()
    cache = model.encode(entities=needed, training=training, rng=rng)

    spo = np.concatenate([positives, negatives])
    dists = model.distances(cache, spo)
    d_pos, d_neg = dists[:len(positives)], dists[len(positives):]
    gaps = cfg.margin + np.repeat(d_pos, k) - d_neg
    if pair_mask is not None:
        gaps = np.where(pair_mask, gaps, -np.inf)
    active = gaps > 0.0
    n_pairs = len(negatives)
    loss = float(gaps[active].sum()) / n_pairs
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite batch loss {loss}")

    if accumulate:
        scale = 1.0 / n_pairs
        coeff_pos = active.reshape(len(positives), k).sum(axis=1) * scale
        coeff_neg = np.where(active, -scale, 0.0)
        coeff = np.concatenate([coeff_pos, coeff_neg])
        nz = coeff != 0.0
        if np.any(nz):
            model.backward(cache, spo[nz], coeff[nz])
    loss += model.regularizer(accumulate=accumulate)
    signature = (model.signature(cache, spo), active.tobytes())
    return loss, signature


def train_epoch(model, kg: KnowledgeGraph, cfg: TrainConfig, rng: np.random.Generator,
                adam: Adam) -> float:
    """One pass over shuffled training triples; returns the mean batch loss."""
    order = rng.permutation(len(kg.train))
    total, batches = 0.0, 0
    for start in range(0, len(order), cfg.batch_size):
        positives = kg.train[order[start:start + cfg.batch_size]]
        negatives = corrupt_batch(positives, cfg.negatives, kg.n_entities, rng)
        loss, _ = batch_loss_and_grads(model, positives, negatives, cfg,
                                       training=True, rng=rng)
        adam.step()
        total += loss
        batches += 1
    return total / max(batches, 1)


@dataclass
class FitResult:
    best_state: dict
    best_valid_mrr: float
    best_epoch: int
    log: list[dict]   # epoch, loss, valid_mrr (or None), wall_ms


def fit(model, kg: KnowledgeGraph, cfg: TrainConfig, quiet: bool = True,
        eval_max_queries: int | None = None) -> FitResult:
    """Train with Adam, evaluating validation MRR every `eval_every` epochs and
    retaining the parameter state with the best validation MRR."""
    from .evaluation import evaluate_split

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1000]))
    adam = Adam(model.store, lr=cfg.lr)
    best = FitResult(model.store.state_copy(), -1.0, 0, [])

    def evaluate(epoch, loss, wall_ms):
        report = evaluate_split(model, kg, "valid", max_queries=eval_max_queries)
        best.log.append({"epoch": epoch, "loss": loss, "valid_mrr": report.mrr,
                         "wall_ms": wall_ms})
        if report.mrr > best.best_valid_mrr:
            best.best_valid_mrr = report.mrr
            best.best_epoch = epoch
            best.best_state = model.store.state_copy()
        if not quiet:
            print(f"epoch {epoch:5d}  loss {loss:.4f}  valid MRR {report.mrr:.4f}")

    if cfg.max_epochs == 0:
        evaluate(0, float("nan"), 0.0)
        return best
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        loss = train_epoch(model, kg, cfg, rng, adam)
        wall_ms = (time.perf_counter() - t0) * 1e3
        if epoch % cfg.eval_every == 0 or epoch == cfg.max_epochs:
            evaluate(epoch, loss, wall_ms)
        else:
            best.log.append({"epoch": epoch, "loss": loss, "valid_mrr": None,
                             "wall_ms": wall_ms})
    model.store.load_state(best.best_state)
    model.refresh()
    return best


def write_log_csv(path, log: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,loss,valid_mrr,wall_ms\n")
        for row in log:
            mrr = "" if row["valid_mrr"] is None else f"{row['valid_mrr']:.6f}"
            f.write(f"{row['epoch']},{row['loss']:.6f},{mrr},{row['wall_ms']:.3f}\n")
