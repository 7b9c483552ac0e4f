"""Wall-clock and gradient-buffer instrumentation comparing frozen against
fully trained convolution weights across embedding dimensions.

Memory is accounted as the exact bytes of gradient buffers plus optimizer
moment buffers (deterministic and portable), not process RSS: freezing the
convolution removes its gradient and moment storage entirely.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .linalg import Adam
from .models import build_model
from .training import TrainConfig, batch_loss_and_grads, corrupt_batch


@dataclass
class BenchRecord:
    label: str
    dim: int
    frozen: bool
    phase: str            # forward | backward | optimizer
    wall_ns_mean: float
    wall_ns_std: float
    grad_bytes: int       # gradient + moment buffer bytes of the configuration
    repetitions: int


def _measure(fn, reps: int, warmup: int = 3) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    samples = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        samples[i] = time.perf_counter_ns() - t0
    return float(samples.mean()), float(samples.std())


def bench_backward(kg, dims, reps: int = 100, batch_size: int = 64,
                   base_cfg: TrainConfig | None = None, seed: int = 42):
    """Measure forward / backward / optimizer wall time per batch for a frozen
    and a non-frozen convolution differing only in the frozen flag.

    Returns (records, summary) where summary rows carry the per-dim speedup
    (t_nf - t_f) / t_nf over backward + optimizer time and the gradient-buffer
    memory reduction (m_nf - m_f) / m_nf.
    """
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    base = base_cfg or TrainConfig(model="rgcn-transe", self_loop=True, seed=seed)
    if not base.model.startswith("rgcn"):
        raise ConfigError("the frozen-vs-trained comparison needs a convolution model")
    records: list[BenchRecord] = []
    summary = []
    for d in dims:
        per_cfg = {}
        for frozen in (False, True):
            cfg = dataclasses.replace(base, dim=d, frozen=frozen, dropout=0.0, seed=seed)
            model = build_model(kg, cfg)
            adam = Adam(model.store, lr=cfg.lr)
            rng = np.random.default_rng(seed)
            positives = kg.train[rng.permutation(len(kg.train))[:batch_size]]
            negatives = corrupt_batch(positives, cfg.negatives, kg.n_entities, rng)
            label = f"{kg.name or 'kg'}-{'frzn' if frozen else 'non-frzn'}"
            grad_bytes = model.store.grad_buffer_bytes() + adam.moment_buffer_bytes()

            needed = np.unique(np.concatenate([positives[:, [0, 2]].ravel(),
                                               negatives[:, [0, 2]].ravel()]))
            fwd_mean, fwd_std = _measure(lambda: model.encode(entities=needed), reps)

            spo = np.concatenate([positives, negatives])
            coeff = np.concatenate([np.ones(len(positives)), -np.ones(len(negatives))])
            coeff /= len(negatives)
            cache = model.encode(entities=needed)

            def backward_step():
                model.store.zero_grads()
                model.backward(cache, spo, coeff)

            bwd_mean, bwd_std = _measure(backward_step, reps)

            def optimizer_step():
                adam.step()

            opt_mean, opt_std = _measure(optimizer_step, reps)

            for phase, mean, std in (("forward", fwd_mean, fwd_std),
                                     ("backward", bwd_mean, bwd_std),
                                     ("optimizer", opt_mean, opt_std)):
                records.append(BenchRecord(label, d, frozen, phase, mean, std,
                                           grad_bytes, reps))
            per_cfg[frozen] = {"backward_opt": bwd_mean + opt_mean, "bytes": grad_bytes}
        t_f = per_cfg[True]["backward_opt"]
        t_nf = per_cfg[False]["backward_opt"]
        m_f, m_nf = per_cfg[True]["bytes"], per_cfg[False]["bytes"]
        summary.append({"dim": d,
                        "speedup": (t_nf - t_f) / t_nf,
                        "memory_reduction": (m_nf - m_f) / m_nf,
                        "t_frozen_ns": t_f, "t_nonfrozen_ns": t_nf,
                        "bytes_frozen": m_f, "bytes_nonfrozen": m_nf})
    return records, summary


def grad_buffer_prediction(n_relation_dirs: int, dim: int, self_loop: bool,
                           n_entities: int, n_relations: int, frozen: bool) -> int:
    """Closed-form byte count of gradient + Adam moment buffers (float64):
    3 buffers per trainable tensor (grad, m, v)."""
    n_w = n_relation_dirs + (1 if self_loop else 0)
    trainable = n_entities * dim + n_relations * dim
    if not frozen:
        trainable += n_w * dim * dim
    return trainable * 8 * 3


def write_bench_csv(path, records: list[BenchRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("label,dim,frozen,phase,mean_ns,std_ns,grad_bytes,repetitions\n")
        for r in records:
            f.write(f"{r.label},{r.dim},{int(r.frozen)},{r.phase},"
                    f"{r.wall_ns_mean:.1f},{r.wall_ns_std:.1f},{r.grad_bytes},{r.repetitions}\n")


def write_speedup_csv(path, summary: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("dim,speedup,memory_reduction,t_frozen_ns,t_nonfrozen_ns,"
                "bytes_frozen,bytes_nonfrozen\n")
        for row in summary:
            f.write(f"{row['dim']},{row['speedup']:.6f},{row['memory_reduction']:.6f},"
                    f"{row['t_frozen_ns']:.1f},{row['t_nonfrozen_ns']:.1f},"
                    f"{row['bytes_frozen']},{row['bytes_nonfrozen']}\n")
