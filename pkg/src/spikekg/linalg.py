"""Parameter storage with paired gradient buffers, random initializers, the
Adam optimizer, finite-difference gradient checking, and checkpoint io.

Values are plain float64 numpy arrays. Frozen parameters never allocate a
gradient buffer; every gradient write goes through Param.accumulate so the
frozen contract is enforced on the write path.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ConfigError, VocabularyError

_MAGIC = b"SKGC\x01\n"


class Param:
    __slots__ = ("name", "value", "grad", "frozen", "l2_weight")

    def __init__(self, name: str, value: np.ndarray, frozen: bool = False, l2_weight: float = 0.0):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.frozen = frozen
        self.l2_weight = l2_weight
        self.grad = None if frozen else np.zeros_like(self.value)

    def accumulate(self, g: np.ndarray, index=None) -> None:
        """Add into the gradient buffer; `index` addresses rows/columns via
        numpy fancy indexing with correct duplicate handling."""
        assert not self.frozen, f"gradient write to frozen param {self.name}"
        if index is None:
            self.grad += g
        else:
            np.add.at(self.grad, index, g)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self):
        tag = " frozen" if self.frozen else ""
        return f"Param({self.name}, shape={self.value.shape}{tag})"


class ParamStore:
    """Ordered, name-addressed collection of Params."""

    def __init__(self, params=()):
        self._params: dict[str, Param] = {}
        for p in params:
            self.add(p)

    def add(self, p: Param) -> Param:
        if p.name in self._params:
            raise ConfigError(f"duplicate param name {p.name!r}")
        self._params[p.name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def trainable(self) -> list[Param]:
        return [p for p in self if not p.frozen]

    def zero_grads(self) -> None:
        for p in self:
            p.zero_grad()

    def grad_buffer_bytes(self) -> int:
        return sum(p.grad.nbytes for p in self if p.grad is not None)

    def state_copy(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, v in state.items():
            p = self._params[name]
            if p.value.shape != v.shape:
                raise ConfigError(f"shape mismatch loading {name}: {p.value.shape} vs {v.shape}")
            p.value[...] = v


# ---------------------------------------------------------------------------
# initializers (pure functions of shape, hyperparameters and seed)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def init_normal(shape, mean: float = 0.0, std: float = 1.0, seed=0) -> np.ndarray:
    if std < 0:
        raise ConfigError("std must be non-negative")
    return _rng(seed).normal(mean, std, size=shape)


def init_xavier(shape, gain: float = 1.0, seed=0) -> np.ndarray:
    """Uniform on [-a, a] with a = gain * sqrt(6 / (fan_in + fan_out)), fans
    taken from the first two axes."""
    if len(shape) < 2 or shape[0] < 1 or shape[1] < 1:
        raise ConfigError("xavier init needs at least one row and column")
    a = gain * np.sqrt(6.0 / (shape[0] + shape[1]))
    return _rng(seed).uniform(-a, a, size=shape)


# ---------------------------------------------------------------------------
# Adam


class Adam:
    """Standard Adam with bias correction. Moment buffers exist only for
    non-frozen params; step() zeroes gradients afterwards."""

    def __init__(self, store: ParamStore, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in store.trainable()}
        self.v = {p.name: np.zeros_like(p.value) for p in store.trainable()}

    def moment_buffer_bytes(self) -> int:
        return sum(b.nbytes for b in self.m.values()) + sum(b.nbytes for b in self.v.values())

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in self.store.trainable():
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            g.fill(0.0)


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def grad_check(loss_fn, params, eps: float = 1e-5, rng=None, max_coords_per_param=None) -> float:
    """Compare analytic gradients against central finite differences.

    `loss_fn()` must be a deterministic function of the current param values
    returning (loss, signature); the signature identifies the smooth piece
    the evaluation landed in (active hinge terms, L1 sign patterns, causal
    sets). Coordinates whose +/-eps evaluations land in different pieces are
    skipped: finite differences are invalid across kinks.

    Analytic gradients are read from param.grad and must be populated by the
    caller before the call. Returns the maximum relative error
    |a - n| / (|a| + |n|) over coordinates with |a| + |n| > 1e-8.
    """
    if eps <= 0:
        raise ConfigError("eps must be positive")
    rng = _rng(rng if rng is not None else 0)
    worst = 0.0
    for p in params:
        if p.frozen:
            continue
        flat_v = p.value.reshape(-1)
        flat_g = p.grad.reshape(-1)
        idx = np.arange(flat_v.size)
        if max_coords_per_param is not None and flat_v.size > max_coords_per_param:
            idx = rng.choice(flat_v.size, size=max_coords_per_param, replace=False)
        for i in idx:
            orig = flat_v[i]
            flat_v[i] = orig + eps
            lp, sig_p = loss_fn()
            flat_v[i] = orig - eps
            lm, sig_m = loss_fn()
            flat_v[i] = orig
            if sig_p != sig_m:
                continue
            numeric = (lp - lm) / (2.0 * eps)
            analytic = flat_g[i]
            denom = abs(analytic) + abs(numeric)
            if denom > 1e-8:
                worst = max(worst, abs(analytic - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# checkpoint io: JSON manifest + concatenated little-endian float64 payloads


def save_checkpoint(path, store: ParamStore, meta: dict | None = None) -> None:
    tensors = []
    offset = 0
    for p in store:
        tensors.append({"name": p.name, "shape": list(p.value.shape),
                        "frozen": p.frozen, "l2_weight": p.l2_weight, "offset": offset})
        offset += p.value.size
    manifest = json.dumps({"meta": meta or {}, "tensors": tensors}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for p in store:
            f.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise VocabularyError(f"{path} is not a spikekg checkpoint")
        (n,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(n).decode("utf-8"))
        payload = np.frombuffer(f.read(), dtype="<f8")
    store = ParamStore()
    for t in manifest["tensors"]:
        size = int(np.prod(t["shape"])) if t["shape"] else 1
        value = payload[t["offset"]: t["offset"] + size].reshape(t["shape"]).copy()
        store.add(Param(t["name"], value, frozen=t["frozen"], l2_weight=t["l2_weight"]))
    return store, manifest["meta"]
