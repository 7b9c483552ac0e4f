"""Non-leaky integrate-and-fire spike times in closed form, their analytic
gradients, the spike-time decoder, and the event-based spiking convolution.

A neuron driven by weighted exponential synaptic kernels has membrane
potential u(t) = sum_{j: t_j <= t} w_j (1 - exp(-(t - t_j)/tau)). Scanning
prefixes of the time-sorted inputs, the first threshold crossing inside a
prefix's validity window is

    t* = tau * ln(B / (A - u_th)),  A = sum w_j,  B = sum w_j exp(t_j / tau)

over the prefix. Inputs arriving at or after t* are non-causal and do not
influence it. Neurons whose drive never reaches threshold emit a sentinel
spike at (latest input + 3 tau).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass
class NlifConfig:
    tau_s: float = 0.5
    u_th: float = 1.0
    input_times: np.ndarray = field(default_factory=lambda: np.linspace(-1.0, 1.0, 16))

    def __post_init__(self):
        self.input_times = np.asarray(self.input_times, dtype=np.float64)
        if self.tau_s <= 0 or self.u_th <= 0:
            raise ConfigError("tau_s and u_th must be positive")
        if np.any(np.diff(self.input_times) < 0):
            raise ConfigError("input_times must be sorted ascending")

    @property
    def n_inputs(self) -> int:
        return len(self.input_times)

    @property
    def no_spike_sentinel(self) -> float:
        return float(self.input_times.max()) + 3.0 * self.tau_s

    @classmethod
    def evenly_spaced(cls, n_inputs: int, window=(-1.0, 1.0), tau_s: float = 0.5,
                      u_th: float = 1.0) -> "NlifConfig":
        return cls(tau_s=tau_s, u_th=u_th,
                   input_times=np.linspace(window[0], window[1], n_inputs))


def first_spike_scan(weights: np.ndarray, times: np.ndarray, tau: float, u_th: float):
    """Vectorized first-threshold-crossing scan.

    weights: (rows, m) synaptic weights, times: (m,) sorted event times shared
    by all rows. Returns (t, causal, a_sel, b_sel) where `causal` is the
    per-row count of events strictly... included in the accepted prefix
    (m for rows that never spike, whose t is the sentinel).

    Acceptance windows are closed on both ends so that an event arriving
    exactly at the output spike time leaves the result unchanged.
    """
    weights = np.atleast_2d(weights)
    rows, m = weights.shape
    if m == 0:
        t = np.full(rows, 3.0 * tau)
        return t, np.zeros(rows, dtype=np.int64), np.full(rows, np.nan), np.full(rows, np.nan)
    exp_t = np.exp(times / tau)
    a = np.cumsum(weights, axis=1)
    b = np.cumsum(weights * exp_t, axis=1)
    denom = a - u_th
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = b / denom
        cand = tau * np.log(ratio)
    lower = times
    upper = np.append(times[1:], np.inf)
    ok = (denom > 0) & (ratio > 0) & (cand >= lower) & (cand <= upper)
    spiked = ok.any(axis=1)
    k = np.argmax(ok, axis=1)
    sentinel = float(times.max()) + 3.0 * tau if m else 3.0 * tau
    rix = np.arange(rows)
    t = np.where(spiked, cand[rix, k], sentinel)
    causal = np.where(spiked, k + 1, m)
    a_sel = a[rix, k]
    b_sel = b[rix, k]
    return t, causal, np.where(spiked, a_sel, np.nan), np.where(spiked, b_sel, np.nan)


def scan_grads(weights: np.ndarray, times: np.ndarray, tau: float, u_th: float,
               causal: np.ndarray, a_sel: np.ndarray, b_sel: np.ndarray):
    """Analytic derivatives of the scan's spike times.

    Returns (dt_dw, dt_dtimes), each (rows, m); entries for non-causal events
    and for sentinel (non-spiking) rows are exactly zero.
    """
    weights = np.atleast_2d(weights)
    rows, m = weights.shape
    exp_t = np.exp(times / tau)
    mask = np.arange(m)[None, :] < np.asarray(causal).reshape(-1, 1)
    spiked = ~np.isnan(a_sel)
    mask = mask & spiked.reshape(-1, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_b = np.where(spiked, 1.0 / b_sel, 0.0).reshape(-1, 1)
        inv_d = np.where(spiked, 1.0 / (a_sel - u_th), 0.0).reshape(-1, 1)
    dt_dw = tau * (exp_t[None, :] * inv_b - inv_d) * mask
    dt_dtimes = weights * exp_t[None, :] * inv_b * mask
    return dt_dw, dt_dtimes


def nlif_spike_time(weights, input_times, cfg: NlifConfig):
    """First spike time of a single neuron; returns (t, causal_set) with the
    causal set as the indices of inputs arriving strictly before t."""
    weights = np.asarray(weights, dtype=np.float64)
    input_times = np.asarray(input_times, dtype=np.float64)
    if weights.shape != input_times.shape:
        raise ValueError("weights and input_times must have equal length")
    t, causal, _, _ = first_spike_scan(weights[None, :], input_times, cfg.tau_s, cfg.u_th)
    return float(t[0]), np.arange(int(causal[0]))


def nlif_spike_grad(weights, input_times, causal_set, t, cfg: NlifConfig):
    """Derivatives of the spike time w.r.t. causal weights and input times.
    Non-causal entries are zero; a sentinel (non-spiking) neuron has zero
    weight gradients (the drive regularizer handles that case)."""
    weights = np.asarray(weights, dtype=np.float64)
    input_times = np.asarray(input_times, dtype=np.float64)
    n = len(weights)
    sentinel = float(input_times.max()) + 3.0 * cfg.tau_s if n else 3.0 * cfg.tau_s
    if len(causal_set) == n and t >= sentinel:
        return np.zeros(n), np.zeros(n)
    k = len(causal_set)
    a = weights[:k].sum()
    b = (weights[:k] * np.exp(input_times[:k] / cfg.tau_s)).sum()
    dt_dw = np.zeros(n)
    dt_dt = np.zeros(n)
    exp_t = np.exp(input_times[:k] / cfg.tau_s)
    dt_dw[:k] = cfg.tau_s * (exp_t / b - 1.0 / (a - cfg.u_th))
    dt_dt[:k] = weights[:k] * exp_t / b
    return dt_dw, dt_dt


def spike_decoder(t_s: np.ndarray, delta_p: np.ndarray, t_o: np.ndarray) -> float:
    """L1 mismatch between observed and expected spike-time differences."""
    if not (t_s.shape == delta_p.shape == t_o.shape):
        raise ValueError("spike decoder arguments must share one dimension")
    return float(np.abs(t_s - t_o - delta_p).sum())


def nonspike_penalty(weights: np.ndarray, cfg: NlifConfig, delta: float,
                     margin: float = 0.0):
    """Hinge on the total synaptic drive: delta * max(0, u_th + margin - sum_j w_j)
    per output neuron, pushing every neuron to spike eventually.

    weights: (..., n_inputs). Returns (loss, active) where `active` marks
    neurons whose hinge is engaged (their weight gradients are -delta each).
    """
    if delta < 0:
        raise ConfigError("penalty weight must be non-negative")
    drive = weights.sum(axis=-1)
    gap = cfg.u_th + margin - drive
    active = gap > 0
    return float(delta * gap[active].sum()), active


# ---------------------------------------------------------------------------
# population encoding (one population of N neurons per entity)


def encode_populations(weights: np.ndarray, cfg: NlifConfig):
    """Closed-form spike times for all populations at once.

    weights: (n_entities, N, n_inputs). Returns (times (n_entities, N),
    causal counts, a_sel, b_sel) with caches shaped like `times`.
    """
    n_e, n_neurons, n_in = weights.shape
    t, causal, a_sel, b_sel = first_spike_scan(
        weights.reshape(n_e * n_neurons, n_in), cfg.input_times, cfg.tau_s, cfg.u_th)
    shape = (n_e, n_neurons)
    return t.reshape(shape), causal.reshape(shape), a_sel.reshape(shape), b_sel.reshape(shape)


def population_weight_grads(weights: np.ndarray, cfg: NlifConfig, causal, a_sel, b_sel):
    """dt/dw for every population neuron, (n_entities, N, n_inputs)."""
    n_e, n_neurons, n_in = weights.shape
    dt_dw, _ = scan_grads(weights.reshape(-1, n_in), cfg.input_times, cfg.tau_s,
                          cfg.u_th, causal.reshape(-1), a_sel.reshape(-1), b_sel.reshape(-1))
    return dt_dw.reshape(weights.shape)


# ---------------------------------------------------------------------------
# event-based spiking convolution


class SrgcnStructure:
    """Static event routing for the spiking convolution.

    For population s the presynaptic events are every neuron n of every
    contributor c (neighbors plus, with a self-loop, s itself); the effective
    weight of event (c, n) onto output neuron i is
        sum_p 1[c in N_s^p] W_p[i, n] / |N_s^p|  (+ W_0[i, n] if c == s).
    Weights are frozen, so the routing is precomputed once.
    """

    def __init__(self, layer, ops, n_neurons: int):
        if not layer.frozen:
            raise ConfigError("the spiking convolution requires a frozen layer")
        self.n_neurons = n_neurons
        self.contrib_ids: list[np.ndarray] = []
        self.event_weights: list[np.ndarray] = []
        n_entities = ops.n_entities
        for s in range(n_entities):
            eff: dict[int, np.ndarray] = {}
            for r in range(ops.n_relation_dirs):
                pos = np.searchsorted(ops.centers[r], s)
                if pos >= len(ops.centers[r]) or ops.centers[r][pos] != s:
                    continue
                row = ops.averagers[r][pos]
                for j, coeff in zip(row.indices, row.data):
                    w = layer.w_rel[r].value * coeff
                    eff[int(j)] = eff[int(j)] + w if int(j) in eff else w
            if layer.w_self is not None:
                eff[s] = eff[s] + layer.w_self.value if s in eff else layer.w_self.value.copy()
            ids = np.array(sorted(eff), dtype=np.int64)
            if len(ids):
                blocks = [eff[int(c)] for c in ids]          # each (N, N)
                self.event_weights.append(np.concatenate(blocks, axis=1))
            else:
                self.event_weights.append(np.zeros((n_neurons, 0)))
            self.contrib_ids.append(ids)


@dataclass
class SrgcnCache:
    out_times: np.ndarray          # (n_entities, N)
    causal: list[np.ndarray]       # per population, accepted prefix length per neuron
    used: list[np.ndarray]         # nonzero-weight events inside the prefix
    fractions: np.ndarray          # (n_entities, N) used / aggregated events
    orders: list[np.ndarray]
    sorted_times: list[np.ndarray]
    sorted_weights: list[np.ndarray]
    a_sel: list[np.ndarray]
    b_sel: list[np.ndarray]


def srgcn_encode(structure: SrgcnStructure, t_init: np.ndarray, cfg: NlifConfig) -> SrgcnCache:
    """Spike times of the convolution layer populations, driven by the
    initial populations' spike times through frozen weights."""
    n_e = len(structure.contrib_ids)
    n = structure.n_neurons
    out = np.zeros((n_e, n))
    fractions = np.ones((n_e, n))
    causal, used, orders, stimes, sweights, a_sels, b_sels = [], [], [], [], [], [], []
    for s in range(n_e):
        ids = structure.contrib_ids[s]
        if len(ids) == 0:
            out[s] = cfg.no_spike_sentinel
            causal.append(np.zeros(n, dtype=np.int64))
            used.append(np.zeros(n, dtype=np.int64))
            orders.append(np.zeros(0, dtype=np.int64))
            stimes.append(np.zeros(0))
            sweights.append(np.zeros((n, 0)))
            a_sels.append(np.full(n, np.nan))
            b_sels.append(np.full(n, np.nan))
            continue
        times = t_init[ids].reshape(-1)
        order = np.argsort(times, kind="stable")
        ts = times[order]
        ws = structure.event_weights[s][:, order]
        t, k, a_sel, b_sel = first_spike_scan(ws, ts, cfg.tau_s, cfg.u_th)
        out[s] = t
        # a zero-weight event carries no spike: it never counts as used
        cum_nnz = np.cumsum(ws != 0.0, axis=1)
        in_prefix = np.clip(k, 1, len(ts)) - 1
        used_s = cum_nnz[np.arange(n), in_prefix]
        used_s = np.where(k > 0, used_s, 0)
        out_row = used_s / len(ts)
        fractions[s] = out_row
        causal.append(k)
        used.append(used_s)
        orders.append(order)
        stimes.append(ts)
        sweights.append(ws)
        a_sels.append(a_sel)
        b_sels.append(b_sel)
    return SrgcnCache(out, causal, used, fractions, orders, stimes, sweights, a_sels, b_sels)


def srgcn_backward(structure: SrgcnStructure, cache: SrgcnCache,
                   upstream: np.ndarray, cfg: NlifConfig) -> np.ndarray:
    """Chain output spike-time gradients back to the initial spike times.

    upstream: (n_entities, N) dL/d(out_times). Returns dL/d(t_init) with the
    same shape. Event weights are frozen, so only time derivatives flow.
    """
    n = structure.n_neurons
    d_init = np.zeros_like(upstream)
    for s in range(len(structure.contrib_ids)):
        ids = structure.contrib_ids[s]
        if len(ids) == 0 or not np.any(upstream[s]):
            continue
        _, dt_dtimes = scan_grads(cache.sorted_weights[s], cache.sorted_times[s],
                                  cfg.tau_s, cfg.u_th, cache.causal[s],
                                  cache.a_sel[s], cache.b_sel[s])
        d_sorted = upstream[s] @ dt_dtimes                     # (m,)
        d_events = np.zeros_like(d_sorted)
        d_events[cache.orders[s]] = d_sorted
        d_init[ids] += d_events.reshape(len(ids), n)
    return d_init


def export_raster(path, times: np.ndarray, entity_names: list[str]) -> None:
    """Write (entity, neuron index, spike time) CSV rows for raster plots."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("entity,neuron,spike_time\n")
        for e, name in enumerate(entity_names):
            for i, t in enumerate(times[e]):
                f.write(f"{name},{i},{t:.9f}\n")
