"""Shallow scoring functions and their analytic gradients.

TransE produces a distance (lower = more plausible), DistMult a score
(higher = more plausible); the sign convention is handled by the model
classes, which expose everything in distance orientation.
"""

from __future__ import annotations

import numpy as np


def _check_dims(*vecs):
    d = vecs[0].shape[-1]
    for v in vecs[1:]:
        if v.shape[-1] != d:
            raise ValueError(f"dimension mismatch: {[x.shape for x in vecs]}")


def transe_distance(e_s: np.ndarray, r_p: np.ndarray, e_o: np.ndarray) -> float:
    """L1 translational distance |e_s + r_p - e_o|_1."""
    _check_dims(e_s, r_p, e_o)
    return float(np.abs(e_s + r_p - e_o).sum())


def transe_grad(e_s: np.ndarray, r_p: np.ndarray, e_o: np.ndarray):
    """Subgradients of the L1 distance w.r.t. (e_s, r_p, e_o), sign(0) := 0."""
    _check_dims(e_s, r_p, e_o)
    g = np.sign(e_s + r_p - e_o)
    return g, g.copy(), -g


def distmult_score(e_s: np.ndarray, r_p: np.ndarray, e_o: np.ndarray) -> float:
    """Bilinear score sum_k e_s[k] * r_p[k] * e_o[k]."""
    _check_dims(e_s, r_p, e_o)
    return float((e_s * r_p * e_o).sum())


def distmult_grad(e_s: np.ndarray, r_p: np.ndarray, e_o: np.ndarray):
    _check_dims(e_s, r_p, e_o)
    return r_p * e_o, e_s * e_o, e_s * r_p


# batch forms used by the training loop; rows are embeddings


def transe_distance_rows(S: np.ndarray, P: np.ndarray, O: np.ndarray) -> np.ndarray:
    return np.abs(S + P - O).sum(axis=1)


def transe_sign_rows(S: np.ndarray, P: np.ndarray, O: np.ndarray) -> np.ndarray:
    return np.sign(S + P - O)


def distmult_score_rows(S: np.ndarray, P: np.ndarray, O: np.ndarray) -> np.ndarray:
    return (S * P * O).sum(axis=1)
