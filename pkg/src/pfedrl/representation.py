"""Shared feature matrix and personalized weight vectors.

Features are plain ``(n_rows, d)`` arrays and weights plain length-``d``
arrays; the norm bound ``B`` travels as an explicit argument.
"""

from __future__ import annotations

import numpy as np

DEFAULT_BOUND = 10.0


def init_features(n_rows: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Isotropic Gaussian rows rescaled to exactly unit norm."""
    if d < 1:
        raise ValueError("feature dimension must be at least 1")
    if n_rows < 1:
        raise ValueError("need at least one row")
    phi = rng.standard_normal((n_rows, d))
    norms = np.linalg.norm(phi, axis=1, keepdims=True)
    # a zero Gaussian draw has probability zero; redraw guards it anyway
    while np.any(norms == 0.0):
        bad = norms[:, 0] == 0.0
        phi[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(phi, axis=1, keepdims=True)
    return phi / norms


def linear_value(phi: np.ndarray, theta: np.ndarray, s: int) -> float:
    if not 0 <= s < phi.shape[0]:
        raise IndexError(f"row {s} out of range for {phi.shape[0]} rows")
    return float(phi[s] @ theta)


def clip_weights(theta: np.ndarray, bound: float = DEFAULT_BOUND) -> np.ndarray:
    """Radially scale ``theta`` onto the ball of radius ``bound`` if outside it."""
    theta = np.asarray(theta, dtype=float)
    norm = np.linalg.norm(theta)
    if norm > bound:
        return theta * (bound / norm)
    return theta.copy()


def project_rows(phi: np.ndarray, mode: str = "rows") -> np.ndarray:
    """Bring the feature matrix back into the feasible set.

    ``mode="rows"`` scales every row with norm above one onto the unit
    sphere and leaves the others alone. ``mode="frobenius"`` divides the
    whole matrix by its Frobenius norm.
    """
    phi = np.asarray(phi, dtype=float)
    if mode == "rows":
        norms = np.linalg.norm(phi, axis=1, keepdims=True)
        scale = np.where(norms > 1.0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
        return phi * scale
    if mode == "frobenius":
        total = np.linalg.norm(phi)
        return phi / total if total > 0 else phi.copy()
    raise ValueError(f"unknown normalization mode {mode!r}")


def state_action_row(s: int, a: int, n_actions: int) -> int:
    """Row index of ``(s, a)`` in a state-action feature matrix."""
    return s * n_actions + a
