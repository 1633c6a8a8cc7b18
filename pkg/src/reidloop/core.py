"""Similarity-dissimilarity scoring primitives.

The matching model is a pair of low-rank projections (K, P).  K feeds a
bilinear similarity, P a projected squared Euclidean dissimilarity, and the
score of a probe-gallery pair is the margin

    margin(xp, xg) = xp^T K^T K xg - 0.5 * ||P xp - P xg||^2

A labeled pair (y in {-1,+1}) contributes hinge loss max(0, 1 - y*margin).
Row sparsity of K and P (l2,1 regularization) performs the rank selection,
so by default both matrices are square (r = d).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class LabelSource(str, Enum):
    GROUND_TRUTH = "ground-truth"
    HUMAN = "human"
    SIMULATED = "simulated-noisy"


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    """One person image: identity, camera, and its d-dimensional feature vector."""

    person_id: str
    camera_id: int
    feature: np.ndarray
    image_path: str | None = None

    def __post_init__(self):
        feat = np.asarray(self.feature, dtype=np.float64)
        if feat.ndim != 1:
            raise ValueError(f"feature must be a vector, got shape {feat.shape}")
        if not np.all(np.isfinite(feat)):
            raise ValueError(f"non-finite feature for person {self.person_id!r}")
        object.__setattr__(self, "feature", feat)

    @property
    def dim(self) -> int:
        return self.feature.shape[0]


@dataclass(frozen=True, eq=False)
class LabeledPair:
    """A cross-camera probe-gallery pair with a +1/-1 label and its provenance."""

    probe: FeatureRecord
    gallery: FeatureRecord
    label: int
    source: LabelSource = LabelSource.GROUND_TRUTH

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.label}")
        if self.probe.camera_id == self.gallery.camera_id:
            raise ValueError("probe and gallery must come from different cameras")

    @property
    def key(self) -> tuple[str, str]:
        return (self.probe.person_id, self.gallery.person_id)


@dataclass(frozen=True, eq=False)
class ModelState:
    """Projections K, P plus the consensus copies U, V and duals Lam, Psi.

    All six matrices share the r x d shape.  U/V mirror K/P through the
    consensus constraints K=U, P=V that carry the row-sparsity
    regularization; Lam/Psi are the corresponding scaled dual variables.
    """

    K: np.ndarray
    P: np.ndarray
    U: np.ndarray
    V: np.ndarray
    Lam: np.ndarray
    Psi: np.ndarray

    def __post_init__(self):
        mats = {"K": self.K, "P": self.P, "U": self.U,
                "V": self.V, "Lam": self.Lam, "Psi": self.Psi}
        shape = self.K.shape
        for name, m in mats.items():
            m = np.asarray(m, dtype=np.float64)
            if m.ndim != 2 or m.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"non-finite entries in {name}")
            object.__setattr__(self, name, m)

    @property
    def r(self) -> int:
        return self.K.shape[0]

    @property
    def d(self) -> int:
        return self.K.shape[1]

    def copy(self) -> "ModelState":
        return ModelState(self.K.copy(), self.P.copy(), self.U.copy(),
                          self.V.copy(), self.Lam.copy(), self.Psi.copy())

    @classmethod
    def initial(cls, d: int, r: int | None = None, seed: int = 0) -> "ModelState":
        """Fresh state: K, P uniform in [-0.01, 0.01], U=K, V=P, zero duals."""
        r = d if r is None else r
        rng = np.random.default_rng(seed)
        K = rng.uniform(-0.01, 0.01, size=(r, d))
        P = rng.uniform(-0.01, 0.01, size=(r, d))
        zeros = np.zeros((r, d))
        return cls(K, P, K.copy(), P.copy(), zeros, zeros.copy())


def _check_vector(x: np.ndarray, d: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != d:
        raise ValueError(f"{name} must be a vector of length {d}, got shape {x.shape}")
    return x


def similarity(K: np.ndarray, xp: np.ndarray, xg: np.ndarray) -> float:
    """Bilinear similarity xp^T K^T K xg (symmetric in xp, xg)."""
    K = np.asarray(K, dtype=np.float64)
    xp = _check_vector(xp, K.shape[1], "xp")
    xg = _check_vector(xg, K.shape[1], "xg")
    return float((K @ xp) @ (K @ xg))


def dissimilarity(P: np.ndarray, xp: np.ndarray, xg: np.ndarray) -> float:
    """Projected squared Euclidean distance ||P xp - P xg||^2 (>= 0)."""
    P = np.asarray(P, dtype=np.float64)
    xp = _check_vector(xp, P.shape[1], "xp")
    xg = _check_vector(xg, P.shape[1], "xg")
    z = P @ (xp - xg)
    return float(z @ z)


def margin(state: ModelState, xp: np.ndarray, xg: np.ndarray) -> float:
    """Label-free pair score: similarity minus half the dissimilarity."""
    return similarity(state.K, xp, xg) - 0.5 * dissimilarity(state.P, xp, xg)


def pair_margins(K: np.ndarray, P: np.ndarray,
                 Xp: np.ndarray, Xg: np.ndarray) -> np.ndarray:
    """Margins for n pairs given as row-aligned (n, d) feature matrices."""
    if Xp.shape != Xg.shape:
        raise ValueError(f"Xp and Xg must align, got {Xp.shape} vs {Xg.shape}")
    if Xp.shape[1] != K.shape[1]:
        raise ValueError(f"feature dim {Xp.shape[1]} does not match model d={K.shape[1]}")
    KXp = Xp @ K.T
    KXg = Xg @ K.T
    PD = (Xp - Xg) @ P.T
    return np.einsum("ij,ij->i", KXp, KXg) - 0.5 * np.einsum("ij,ij->i", PD, PD)


def hinge_loss(state: ModelState, pair: LabeledPair) -> float:
    """max(0, 1 - y * margin); zero iff y * margin >= 1."""
    return max(0.0, 1.0 - pair.label * margin(state, pair.probe.feature, pair.gallery.feature))


def hinge_subgradients(state: ModelState, pair: LabeledPair) -> tuple[np.ndarray, np.ndarray]:
    """Subgradients of the pair hinge loss w.r.t. K and P.

    On the flat side (y * margin >= 1, kink included) both are zero.  On the
    active side:

        gK = -y * K (xp xg^T + xg xp^T)
        gP =  y * P (xp - xg)(xp - xg)^T
    """
    xp = pair.probe.feature
    xg = pair.gallery.feature
    y = pair.label
    if y * margin(state, xp, xg) >= 1.0:
        z = np.zeros_like(state.K)
        return z, z.copy()
    K, P = state.K, state.P
    gK = -y * (np.outer(K @ xp, xg) + np.outer(K @ xg, xp))
    delta = xp - xg
    gP = y * np.outer(P @ delta, delta)
    return gK, gP


def l21_norm(M: np.ndarray) -> float:
    """Sum of row-wise l2 norms."""
    return float(np.linalg.norm(M, axis=1).sum())


def objective(state: ModelState, data: list[LabeledPair],
              alpha: float, beta: float) -> float:
    """Mean hinge loss plus alpha*||K||_{2,1} + beta*||P||_{2,1}."""
    if not data:
        raise ValueError("objective requires at least one pair")
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be nonnegative")
    Xp = np.stack([p.probe.feature for p in data])
    Xg = np.stack([p.gallery.feature for p in data])
    y = np.array([p.label for p in data], dtype=np.float64)
    m = pair_margins(state.K, state.P, Xp, Xg)
    loss = float(np.maximum(0.0, 1.0 - y * m).mean())
    return loss + alpha * l21_norm(state.K) + beta * l21_norm(state.P)


def stack_features(records) -> np.ndarray:
    """(n, d) matrix from an iterable of FeatureRecord."""
    return np.stack([r.feature for r in records])


def truncate_rows(state: ModelState, r_keep: int) -> ModelState:
    """Keep only the r_keep rows of largest l2 norm, per projection.

    K (with U, Lam) is truncated by K's row norms, P (with V, Psi) by P's.
    Row order is preserved.  Used to compare models at a fixed projection
    size after row-sparse training.
    """
    if not 1 <= r_keep <= state.r:
        raise ValueError(f"r_keep must be in [1, {state.r}], got {r_keep}")

    def top_rows(M: np.ndarray) -> np.ndarray:
        keep = np.argsort(-np.linalg.norm(M, axis=1), kind="stable")[:r_keep]
        return np.sort(keep)

    ik = top_rows(state.K)
    ip = top_rows(state.P)
    return ModelState(state.K[ik], state.P[ip], state.U[ik], state.V[ip],
                      state.Lam[ik], state.Psi[ip])
