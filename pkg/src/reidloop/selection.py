"""Probe-relevant pair selection via dominant-set clustering.

For one probe, the probe and the gallery are made the vertices of a dense
graph whose edge weights are calibrated pair scores in (0, 1).  Replicator
dynamics climb h^T W h over the standard simplex; the support of the limit
vector is a dominant set, a subgraph with high internal and low external
coherency.  Dominant sets are peeled off until one contains the probe -- the
gallery members of that set are the pairs worth asking a human about.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FeatureRecord, ModelState, pair_margins


class CalibrationError(RuntimeError):
    """Calibration unavailable (e.g. single-class labels); use the default."""


class DegenerateGraphError(RuntimeError):
    """All-zero weight mass: replicator dynamics are undefined."""


@dataclass(frozen=True)
class PlattCalibrator:
    """Sigmoid score-to-probability map f(s) = 1 / (1 + exp(A*s + B)), A < 0."""

    A: float = -1.0
    B: float = 0.0

    def __post_init__(self):
        if not self.A < 0:
            raise ValueError(f"A must be negative for an increasing map, got {self.A}")

    def probability(self, scores):
        f = self.A * np.asarray(scores, dtype=np.float64) + self.B
        out = np.empty_like(f)
        pos = f >= 0
        ef = np.exp(-np.abs(f))
        out[pos] = ef[pos] / (1.0 + ef[pos])
        out[~pos] = 1.0 / (1.0 + ef[~pos])
        # the true sigmoid never reaches 0 or 1; keep float64 from doing so
        out = np.clip(out, 1e-15, 1.0 - 1e-15)
        return out if out.ndim else float(out)


DEFAULT_CALIBRATOR = PlattCalibrator()


def platt_fit(scores, labels, max_iter: int = 100, min_step: float = 1e-10,
              ridge: float = 1e-12) -> PlattCalibrator:
    """Fit (A, B) by Newton descent on the regularized calibration likelihood.

    Targets use the standard (N+ + 1)/(N+ + 2) and 1/(N- + 2) correction.
    Raises CalibrationError when only one class is present or the fitted
    slope fails to be negative (labels anti-ordered with the scores);
    callers then fall back to DEFAULT_CALIBRATOR.
    """
    s = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(labels)
    if s.shape != lab.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    n_pos = int((lab == 1).sum())
    n_neg = int((lab == -1).sum())
    if n_pos == 0 or n_neg == 0:
        raise CalibrationError("need both a positive and a negative label")
    t = np.where(lab == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def nll(a: float, b: float) -> float:
        f = a * s + b
        stable = np.log1p(np.exp(-np.abs(f)))
        return float(np.sum(np.where(f >= 0, t * f + stable, (t - 1.0) * f + stable)))

    A = 0.0
    B = float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    F = nll(A, B)
    for _ in range(max_iter):
        f = A * s + B
        ef = np.exp(-np.abs(f))
        p = np.where(f >= 0, ef / (1.0 + ef), 1.0 / (1.0 + ef))
        d1 = p - t
        d2 = p * (1.0 - p)
        g1 = float(s @ d1)
        g2 = float(d1.sum())
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        h11 = float((s * s) @ d2) + ridge
        h22 = float(d2.sum()) + ridge
        h21 = float(s @ d2)
        det = h11 * h22 - h21 * h21
        # Newton step is +H^-1 [g1, g2]: the nll gradient is -[g1, g2]
        dA = (h22 * g1 - h21 * g2) / det
        dB = (-h21 * g1 + h11 * g2) / det
        decrement = g1 * dA + g2 * dB
        step = 1.0
        while step >= min_step:
            cand = nll(A + step * dA, B + step * dB)
            if cand < F - 1e-4 * step * decrement:
                A, B, F = A + step * dA, B + step * dB, cand
                break
            step /= 2
        else:
            break
    if not A < 0:
        raise CalibrationError(f"fitted slope is not negative (A={A:.4g})")
    return PlattCalibrator(A, B)


@dataclass
class SimilarityGraph:
    """Probe-first vertex list with a symmetric positive off-diagonal weight matrix."""

    vertices: list[FeatureRecord]
    W: np.ndarray
    probe_index: int = 0


def build_graph(probe: FeatureRecord, gallery: list[FeatureRecord],
                state: ModelState,
                cal: PlattCalibrator = DEFAULT_CALIBRATOR) -> SimilarityGraph:
    """All-pairs calibrated margins over [probe] + gallery, zero diagonal."""
    if not gallery:
        raise ValueError("gallery must not be empty")
    vertices = [probe, *gallery]
    X = np.stack([v.feature for v in vertices])
    if X.shape[1] != state.d:
        raise ValueError(f"feature dim {X.shape[1]} does not match model d={state.d}")
    nv = len(vertices)
    m = pair_margins(state.K, state.P,
                     np.repeat(X, nv, axis=0), np.tile(X, (nv, 1))).reshape(nv, nv)
    W = cal.probability(m)
    W = 0.5 * (W + W.T)  # margins are symmetric; this only irons out roundoff
    np.fill_diagonal(W, 0.0)
    return SimilarityGraph(vertices, W)


@dataclass
class ParticipationVector:
    """Cluster-participation weights on the standard simplex."""

    h: np.ndarray
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        if h.ndim != 1:
            raise ValueError("h must be a vector")
        if np.any(h < 0) or abs(h.sum() - 1.0) > 1e-12:
            raise ValueError("h must lie on the standard simplex")
        self.h = h

    def support(self, tau: float) -> np.ndarray:
        return np.flatnonzero(self.h > tau)


def _check_graph(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"W must be square, got {W.shape}")
    if np.any(W < 0) or not np.allclose(W, W.T):
        raise ValueError("W must be symmetric and nonnegative")
    return W


def replicator_step(W: np.ndarray, h: ParticipationVector) -> ParticipationVector:
    """One multiplicative update h_i <- h_i (Wh)_i / (h^T W h)."""
    W = _check_graph(W)
    hv = h.h
    Wh = W @ hv
    denom = float(hv @ Wh)
    if denom <= 0.0:
        raise DegenerateGraphError("h^T W h is zero")
    return ParticipationVector(hv * Wh / denom, h.converged, h.iterations + 1)


def dominant_set(W: np.ndarray, epsilon: float = 0.1,
                 max_iters: int = 10_000,
                 init: np.ndarray | None = None) -> ParticipationVector:
    """Iterate replicator dynamics from uniform h until the objective stalls.

    Stops once the raw objective difference between consecutive iterations
    drops to epsilon or below; if max_iters runs out first the returned
    vector is flagged unconverged.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    W = _check_graph(W)
    nv = W.shape[0]
    hv = np.full(nv, 1.0 / nv) if init is None else np.asarray(init, dtype=np.float64)
    obj = float(hv @ W @ hv)
    for k in range(max_iters):
        Wh = W @ hv
        denom = float(hv @ Wh)
        if denom <= 0.0:
            raise DegenerateGraphError("h^T W h is zero")
        hv = hv * Wh / denom
        new_obj = float(hv @ W @ hv)
        if abs(new_obj - obj) <= epsilon:
            return ParticipationVector(hv, True, k + 1)
        obj = new_obj
    return ParticipationVector(hv, False, max_iters)


def default_support_tau(num_vertices: int) -> float:
    """A tenth of the uniform mass: scale-free support cutoff."""
    return 1.0 / (10.0 * num_vertices)


@dataclass
class ProbeRelevantSet:
    probe: FeatureRecord
    members: list[FeatureRecord]
    peel_rounds: int
    support_values: dict[str, float] = field(default_factory=dict)
    exhausted: bool = False
    degenerate: bool = False
    truncated: bool = False

    @property
    def member_ids(self) -> list[str]:
        return [m.person_id for m in self.members]


def peel_to_probe(W: np.ndarray, probe_index: int, epsilon: float,
                  support_tau: float | None = None,
                  max_iters: int = 10_000) -> tuple[list[int], int, dict]:
    """Peel dominant sets off W until one contains the probe vertex.

    Returns (member vertex indices excluding the probe, peel rounds, info)
    where info carries the support values and the degenerate / truncated /
    exhausted flags.  The probe vertex is never peeled; a degenerate
    (all-zero mass) remainder counts as one structureless cluster holding
    every surviving vertex.
    """
    W = _check_graph(W)
    alive = list(range(W.shape[0]))
    rounds = 0
    info: dict = {"degenerate": False, "truncated": False,
                  "exhausted": False, "support_values": {}}
    while True:
        rounds += 1
        if len(alive) <= 1:
            info["exhausted"] = True
            return [], rounds, info
        sub = W[np.ix_(alive, alive)]
        tau = default_support_tau(len(alive)) if support_tau is None else support_tau
        try:
            part = dominant_set(sub, epsilon, max_iters)
        except DegenerateGraphError:
            # no structure left: treat the remainder as one flat cluster
            info["degenerate"] = True
            members = [v for v in alive if v != probe_index]
            info["support_values"] = {v: 1.0 / len(alive) for v in alive}
            return members, rounds, info
        info["truncated"] |= not part.converged
        sup_local = part.support(tau)
        sup = [alive[i] for i in sup_local]
        if probe_index in sup:
            info["support_values"] = {alive[i]: float(part.h[i]) for i in sup_local}
            return [v for v in sup if v != probe_index], rounds, info
        # the probe is never in sup on this branch, so it always survives
        peeled = set(sup)
        alive = [v for v in alive if v not in peeled]
        if len(alive) <= 1:
            info["exhausted"] = True
            return [], rounds, info


def probe_relevant_set(probe: FeatureRecord, gallery: list[FeatureRecord],
                       state: ModelState,
                       cal: PlattCalibrator = DEFAULT_CALIBRATOR,
                       epsilon: float = 0.1,
                       support_tau: float | None = None,
                       max_iters: int = 10_000) -> ProbeRelevantSet:
    """Gallery persons sharing the probe's dominant set in the score graph."""
    graph = build_graph(probe, gallery, state, cal)
    members_idx, rounds, info = peel_to_probe(graph.W, graph.probe_index,
                                              epsilon, support_tau, max_iters)
    members = [graph.vertices[i] for i in members_idx]
    support_values = {graph.vertices[v].person_id: float(h)
                      for v, h in info["support_values"].items()
                      if v != graph.probe_index}
    return ProbeRelevantSet(probe, members, rounds, support_values,
                            exhausted=info["exhausted"],
                            degenerate=info["degenerate"],
                            truncated=info["truncated"])


def write_edge_list(graph: SimilarityGraph, path: str | Path) -> None:
    """Dump `i j w` lines (0-based ids, i < j) for offline inspection."""
    W = graph.W
    nv = W.shape[0]
    with open(path, "w") as fh:
        for i in range(nv):
            for j in range(i + 1, nv):
                fh.write(f"{i} {j} {W[i, j]:.17g}\n")
