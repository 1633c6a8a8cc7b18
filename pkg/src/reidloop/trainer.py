"""Stochastic consensus trainer for the similarity-dissimilarity model.

Each epoch follows a fixed five-step structure:

1. snapshot the current (K, P) and precompute the average hinge subgradient
   over all n pairs at the snapshot;
2. run T inner iterations from the snapshot, each drawing one pair uniformly
   at random and taking a variance-reduced step: the drawn pair's gradient at
   the current inner iterate, minus the same pair's gradient at the snapshot,
   plus the snapshot average, plus the quadratic consensus pull toward (U, V).
   The P step of an iteration evaluates its current-sample gradient at the
   K iterate that was just produced, while both control-variate terms stay at
   the snapshot -- this asymmetry is deliberate and pinned by tests;
3. average the T inner iterates into the new (K, P);
4. refresh the consensus copies U, V by row-wise group soft-thresholding,
   which is where rows of the model are driven to exact zero;
5. dual ascent on Lam, Psi against the K-U and P-V gaps.

A deterministic reference solver replaces steps 1-3 with a single
full-gradient step and keeps 4-5; it exists for parity checks against the
stochastic path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import LabeledPair, ModelState, l21_norm, pair_margins


@dataclass(frozen=True)
class TrainerConfig:
    alpha: float = 0.001
    beta: float = 0.001
    eta: float = 1.0
    rho: float = 1.0
    epochs: int = 200
    iters_per_epoch: int | None = None  # None -> 2 * n
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.iters_per_epoch is not None and self.iters_per_epoch < 1:
            raise ValueError("iters_per_epoch must be >= 1")

    def resolve_iters(self, n: int) -> int:
        return 2 * n if self.iters_per_epoch is None else self.iters_per_epoch


@dataclass
class EpochStats:
    epoch: int
    objective: float
    res_K: float  # ||K - U||_F
    res_P: float  # ||P - V||_F


@dataclass
class TrainResult:
    state: ModelState
    history: list[EpochStats]


class _Pairs:
    """Pair list packed into row-aligned arrays for vectorized work."""

    __slots__ = ("Xp", "Xg", "D", "y", "n")

    def __init__(self, data: list[LabeledPair]):
        if not data:
            raise ValueError("training data must not be empty")
        self.Xp = np.stack([p.probe.feature for p in data])
        self.Xg = np.stack([p.gallery.feature for p in data])
        self.D = self.Xp - self.Xg
        self.y = np.array([p.label for p in data], dtype=np.float64)
        self.n = len(data)


@dataclass
class EpochSnapshot:
    """Frozen (K, P) plus full-data average subgradients at that point.

    Per-sample snapshot gradients are reconstructed on demand from the cached
    projected features instead of being stored as n full matrices.
    """

    K_s: np.ndarray
    P_s: np.ndarray
    avg_gK: np.ndarray
    avg_gP: np.ndarray
    _pairs: _Pairs = field(repr=False)
    _KXp: np.ndarray = field(repr=False)
    _KXg: np.ndarray = field(repr=False)
    _PD: np.ndarray = field(repr=False)
    _cK: np.ndarray = field(repr=False)  # -y on active pairs, else 0
    _cP: np.ndarray = field(repr=False)  # +y on active pairs, else 0

    def sample_gradients(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Hinge subgradients of pair i evaluated at the snapshot (K_s, P_s)."""
        pr = self._pairs
        if self._cK[i] != 0.0:
            gK = self._cK[i] * (np.outer(self._KXg[i], pr.Xp[i])
                                + np.outer(self._KXp[i], pr.Xg[i]))
            gP = self._cP[i] * np.outer(self._PD[i], pr.D[i])
        else:
            gK = np.zeros_like(self.K_s)
            gP = np.zeros_like(self.P_s)
        return gK, gP


def _snapshot(K: np.ndarray, P: np.ndarray, pairs: _Pairs) -> EpochSnapshot:
    KXp = pairs.Xp @ K.T
    KXg = pairs.Xg @ K.T
    PD = pairs.D @ P.T
    m = np.einsum("ij,ij->i", KXp, KXg) - 0.5 * np.einsum("ij,ij->i", PD, PD)
    active = pairs.y * m < 1.0
    cK = np.where(active, -pairs.y, 0.0)
    cP = np.where(active, pairs.y, 0.0)
    n = pairs.n
    avg_gK = (KXp.T @ (cK[:, None] * pairs.Xg) + KXg.T @ (cK[:, None] * pairs.Xp)) / n
    avg_gP = PD.T @ (cP[:, None] * pairs.D) / n
    return EpochSnapshot(K.copy(), P.copy(), avg_gK, avg_gP,
                         pairs, KXp, KXg, PD, cK, cP)


def snapshot(state: ModelState, data: list[LabeledPair]) -> EpochSnapshot:
    """Average hinge subgradients (and per-sample accessors) at the current model."""
    return _snapshot(state.K, state.P, _Pairs(data))


def prox_group_soft_threshold(M: np.ndarray, Dual: np.ndarray,
                              rho: float, weight: float) -> np.ndarray:
    """Row-wise group soft-thresholding of M + Dual/rho.

    Row i of the result is v_i * max(0, 1 - weight / (rho * ||v_i||)) with
    v_i = M_i + Dual_i / rho; rows with rho*||v_i|| <= weight collapse to
    zero.  This is the exact minimizer of 0.5*rho*||u - v_i||^2 + weight*||u||
    per row.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if weight < 0:
        raise ValueError(f"weight must be nonnegative, got {weight}")
    if M.shape != Dual.shape:
        raise ValueError(f"shape mismatch: {M.shape} vs {Dual.shape}")
    v = M + Dual / rho
    norms = np.linalg.norm(v, axis=1)
    scale = np.zeros_like(norms)
    nz = norms > 0
    scale[nz] = np.maximum(0.0, 1.0 - weight / (rho * norms[nz]))
    return v * scale[:, None]


def _run_epoch(state: ModelState, pairs: _Pairs, cfg: TrainerConfig,
               rng: np.random.Generator,
               iterate_log: list | None = None) -> ModelState:
    snap = _snapshot(state.K, state.P, pairs)
    eta, rho = cfg.eta, cfg.rho
    T = cfg.resolve_iters(pairs.n)
    Xp, Xg, D, y = pairs.Xp, pairs.Xg, pairs.D, pairs.y
    KXp_s, KXg_s, PD_s = snap._KXp, snap._KXg, snap._PD
    cK_s, cP_s = snap._cK, snap._cP

    # constant per-epoch parts of the two update rules
    baseK = snap.avg_gK + state.Lam - rho * state.U
    baseP = snap.avg_gP + state.Psi - rho * state.V

    Kt = state.K.copy()
    Pt = state.P.copy()
    sumK = np.zeros_like(Kt)
    sumP = np.zeros_like(Pt)
    draws = rng.integers(0, pairs.n, size=T)
    for i in draws:
        xp = Xp[i]
        xg = Xg[i]
        dd = D[i]
        yi = y[i]

        ktxp = Kt @ xp
        ktxg = Kt @ xg
        ptd = Pt @ dd
        dis_half = 0.5 * (ptd @ ptd)
        g = baseK + rho * Kt
        if yi * (ktxp @ ktxg - dis_half) < 1.0:
            g = g - yi * (np.outer(ktxg, xp) + np.outer(ktxp, xg))
        if cK_s[i] != 0.0:
            g = g - cK_s[i] * (np.outer(KXg_s[i], xp) + np.outer(KXp_s[i], xg))
        Kn = Kt - eta * g

        # current-sample P gradient is taken at the fresh K iterate
        g2 = baseP + rho * Pt
        if yi * ((Kn @ xp) @ (Kn @ xg) - dis_half) < 1.0:
            g2 = g2 + yi * np.outer(ptd, dd)
        if cP_s[i] != 0.0:
            g2 = g2 - cP_s[i] * np.outer(PD_s[i], dd)
        Pn = Pt - eta * g2

        sumK += Kn
        sumP += Pn
        Kt = Kn
        Pt = Pn
        if iterate_log is not None:
            iterate_log.append((Kn.copy(), Pn.copy()))

    K_new = sumK / T
    P_new = sumP / T
    U_new = prox_group_soft_threshold(K_new, state.Lam, rho, cfg.alpha)
    V_new = prox_group_soft_threshold(P_new, state.Psi, rho, cfg.beta)
    Lam_new = state.Lam + rho * (K_new - U_new)
    Psi_new = state.Psi + rho * (P_new - V_new)
    return ModelState(K_new, P_new, U_new, V_new, Lam_new, Psi_new)


def run_epoch(state: ModelState, data: list[LabeledPair], cfg: TrainerConfig,
              rng: np.random.Generator | None = None,
              iterate_log: list | None = None) -> ModelState:
    """One stochastic epoch (snapshot, T sampled iterations, average, prox, duals).

    When ``iterate_log`` is given, every inner (K, P) iterate is appended to
    it so callers can re-check the averaging step.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return _run_epoch(state, _Pairs(data), cfg, rng, iterate_log)


def _objective_packed(K, P, pairs: _Pairs, alpha, beta) -> float:
    m = pair_margins(K, P, pairs.Xp, pairs.Xg)
    loss = float(np.maximum(0.0, 1.0 - pairs.y * m).mean())
    return loss + alpha * l21_norm(K) + beta * l21_norm(P)


def _stats(epoch: int, state: ModelState, pairs: _Pairs, cfg: TrainerConfig) -> EpochStats:
    return EpochStats(
        epoch=epoch,
        objective=_objective_packed(state.K, state.P, pairs, cfg.alpha, cfg.beta),
        res_K=float(np.linalg.norm(state.K - state.U)),
        res_P=float(np.linalg.norm(state.P - state.V)),
    )


def train(data: list[LabeledPair], cfg: TrainerConfig,
          init: ModelState | None = None) -> TrainResult:
    """Run cfg.epochs stochastic epochs from a fresh or warm-restart state.

    A fresh state draws K, P uniformly in [-0.01, 0.01] from cfg.seed and
    sets U=K, V=P with zero duals.  A warm restart keeps the full incoming
    state, duals included.  Returns the final state plus per-epoch objective
    and consensus-residual history.
    """
    pairs = _Pairs(data)
    state = ModelState.initial(pairs.Xp.shape[1], seed=cfg.seed) if init is None else init
    rng = np.random.default_rng(cfg.seed)
    history: list[EpochStats] = []
    for s in range(cfg.epochs):
        state = _run_epoch(state, pairs, cfg, rng)
        history.append(_stats(s + 1, state, pairs, cfg))
    return TrainResult(state, history)


def train_deterministic(data: list[LabeledPair], cfg: TrainerConfig,
                        init: ModelState | None = None) -> TrainResult:
    """Reference solver: one full-gradient step per epoch, same prox and duals."""
    pairs = _Pairs(data)
    state = ModelState.initial(pairs.Xp.shape[1], seed=cfg.seed) if init is None else init
    eta, rho = cfg.eta, cfg.rho
    history: list[EpochStats] = []
    for s in range(cfg.epochs):
        snap = _snapshot(state.K, state.P, pairs)
        K_new = state.K - eta * (snap.avg_gK + rho * (state.K - state.U) + state.Lam)
        P_new = state.P - eta * (snap.avg_gP + rho * (state.P - state.V) + state.Psi)
        U_new = prox_group_soft_threshold(K_new, state.Lam, rho, cfg.alpha)
        V_new = prox_group_soft_threshold(P_new, state.Psi, rho, cfg.beta)
        Lam_new = state.Lam + rho * (K_new - U_new)
        Psi_new = state.Psi + rho * (P_new - V_new)
        state = ModelState(K_new, P_new, U_new, V_new, Lam_new, Psi_new)
        history.append(_stats(s + 1, state, pairs, cfg))
    return TrainResult(state, history)


def timed_train(data: list[LabeledPair], cfg: TrainerConfig,
                init: ModelState | None = None,
                deterministic: bool = False) -> tuple[TrainResult, float]:
    """Train and report wall-clock seconds (used by the benchmark command)."""
    start = time.perf_counter()
    fn = train_deterministic if deterministic else train
    result = fn(data, cfg, init)
    return result, time.perf_counter() - start
