"""Sparse recovery of beam-domain channels from ``y = Phi h_B + n``.

All support indices are 0-based, column-stacked beam indices (see
:meth:`beamest.channel.ArrayGeometry.beam_index`).  Every estimator returns an
:class:`EstimateReport` whose ``h_hat`` is exactly zero off ``support``.
"""

from __future__ import annotations

import functools
import math
import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import (
    DimensionMismatch,
    InvalidBlockShape,
    InvalidParams,
    RankDeficient,
    SupportTooLarge,
    ZeroReference,
)
from .linalg import RIDGE_SCALE, _as_pairs, _chol_solve, _ridge, _from_pairs, adjoint, apply, gram_correlate, ls_solve

# relative residual floor that stands in for the SNR stopping threshold when the
# observation is noiseless (threshold 0 could never be crossed)
NOISELESS_RTOL = 1e-20

NEIGHBOR_RULES = ("as-paper", "inverted")
NEIGHBOR_SCOPES = ("all", "strongest")


@dataclass(frozen=True)
class EstimateReport:
    h_hat: np.ndarray
    support: tuple
    iterations: int
    final_residual_energy: float
    converged_by: str
    residual_trace: tuple = ()
    refinements: int = 0


@dataclass(frozen=True)
class BdsSampConfig:
    """Parameters of BDS-SAMP.

    ``neighbor_rule="as-paper"`` adds the cross-block neighbours when the
    power ratio is at least ``mu``; ``"inverted"`` when it is below.
    ``refine=False`` removes the neighbour stage entirely, which is plain SAMP.
    """

    snr_db: float = math.inf
    mu: float = 0.9
    initial_step: int = 1
    max_support: int | None = None
    neighbor_rule: str = "as-paper"
    neighbor_scope: str = "all"
    refine: bool = True

    def validate(self, K):
        if not 0.0 < self.mu <= 1.0:
            raise InvalidParams(f"mu must lie in (0, 1], got {self.mu}")
        if self.initial_step < 1:
            raise InvalidParams("initial_step must be >= 1")
        if self.max_support is not None and not 1 <= self.max_support <= K:
            raise InvalidParams(f"max_support must lie in [1, {K}], got {self.max_support}")
        if self.neighbor_rule not in NEIGHBOR_RULES:
            raise InvalidParams(f"unknown neighbor_rule {self.neighbor_rule!r}")
        if self.neighbor_scope not in NEIGHBOR_SCOPES:
            raise InvalidParams(f"unknown neighbor_scope {self.neighbor_scope!r}")


def nmse(h_true, h_hat):
    """``||h_true - h_hat||^2 / ||h_true||^2``."""
    h_true = np.asarray(h_true)
    h_hat = np.asarray(h_hat)
    if h_true.shape != h_hat.shape:
        raise DimensionMismatch(f"shapes differ: {h_true.shape} vs {h_hat.shape}")
    ref = float(np.vdot(h_true, h_true).real)
    if ref == 0.0:
        raise ZeroReference("reference channel has zero energy")
    d = h_true - h_hat
    return float(np.vdot(d, d).real) / ref


def top_indices(values, s):
    """Indices of the ``s`` largest values, ties broken by lowest index."""
    v = -np.asarray(values)
    if s >= v.size:
        return np.argsort(v, kind="stable")
    # everything tied with the s-th value competes; a stable sort settles ties
    kth = np.partition(v, s - 1)[s - 1]
    cand = np.flatnonzero(v <= kth)
    return cand[np.argsort(v[cand], kind="stable")[:s]]


def cross_block_neighbors(idx, geometry):
    """The 4 toroidal grid neighbours (up, down, left, right) of a beam.

    Duplicates and the beam itself are dropped, which only matters on grids
    with a side shorter than 3.
    """
    i, j = geometry.beam_coords(int(idx))
    Pv, Ph = geometry.P_v, geometry.P_h
    cand = (
        geometry.beam_index((i - 1) % Pv, j),
        geometry.beam_index((i + 1) % Pv, j),
        geometry.beam_index(i, (j - 1) % Ph),
        geometry.beam_index(i, (j + 1) % Ph),
    )
    out = []
    for c in cand:
        if c != idx and c not in out:
            out.append(c)
    return tuple(out)


@functools.lru_cache(maxsize=16)
def neighbor_table(geometry):
    """``(P, 4)`` array of raw toroidal neighbours; may repeat on tiny grids."""
    i, j = np.meshgrid(np.arange(geometry.P_v), np.arange(geometry.P_h), indexing="ij")
    i, j = i.ravel(order="F"), j.ravel(order="F")
    Pv, Ph = geometry.P_v, geometry.P_h
    tab = np.stack(
        [
            j * Pv + (i - 1) % Pv,
            j * Pv + (i + 1) % Pv,
            ((j - 1) % Ph) * Pv + i,
            ((j + 1) % Ph) * Pv + i,
        ],
        axis=1,
    )
    tab.setflags(write=False)
    return tab


def _check(y, Phi):
    Phi = np.asarray(Phi)
    y = np.asarray(y, dtype=np.complex128)
    if Phi.ndim != 2 or y.shape != (Phi.shape[0],):
        raise DimensionMismatch(f"y has shape {y.shape}, Phi has shape {Phi.shape}")
    return y, Phi


def _residual(y, Phi, support, coef):
    if len(support) == 0:
        return y.copy()
    return y - apply(Phi[:, support], coef)


def _report(y, Phi, support, iterations, converged_by, trace=(), refinements=0):
    support = np.sort(np.asarray(support, dtype=np.int64))
    h_hat = np.zeros(Phi.shape[1], dtype=np.complex128)
    if support.size:
        coef = ls_solve(Phi[:, support], y)
        h_hat[support] = coef
        r = _residual(y, Phi, support, coef)
    else:
        r = y
    return EstimateReport(
        h_hat=h_hat,
        support=tuple(int(i) for i in support),
        iterations=iterations,
        final_residual_energy=float(np.vdot(r, r).real),
        converged_by=converged_by,
        residual_trace=tuple(trace),
        refinements=refinements,
    )


class GramSolver:
    """Least squares on column subsets of a fixed ``Phi`` via its cached Gram matrix.

    The pursuit loops solve hundreds of small LS problems on overlapping
    column sets; a Cholesky solve on ``G[C, C]`` avoids refactoring
    ``Phi[:, C]`` each time.  Subsets that are rank deficient, or larger than
    ``K``, get the same ridge as :func:`ls_solve`.
    """

    def __init__(self, Phi, y, G=None):
        self.Phi = Phi
        self.K = Phi.shape[0]
        self.real = np.isrealobj(Phi)
        if G is None:
            G = Phi.T @ Phi if self.real else Phi.conj().T @ Phi
        self.G = G
        b = adjoint(Phi, y)
        self.b = _as_pairs(b) if self.real else b
        self.y = y
        self.y_pairs = _as_pairs(y)

    def solve(self, C):
        m = len(C)
        if m > self.K:
            x = _ridge(self.Phi[:, C], self.y_pairs if self.real else self.y)
            return _from_pairs(x) if self.real else x
        G = self.G[np.ix_(C, C)]
        rhs = self.b[C]
        x = _chol_solve(G.copy(), rhs)
        if x is None:
            G[np.diag_indices(m)] += RIDGE_SCALE * float(np.real(np.trace(G))) / m
            x = _chol_solve(G, rhs, check=False)
            if x is None:
                raise RankDeficient("ridge system is not positive definite")
        return _from_pairs(x) if self.real else x


def stop_threshold(y, snr_db):
    """Residual energy below which the adaptive pursuits stop.

    ``||y||^2 / (10^{SNR/10} + 1)``: the expected noise energy when SNR is
    measured on the compressed observation.  Floored at
    ``NOISELESS_RTOL * ||y||^2`` so a noiseless run can terminate.
    """
    e = float(np.vdot(y, y).real)
    thr = 0.0 if math.isinf(snr_db) and snr_db > 0 else e / (10.0 ** (snr_db / 10.0) + 1.0)
    return max(thr, NOISELESS_RTOL * e)


def bds_samp(y, Phi, geometry, cfg, gram=None):
    """Beam-domain-structure sparsity adaptive matching pursuit.

    Each pass picks the ``s`` beams best correlated with the residual, and
    optionally their cross-block neighbours (power-ratio test on the
    strongest one).  It merges them with the current support, keeps the
    ``s`` largest least-squares coefficients and accepts the result if the
    residual shrinks.  On stagnation the stage size ``s`` grows by one.

    ``gram`` may carry a precomputed ``Phi^H Phi`` to share between calls.
    """
    y, Phi = _check(y, Phi)
    K, P = Phi.shape
    if geometry.P != P:
        raise DimensionMismatch(f"geometry has {geometry.P} beams, Phi has {P} columns")
    cfg.validate(K)
    max_support = cfg.max_support or K
    inverted = cfg.neighbor_rule == "inverted"

    thr = stop_threshold(y, cfg.snr_db)
    gram = GramSolver(Phi, y, gram)
    neighbors = neighbor_table(geometry)
    r = y
    prev = float(np.vdot(y, y).real)
    support = np.zeros(0, dtype=np.int64)
    trace = []
    s = cfg.initial_step
    k = 1
    iterations = 0
    refinements = 0
    converged_by = "pilot-exhausted"
    if prev == 0.0:
        return _report(y, Phi, support, 0, "threshold")

    while k <= K:
        iterations += 1
        c = gram_correlate(Phi, r)
        S = top_indices(c, s)
        if cfg.refine:
            strongest = int(S[0])
            nb = cross_block_neighbors(strongest, geometry)
            peak = c[strongest] ** 2
            total = peak + float(np.sum(c[list(nb)] ** 2))
            ratio = peak / total if total > 0.0 else 1.0
            if (ratio >= cfg.mu) != inverted:
                seeds = S if cfg.neighbor_scope == "all" else S[:1]
                S = np.concatenate([S, neighbors[seeds].ravel()])
                refinements += 1
        C = np.union1d(support, S)
        coef = gram.solve(C)
        F = np.sort(C[top_indices(np.abs(coef), s)])
        coef_F = gram.solve(F)
        r_F = _residual(y, Phi, F, coef_F)
        e_F = float(np.vdot(r_F, r_F).real)
        if e_F < thr:
            support, r = F, r_F
            trace.append(e_F)
            converged_by = "threshold"
            break
        if e_F >= prev:
            if s + 1 > max_support:
                converged_by = "max-support"
                break
            s += 1
        else:
            support, r, prev = F, r_F, e_F
            trace.append(e_F)
            k += 1
    return _report(y, Phi, support, iterations, converged_by, trace, refinements)


def samp(y, Phi, cfg, geometry=None, gram=None):
    """Sparsity adaptive matching pursuit: BDS-SAMP without the neighbour stage."""
    y, Phi = _check(y, Phi)
    if geometry is None:
        from .channel import ArrayGeometry

        geometry = ArrayGeometry(Phi.shape[1], 1)
    return bds_samp(y, Phi, geometry, dataclasses.replace(cfg, refine=False), gram)


def omp(y, Phi, sparsity):
    """Orthogonal matching pursuit with exactly ``sparsity`` selections."""
    y, Phi = _check(y, Phi)
    K, P = Phi.shape
    if not 1 <= sparsity <= min(K, P):
        raise InvalidParams(f"sparsity must lie in [1, {min(K, P)}], got {sparsity}")
    chosen = []
    taken = np.zeros(P, dtype=bool)
    r = y
    trace = []
    for _ in range(sparsity):
        c = gram_correlate(Phi, r)
        c[taken] = -1.0
        idx = int(np.argmax(c))
        chosen.append(idx)
        taken[idx] = True
        coef = ls_solve(Phi[:, chosen], y)
        r = _residual(y, Phi, chosen, coef)
        trace.append(float(np.vdot(r, r).real))
    return _report(y, Phi, chosen, sparsity, "max-support", trace)


def tile_indices(geometry, block_shape):
    """Linear beam indices of each rectangular tile, one row per tile."""
    bv, bh = block_shape
    if bv < 1 or bh < 1 or geometry.P_v % bv or geometry.P_h % bh:
        raise InvalidBlockShape(f"{bv}x{bh} tiles do not partition a {geometry.P_v}x{geometry.P_h} grid")
    tiles = []
    for tj in range(geometry.P_h // bh):
        for ti in range(geometry.P_v // bv):
            rows = np.arange(ti * bv, (ti + 1) * bv)
            cols = np.arange(tj * bh, (tj + 1) * bh)
            tiles.append((cols[None, :] * geometry.P_v + rows[:, None]).ravel(order="F"))
    return np.asarray(tiles)


def bomp(y, Phi, geometry, block_shape=(4, 4), sparsity_blocks=1):
    """Block OMP over a fixed tiling of the beam grid."""
    y, Phi = _check(y, Phi)
    K, P = Phi.shape
    tiles = tile_indices(geometry, block_shape)
    if geometry.P != P:
        raise DimensionMismatch(f"geometry has {geometry.P} beams, Phi has {P} columns")
    if not 1 <= sparsity_blocks <= len(tiles) or sparsity_blocks * tiles.shape[1] > K:
        raise InvalidParams(f"{sparsity_blocks} blocks of {tiles.shape[1]} beams do not fit K = {K}")
    picked = np.zeros(len(tiles), dtype=bool)
    support = np.zeros(0, dtype=np.int64)
    r = y
    trace = []
    for _ in range(sparsity_blocks):
        c2 = gram_correlate(Phi, r) ** 2
        energy = c2[tiles].sum(axis=1)
        energy[picked] = -1.0
        t = int(np.argmax(energy))
        picked[t] = True
        support = np.sort(np.concatenate([support, tiles[t]]))
        coef = ls_solve(Phi[:, support], y)
        r = _residual(y, Phi, support, coef)
        trace.append(float(np.vdot(r, r).real))
    return _report(y, Phi, support, sparsity_blocks, "max-support", trace)


def _grow_rectangle(c2, seed, geometry, budget, energy_fraction, window, taken):
    """Grow a toroidal rectangle around ``seed`` one row or column at a time.

    Returns the list of new beam indices.  Growth stops once the rectangle
    holds ``energy_fraction`` of the correlation energy of the
    ``(2 window + 1)``-wide neighbourhood of the seed, when it would exceed
    ``budget`` new beams, or when no side can grow inside the window.
    """
    Pv, Ph = geometry.P_v, geometry.P_h
    i0, j0 = geometry.beam_coords(seed)
    wv, wh = min(window, (Pv - 1) // 2), min(window, (Ph - 1) // 2)
    rows_w = (i0 + np.arange(-wv, wv + 1)) % Pv
    cols_w = (j0 + np.arange(-wh, wh + 1)) % Ph
    local = float(c2[(cols_w[None, :] * Pv + rows_w[:, None])].sum())

    ext = {"up": 0, "down": 0, "left": 0, "right": 0}
    members = [seed]
    energy = float(c2[seed])

    def strip(side):
        if side in ("up", "down"):
            if (side == "up" and ext["up"] >= wv) or (side == "down" and ext["down"] >= wv):
                return None
            row = (i0 - ext["up"] - 1) % Pv if side == "up" else (i0 + ext["down"] + 1) % Pv
            cols = (j0 + np.arange(-ext["left"], ext["right"] + 1)) % Ph
            return cols * Pv + row
        if (side == "left" and ext["left"] >= wh) or (side == "right" and ext["right"] >= wh):
            return None
        col = (j0 - ext["left"] - 1) % Ph if side == "left" else (j0 + ext["right"] + 1) % Ph
        rows = (i0 + np.arange(-ext["up"], ext["down"] + 1)) % Pv
        return col * Pv + rows

    n_new = 0 if taken[seed] else 1
    while energy < energy_fraction * local and n_new < budget:
        best = None
        for side in ("up", "down", "left", "right"):
            idx = strip(side)
            if idx is None:
                continue
            fresh = idx[~taken[idx]]
            if n_new + fresh.size > budget:
                continue
            gain = float(c2[idx].sum())
            if best is None or gain > best[0]:
                best = (gain, side, idx, fresh.size)
        if best is None:
            break
        gain, side, idx, n_fresh = best
        ext[side] += 1
        members.extend(int(i) for i in idx)
        energy += gain
        n_new += n_fresh
    return members


def asd(y, Phi, geometry, sparsity, energy_fraction=0.8, window=2):
    """Adaptive support detection with rectangular beam blocks.

    Repeatedly seeds a rectangle at the strongest unselected beam, grows it
    on the beam grid, and re-fits least squares on the union of rectangles,
    until ``sparsity`` beams are selected.  An approximate re-implementation
    from a prose description; free parameters are exposed as arguments.
    """
    y, Phi = _check(y, Phi)
    K, P = Phi.shape
    if geometry.P != P:
        raise DimensionMismatch(f"geometry has {geometry.P} beams, Phi has {P} columns")
    if not 1 <= sparsity <= min(K, P):
        raise InvalidParams(f"sparsity must lie in [1, {min(K, P)}], got {sparsity}")
    if not 0.0 < energy_fraction <= 1.0:
        raise InvalidParams("energy_fraction must lie in (0, 1]")
    taken = np.zeros(P, dtype=bool)
    r = y
    trace = []
    iterations = 0
    while taken.sum() < sparsity:
        iterations += 1
        c2 = gram_correlate(Phi, r) ** 2
        free = np.where(taken, -1.0, c2)
        seed = int(np.argmax(free))
        budget = sparsity - int(taken.sum())
        members = _grow_rectangle(c2, seed, geometry, budget, energy_fraction, window, taken)
        taken[members] = True
        support = np.flatnonzero(taken)
        coef = ls_solve(Phi[:, support], y)
        r = _residual(y, Phi, support, coef)
        trace.append(float(np.vdot(r, r).real))
    return _report(y, Phi, np.flatnonzero(taken), iterations, "max-support", trace)


def dominant_order(h_true):
    """Beam indices sorted by decreasing ``|h_true|`` (stable)."""
    return np.argsort(-np.abs(np.asarray(h_true)), kind="stable")


def oracle_support_size(h_true, energy_fraction):
    """Smallest number of largest entries holding ``energy_fraction`` of the energy."""
    if not 0.0 < energy_fraction <= 1.0:
        raise InvalidParams("energy_fraction must lie in (0, 1]")
    e = np.abs(np.asarray(h_true)[dominant_order(h_true)]) ** 2
    cum = np.cumsum(e)
    if cum[-1] == 0.0:
        raise ZeroReference("reference channel has zero energy")
    return int(np.searchsorted(cum, energy_fraction * cum[-1] * (1.0 - 1e-12))) + 1


def oracle_ls(y, Phi, h_B_true, energy_fraction=0.99):
    """Genie least squares on the dominant entries of the true channel."""
    y, Phi = _check(y, Phi)
    K = Phi.shape[0]
    n = oracle_support_size(h_B_true, energy_fraction)
    if n > K:
        raise SupportTooLarge(f"{n} beams needed for {energy_fraction} of the energy, only {K} measurements")
    support = dominant_order(h_B_true)[:n]
    return _report(y, Phi, support, 1, "max-support")


def oracle_ls_best(y, Phi, h_B_true, max_support=None):
    """Genie least squares on the best prefix of the dominant entries.

    Tries every support made of the ``n`` largest true entries, ``n = 1 ..
    max_support`` (default ``K - 1``), and keeps the one with the smallest
    error against the true channel.  One QR of the longest prefix serves all
    ``n``.
    """
    y, Phi = _check(y, Phi)
    K, P = Phi.shape
    h = np.asarray(h_B_true, dtype=np.complex128)
    n_max = min(max_support or K - 1, K, P)
    order = dominant_order(h)[:n_max]
    A = Phi[:, order]
    Q, R = np.linalg.qr(A)
    qy = adjoint(Q, y)
    total = float(np.vdot(h, h).real)
    if total == 0.0:
        raise ZeroReference("reference channel has zero energy")
    kept = np.cumsum(np.abs(h[order]) ** 2)
    best_n, best_err = 1, math.inf
    diag = np.abs(np.diag(R))
    for n in range(1, n_max + 1):
        if diag[n - 1] < 1e-10 * diag[:n].max():
            break
        x = sla.solve_triangular(R[:n, :n], qy[:n], check_finite=False)
        d = h[order[:n]] - x
        err = float(np.vdot(d, d).real) + (total - kept[n - 1])
        if err < best_err:
            best_n, best_err = n, err
    return _report(y, Phi, order[:best_n], 1, "max-support")
