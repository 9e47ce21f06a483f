"""Spatially non-stationary UPA channel drops and their beam-domain form.

A drop is a set of clusters of rays.  Wholly visible (WV) clusters illuminate
the whole array; partially visible (PV) clusters only a rectangular
visibility region (VR).  The array-domain channel is the sum of masked
planar steering matrices, and the beam-domain channel is its two-sided DFT.

Cluster statistics are a small stand-in for a full 3GPP UMi parameter set:
uniform cluster centres, wrapped-Gaussian ray offsets, exponential delays and
delay-driven exponential cluster powers with log-normal shadowing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch, IndexOutOfRange, InvalidParams
from .linalg import beam_grid, dft_basis, vec

SINGULAR_TOL = 1e-12


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar array with ``P_v`` rows and ``P_h`` columns."""

    P_v: int
    P_h: int
    element_spacing: float = 0.5

    def __post_init__(self):
        if self.P_v < 1 or self.P_h < 1:
            raise InvalidParams(f"array dimensions must be >= 1, got {self.P_v}x{self.P_h}")

    @property
    def P(self):
        return self.P_v * self.P_h

    @property
    def shape(self):
        return (self.P_v, self.P_h)

    def beam_index(self, i, j):
        """Linear (column-stacked) index of beam row ``i``, column ``j`` (0-based)."""
        return j * self.P_v + i

    def beam_coords(self, idx):
        """Inverse of :meth:`beam_index`."""
        return idx % self.P_v, idx // self.P_v


@dataclass(frozen=True)
class VisibilityRegion:
    """Axis-aligned block of visible antennas, 1-based inclusive indices."""

    row_start: int
    row_end: int
    col_start: int
    col_end: int

    @classmethod
    def full(cls, geometry):
        return cls(1, geometry.P_v, 1, geometry.P_h)

    def validate(self, geometry):
        if not (1 <= self.row_start <= self.row_end <= geometry.P_v):
            raise InvalidParams(f"VR rows {self.row_start}..{self.row_end} outside 1..{geometry.P_v}")
        if not (1 <= self.col_start <= self.col_end <= geometry.P_h):
            raise InvalidParams(f"VR cols {self.col_start}..{self.col_end} outside 1..{geometry.P_h}")

    def is_full(self, geometry):
        return self == VisibilityRegion.full(geometry)

    @property
    def size(self):
        return (self.row_end - self.row_start + 1) * (self.col_end - self.col_start + 1)


@dataclass(frozen=True)
class PathComponent:
    beta: float
    phi: float
    tau: float
    theta_az: float
    theta_el: float
    vr: VisibilityRegion


@dataclass(frozen=True)
class ClusterSet:
    """All rays of one drop, split into WV and PV sets."""

    wv_paths: tuple
    pv_paths: tuple
    rho: float
    carrier_freq: float
    geometry: ArrayGeometry

    @property
    def paths(self):
        return self.wv_paths + self.pv_paths

    @cached_property
    def table(self):
        """Per-path parameters as numpy arrays (WV paths first)."""
        paths = self.paths
        cols = {
            "beta": [p.beta for p in paths],
            "phi": [p.phi for p in paths],
            "tau": [p.tau for p in paths],
            "theta_az": [p.theta_az for p in paths],
            "theta_el": [p.theta_el for p in paths],
            "row_start": [p.vr.row_start for p in paths],
            "row_end": [p.vr.row_end for p in paths],
            "col_start": [p.vr.col_start for p in paths],
            "col_end": [p.vr.col_end for p in paths],
        }
        out = {}
        for key, val in cols.items():
            dtype = np.int64 if key.startswith(("row", "col")) else np.float64
            out[key] = np.asarray(val, dtype=dtype)
        return out

    def complex_gains(self):
        """``beta * exp(j psi)`` with ``psi = -2 pi f tau + phi`` for every path."""
        t = self.table
        psi = -2.0 * np.pi * np.mod(self.carrier_freq * t["tau"], 1.0) + t["phi"]
        return t["beta"] * np.exp(1j * psi)


@dataclass(frozen=True)
class ChannelRealization:
    H: np.ndarray
    H_B: np.ndarray
    h: np.ndarray
    h_B: np.ndarray


@dataclass(frozen=True)
class ChannelGenParams:
    """Statistics of the simplified cluster generator."""

    n_clusters: int = 20
    rays_per_cluster: int = 20
    rho: float = 0.45
    ray_spread: float = 0.01
    delay_spread_s: float = 100e-9
    # DS / (r_tau - 1) with r_tau = 2.1: matches the usual UMi power-vs-delay
    # decay for exponentially drawn delays
    power_decay_s: float = 91e-9
    cluster_shadowing_db: float = 3.0
    vr_min_frac: float = 0.125
    vr_max_frac: float = 0.5
    carrier_freq: float = 11e9

    def validate(self):
        if self.n_clusters < 1:
            raise InvalidParams("n_clusters must be >= 1")
        if self.rays_per_cluster < 1:
            raise InvalidParams("rays_per_cluster must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidParams(f"rho must lie in [0, 1], got {self.rho}")
        if not 0.0 < self.vr_min_frac <= self.vr_max_frac <= 1.0:
            raise InvalidParams(
                f"VR size range [{self.vr_min_frac}, {self.vr_max_frac}] must satisfy 0 < min <= max <= 1"
            )
        if self.ray_spread < 0 or self.delay_spread_s < 0 or self.power_decay_s <= 0:
            raise InvalidParams("spreads must be >= 0 and power_decay_s > 0")
        if self.carrier_freq <= 0:
            raise InvalidParams("carrier_freq must be positive")


def wrap_frequency(theta):
    """Wrap spatial frequencies into [-0.5, 0.5)."""
    return np.mod(np.asarray(theta) + 0.5, 1.0) - 0.5


def pv_cluster_count(n_clusters, rho):
    return int(math.ceil(rho * n_clusters - 1e-9))


def _vr_length_range(P_dim, params):
    lo = max(1, int(math.ceil(P_dim * params.vr_min_frac - 1e-9)))
    hi = max(lo, int(math.floor(P_dim * params.vr_max_frac + 1e-9)))
    return lo, min(hi, P_dim)


def _sample_vr(geometry, params, rng):
    (lv, hv), (lh, hh) = _vr_length_range(geometry.P_v, params), _vr_length_range(geometry.P_h, params)
    if lv == hv == geometry.P_v and lh == hh == geometry.P_h:
        raise InvalidParams(f"VR size range cannot produce a partial VR on a {geometry.P_v}x{geometry.P_h} array")
    for _ in range(1000):
        Lv = int(rng.integers(lv, hv + 1))
        Lh = int(rng.integers(lh, hh + 1))
        if Lv < geometry.P_v or Lh < geometry.P_h:
            break
    else:
        raise InvalidParams("could not draw a partial VR")
    rs = int(rng.integers(1, geometry.P_v - Lv + 2))
    cs = int(rng.integers(1, geometry.P_h - Lh + 2))
    return VisibilityRegion(rs, rs + Lv - 1, cs, cs + Lh - 1)


def sample_clusters(geometry, params, rng):
    """Draw one drop of ``n_clusters * rays_per_cluster`` paths.

    ``ceil(rho * N)`` randomly chosen clusters are PV; each PV cluster draws
    one rectangular VR shared by all of its rays.  Ray powers are equal
    within a cluster and the total power is normalised to one.
    """
    params.validate()
    N, M = params.n_clusters, params.rays_per_cluster
    n_pv = pv_cluster_count(N, params.rho)

    pv_ids = set(int(c) for c in rng.permutation(N)[:n_pv])
    tau = -params.delay_spread_s * np.log(rng.uniform(size=N))
    tau = np.sort(tau - tau.min())
    shadow = rng.normal(0.0, params.cluster_shadowing_db, size=N)
    power = np.exp(-tau / params.power_decay_s) * 10.0 ** (-shadow / 10.0)
    power /= power.sum()
    centres = rng.uniform(-0.5, 0.5, size=(N, 2))
    offsets = rng.normal(0.0, params.ray_spread, size=(N, M, 2))
    angles = wrap_frequency(centres[:, None, :] + offsets)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(N, M))

    full = VisibilityRegion.full(geometry)
    wv, pv = [], []
    for n in range(N):
        vr = _sample_vr(geometry, params, rng) if n in pv_ids else full
        beta = math.sqrt(power[n] / M)
        rays = [
            PathComponent(
                beta=beta,
                phi=float(phases[n, m]),
                tau=float(tau[n]),
                theta_az=float(angles[n, m, 0]),
                theta_el=float(angles[n, m, 1]),
                vr=vr,
            )
            for m in range(M)
        ]
        (pv if n in pv_ids else wv).extend(rays)
    return ClusterSet(tuple(wv), tuple(pv), params.rho, params.carrier_freq, geometry)


def single_path(geometry, theta_az, theta_el, beta=1.0, phi=0.0, vr=None, carrier_freq=11e9):
    """A one-path ClusterSet; handy for analysis and tests."""
    vr = vr or VisibilityRegion.full(geometry)
    vr.validate(geometry)
    path = PathComponent(beta, phi, 0.0, theta_az, theta_el, vr)
    if vr.is_full(geometry):
        return ClusterSet((path,), (), 0.0, carrier_freq, geometry)
    return ClusterSet((), (path,), 1.0, carrier_freq, geometry)


def vr_mask(vr, geometry):
    """Boolean ``P_v x P_h`` matrix that is True inside the VR."""
    vr.validate(geometry)
    mask = np.zeros(geometry.shape, dtype=bool)
    mask[vr.row_start - 1 : vr.row_end, vr.col_start - 1 : vr.col_end] = True
    return mask


def _steering(n_elems, theta, start, end):
    # columns are steering vectors masked to antennas start..end (1-based)
    n = np.arange(n_elems)
    S = np.exp(2j * np.pi * np.mod(np.outer(n, theta), 1.0))
    inside = (n[:, None] >= start[None, :] - 1) & (n[:, None] <= end[None, :] - 1)
    return S * inside


def array_ctf(clusters, geometry):
    """Array-domain channel matrix, sum of masked planar steering matrices.

    A rectangular VR factors into a row mask times a column mask, so the
    whole sum is one ``B diag(g) A^T`` product.
    """
    t = clusters.table
    if t["beta"].size == 0:
        return np.zeros(geometry.shape, dtype=np.complex128)
    g = clusters.complex_gains()
    B = _steering(geometry.P_v, t["theta_el"], t["row_start"], t["row_end"])
    A = _steering(geometry.P_h, t["theta_az"], t["col_start"], t["col_end"])
    return (B * g) @ A.T


def beam_transform(H, geometry):
    """Beam-domain channel ``conj(F_el) H F_az^H``."""
    H = np.asarray(H)
    if H.shape != geometry.shape:
        raise DimensionMismatch(f"H has shape {H.shape}, expected {geometry.shape}")
    F_el = dft_basis(geometry.P_v)
    F_az = dft_basis(geometry.P_h)
    return F_el.conj() @ H @ F_az.conj().T


def inverse_beam_transform(H_B, geometry):
    H_B = np.asarray(H_B)
    if H_B.shape != geometry.shape:
        raise DimensionMismatch(f"H_B has shape {H_B.shape}, expected {geometry.shape}")
    return dft_basis(geometry.P_v).T @ H_B @ dft_basis(geometry.P_h)


def realize(clusters, geometry):
    H = array_ctf(clusters, geometry)
    H_B = beam_transform(H, geometry)
    return ChannelRealization(H=H, H_B=H_B, h=vec(H), h_B=vec(H_B))


def dirichlet_kernel(I_s, I_e, x):
    """``e^{j pi x (I_s + I_e - 2)} sin(pi x L) / sin(pi x)`` with ``L = I_e - I_s + 1``.

    Where ``sin(pi x)`` vanishes the analytic limit ``L (-1)^{n (L - 1)}``
    (``n`` the nearest integer to ``x``) replaces the ratio.  Broadcasts over
    all three arguments.
    """
    I_s, I_e, x = np.broadcast_arrays(np.asarray(I_s), np.asarray(I_e), np.asarray(x, dtype=np.float64))
    L = I_e - I_s + 1
    den = np.sin(np.pi * x)
    singular = np.abs(den) < SINGULAR_TOL
    n = np.rint(x)
    limit = L * np.where(np.mod(n * (L - 1), 2) == 0, 1.0, -1.0)
    safe = np.where(singular, 1.0, den)
    ratio = np.where(singular, limit, np.sin(np.pi * x * L) / safe)
    out = np.exp(1j * np.pi * x * (I_s + I_e - 2)) * ratio
    return out[()] if out.ndim == 0 else out


def beam_oracle_matrix(clusters, geometry):
    """Closed-form beam-domain matrix, one separable Dirichlet product per path."""
    t = clusters.table
    if t["beta"].size == 0:
        return np.zeros(geometry.shape, dtype=np.complex128)
    g = clusters.complex_gains()
    grid_v = beam_grid(geometry.P_v)
    grid_h = beam_grid(geometry.P_h)
    fv = dirichlet_kernel(
        t["row_start"][:, None], t["row_end"][:, None], t["theta_el"][:, None] - grid_v[None, :]
    )
    fh = dirichlet_kernel(
        t["col_start"][:, None], t["col_end"][:, None], t["theta_az"][:, None] - grid_h[None, :]
    )
    return (fv.T * g) @ fh / math.sqrt(geometry.P)


def beam_element_oracle(clusters, i, j, geometry):
    """Closed-form beam-domain entry at beam row ``i``, column ``j`` (0-based)."""
    if not (0 <= i < geometry.P_v and 0 <= j < geometry.P_h):
        raise IndexOutOfRange(f"beam ({i}, {j}) outside {geometry.P_v}x{geometry.P_h}")
    t = clusters.table
    if t["beta"].size == 0:
        return 0j
    g = clusters.complex_gains()
    tv = beam_grid(geometry.P_v)[i]
    th = beam_grid(geometry.P_h)[j]
    fv = dirichlet_kernel(t["row_start"], t["row_end"], t["theta_el"] - tv)
    fh = dirichlet_kernel(t["col_start"], t["col_end"], t["theta_az"] - th)
    return complex(np.sum(g * fv * fh) / math.sqrt(geometry.P))


def leakage_envelope(I_s, I_e, theta0, P_grid):
    """``|f(theta0 - grid_j)|`` on the ``P_grid`` beam grid, divided by the kernel peak ``L``."""
    if I_s > I_e:
        raise InvalidParams("I_s must not exceed I_e")
    if P_grid < 1:
        raise InvalidParams("P_grid must be >= 1")
    L = I_e - I_s + 1
    return np.abs(dirichlet_kernel(I_s, I_e, theta0 - beam_grid(P_grid))) / L
