"""Single-particle phase-space densities on tensor-product grids.

Storage convention: ``GridDensity.values`` has shape ``(*q_counts, *p_counts)``,
position axes first.  All integrals use the midpoint rule on cell centers.

Also here: the pair-potential convolution ``(V * rho)(q)`` shared by the
energy functional, the mean-field fixed point and the Vlasov force, so that all
three use the same kernel discretization.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage, signal, special

from .potentials import PairPotential

__all__ = [
    "PhaseGrid",
    "GridDensity",
    "MomentFields",
    "NormalizationError",
    "MassLossError",
    "pair_convolution",
    "pair_gradient_convolution",
    "normalization",
    "energy_functional",
    "kinetic_functional",
    "momentum_functional",
    "center_functional",
    "angmom_functional",
    "entropy",
    "casimir",
    "neg_xlogx",
    "macrostate",
    "histogram_density",
    "mesostate",
    "coarsen",
    "shift_cells",
    "save_density",
    "load_density",
    "write_moments_csv",
]

NORM_TOL = 1e-9
MASK_FLOOR = 1e-12
MAGIC = b"SQGD"
FORMAT_VERSION = 1


class NormalizationError(ValueError):
    pass


class MassLossError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform cell-centered grid on ``R^d x R^d``; bounds are cell edges."""

    q_lo: tuple
    q_hi: tuple
    q_n: tuple
    p_lo: tuple
    p_hi: tuple
    p_n: tuple

    def __post_init__(self):
        for name in ("q_lo", "q_hi", "p_lo", "p_hi"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        for name in ("q_n", "p_n"):
            object.__setattr__(self, name, tuple(int(x) for x in getattr(self, name)))
        d = len(self.q_n)
        if d not in (2, 3) or not all(
            len(getattr(self, k)) == d for k in ("q_lo", "q_hi", "p_lo", "p_hi", "p_n")
        ):
            raise ValueError("grid must have 2 or 3 position and momentum axes")
        if min(self.q_n + self.p_n) < 8:
            raise ValueError("grid needs at least 8 points per axis")
        lo = self.q_lo + self.p_lo
        hi = self.q_hi + self.p_hi
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("grid axis bounds must satisfy min < max")

    @classmethod
    def symmetric(cls, dim: int, q_extent: float, p_extent: float, nq: int, np_: int | None = None):
        """Grid on ``[-q_extent, q_extent]^d x [-p_extent, p_extent]^d``."""
        np_ = nq if np_ is None else np_
        return cls(
            (-q_extent,) * dim, (q_extent,) * dim, (nq,) * dim,
            (-p_extent,) * dim, (p_extent,) * dim, (np_,) * dim,
        )

    @property
    def dim(self) -> int:
        return len(self.q_n)

    @property
    def shape(self) -> tuple:
        return self.q_n + self.p_n

    @property
    def dq(self) -> np.ndarray:
        return (np.array(self.q_hi) - np.array(self.q_lo)) / np.array(self.q_n)

    @property
    def dp(self) -> np.ndarray:
        return (np.array(self.p_hi) - np.array(self.p_lo)) / np.array(self.p_n)

    @property
    def q_cell_volume(self) -> float:
        return float(np.prod(self.dq))

    @property
    def p_cell_volume(self) -> float:
        return float(np.prod(self.dp))

    @property
    def cell_volume(self) -> float:
        return self.q_cell_volume * self.p_cell_volume

    @property
    def q_centers(self) -> list[np.ndarray]:
        return [lo + (np.arange(n) + 0.5) * h for lo, n, h in zip(self.q_lo, self.q_n, self.dq)]

    @property
    def p_centers(self) -> list[np.ndarray]:
        return [lo + (np.arange(n) + 0.5) * h for lo, n, h in zip(self.p_lo, self.p_n, self.dp)]

    def q_mesh(self) -> list[np.ndarray]:
        """Position coordinates as arrays broadcastable to ``q_n``."""
        return np.meshgrid(*self.q_centers, indexing="ij", sparse=True)

    def p_mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.p_centers, indexing="ij", sparse=True)

    def edges(self) -> list[np.ndarray]:
        out = []
        for lo, hi, n in zip(self.q_lo + self.p_lo, self.q_hi + self.p_hi, self.q_n + self.p_n):
            out.append(np.linspace(lo, hi, n + 1))
        return out

    def axes_dict(self) -> dict:
        return {
            "dim": self.dim,
            "q": [[lo, hi, n] for lo, hi, n in zip(self.q_lo, self.q_hi, self.q_n)],
            "p": [[lo, hi, n] for lo, hi, n in zip(self.p_lo, self.p_hi, self.p_n)],
        }

    @classmethod
    def from_axes_dict(cls, d: dict) -> "PhaseGrid":
        q, p = d["q"], d["p"]
        return cls(
            [a[0] for a in q], [a[1] for a in q], [a[2] for a in q],
            [a[0] for a in p], [a[1] for a in p], [a[2] for a in p],
        )


class GridDensity:
    """Nonnegative values of ``f(q, p)`` at the cell centers of a :class:`PhaseGrid`."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: PhaseGrid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"values shape {values.shape} != grid shape {grid.shape}")
        if values.size and values.min() < 0:
            raise ValueError("density values must be nonnegative")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    def __repr__(self):
        return f"GridDensity(shape={self.grid.shape}, mass={self.mass():.12g})"

    @property
    def q_axes(self) -> tuple:
        return tuple(range(self.grid.dim))

    @property
    def p_axes(self) -> tuple:
        d = self.grid.dim
        return tuple(range(d, 2 * d))

    def mass(self) -> float:
        return float(self.values.sum()) * self.grid.cell_volume

    def normalize(self) -> "GridDensity":
        mass = self.mass()
        if not mass > 0:
            raise NormalizationError("cannot normalize a density with zero mass")
        return GridDensity(self.grid, self.values / mass)

    def require_normalized(self, tol: float = NORM_TOL) -> None:
        mass = self.mass()
        if abs(mass - 1.0) > tol:
            raise NormalizationError(f"density mass is {mass!r}, expected 1 within {tol}")

    def q_marginal(self) -> np.ndarray:
        """Position density ``rho(q) = int f dp`` on the q-grid."""
        return self.values.sum(axis=self.p_axes) * self.grid.p_cell_volume

    def p_marginal(self) -> np.ndarray:
        return self.values.sum(axis=self.q_axes) * self.grid.q_cell_volume

    def momentum_moment_field(self) -> list[np.ndarray]:
        """``j_k(q) = int p_k f dp`` for each momentum axis."""
        out = []
        d = self.grid.dim
        for k, pc in enumerate(self.grid.p_centers):
            other = tuple(d + j for j in range(d) if j != k)
            line = self.values.sum(axis=other) if other else self.values
            out.append(np.tensordot(line, pc, axes=([d], [0])) * self.grid.p_cell_volume)
        return out


@dataclass(frozen=True)
class MomentFields:
    rho: np.ndarray
    u: list  # per-axis velocity fields, NaN where masked
    ekin: np.ndarray
    mask: np.ndarray  # True where u is defined


# --- pair convolution -----------------------------------------------------

DIRECT_WORK_LIMIT = 5e7


def _offsets(shape, spacing):
    axes = [np.arange(-(n - 1), n) * h for n, h in zip(shape, spacing)]
    return np.meshgrid(*axes, indexing="ij", sparse=True)


def self_cell_distance(spacing) -> float:
    """Regularized same-cell pair distance: half the cell diagonal."""
    return 0.5 * float(np.sqrt(np.sum(np.square(spacing))))


def _convolve(kernel, rho, method):
    if method == "auto":
        method = "direct" if kernel.size * rho.size <= DIRECT_WORK_LIMIT else "fft"
    return signal.convolve(kernel, rho, mode="valid", method=method)


def pair_convolution(rho, spacing, potential: PairPotential, method: str = "auto") -> np.ndarray:
    """``(V * rho)(q_i) = sum_j V(|q_i - q_j|) rho_j dq`` with zero padding.

    The ``i == j`` term uses ``V`` at half the cell diagonal.
    """
    rho = np.asarray(rho, dtype=float)
    off = _offsets(rho.shape, spacing)
    r = np.sqrt(sum(o * o for o in off))
    center = tuple(n - 1 for n in rho.shape)
    r[center] = self_cell_distance(spacing)
    kernel = potential._value(r)
    return _convolve(kernel, rho, method) * float(np.prod(spacing))


def pair_gradient_convolution(rho, spacing, potential: PairPotential, method: str = "auto") -> list[np.ndarray]:
    """``grad (V * rho)`` via the kernel ``V'(r) r_hat`` (no self-force)."""
    rho = np.asarray(rho, dtype=float)
    off = _offsets(rho.shape, spacing)
    r = np.sqrt(sum(o * o for o in off))
    center = tuple(n - 1 for n in rho.shape)
    r[center] = 1.0
    w = potential.dv_over_r(r)
    w[center] = 0.0
    vol = float(np.prod(spacing))
    return [_convolve(w * o, rho, method) * vol for o in off]


# --- functionals ----------------------------------------------------------

def normalization(f: GridDensity) -> float:
    return f.mass()


def kinetic_functional(f: GridDensity, m: float = 1.0) -> float:
    g = f.p_marginal()
    p2 = sum(pk * pk for pk in f.grid.p_mesh())
    return float(np.sum(p2 * g)) * f.grid.p_cell_volume / (2.0 * m)


def energy_functional(f: GridDensity, potential: PairPotential, m: float = 1.0, e2: float = 1.0) -> float:
    """Kinetic plus mean-field pair energy of a normalized density."""
    f.require_normalized()
    rho = f.q_marginal()
    field = pair_convolution(rho, f.grid.dq, potential)
    pot = 0.5 * e2 * float(np.sum(rho * field)) * f.grid.q_cell_volume
    return kinetic_functional(f, m) + pot


def momentum_functional(f: GridDensity) -> np.ndarray:
    g = f.p_marginal()
    return np.array([float(np.sum(pk * g)) for pk in f.grid.p_mesh()]) * f.grid.p_cell_volume


def center_functional(f: GridDensity) -> np.ndarray:
    rho = f.q_marginal()
    return np.array([float(np.sum(qk * rho)) for qk in f.grid.q_mesh()]) * f.grid.q_cell_volume


def angmom_functional(f: GridDensity):
    """``int q x p f``: scalar for d=2, 3-vector for d=3."""
    q = f.grid.q_mesh()
    j = f.momentum_moment_field()
    vol = f.grid.q_cell_volume
    if f.grid.dim == 2:
        return float(np.sum(q[0] * j[1] - q[1] * j[0])) * vol
    return np.array([
        float(np.sum(q[1] * j[2] - q[2] * j[1])),
        float(np.sum(q[2] * j[0] - q[0] * j[2])),
        float(np.sum(q[0] * j[1] - q[1] * j[0])),
    ]) * vol


def neg_xlogx(x):
    """``-x ln x`` with the convention ``0 ln 0 = 0``."""
    return special.entr(x)


def casimir(f: GridDensity, c: Callable[[np.ndarray], np.ndarray]) -> float:
    """``int C(f) dq dp``; evaluated slice by slice along the first axis."""
    total = 0.0
    for block in f.values:
        with np.errstate(all="ignore"):
            cv = np.asarray(c(block), dtype=float)
        if not np.all(np.isfinite(cv)):
            bad = block[~np.isfinite(np.broadcast_to(cv, block.shape))].flat[0]
            raise ValueError(f"Casimir function is not finite at cell value {bad!r}")
        total += float(np.sum(cv))
    return total * f.grid.cell_volume


def entropy(f: GridDensity) -> float:
    return casimir(f, neg_xlogx)


def macrostate(f: GridDensity, m: float = 1.0) -> MomentFields:
    f.require_normalized()
    rho = f.q_marginal()
    j = f.momentum_moment_field()
    mask = rho > MASK_FLOOR / f.grid.q_cell_volume
    safe = np.where(mask, rho, 1.0)
    u = [np.where(mask, jk / (m * safe), np.nan) for jk in j]
    d = f.grid.dim
    p2 = sum(pk * pk for pk in f.grid.p_mesh())
    ekin = np.tensordot(f.values, p2, axes=(list(range(d, 2 * d)), list(range(d)))) * (
        f.grid.p_cell_volume / (2.0 * m)
    )
    return MomentFields(rho=rho, u=u, ekin=ekin, mask=mask)


# --- empirical -> grid ----------------------------------------------------

def histogram_density(points, grid: PhaseGrid, weights=None) -> tuple[np.ndarray, float]:
    """Bin ``(q, p)`` rows onto the grid; returns (values, mass outside grid).

    ``values`` is a density (mass per cell volume) and is not renormalized.
    """
    points = np.asarray(points, dtype=float)
    if weights is None:
        weights = np.full(points.shape[0], 1.0 / points.shape[0])
    hist, _ = np.histogramdd(points, bins=grid.edges(), weights=weights)
    inside = float(hist.sum())
    lost = float(np.sum(weights)) - inside
    return hist / grid.cell_volume, lost


def mesostate(measure, grid: PhaseGrid, bandwidth, max_loss: float = 1e-3) -> GridDensity:
    """Gaussian-kernel smoothing of an empirical measure, binned to ``grid``.

    ``bandwidth`` is ``(h_q, h_p)``; zero on both recovers the histogram.
    Mass leaving the box (atoms outside, or kernel tails) is counted and
    raises :class:`MassLossError` above ``max_loss``.
    """
    hq, hp = (float(b) for b in bandwidth)
    if hq < 0 or hp < 0:
        raise ValueError("bandwidth must be nonnegative")
    values, lost = histogram_density(measure.points, grid, measure.weights)
    spacing = np.concatenate([grid.dq, grid.dp])
    sigma = np.array([hq] * grid.dim + [hp] * grid.dim) / spacing
    if np.any(sigma > 0):
        values = ndimage.gaussian_filter(values, sigma=sigma, mode="constant", truncate=6.0)
    total = float(np.sum(measure.weights))
    lost = total - float(values.sum()) * grid.cell_volume
    if lost > max_loss * total:
        raise MassLossError(f"{lost / total:.3%} of the mass falls outside the grid")
    return GridDensity(grid, values).normalize()


def coarsen(f: GridDensity, factor: int) -> GridDensity:
    """Sum blocks of ``factor`` cells along every axis (counts must divide)."""
    g = f.grid
    counts = g.shape
    if any(n % factor for n in counts):
        raise ValueError(f"factor {factor} does not divide grid counts {counts}")
    new = PhaseGrid(g.q_lo, g.q_hi, [n // factor for n in g.q_n], g.p_lo, g.p_hi, [n // factor for n in g.p_n])
    shape = []
    for n in counts:
        shape += [n // factor, factor]
    mass = f.values.reshape(shape).sum(axis=tuple(range(1, 2 * len(counts), 2))) * g.cell_volume
    return GridDensity(new, mass / new.cell_volume)


def shift_cells(f: GridDensity, q_cells=None, p_cells=None) -> GridDensity:
    """Translate ``f`` by whole cells along q and/or p (zero fill), renormalized."""
    d = f.grid.dim
    shifts = list(q_cells if q_cells is not None else [0] * d) + list(p_cells if p_cells is not None else [0] * d)
    if len(shifts) != 2 * d:
        raise ValueError(f"need {d} shifts for q and {d} for p")
    v = np.asarray(f.values)
    for axis, k in enumerate(shifts):
        if k == 0:
            continue
        out = np.zeros_like(v)
        src = [slice(None)] * v.ndim
        dst = [slice(None)] * v.ndim
        n = v.shape[axis]
        if abs(k) >= n:
            raise ValueError("shift exceeds the grid")
        src[axis] = slice(0, n - k) if k > 0 else slice(-k, n)
        dst[axis] = slice(k, n) if k > 0 else slice(0, n + k)
        out[tuple(dst)] = v[tuple(src)]
        v = out
    return GridDensity(f.grid, v).normalize()


# --- serialization --------------------------------------------------------

def save_density(path, f: GridDensity, extra: dict | None = None) -> dict:
    """Write the binary density file and a ``.json`` sidecar; returns the sidecar."""
    path = Path(path)
    g = f.grid
    header = bytearray(MAGIC)
    header += struct.pack("<II", FORMAT_VERSION, g.dim)
    for lo, hi, n in zip(g.q_lo + g.p_lo, g.q_hi + g.p_hi, g.q_n + g.p_n):
        header += struct.pack("<ddQ", lo, hi, n)
    payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    blob = bytes(header) + payload
    path.write_bytes(blob)
    side = {
        "format": "statequil.griddensity",
        "version": FORMAT_VERSION,
        "layout": "row-major float64 little-endian, axes q_1..q_d then p_1..p_d",
        "axes": g.axes_dict(),
        "mass": f.mass(),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    if extra:
        side.update(extra)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    return side


def load_density(path) -> GridDensity:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError("not a grid density file")
    version, dim = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    off = 12
    axes = []
    for _ in range(2 * dim):
        axes.append(struct.unpack_from("<ddQ", blob, off))
        off += 24
    q, p = axes[:dim], axes[dim:]
    grid = PhaseGrid([a[0] for a in q], [a[1] for a in q], [a[2] for a in q],
                     [a[0] for a in p], [a[1] for a in p], [a[2] for a in p])
    values = np.frombuffer(blob, dtype="<f8", offset=off).reshape(grid.shape).astype(float)
    return GridDensity(grid, values)


def write_moments_csv(path, fields: MomentFields, grid: PhaseGrid) -> None:
    axes = "xyz"[: grid.dim]
    mesh = np.meshgrid(*grid.q_centers, indexing="ij")
    cols = {f"q_{a}": c.ravel() for a, c in zip(axes, mesh)}
    cols["rho"] = fields.rho.ravel()
    for a, u in zip(axes, fields.u):
        cols[f"u_{a}"] = u.ravel()
    cols["ekin"] = fields.ekin.ravel()
    names = list(cols)
    data = np.column_stack([cols[k] for k in names])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt="%.17g")
