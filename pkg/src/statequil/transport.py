"""Kantorovich-Rubinstein (Wasserstein-1) distances between discrete measures.

Ground cost is the weighted Euclidean distance on single-particle phase
space, ``sqrt(alpha_q |dq|^2 + alpha_p |dp|^2)`` with points stored as
``(q_1..q_d, p_1..p_d)`` rows.  The exact value is a network-simplex solve;
the entropic value is a log-domain Sinkhorn iteration.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .statefield import GridDensity, histogram_density, PhaseGrid

__all__ = [
    "DiscreteMeasure",
    "TransportSizeError",
    "SinkhornNotConverged",
    "EXACT_SIZE_CAP",
    "cost_matrix",
    "kr_distance_exact",
    "kr_distance_entropic",
    "from_grid_density",
    "from_empirical",
    "binned",
]

EXACT_SIZE_CAP = 10**6


class TransportSizeError(ValueError):
    pass


class SinkhornNotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class DiscreteMeasure:
    support: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.support, dtype=float))
        w = np.asarray(self.mass, dtype=float).ravel()
        if s.shape[0] != w.size:
            raise ValueError("support and mass lengths differ")
        if np.isnan(s).any():
            raise ValueError("support contains NaN")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mass must be nonnegative and sum to 1 (sum={w.sum()!r})")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "mass", w)

    @classmethod
    def normalized(cls, support, mass) -> "DiscreteMeasure":
        mass = np.asarray(mass, dtype=float)
        return cls(support, mass / mass.sum())

    def __len__(self):
        return self.mass.size

    def shifted(self, v) -> "DiscreteMeasure":
        return DiscreteMeasure(self.support + np.asarray(v, dtype=float), self.mass)

    def scaled(self, c: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.support * c, self.mass)


def cost_matrix(x, y, weights=None) -> np.ndarray:
    """Pairwise weighted Euclidean distances; ``weights`` are per-coordinate."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if weights is not None:
        s = np.sqrt(np.asarray(weights, dtype=float))
        x, y = x * s, y * s
    d2 = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    # exact recomputation where cancellation is worst
    np.maximum(d2, 0.0, out=d2)
    c = np.sqrt(d2)
    small = c < 1e-6 * (1.0 + np.sqrt((x * x).sum(1))[:, None])
    if small.any():
        i, j = np.nonzero(small)
        c[i, j] = np.linalg.norm(x[i] - y[j], axis=1)
    return c


def _coord_weights(dim_points: int, alpha_q: float, alpha_p: float):
    if alpha_q == 1.0 and alpha_p == 1.0:
        return None
    d = dim_points // 2
    return np.array([alpha_q] * d + [alpha_p] * d)


def _ot():
    for key in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{key}", "1")
    import ot  # noqa: PLC0415 - heavy optional import kept lazy

    return ot


def kr_distance_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, alpha_q: float = 1.0, alpha_p: float = 1.0) -> float:
    """Exact optimal-transport cost (network simplex)."""
    if len(mu) * len(nu) > EXACT_SIZE_CAP:
        raise TransportSizeError(
            f"{len(mu)}x{len(nu)} cost matrix exceeds {EXACT_SIZE_CAP}; "
            "pre-bin the measures or use kr_distance_entropic"
        )
    w = _coord_weights(mu.support.shape[1], alpha_q, alpha_p)
    c = cost_matrix(mu.support, nu.support, w)
    a, b = mu.mass, nu.mass
    # drop empty atoms; the solver is happier with strictly positive marginals
    ia, ib = a > 0, b > 0
    c = np.ascontiguousarray(c[np.ix_(ia, ib)])
    a = a[ia] / a[ia].sum()
    b = b[ib] / b[ib].sum()
    plan = _ot().emd(a, b, c, numItermax=10**7)
    return float(np.sum(plan * c))


def kr_distance_entropic(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    reg: float,
    alpha_q: float = 1.0,
    alpha_p: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> float:
    """Transport cost ``<P, C>`` of the entropic-regularized optimal plan.

    Log-domain Sinkhorn; ``reg`` is in the units of the ground cost. The
    returned value is the linear cost of the regularized plan, which is
    feasible and therefore never below the exact value.
    """
    if not reg > 0:
        raise ValueError("regularization must be positive")
    w = _coord_weights(mu.support.shape[1], alpha_q, alpha_p)
    c = cost_matrix(mu.support, nu.support, w)
    ia, ib = mu.mass > 0, nu.mass > 0
    c = c[np.ix_(ia, ib)]
    la = np.log(mu.mass[ia])
    lb = np.log(nu.mass[ib])
    k = -c / reg
    f = np.zeros(la.size)
    g = np.zeros(lb.size)
    err = np.inf
    for it in range(max_iter):
        f = la - logsumexp(k + g[None, :], axis=1)
        g = lb - logsumexp(k + f[:, None], axis=0)
        if it % 10 == 0:
            row = np.exp(logsumexp(k + f[:, None] + g[None, :], axis=1))
            err = float(np.abs(row - mu.mass[ia]).sum())
            if err < tol:
                break
    else:
        raise SinkhornNotConverged(f"Sinkhorn did not converge in {max_iter} iterations (residual {err:.3e})")
    plan = np.exp(k + f[:, None] + g[None, :])
    return float(np.sum(plan * c))


def from_grid_density(f: GridDensity, min_mass: float = 0.0) -> DiscreteMeasure:
    """Cell centers weighted by cell mass; cells below ``min_mass`` are dropped."""
    mass = (f.values * f.grid.cell_volume).ravel()
    centers = np.meshgrid(*(f.grid.q_centers + f.grid.p_centers), indexing="ij")
    pts = np.column_stack([c.ravel() for c in centers])
    keep = mass > min_mass
    return DiscreteMeasure.normalized(pts[keep], mass[keep])


def from_empirical(measure) -> DiscreteMeasure:
    return DiscreteMeasure.normalized(measure.points, measure.weights)


def binned(points, grid: PhaseGrid, weights=None) -> DiscreteMeasure:
    """Pre-bin point masses onto grid cell centers (mass outside is dropped)."""
    values, _ = histogram_density(points, grid, weights)
    return from_grid_density(GridDensity(grid, values).normalize())
