"""Finite-N Hamiltonian dynamics for one-species systems with pair forces.

Positions and momenta are ``(N, d)`` arrays with ``d`` in ``{2, 3}``.  The
force kernels also accept leading batch dimensions, ``(..., N, d)``, which the
ensemble sampler uses to evolve many states at once.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .potentials import PairPotential

__all__ = [
    "PhaseState",
    "InvariantSet",
    "EmpiricalMeasure",
    "IntegratorError",
    "CoincidentParticles",
    "pair_forces",
    "potential_energy",
    "kinetic_energy",
    "hamiltonian",
    "angular_momentum",
    "invariants",
    "to_com_frame",
    "step_leapfrog",
    "integrate",
    "empirical_density",
    "meanfield_rescale",
    "meanfield_energy",
    "meanfield_angmom",
    "write_trajectory_csv",
    "trajectory_columns",
    "conservation_scales",
    "conservation_drift",
]


class IntegratorError(RuntimeError):
    """Raised when forces or coordinates stop being finite during integration."""


class CoincidentParticles(ValueError):
    """Raised when two particles sit on top of each other and V(0) is singular."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PhaseState:
    q: np.ndarray
    p: np.ndarray
    m: float = 1.0
    e2: float = 1.0
    t: float = 0.0

    def __post_init__(self):
        q, p = _frozen(self.q), _frozen(self.p)
        if q.ndim != 2 or q.shape != p.shape:
            raise ValueError(f"q and p must both be (N, d); got {q.shape} and {p.shape}")
        if q.shape[1] not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {q.shape[1]}")
        if q.shape[0] < 2:
            raise ValueError("need at least two particles")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("phase-space coordinates must be finite")
        if self.m <= 0:
            raise ValueError("mass must be positive")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def dim(self) -> int:
        return self.q.shape[1]

    def replace(self, **kw) -> "PhaseState":
        args = dict(q=self.q, p=self.p, m=self.m, e2=self.e2, t=self.t)
        args.update(kw)
        return PhaseState(**args)


@dataclass(frozen=True)
class InvariantSet:
    energy: float
    momentum: np.ndarray
    angmom: np.ndarray | float
    com: np.ndarray


# --- kernels --------------------------------------------------------------

def _pair_geometry(q):
    diff = q[..., :, None, :] - q[..., None, :, :]
    r = np.sqrt(np.einsum("...ijk,...ijk->...ij", diff, diff))
    return diff, r


def pair_forces(q, potential: PairPotential, e2: float = 1.0) -> np.ndarray:
    """Central pair forces ``-e^2 sum_j V'(r_ij) (q_i - q_j) / r_ij``."""
    q = np.asarray(q, dtype=float)
    n = q.shape[-2]
    diff, r = _pair_geometry(q)
    eye = np.eye(n, dtype=bool)
    r = np.where(eye, 1.0, r)
    w = potential.dv_over_r(r)
    w = np.where(eye, 0.0, w)
    return -e2 * np.einsum("...ij,...ijk->...ik", w, diff)


def potential_energy(q, potential: PairPotential, e2: float = 1.0) -> np.ndarray | float:
    q = np.asarray(q, dtype=float)
    n = q.shape[-2]
    iu, ju = np.triu_indices(n, 1)
    d = q[..., iu, :] - q[..., ju, :]
    r = np.sqrt(np.einsum("...k,...k->...", d, d))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        v = potential._value(r)
    if not np.all(np.isfinite(v)):
        bad = np.argwhere(~np.isfinite(np.broadcast_to(v, r.shape)))[0]
        k = bad[-1]
        raise CoincidentParticles(
            f"V is not finite for particle pair ({iu[k]}, {ju[k]}) at distance {r[tuple(bad)]!r}"
        )
    out = e2 * v.sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def kinetic_energy(p, m: float = 1.0):
    p = np.asarray(p, dtype=float)
    out = 0.5 / m * np.einsum("...ik,...ik->...", p, p)
    return float(out) if np.ndim(out) == 0 else out


def angular_momentum(q, p):
    """Total ``sum q_i x p_i``: a 3-vector for d=3, a scalar for d=2."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape[-1] == 2:
        out = np.sum(q[..., 0] * p[..., 1] - q[..., 1] * p[..., 0], axis=-1)
        return float(out) if np.ndim(out) == 0 else out
    return np.cross(q, p).sum(axis=-2)


def hamiltonian(state: PhaseState, potential: PairPotential) -> float:
    return kinetic_energy(state.p, state.m) + potential_energy(state.q, potential, state.e2)


def invariants(state: PhaseState, potential: PairPotential) -> InvariantSet:
    return InvariantSet(
        energy=hamiltonian(state, potential),
        momentum=state.p.sum(axis=0),
        angmom=angular_momentum(state.q, state.p),
        com=state.q.mean(axis=0),  # single species: mass-weighted mean = mean
    )


def to_com_frame(state: PhaseState) -> PhaseState:
    """Remove the bulk momentum and shift the center of mass to the origin."""
    return state.replace(
        q=state.q - state.q.mean(axis=0),
        p=state.p - state.p.mean(axis=0),
    )


# --- integration ----------------------------------------------------------

def _check_finite(force, q, step, t):
    if not (np.all(np.isfinite(force)) and np.all(np.isfinite(q))):
        raise IntegratorError(
            f"non-finite force or position at step {step} (t={t:.6g}); "
            f"max|q|={np.nanmax(np.abs(q)):.3g}; reduce dt or check the potential"
        )


def step_leapfrog(state: PhaseState, potential: PairPotential, dt: float) -> PhaseState:
    """One kick-drift-kick step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return integrate(state, potential, dt, 1)[0]


def integrate(
    state: PhaseState,
    potential: PairPotential,
    dt: float,
    steps: int,
    record_every: int = 0,
) -> tuple[PhaseState, list[tuple]]:
    """Advance ``steps`` leapfrog steps.

    Returns the final state and, when ``record_every > 0``, rows of
    :func:`trajectory_columns` sampled every ``record_every`` steps (including
    the initial state).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    m, e2 = state.m, state.e2
    q = np.array(state.q)
    p = np.array(state.p)
    t0 = state.t
    rows: list[tuple] = []
    force = pair_forces(q, potential, e2)
    _check_finite(force, q, 0, t0)
    if record_every:
        rows.append(_row(t0, q, p, m, e2, potential))
    half = 0.5 * dt
    for k in range(1, steps + 1):
        p += half * force
        q += (dt / m) * p
        force = pair_forces(q, potential, e2)
        _check_finite(force, q, k, t0 + k * dt)
        p += half * force
        if record_every and k % record_every == 0:
            rows.append(_row(t0 + k * dt, q, p, m, e2, potential))
    return state.replace(q=q, p=p, t=t0 + steps * dt), rows


def trajectory_columns(dim: int) -> list[str]:
    axes = "xyz"[:dim]
    j = ["J"] if dim == 2 else [f"J_{a}" for a in axes]
    return ["t", "H", *[f"P_{a}" for a in axes], *j, *[f"com_{a}" for a in axes]]


def _row(t, q, p, m, e2, potential):
    h = kinetic_energy(p, m) + potential_energy(q, potential, e2)
    return (t, h, *p.sum(axis=0), *np.atleast_1d(angular_momentum(q, p)), *q.mean(axis=0))


def write_trajectory_csv(path, rows: Iterable[tuple], dim: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_columns(dim))
        for row in rows:
            w.writerow([repr(float(x)) for x in row])


def conservation_scales(state: PhaseState) -> tuple[float, float]:
    """``(sum_i |p_i|, sum_i |q_i x p_i|)``: natural sizes for momentum and angular-momentum drift."""
    q, p = state.q, state.p
    if state.dim == 2:
        lq = np.abs(q[:, 0] * p[:, 1] - q[:, 1] * p[:, 0])
    else:
        lq = np.linalg.norm(np.cross(q, p), axis=1)
    return float(np.linalg.norm(p, axis=1).sum()), float(lq.sum())


def conservation_drift(rows, dim: int, p_scale: float, j_scale: float, window: int | None = None) -> dict:
    """Drift of the invariants along recorded trajectory rows.

    ``energy_fluctuation`` is ``max |H - H0| / |H0|``; it includes the bounded
    O(dt^2) oscillation of a symplectic integrator.  ``energy_drift`` is the
    secular part: the difference between the mean of ``H`` over the first and
    last ``window`` rows (one oscillation period, at most half the record),
    relative to ``|H0|``.
    """
    a = np.asarray(rows, dtype=float)
    cols = trajectory_columns(dim)
    h = a[:, 1]
    pcols = [i for i, c in enumerate(cols) if c.startswith("P_")]
    jcols = [i for i, c in enumerate(cols) if c.startswith("J")]
    dp = np.linalg.norm(a[:, pcols] - a[0, pcols], axis=1).max()
    dj = np.linalg.norm(a[:, jcols] - a[0, jcols], axis=1).max()
    w = window if window else max(len(h) // 10, 1)
    # the two windows must not overlap, or short runs report zero drift
    w = max(min(w, len(h) // 2), 1)
    return {
        "momentum_drift": float(dp / p_scale),
        "angmom_drift": float(dj / j_scale),
        "energy_fluctuation": float(np.abs(h - h[0]).max() / abs(h[0])),
        "energy_drift": float(abs(h[-w:].mean() - h[:w].mean()) / abs(h[0])),
        "window_rows": int(w),
    }


# --- empirical measures ---------------------------------------------------

@dataclass(frozen=True)
class EmpiricalMeasure:
    """Point masses on single-particle phase space, stored as ``q`` and ``p``."""

    q: np.ndarray
    p: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        q, p = _frozen(self.q), _frozen(self.p)
        if q.shape != p.shape:
            raise ValueError("q and p must match")
        w = np.full(q.shape[0], 1.0 / q.shape[0]) if self.weights is None else _frozen(self.weights)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "weights", w)

    @property
    def n_atoms(self) -> int:
        return self.q.shape[0]

    @property
    def points(self) -> np.ndarray:
        """Atoms as rows ``(q_1..q_d, p_1..p_d)``."""
        return np.hstack([self.q, self.p])

    def integrate(self, g) -> float:
        """``sum_i w_i g(q_i, p_i)`` for a vectorized test function ``g(q, p)``."""
        return float(np.dot(self.weights, g(self.q, self.p)))


def empirical_density(state: PhaseState) -> EmpiricalMeasure:
    return EmpiricalMeasure(state.q, state.p)


def meanfield_rescale(state: PhaseState) -> EmpiricalMeasure:
    """Atoms at ``(q_i, N^{-1/2} p_i)`` with weight ``1/N``."""
    return EmpiricalMeasure(state.q, state.p / np.sqrt(state.n))


def meanfield_energy(state: PhaseState, potential: PairPotential) -> float:
    """``N^{-2} H``, the estimator of the energy of the limiting density."""
    return hamiltonian(state, potential) / state.n**2


def meanfield_angmom(state: PhaseState):
    """``N^{-3/2} J``."""
    return angular_momentum(state.q, state.p) / state.n**1.5
