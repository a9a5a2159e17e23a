"""Mean-field Vlasov evolution on a d=2 phase-space grid (4D).

Strang splitting: half drift in q, full kick in p with the self-consistent
force ``-grad(e^2 V * rho)``, half drift in q.  Each sub-step is a set of 1D
constant-coefficient shifts done by the conservative PFC sweep in
:mod:`statequil._advect`, so mass and positivity are preserved up to the
flux through the box edges, which is measured and checked every step.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import statefield as sf
from ._advect import advect_axis
from .potentials import PairPotential, require_meanfield
from .statefield import GridDensity

__all__ = [
    "VlasovRun",
    "DomainTooSmall",
    "vlasov_step",
    "evolve",
    "audit_row",
    "conservation_report",
    "stationarity_residual",
    "dynamical_time",
    "write_history_csv",
    "HISTORY_COLUMNS",
]

HISTORY_COLUMNS = ("t", "N", "E", "P_x", "P_y", "Q_x", "Q_y", "J", "S", "C2", "C32", "mass_defect")
LEAK_TOL = 1e-10


class DomainTooSmall(RuntimeError):
    pass


@dataclass
class VlasovRun:
    f0: GridDensity
    dt: float
    steps: int
    audit_every: int
    history: list = field(default_factory=list)
    f: GridDensity | None = None


def _require_d2(f: GridDensity):
    if f.grid.dim != 2:
        raise ValueError("Vlasov evolution is implemented for d=2 only")


def _drift(values, grid, tau, m):
    # q_k shifts by p_k tau / m, independent of the other coordinates
    for k in range(2):
        pk = grid.p_centers[k]
        shape = [1, 1, 1, 1]
        shape[2 + k] = pk.size
        shifts = (pk * tau / (m * grid.dq[k])).reshape(shape)
        values = advect_axis(values, k, shifts)
    return values


def _force(values, grid, potential, e2):
    rho = values.sum(axis=(2, 3)) * grid.p_cell_volume
    grad = sf.pair_gradient_convolution(rho, grid.dq, potential)
    return [-e2 * g for g in grad]


def _kick(values, grid, force, tau):
    for k in range(2):
        shifts = (force[k] * tau / grid.dp[k])[:, :, None, None]
        values = advect_axis(values, 2 + k, shifts)
    return values


def vlasov_step(f: GridDensity, potential: PairPotential | None, dt: float, m: float = 1.0, e2: float = 1.0,
                leak_tol: float = LEAK_TOL) -> GridDensity:
    """One Strang step; ``potential=None`` means free streaming.

    Raises :class:`DomainTooSmall` if more than ``leak_tol`` of the mass
    leaves the box; otherwise the leaked mass is restored by renormalization.
    """
    _require_d2(f)
    if potential is not None:
        require_meanfield(potential)
    values, leak = _strang(np.array(f.values), f.grid, potential, dt, m, e2)
    if leak > leak_tol:
        raise DomainTooSmall(f"{leak:.3e} of the mass left the phase-space box in one step")
    out = GridDensity(f.grid, np.maximum(values, 0.0))
    return out.normalize()


def _strang(values, grid, potential, dt, m, e2):
    vol = grid.cell_volume
    m0 = float(values.sum()) * vol
    values = _drift(values, grid, 0.5 * dt, m)
    if potential is not None:
        values = _kick(values, grid, _force(values, grid, potential, e2), dt)
    values = _drift(values, grid, 0.5 * dt, m)
    leak = (m0 - float(values.sum()) * vol) / m0
    return values, leak


def audit_row(t: float, f: GridDensity, potential: PairPotential | None, m=1.0, e2=1.0, mass_defect=0.0) -> tuple:
    n = sf.normalization(f)
    if potential is None:
        e = sf.kinetic_functional(f, m)
    else:
        e = sf.energy_functional(f, potential, m, e2)
    p = sf.momentum_functional(f)
    q = sf.center_functional(f)
    j = sf.angmom_functional(f)
    s = sf.entropy(f)
    c2 = sf.casimir(f, np.square)
    c32 = sf.casimir(f, lambda x: x * np.sqrt(x))
    return (t, n, e, p[0], p[1], q[0], q[1], j, s, c2, c32, mass_defect)


def evolve(
    f0: GridDensity,
    potential: PairPotential | None,
    dt: float,
    steps: int,
    audit_every: int = 1,
    m: float = 1.0,
    e2: float = 1.0,
    leak_tol: float = LEAK_TOL,
) -> VlasovRun:
    """Evolve ``steps`` Strang steps, auditing the functionals every ``audit_every``."""
    _require_d2(f0)
    if potential is not None:
        require_meanfield(potential)
    f0.require_normalized()
    run = VlasovRun(f0=f0, dt=dt, steps=steps, audit_every=audit_every)
    run.history.append(audit_row(0.0, f0, potential, m, e2))
    grid = f0.grid
    vol = grid.cell_volume
    values = np.array(f0.values)
    for k in range(1, steps + 1):
        values, leak = _strang(values, grid, potential, dt, m, e2)
        if leak > leak_tol:
            raise DomainTooSmall(f"{leak:.3e} of the mass left the box at step {k} (t={k * dt:.4g})")
        np.maximum(values, 0.0, out=values)
        mass = float(values.sum()) * vol
        values /= mass
        if audit_every and (k % audit_every == 0 or k == steps):
            run.history.append(audit_row(k * dt, GridDensity(grid, values.copy()), potential, m, e2, 1.0 - mass))
    run.f = GridDensity(grid, values)
    return run


def conservation_report(run: VlasovRun) -> dict:
    """Maximum drift of each audited functional over the run.

    Relative to the initial value for N, E, S and the Casimirs; the angular
    momentum drift is taken relative to ``max(|J0|, sqrt(<|q|^2><|p|^2>))`` so
    that it stays meaningful for non-rotating states.
    """
    h = np.array(run.history, dtype=float)
    col = {name: h[:, i] for i, name in enumerate(HISTORY_COLUMNS)}

    def rel(x):
        return float(np.max(np.abs(x - x[0])) / abs(x[0]))

    f0 = run.f0
    rho = f0.q_marginal()
    q2 = sum(float(np.sum(qk * qk * rho)) for qk in f0.grid.q_mesh()) * f0.grid.q_cell_volume
    g = f0.p_marginal()
    p2 = sum(float(np.sum(pk * pk * g)) for pk in f0.grid.p_mesh()) * f0.grid.p_cell_volume
    j0 = col["J"][0]
    jscale = max(abs(j0), np.sqrt(q2 * p2))
    return {
        "N": rel(col["N"]),
        "E": rel(col["E"]),
        "J": float(np.max(np.abs(col["J"] - j0)) / jscale),
        "S": rel(col["S"]),
        "C2": rel(col["C2"]),
        "C32": rel(col["C32"]),
        "P": float(np.max(np.abs(np.column_stack([col["P_x"], col["P_y"]])))),
        "Q": float(np.max(np.abs(np.column_stack([col["Q_x"], col["Q_y"]])))),
        "max_mass_defect": float(np.max(np.abs(col["mass_defect"]))),
    }


# --- stationarity ---------------------------------------------------------

def _d4(a, axis, h):
    """Fourth-order centered first derivative, zero outside the array."""
    pad = [(0, 0)] * a.ndim
    pad[axis] = (2, 2)
    b = np.pad(a, pad)
    n = a.shape[axis]

    def sl(o):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(2 + o, 2 + o + n)
        return b[tuple(idx)]

    return (8.0 * (sl(1) - sl(-1)) - (sl(2) - sl(-2))) / (12.0 * h)


def dynamical_time(f: GridDensity, m: float = 1.0) -> float:
    """rms radius about the center over rms speed."""
    rho = f.q_marginal()
    vol = f.grid.q_cell_volume
    qm = f.grid.q_mesh()
    c = [float(np.sum(qk * rho)) * vol for qk in qm]
    r2 = sum(float(np.sum((qk - ck) ** 2 * rho)) for qk, ck in zip(qm, c)) * vol
    g = f.p_marginal()
    v2 = sum(float(np.sum(pk * pk * g)) for pk in f.grid.p_mesh()) * f.grid.p_cell_volume / m**2
    return float(np.sqrt(r2 / v2))


def _residual_field(values, grid, force, m):
    d = grid.dim
    ps = grid.p_mesh()
    res = 0.0
    for k in range(d):
        pk = ps[k].reshape((1,) * d + ps[k].shape)
        res = res + (pk / m) * _d4(values, k, grid.dq[k])
        fk = force[k].reshape(force[k].shape + (1,) * d)
        res = res + fk * _d4(values, d + k, grid.dp[k])
    return res


def stationarity_residual(f: GridDensity, potential: PairPotential, m: float = 1.0, e2: float = 1.0) -> float:
    """Normalized L2 norm of ``p/m . grad_q f - grad_q(e^2 V*rho) . grad_p f``.

    Normalized by ``||f|| / t_dyn`` (see :func:`dynamical_time`).  For d=3
    the residual is evaluated on the three axis-aligned 4D sections through
    the cells nearest the origin.
    """
    g = f.grid
    rho = f.q_marginal()
    force = [-e2 * x for x in sf.pair_gradient_convolution(rho, g.dq, potential)]
    tdyn = dynamical_time(f, m)
    if g.dim == 2:
        r = _residual_field(f.values, g, force, m)
        return float(np.sqrt(np.sum(r * r) / np.sum(f.values**2)) * tdyn)
    num = den = 0.0
    for c in range(3):
        r, v = _section_residual(f, force, m, c)
        num += float(np.sum(r * r))
        den += float(np.sum(v * v))
    return float(np.sqrt(num / den) * tdyn)


def _section_residual(f, force, m, c):
    """Full 6D residual restricted to the section ``q_c ~ 0, p_c ~ 0``."""
    g = f.grid
    iq = int(np.argmin(np.abs(g.q_centers[c])))
    ip = int(np.argmin(np.abs(g.p_centers[c])))
    wq = slice(max(iq - 2, 0), iq + 3)
    wp = slice(max(ip - 2, 0), ip + 3)
    idx = [slice(None)] * 6
    idx[c], idx[3 + c] = wq, wp
    block = f.values[tuple(idx)]
    ps = [x[idx[3 + k]] for k, x in enumerate(g.p_centers)]
    res = 0.0
    for k in range(3):
        pk = ps[k].reshape([1] * 3 + [-1 if j == k else 1 for j in range(3)])
        res = res + (pk / m) * _d4(block, k, g.dq[k])
        fk = force[k][tuple(idx[:3])]
        res = res + fk[..., None, None, None] * _d4(block, 3 + k, g.dp[k])
    ci = iq - wq.start
    cp = ip - wp.start
    take = [slice(None)] * 6
    take[c], take[3 + c] = ci, cp
    return res[tuple(take)], block[tuple(take)]


def write_history_csv(path, run: VlasovRun) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in run.history:
            w.writerow([repr(float(x)) for x in row])
