"""Constrained maximum-entropy densities of mean-field type.

Maximizers of the entropy at prescribed energy, angular momentum, zero
momentum and zero center of mass are rotating Maxwellians

    f(q, p) = (2 pi m T)^{-d/2} exp(-|p - m omega x q|^2 / (2 m T)) rho(q)

whose position density solves the self-consistent equation

    rho(q) ∝ exp(-(e^2 (V * rho)(q) - m/2 |omega x q|^2) / T + lambda_q . q).

:func:`solve_fixed_point` handles ``rho`` for given ``(T, omega)``;
:func:`match_constraints` finds ``(T, omega, lambda_q)`` for a prescribed
``(epsilon, ell)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import optimize, stats
from scipy.special import logsumexp, entr

from . import statefield as sf
from .potentials import PairPotential, require_meanfield
from .statefield import GridDensity, PhaseGrid

log = logging.getLogger(__name__)

__all__ = [
    "MultiplierSet",
    "SolveReport",
    "FixedPointResult",
    "DivergenceError",
    "NonConvergenceError",
    "InfeasibleConstraints",
    "TruncationError",
    "CLASSES",
    "mean_field_potential",
    "rho_fixed_point_map",
    "solve_fixed_point",
    "factored_functionals",
    "assemble_f",
    "match_constraints",
    "lagrange_multipliers",
    "fixed_point_regression",
    "velocity_field_norm",
    "classify",
    "classify_report",
]

CLASSES = ("thermostatic", "thermostationary", "thermodynamical", "unclassified")
EDGE_MASS_TOL = 1e-6


class DivergenceError(RuntimeError):
    """The Boltzmann factor is not normalizable on the grid."""


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, history=None, rho=None):
        super().__init__(msg)
        self.history = history or []
        self.rho = rho


class InfeasibleConstraints(ValueError):
    pass


class TruncationError(ValueError):
    pass


@dataclass
class MultiplierSet:
    T: float
    omega: Any  # float for d=2, 3-vector for d=3
    lambda_q: np.ndarray
    lambda_n: float = float("nan")

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("temperature must be positive")
        self.lambda_q = np.asarray(self.lambda_q, dtype=float)

    @property
    def lambda_p(self) -> np.ndarray:
        return np.zeros_like(self.lambda_q)

    @property
    def lambda_e(self) -> float:
        return -1.0 / self.T

    @property
    def lambda_j(self):
        return np.asarray(self.omega) / self.T

    def as_dict(self) -> dict:
        return {
            "T": self.T,
            "omega": np.asarray(self.omega).tolist(),
            "lambda_q": self.lambda_q.tolist(),
            "lambda_n": self.lambda_n,
            "lambda_e": self.lambda_e,
            "lambda_j": np.asarray(self.lambda_j).tolist(),
            "lambda_p": self.lambda_p.tolist(),
        }


@dataclass
class FixedPointResult:
    rho: np.ndarray
    lambda_q: np.ndarray
    residual: float
    iterations: int
    history: list = field(default_factory=list)


@dataclass
class SolveReport:
    grid: PhaseGrid
    rho: np.ndarray
    f: GridDensity | None
    multipliers: MultiplierSet
    residual: float
    constraint_errors: dict
    iterations: dict
    target: dict
    values: dict
    classification: str = "unclassified"
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "target": self.target,
            "multipliers": self.multipliers.as_dict(),
            "residual": self.residual,
            "constraint_errors": self.constraint_errors,
            "values": self.values,
            "iterations": self.iterations,
            "classification": self.classification,
            "converged": self.converged,
            "diagnostics": self.diagnostics,
            "grid": self.grid.axes_dict(),
        }


# --- geometry helpers -----------------------------------------------------

def _omega_cross_q(omega, qmesh, dim):
    if dim == 2:
        w = float(np.asarray(omega).reshape(-1)[0]) if np.ndim(omega) else float(omega)
        return [-w * qmesh[1], w * qmesh[0]]
    w = np.asarray(omega, dtype=float)
    x, y, z = qmesh
    return [w[1] * z - w[2] * y, w[2] * x - w[0] * z, w[0] * y - w[1] * x]


def _zero_omega(dim):
    return 0.0 if dim == 2 else np.zeros(3)


def _edge_mass(rho, vol):
    total = 0.0
    for ax in range(rho.ndim):
        lo = np.take(rho, 0, axis=ax)
        hi = np.take(rho, -1, axis=ax)
        total += float(lo.sum() + hi.sum())
    return total * vol


# --- fixed-point map ------------------------------------------------------

def mean_field_potential(rho, grid: PhaseGrid, potential: PairPotential, method: str = "auto") -> np.ndarray:
    """Discrete ``(V * rho)(q)`` on the q-grid of ``grid``."""
    return sf.pair_convolution(rho, grid.dq, potential, method)


def _exponent(phi, grid, T, omega, lambda_q, m):
    q = grid.q_mesh()
    u = _omega_cross_q(omega, q, grid.dim)
    cent = 0.5 * m * sum(c * c for c in u)
    s = -(phi - cent) / T
    for lq, qk in zip(np.asarray(lambda_q, dtype=float), q):
        s = s + lq * qk
    return np.broadcast_to(s, grid.q_n)


def _normalize_exponent(s, vol):
    if not np.all(np.isfinite(s)):
        raise DivergenceError("non-finite exponent in the Boltzmann factor; reduce |omega| or T")
    lz = logsumexp(s) + np.log(vol)
    return np.exp(s - lz), float(lz)


def _check_edges(rho, vol):
    e = _edge_mass(rho, vol)
    if e > EDGE_MASS_TOL:
        raise DivergenceError(
            f"Boltzmann factor not confined on the grid (edge mass {e:.2e}); "
            "the centrifugal term may dominate confinement: use a smaller |omega|, "
            "a lower T, or a larger q-box"
        )


def rho_fixed_point_map(
    rho,
    grid: PhaseGrid,
    T: float,
    omega,
    lambda_q,
    potential: PairPotential,
    m: float = 1.0,
    e2: float = 1.0,
    check_edges: bool = True,
) -> np.ndarray:
    """Right-hand side of the position-space fixed-point equation."""
    if not T > 0:
        raise ValueError("T must be positive")
    phi = e2 * mean_field_potential(rho, grid, potential)
    s = _exponent(phi, grid, T, omega, lambda_q, m)
    out, _ = _normalize_exponent(s, grid.q_cell_volume)
    if check_edges:
        _check_edges(out, grid.q_cell_volume)
    return out


def _center(s, grid, lam0, iters=30):
    """Find ``lambda`` so that ``exp(s + lambda.q)`` has zero mean."""
    q = [np.broadcast_to(c, grid.q_n) for c in grid.q_mesh()]
    lam = np.array(lam0, dtype=float)
    vol = grid.q_cell_volume
    scale = max(float(np.max(np.abs(qk))) for qk in q)
    for _ in range(iters):
        t = s + sum(l * qk for l, qk in zip(lam, q))
        w, _ = _normalize_exponent(t, vol)
        mean = np.array([np.sum(w * qk) * vol for qk in q])
        if np.max(np.abs(mean)) < 1e-15 * scale:
            break
        cov = np.array([[np.sum(w * qa * qb) * vol for qb in q] for qa in q]) - np.outer(mean, mean)
        try:
            lam = lam - np.linalg.solve(cov, mean)
        except np.linalg.LinAlgError:
            raise DivergenceError("Boltzmann factor collapsed onto a single cell; reduce |omega| or grow the q-box") from None
    return lam


def solve_fixed_point(
    potential: PairPotential,
    grid: PhaseGrid,
    T: float,
    omega=None,
    lambda_q=None,
    rho0=None,
    theta: float = 0.5,
    tol: float = 1e-8,
    max_iter: int = 2000,
    m: float = 1.0,
    e2: float = 1.0,
) -> FixedPointResult:
    """Damped Picard iteration ``rho <- (1-theta) rho + theta map(rho)``.

    With ``lambda_q=None`` the center-of-mass multiplier is re-solved at every
    iteration so that the iterate stays centered; the returned ``lambda_q`` is
    the final value.  The returned residual is ``sup|map(rho) - rho|``
    recomputed once more at the returned ``rho``.
    """
    if not 0 < theta <= 1:
        raise ValueError("damping theta must lie in (0, 1]")
    if not tol > 0:
        raise ValueError("tol must be positive")
    d = grid.dim
    omega = _zero_omega(d) if omega is None else omega
    vol = grid.q_cell_volume
    centering = lambda_q is None
    lam = np.zeros(d) if centering else np.asarray(lambda_q, dtype=float)
    rho = np.full(grid.q_n, 1.0 / (vol * np.prod(grid.q_n))) if rho0 is None else np.asarray(rho0, dtype=float)
    history = []
    for it in range(1, max_iter + 1):
        phi = e2 * mean_field_potential(rho, grid, potential)
        s = _exponent(phi, grid, T, omega, np.zeros(d), m)
        if centering:
            lam = _center(s, grid, lam)
        image, _ = _normalize_exponent(s + sum(l * qk for l, qk in zip(lam, grid.q_mesh())), vol)
        disp = float(np.max(np.abs(image - rho)))
        history.append(disp)
        if disp < tol:
            rho = image
            break
        rho = (1.0 - theta) * rho + theta * image
    else:
        raise NonConvergenceError(
            f"fixed point not reached in {max_iter} iterations (last displacement {history[-1]:.3e}); "
            "retry with a smaller damping theta",
            history,
            rho,
        )
    _check_edges(rho, vol)
    final = rho_fixed_point_map(rho, grid, T, omega, lam, potential, m, e2)
    residual = float(np.max(np.abs(final - rho)))
    return FixedPointResult(rho=rho, lambda_q=lam, residual=residual, iterations=it, history=history)


# --- assembly and factored functionals -----------------------------------

def _axis_factors(grid, T, omega, m):
    """Per-axis normalized Maxwellian factors ``a_k(q, p_k)`` and their moments.

    Returns lists over momentum axes of arrays shaped ``(*q_n, n_pk)``.
    """
    q = grid.q_mesh()
    u = _omega_cross_q(omega, q, grid.dim)
    factors, raw_norm = [], []
    for k, pc in enumerate(grid.p_centers):
        uk = np.broadcast_to(m * u[k], grid.q_n)[..., None]
        a = np.exp(-((pc - uk) ** 2) / (2.0 * m * T))
        z = a.sum(axis=-1, keepdims=True) * grid.dp[k]
        raw_norm.append(z[..., 0] / np.sqrt(2.0 * np.pi * m * T))
        factors.append(a / z)
    return factors, raw_norm


def assemble_f(
    rho,
    grid: PhaseGrid,
    T: float,
    omega=None,
    m: float = 1.0,
    truncation_tol: float = 1e-3,
) -> GridDensity:
    """Rotating Maxwellian times ``rho`` sampled on the phase grid.

    The momentum factor is renormalized cell by cell so that the position
    marginal equals ``rho`` exactly.
    """
    d = grid.dim
    omega = _zero_omega(d) if omega is None else omega
    rho = np.asarray(rho, dtype=float)
    _check_momentum_box(rho, grid, T, omega, m)
    factors, raw = _axis_factors(grid, T, omega, m)
    support = rho > 1e-10 * rho.max()
    worst = max(float(np.max(np.abs(z[support] - 1.0))) for z in raw)
    if worst > truncation_tol:
        raise TruncationError(f"momentum grid truncates the Maxwellian by {worst:.2e} > {truncation_tol}")
    values = rho.reshape(grid.q_n + (1,) * d)
    for k, a in enumerate(factors):
        shape = grid.q_n + tuple(a.shape[-1] if j == k else 1 for j in range(d))
        values = values * a.reshape(shape)
    values /= float(values.sum()) * grid.cell_volume  # in place: d=3 arrays are large
    return GridDensity(grid, values)


def _check_momentum_box(rho, grid, T, omega, m):
    q = grid.q_mesh()
    u = _omega_cross_q(omega, q, grid.dim)
    support = rho > 1e-10 * rho.max()
    for k in range(grid.dim):
        umax = float(np.max(np.abs(np.broadcast_to(m * u[k], grid.q_n)[support]), initial=0.0))
        need = 5.0 * np.sqrt(m * T) + umax
        if min(-grid.p_lo[k], grid.p_hi[k]) < need:
            raise TruncationError(
                f"momentum axis {k} spans [{grid.p_lo[k]}, {grid.p_hi[k]}], needs +/-{need:.3g} "
                "(5 sqrt(mT) + max|m omega x q|)"
            )


def factored_functionals(rho, grid: PhaseGrid, T, omega, potential: PairPotential, m=1.0, e2=1.0) -> dict:
    """Functionals of the assembled density computed without building it.

    Uses the same per-cell momentum normalization as :func:`assemble_f`.
    """
    d = grid.dim
    vol = grid.q_cell_volume
    factors, _ = _axis_factors(grid, T, omega, m)
    mean_p, mean_p2, ent_p = [], [], []
    for k, a in enumerate(factors):
        pc = grid.p_centers[k]
        mean_p.append((a * pc).sum(-1) * grid.dp[k])
        mean_p2.append((a * pc * pc).sum(-1) * grid.dp[k])
        ent_p.append(entr(a).sum(-1) * grid.dp[k])
    field_ = mean_field_potential(rho, grid, potential)
    kinetic = float(np.sum(rho * sum(mean_p2))) * vol / (2.0 * m)
    pot = 0.5 * e2 * float(np.sum(rho * field_)) * vol
    q = [np.broadcast_to(c, grid.q_n) for c in grid.q_mesh()]
    mom = np.array([float(np.sum(rho * mp)) * vol for mp in mean_p])
    com = np.array([float(np.sum(rho * qk)) * vol for qk in q])
    if d == 2:
        ang = float(np.sum(rho * (q[0] * mean_p[1] - q[1] * mean_p[0]))) * vol
    else:
        ang = np.array([
            float(np.sum(rho * (q[1] * mean_p[2] - q[2] * mean_p[1]))),
            float(np.sum(rho * (q[2] * mean_p[0] - q[0] * mean_p[2]))),
            float(np.sum(rho * (q[0] * mean_p[1] - q[1] * mean_p[0]))),
        ]) * vol
    s_q = float(np.sum(entr(rho))) * vol
    s_p = float(np.sum(rho * sum(ent_p))) * vol
    return {
        "energy": kinetic + pot,
        "kinetic": kinetic,
        "potential": pot,
        "momentum": mom,
        "center": com,
        "angmom": ang,
        "entropy": s_q + s_p,
    }


# --- outer problem --------------------------------------------------------

def _virial_sigma(potential, epsilon, dim, e2):
    """Gaussian width whose mean pair energy equals half the target energy."""
    u = (np.arange(400) + 0.5) / 400
    chi = stats.chi(dim).ppf(u)

    def pair_energy(sig):
        return 0.5 * e2 * float(np.mean(potential.value(np.sqrt(2.0) * sig * chi)))

    target = 0.5 * epsilon
    lo, hi = 1e-3, 1.0
    while pair_energy(hi) < target and hi < 1e6:
        hi *= 2.0
    if pair_energy(lo) >= target:
        return lo
    return optimize.brentq(lambda s: pair_energy(s) - target, lo, hi, xtol=1e-10)


def _gaussian_rho(grid, sigma2):
    q = grid.q_mesh()
    s = -sum(c * c for c in q) / (2.0 * sigma2)
    rho, _ = _normalize_exponent(np.broadcast_to(s, grid.q_n), grid.q_cell_volume)
    return rho


class _Evaluator:
    """Caches warm starts across the nested root finds."""

    def __init__(self, potential, grid, m, e2, theta, tol, max_iter, rho0):
        self.potential, self.grid, self.m, self.e2 = potential, grid, m, e2
        self.theta, self.tol, self.max_iter = theta, tol, max_iter
        self.rho = rho0
        self.lam = None
        self.inner_iterations = 0
        self.inner_solves = 0
        self.last = None

    def solve(self, T, omega):
        res = solve_fixed_point(
            self.potential, self.grid, T, omega, None, self.rho,
            self.theta, self.tol, self.max_iter, self.m, self.e2,
        )
        self.rho = res.rho
        self.inner_iterations += res.iterations
        self.inner_solves += 1
        vals = factored_functionals(res.rho, self.grid, T, omega, self.potential, self.m, self.e2)
        self.last = (T, omega, res, vals)
        return res, vals


def _solve_temperature(ev: _Evaluator, epsilon, omega, T0, rtol):
    def g(T):
        try:
            _, vals = ev.solve(T, omega)
        except DivergenceError:
            return np.inf
        return vals["energy"] - epsilon

    lo, hi = T0, T0
    glo = ghi = g(T0)
    n = 0
    while glo > 0:
        hi, ghi = lo, glo
        lo *= 0.5
        n += 1
        if n > 40:
            raise InfeasibleConstraints(
                f"energy {epsilon} is at or below the discrete minimum-energy bound "
                "(zero-temperature limit); no T > 0 matches it"
            )
        glo = g(lo)
    n = 0
    while ghi < 0:
        lo, glo = hi, ghi
        hi *= 2.0
        n += 1
        if n > 40:
            raise InfeasibleConstraints(f"no temperature bracket found for energy {epsilon}")
        ghi = g(hi)
    if not np.isfinite(ghi):
        # the upper bracket diverged on the grid: bisect down to a finite value
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            gm = g(mid)
            if np.isfinite(gm):
                if gm > 0:
                    hi, ghi = mid, gm
                    break
                lo, glo = mid, gm
            else:
                hi = mid
        else:
            raise InfeasibleConstraints("energy requires a temperature the q-grid cannot confine")
        if not np.isfinite(ghi) or ghi < 0:
            raise InfeasibleConstraints("energy requires a temperature the q-grid cannot confine")
    T = optimize.brentq(g, lo, hi, xtol=1e-14, rtol=rtol, maxiter=200)
    res, vals = ev.solve(T, omega)
    return T, res, vals


def match_constraints(
    potential: PairPotential,
    grid: PhaseGrid,
    epsilon: float,
    ell=None,
    m: float = 1.0,
    e2: float = 1.0,
    theta: float = 0.5,
    inner_tol: float = 1e-8,
    outer_rtol: float = 1e-10,
    max_iter: int = 2000,
    assemble: bool = True,
) -> SolveReport:
    """Find the maximum-entropy density with energy ``epsilon`` and angular momentum ``ell``.

    ``omega`` is taken parallel to ``ell``; its magnitude and ``T`` are found by
    nested bracketing (temperature inside, rotation outside), and the
    center-of-mass multiplier is solved inside every fixed-point iteration.
    """
    require_meanfield(potential)
    d = grid.dim
    if ell is None:
        ell = _zero_omega(d)
    ell_vec = np.atleast_1d(np.asarray(ell, dtype=float))
    if ell_vec.size != (1 if d == 2 else 3):
        raise ValueError("ell must be a scalar for d=2 and a 3-vector for d=3")
    sig = _virial_sigma(potential, epsilon, d, e2)
    ev = _Evaluator(potential, grid, m, e2, theta, inner_tol, max_iter, _gaussian_rho(grid, sig * sig))
    T0 = max(epsilon / d, 1e-12) if epsilon > 0 else 1.0
    ell_norm = float(np.linalg.norm(ell_vec))
    outer_evals = 0

    if ell_norm == 0.0:
        omega = _zero_omega(d)
        T, res, vals = _solve_temperature(ev, epsilon, omega, T0, outer_rtol)
    else:
        axis = ell_vec / ell_norm

        def omega_of(w):
            return float(w * axis[0]) if d == 2 else w * axis

        cache = {}

        def j_minus(w):
            nonlocal outer_evals
            # warm starts make repeated solves path dependent; one value per omega keeps brackets valid
            if w in cache:
                return cache[w]
            outer_evals += 1
            T, res, vals = _solve_temperature(ev, epsilon, omega_of(w), cache.get("T", T0), outer_rtol)
            cache["T"] = T
            cache[w] = float(np.dot(np.atleast_1d(vals["angmom"]), axis)) - ell_norm
            return cache[w]

        # slope at omega=0 from the non-rotating state sets the first guess
        T_0, _, vals0 = _solve_temperature(ev, epsilon, omega_of(0.0), T0, outer_rtol)
        cache["T"] = T_0
        i_perp = _moment_of_inertia(ev.rho, grid, axis, m)
        w_hi = ell_norm / max(i_perp, 1e-300)
        w_lo, f_lo = 0.0, -ell_norm
        w_fail = np.inf  # smallest rotation seen to lose confinement
        f_hi = None
        for _ in range(60):
            try:
                f_hi = j_minus(w_hi)
            except (DivergenceError, InfeasibleConstraints, NonConvergenceError) as exc:
                w_fail = w_hi
                if w_fail - w_lo < 1e-3 * w_fail:
                    raise InfeasibleConstraints(
                        f"angular momentum {ell_norm} needs a rotation beyond the centrifugal limit "
                        f"(|omega| < {w_fail:.4g} on this grid): {exc}"
                    ) from exc
                w_hi = 0.5 * (w_lo + w_fail)
                continue
            if f_hi > 0 or abs(f_hi) <= outer_rtol * ell_norm:
                break
            w_lo, f_lo = w_hi, f_hi
            w_hi = min(1.5 * w_hi, 0.5 * (w_hi + w_fail))
        else:
            raise InfeasibleConstraints(f"angular momentum {ell_norm} could not be bracketed")
        if f_hi > 0:
            w = optimize.brentq(j_minus, w_lo, w_hi, xtol=1e-14, rtol=outer_rtol, maxiter=200)
        else:
            w = w_hi
        omega = omega_of(w)
        T, res, vals = _solve_temperature(ev, epsilon, omega, cache["T"], outer_rtol)

    lam_n, _ = lagrange_multipliers_from(res.rho, grid, T, omega, res.lambda_q, potential, m, e2)
    mult = MultiplierSet(T=T, omega=omega, lambda_q=res.lambda_q, lambda_n=lam_n)
    f = assemble_f(res.rho, grid, T, omega, m) if assemble else None
    if f is not None:
        energy = sf.energy_functional(f, potential, m, e2)
        angmom = sf.angmom_functional(f)
        mom = sf.momentum_functional(f)
        com = sf.center_functional(f)
        ent = sf.entropy(f)
    else:
        energy, angmom, mom, com, ent = (
            vals["energy"], vals["angmom"], vals["momentum"], vals["center"], vals["entropy"],
        )
    errors = {
        "energy": abs(energy - epsilon),
        "angmom": float(np.linalg.norm(np.atleast_1d(angmom) - ell_vec)),
        "center": float(np.linalg.norm(com)),
        "momentum": float(np.linalg.norm(mom)),
    }
    return SolveReport(
        grid=grid,
        rho=res.rho,
        f=f,
        multipliers=mult,
        residual=res.residual,
        constraint_errors=errors,
        iterations={
            "inner_total": ev.inner_iterations,
            "inner_solves": ev.inner_solves,
            "outer_evaluations": outer_evals,
        },
        target={"epsilon": float(epsilon), "ell": ell_vec.tolist()},
        values={
            "energy": float(energy),
            "angmom": np.atleast_1d(angmom).tolist(),
            "momentum": np.asarray(mom).tolist(),
            "center": np.asarray(com).tolist(),
            "entropy": float(ent),
        },
    )


def _moment_of_inertia(rho, grid, axis, m):
    q = [np.broadcast_to(c, grid.q_n) for c in grid.q_mesh()]
    vol = grid.q_cell_volume
    if grid.dim == 2:
        r2 = q[0] ** 2 + q[1] ** 2
    else:
        along = sum(a * qk for a, qk in zip(axis, q))
        r2 = sum(qk * qk for qk in q) - along**2
    return m * float(np.sum(rho * r2)) * vol


# --- a-posteriori checks --------------------------------------------------

def lagrange_multipliers_from(rho, grid, T, omega, lambda_q, potential, m=1.0, e2=1.0):
    """``lambda_N`` from the normalization of the Boltzmann factor."""
    phi = e2 * mean_field_potential(rho, grid, potential)
    s = _exponent(phi, grid, T, omega, lambda_q, m)
    lz = float(logsumexp(s) + np.log(grid.q_cell_volume))
    lam_n = 1.0 - 0.5 * grid.dim * np.log(2.0 * np.pi * m * T) - lz
    return lam_n, phi


def lagrange_multipliers(report: SolveReport, potential: PairPotential, m=1.0, e2=1.0) -> MultiplierSet:
    mu = report.multipliers
    lam_n, _ = lagrange_multipliers_from(report.rho, report.grid, mu.T, mu.omega, mu.lambda_q, potential, m, e2)
    return MultiplierSet(T=mu.T, omega=mu.omega, lambda_q=mu.lambda_q, lambda_n=lam_n)


def fixed_point_regression(report: SolveReport, potential: PairPotential, m=1.0, e2=1.0, floor=1e-8) -> dict:
    """Least-squares fit of ``ln f`` on the Euler-Lagrange features.

    Features: ``1``, ``|p|^2/2m + e^2 (V*rho)(q)``, components of ``q x p``
    and of ``q``; fitted on cells with ``f > floor * max f``.
    """
    f = report.f
    if f is None:
        raise ValueError("report has no assembled density")
    g = f.grid
    d = g.dim
    vals = f.values
    mask = vals > floor * vals.max()
    phi = e2 * mean_field_potential(report.rho, g, potential)
    qm = g.q_mesh()
    pm = g.p_mesh()
    ex_q = (Ellipsis,) + (None,) * d
    ex_p = (None,) * d + (Ellipsis,)
    eps_field = phi[ex_q] + sum(pk * pk for pk in pm)[ex_p] / (2.0 * m)
    qs = [qk[ex_q] for qk in qm]
    ps = [pk[ex_p] for pk in pm]
    if d == 2:
        lj = [qs[0] * ps[1] - qs[1] * ps[0]]
    else:
        lj = [qs[1] * ps[2] - qs[2] * ps[1], qs[2] * ps[0] - qs[0] * ps[2], qs[0] * ps[1] - qs[1] * ps[0]]
    feats = [np.broadcast_to(x, g.shape)[mask] for x in [eps_field, *lj, *qs]]
    X = np.column_stack([np.ones(feats[0].size), *feats])
    y = np.log(vals[mask])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    nj = len(lj)
    return {
        "r2": r2,
        "n_cells": int(mask.sum()),
        "intercept": float(coef[0]),
        "lambda_e": float(coef[1]),
        "lambda_j": coef[2 : 2 + nj].tolist(),
        "lambda_q": coef[2 + nj :].tolist(),
    }


def velocity_field_norm(f: GridDensity, m: float = 1.0) -> float:
    """Mass-weighted rms of the velocity field over the rms particle speed."""
    mf = sf.macrostate(f, m)
    vol = f.grid.q_cell_volume
    u2 = sum(np.where(mf.mask, uk, 0.0) ** 2 for uk in mf.u)
    num = float(np.sum(mf.rho * u2)) * vol
    v2 = 2.0 * float(np.sum(mf.ekin)) * vol / m
    return float(np.sqrt(num / v2)) if v2 > 0 else 0.0


def classify(report, vlasov_residual_norm, u_field_norm, tol_stat: float = 1e-2, tol_u: float = 1e-8) -> str:
    if report is None or not getattr(report, "converged", False):
        return "unclassified"
    if u_field_norm < tol_u:
        return "thermostatic"
    if vlasov_residual_norm < tol_stat:
        return "thermostationary"
    return "thermodynamical"


def classify_report(report: SolveReport, potential: PairPotential, m=1.0, e2=1.0, tol_stat=1e-2, tol_u=1e-8) -> dict:
    """Compute both norms for an assembled report and store the label on it."""
    from .vlasov import stationarity_residual  # noqa: PLC0415 - avoid import cycle

    res = stationarity_residual(report.f, potential, m, e2)
    un = velocity_field_norm(report.f, m)
    label = classify(report, res, un, tol_stat, tol_u)
    report.classification = label
    report.diagnostics.update({"stationarity_residual": res, "u_field_norm": un})
    return {"label": label, "stationarity_residual": res, "u_field_norm": un}
