"""Finite-N microcanonical sampling on the joint level set of the invariants.

The constrained measure fixes ``H = E``, total momentum ``P = 0``, angular
momentum ``J = l`` and center of mass ``Q = 0``.  Positions live in the
``Q = 0`` subspace, parametrized by Helmert coordinates ``y`` (orthonormal, so
``sum_i |q_i|^2 = |y|^2``).  For fixed ``q`` the momenta range over the sphere
``|p|^2 = 2m(E - U)`` intersected with the affine plane ``A(q) p = b``; its
radius is ``R^2 = 2m(E - U) - |p0|^2`` and ``k = Nd - nu`` directions are free.

Two independent routes are provided:

``exact``
    Metropolis on ``y`` with the momentum-integrated weight
    ``G^{-1/2} (R^2)_+^{(k-2)/2}``, ``G = det(A A^T)``; momenta are then drawn
    uniformly on the constrained sphere.
``shell``
    i.i.d. rejection sampling of a thin energy shell ``|H - E| <= delta``
    with uniform proposals in the constrained coordinates.  Used as the
    brute-force oracle for the exact mode.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from . import nbody
from .nbody import PhaseState
from .potentials import PairPotential
from .statefield import GridDensity, PhaseGrid, histogram_density
from . import transport

__all__ = [
    "EnsembleSpec",
    "SampleBatch",
    "EnergyTooLow",
    "StepSizeAdvisory",
    "sample_microcanonical",
    "constraint_matrix",
    "constraint_geometry",
    "log_weight",
    "marginal_estimate",
    "flow_batch",
    "autocorrelation_time",
    "WLLNResult",
    "wlln_experiment",
    "CoarseBins",
]


class EnergyTooLow(ValueError):
    pass


class StepSizeAdvisory(RuntimeError):
    pass


@dataclass(frozen=True)
class EnsembleSpec:
    potential: PairPotential
    n: int
    dim: int
    energy: float
    angmom: float | tuple = 0.0
    mode: str = "exact"
    samples: int = 10_000
    burn_in: int = 2000
    chains: int = 64
    seed: int = 0
    m: float = 1.0
    e2: float = 1.0
    step: float | None = None
    thin: int | None = None
    delta_rel: float = 1e-3

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.mode not in ("exact", "shell"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.n * self.dim <= self.nu + 2:
            raise ValueError(f"N*d = {self.n * self.dim} must exceed the {self.nu} linear constraints + 2")

    @property
    def nu(self) -> int:
        # momentum plus angular-momentum components
        return self.dim + (1 if self.dim == 2 else 3)

    @property
    def k(self) -> int:
        return self.n * self.dim - self.nu

    @property
    def b(self) -> np.ndarray:
        ell = np.atleast_1d(np.asarray(self.angmom, dtype=float))
        if ell.size != (1 if self.dim == 2 else 3):
            raise ValueError("angmom must be a scalar for d=2 and a 3-vector for d=3")
        return np.concatenate([np.zeros(self.dim), ell])

    @property
    def delta(self) -> float:
        return self.delta_rel * abs(self.energy)


@dataclass
class SampleBatch:
    q: np.ndarray
    p: np.ndarray
    mode: str
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return self.q.shape[0]

    @property
    def states(self) -> list[PhaseState]:
        m = self.diagnostics.get("m", 1.0)
        e2 = self.diagnostics.get("e2", 1.0)
        return [PhaseState(qi, pi, m=m, e2=e2) for qi, pi in zip(self.q, self.p)]

    def invariants(self, potential: PairPotential) -> dict:
        """Per-sample ``H``, ``P``, ``J`` and ``Q`` arrays."""
        m = self.diagnostics.get("m", 1.0)
        e2 = self.diagnostics.get("e2", 1.0)
        h = nbody.kinetic_energy(self.p, m) + nbody.potential_energy(self.q, potential, e2)
        return {
            "H": np.asarray(h),
            "P": self.p.sum(axis=1),
            "J": np.asarray(nbody.angular_momentum(self.q, self.p)),
            "Q": self.q.mean(axis=1),
        }


# --- constraint geometry --------------------------------------------------

_LEVI = np.zeros((3, 3, 3))
for _a, _b, _c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _LEVI[_a, _b, _c] = 1.0
    _LEVI[_a, _c, _b] = -1.0


def constraint_matrix(q: np.ndarray) -> np.ndarray:
    """Gradients of (P, J) with respect to p, shape ``(..., nu, N*d)``."""
    q = np.asarray(q, dtype=float)
    *batch, n, d = q.shape
    eye = np.broadcast_to(np.eye(d), (*batch, n, d, d))
    rows_p = np.moveaxis(eye, -2, -3).reshape(*batch, d, n * d)
    if d == 2:
        jrow = np.stack([-q[..., 1], q[..., 0]], axis=-1).reshape(*batch, 1, n * d)
    else:
        # dJ_a/dp_ic = eps_abc q_ib
        jrow = np.einsum("abc,...ib->...aic", _LEVI, q).reshape(*batch, 3, n * d)
    return np.concatenate([rows_p, jrow], axis=-2)


def constraint_geometry(q: np.ndarray, b: np.ndarray):
    """``(A, logG, p0, |p0|^2)`` for a batch of configurations."""
    a = constraint_matrix(q)
    gram = a @ np.swapaxes(a, -1, -2)
    sign, logg = np.linalg.slogdet(gram)
    logg = np.where(sign > 0, logg, -np.inf)
    rhs = np.broadcast_to(b, gram.shape[:-1])
    with np.errstate(all="ignore"):
        lam = np.linalg.solve(gram, rhs[..., None])[..., 0]
    p0 = np.einsum("...vk,...v->...k", a, lam)
    return a, logg, p0, np.einsum("...k,...k->...", p0, p0)


def log_weight(q: np.ndarray, spec: EnsembleSpec) -> np.ndarray:
    """Log of the momentum-integrated microcanonical weight at ``q``."""
    u = np.asarray(nbody.potential_energy(q, spec.potential, spec.e2))
    _, logg, _, p0sq = constraint_geometry(q, spec.b)
    r2 = 2.0 * spec.m * (spec.energy - u) - p0sq
    with np.errstate(divide="ignore", invalid="ignore"):
        lw = -0.5 * logg + 0.5 * (spec.k - 2) * np.log(np.where(r2 > 0, r2, np.nan))
    return np.where(np.isfinite(lw), lw, -np.inf)


def _helmert(n: int) -> np.ndarray:
    return linalg.helmert(n)  # (n-1, n), orthonormal rows orthogonal to ones


def _to_q(y, h):
    return np.einsum("kn,...kd->...nd", h, y)


def _draw_momenta(rng, q, spec, radius2=None):
    """Uniform point on the constrained sphere for each configuration."""
    a, _, p0, p0sq = constraint_geometry(q, spec.b)
    if radius2 is None:
        u = np.asarray(nbody.potential_energy(q, spec.potential, spec.e2))
        radius2 = 2.0 * spec.m * (spec.energy - u) - p0sq
    z = _null_direction(rng, a)
    p = p0 + np.sqrt(np.maximum(radius2, 0.0))[..., None] * z
    return p.reshape(q.shape)


def _null_direction(rng, a):
    """Isotropic unit vectors in ``ker A`` (projected Gaussians)."""
    g = rng.standard_normal(a.shape[:-2] + (a.shape[-1],))
    gram = a @ np.swapaxes(a, -1, -2)
    coef = np.linalg.solve(gram, (a @ g[..., None]))
    z = g - (np.swapaxes(a, -1, -2) @ coef)[..., 0]
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


# --- exact mode -------------------------------------------------------------

def autocorrelation_time(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time of ``x`` (steps along axis 0, chains along axis 1).

    Chain-averaged FFT autocorrelation with Sokal's adaptive window.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    nfft = 1 << (2 * n - 1).bit_length()
    fx = np.fft.rfft(xc, n=nfft, axis=0)
    acf = np.fft.irfft(fx * np.conj(fx), n=nfft, axis=0)[:n].mean(axis=1)
    if acf[0] <= 0:
        return 1.0
    rho = acf / acf[0]
    taus = 2.0 * np.cumsum(rho) - 1.0
    window = np.arange(n) >= c * taus
    w = int(np.argmax(window)) if window.any() else n - 1
    return float(max(taus[w], 1.0))


def _initial_y(spec: EnsembleSpec, rng, h):
    """Feasible start: local descent on U, then ascent on R^2 if needed."""
    n, d = spec.n, spec.dim
    y0 = rng.standard_normal((n - 1, d))

    def u_of(yf):
        return float(nbody.potential_energy(_to_q(yf.reshape(n - 1, d), h), spec.potential, spec.e2))

    res = optimize.minimize(u_of, y0.ravel(), method="BFGS")
    y_min = res.x.reshape(n - 1, d)
    if spec.energy <= res.fun:
        raise EnergyTooLow(f"E={spec.energy:g} does not exceed the local minimum U={res.fun:g} of the potential energy")

    def neg_r2(yf):
        q = _to_q(yf.reshape(n - 1, d), h)
        u = float(nbody.potential_energy(q, spec.potential, spec.e2))
        _, _, _, p0sq = constraint_geometry(q, spec.b)
        return -(2.0 * spec.m * (spec.energy - u) - float(p0sq))

    y = y_min
    if not np.isfinite(log_weight(_to_q(y, h), spec)):
        start = y_min + 0.5 * y0 / np.linalg.norm(y0)
        res2 = optimize.minimize(neg_r2, start.ravel(), method="Nelder-Mead", options={"maxiter": 20_000, "xatol": 1e-10})
        y = res2.x.reshape(n - 1, d)
        if -res2.fun <= 0 or not np.isfinite(log_weight(_to_q(y, h), spec)):
            raise EnergyTooLow(
                f"no configuration with positive momentum radius^2 found (best {-res2.fun:.3e}); "
                "E is too low for the prescribed angular momentum"
            )
    return y


def _metropolis(spec: EnsembleSpec, rng, h, y, lw, step, iters, record=None):
    accepted = 0
    for it in range(iters):
        prop = y + step * rng.standard_normal(y.shape)
        lwp = log_weight(_to_q(prop, h), spec)
        acc = np.log(rng.random(lw.shape)) < lwp - lw
        y = np.where(acc[:, None, None], prop, y)
        lw = np.where(acc, lwp, lw)
        accepted += int(acc.sum())
        if record is not None:
            record(it, y, lw)
    return y, lw, accepted / (iters * lw.size)


def _sample_exact(spec: EnsembleSpec, rng) -> SampleBatch:
    n, d, c = spec.n, spec.dim, spec.chains
    h = _helmert(n)
    y_init = _initial_y(spec, rng, h)
    y = np.broadcast_to(y_init, (c, n - 1, d)).copy()
    lw = log_weight(_to_q(y, h), spec)
    scale = float(np.sqrt(np.mean(y_init**2))) or 1.0
    step = spec.step if spec.step is not None else 0.5 * scale / np.sqrt((n - 1) * d)

    # burn-in with step adaptation toward ~1/3 acceptance
    block = 50
    rates = []
    for _ in range(max(spec.burn_in // block, 1)):
        y, lw, rate = _metropolis(spec, rng, h, y, lw, step, block)
        rates.append(rate)
        if spec.step is None:
            step *= float(np.exp(np.clip(rate - 0.33, -0.3, 0.3) * 2.0))
    # autocorrelation pilot on U
    pilot = 400
    trace = np.empty((pilot, c))

    def rec(it, yy, _lw):
        trace[it] = nbody.potential_energy(_to_q(yy, h), spec.potential, spec.e2)

    y, lw, rate = _metropolis(spec, rng, h, y, lw, step, pilot, rec)
    tau = autocorrelation_time(trace)
    thin = spec.thin if spec.thin is not None else int(np.ceil(2.0 * tau))
    per_chain = int(np.ceil(spec.samples / c))
    kept = np.empty((per_chain, c, n - 1, d))
    total_acc = 0.0
    for s in range(per_chain):
        y, lw, rate = _metropolis(spec, rng, h, y, lw, step, thin)
        total_acc += rate
        kept[s] = y
    acc_rate = total_acc / per_chain
    if acc_rate < 0.01:
        raise StepSizeAdvisory(f"acceptance {acc_rate:.2%} below 1% at step {step:.3g}; reduce the proposal step")
    # merge deterministically: chain-major order
    ys = np.swapaxes(kept, 0, 1).reshape(-1, n - 1, d)[: spec.samples]
    q = _to_q(ys, h)
    p = _draw_momenta(rng, q, spec)
    return SampleBatch(
        q=q,
        p=p,
        mode="exact",
        diagnostics={
            "acceptance": acc_rate,
            "burn_in_acceptance": float(np.mean(rates)),
            "step": float(step),
            "tau_U": tau,
            "thin": thin,
            "chains": c,
            "m": spec.m,
            "e2": spec.e2,
        },
    )


# --- shell mode -------------------------------------------------------------

def _support_radius(spec: EnsembleSpec, rng, h, n_dir=256):
    """Radius in ``y`` space enclosing ``{U <= E + delta}``, by bisection along rays."""
    n, d = spec.n, spec.dim
    dirs = rng.standard_normal((n_dir, n - 1, d))
    dirs /= np.linalg.norm(dirs.reshape(n_dir, -1), axis=1)[:, None, None]
    target = spec.energy + spec.delta

    def u(r):
        return np.asarray(nbody.potential_energy(_to_q(dirs * r[:, None, None], h), spec.potential, spec.e2))

    hi = np.ones(n_dir)
    for _ in range(200):
        grow = u(hi) <= target
        if not grow.any():
            break
        hi = np.where(grow, 2.0 * hi, hi)
    else:
        raise ValueError("potential energy is not confining along sampled rays")
    lo = np.zeros(n_dir)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        inside = u(mid) <= target
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 1.25 * float(hi.max())


def _sample_shell(spec: EnsembleSpec, rng, chunk=200_000, max_draws=10**9) -> SampleBatch:
    n, d = spec.n, spec.dim
    h = _helmert(n)
    dim_y = (n - 1) * d
    ry = _support_radius(spec, rng, h)
    rp = np.sqrt(2.0 * spec.m * (spec.energy + spec.delta))
    qs, ps, ws = [], [], []
    got = draws = 0
    max_y = 0.0
    while got < spec.samples:
        if draws >= max_draws:
            raise RuntimeError(f"shell rejection accepted only {got} of {draws} draws")
        # y: isotropic with radial density ~ r^{dim_y - 2}, i.e. proposal density ~ 1/|y|
        g = rng.standard_normal((chunk, dim_y))
        rad = ry * rng.random(chunk) ** (1.0 / (dim_y - 1))
        y = (g / np.linalg.norm(g, axis=1)[:, None] * rad[:, None]).reshape(chunk, n - 1, d)
        q = _to_q(y, h)
        a, logg, p0, _ = constraint_geometry(q, spec.b)
        z = _null_direction(rng, a) * (rp * rng.random(chunk) ** (1.0 / spec.k))[:, None]
        p = (p0 + z).reshape(q.shape)
        hh = nbody.kinetic_energy(p, spec.m) + nbody.potential_energy(q, spec.potential, spec.e2)
        acc = np.abs(hh - spec.energy) <= spec.delta
        draws += chunk
        if acc.any():
            qs.append(q[acc])
            ps.append(p[acc])
            # measure weight G^{-1/2} over the proposal density 1/|y|
            ws.append(np.exp(-0.5 * logg[acc]) * rad[acc])
            max_y = max(max_y, float(rad[acc].max()))
            got += int(acc.sum())
    if max_y > 0.98 * ry:
        raise RuntimeError("accepted states reach the proposal boundary; support radius underestimated")
    q = np.concatenate(qs)
    p = np.concatenate(ps)
    w = np.concatenate(ws)
    w /= w.sum()
    spread = float(w.max() / w.min())
    if d == 2:
        # G = N^2 |y|^2 exactly, so the weights are constant up to roundoff
        idx = np.arange(spec.samples)
        ess = float(spec.samples)
    else:
        idx = np.sort(rng.choice(w.size, size=spec.samples, replace=True, p=w))
        ess = float(1.0 / np.sum(w**2))
    return SampleBatch(
        q=q[idx],
        p=p[idx],
        mode="shell",
        diagnostics={
            "acceptance": got / draws,
            "draws": draws,
            "delta": spec.delta,
            "weight_spread": spread,
            "ess": ess,
            "m": spec.m,
            "e2": spec.e2,
        },
    )


def sample_microcanonical(spec: EnsembleSpec) -> SampleBatch:
    """Draw ``spec.samples`` states from the constrained microcanonical measure.

    Deterministic for a fixed ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "exact":
        return _sample_exact(spec, rng)
    return _sample_shell(spec, rng)


# --- marginals and dynamics ---------------------------------------------------

def _particle_points(batch: SampleBatch, rescale: bool, particles=None):
    n = batch.q.shape[1]
    idx = slice(None) if particles is None else np.atleast_1d(particles)
    q = batch.q[:, idx]
    p = batch.p[:, idx] / np.sqrt(n) if rescale else batch.p[:, idx]
    d = q.shape[2]
    return np.concatenate([q.reshape(-1, d), p.reshape(-1, d)], axis=1)


def marginal_estimate(batch: SampleBatch, grid: PhaseGrid, rescale: bool = False, particles=None) -> GridDensity:
    """Histogram of single-particle phase points pooled over particles and samples.

    ``rescale`` divides momenta by ``sqrt(N)``; ``particles`` restricts the
    pool to the given particle indices.  Mass falling outside the grid is
    dropped before normalizing.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    values, _ = histogram_density(_particle_points(batch, rescale, particles), grid)
    return GridDensity(grid, values).normalize()


def flow_batch(batch: SampleBatch, potential: PairPotential, dt: float, steps: np.ndarray) -> SampleBatch:
    """Advance sample ``i`` by ``steps[i]`` leapfrog steps (batched kick-drift-kick)."""
    m = batch.diagnostics.get("m", 1.0)
    e2 = batch.diagnostics.get("e2", 1.0)
    steps = np.asarray(steps, dtype=int)
    q = batch.q.copy()
    p = batch.p.copy()
    f = nbody.pair_forces(q, potential, e2)
    for s in range(int(steps.max())):
        live = (s < steps)[:, None, None]
        ph = p + 0.5 * dt * f
        qn = q + dt * ph / m
        fn = nbody.pair_forces(qn, potential, e2)
        pn = ph + 0.5 * dt * fn
        q = np.where(live, qn, q)
        p = np.where(live, pn, p)
        f = np.where(live, fn, f)
    return SampleBatch(q, p, batch.mode, dict(batch.diagnostics, flowed=True))


# --- weak law of large numbers --------------------------------------------------

@dataclass(frozen=True)
class CoarseBins:
    """Equal-width quantizer of single-particle phase space for transport solves.

    Coarser than any :class:`PhaseGrid` allows; points outside the box are
    clipped into the edge cells so no mass is lost.
    """

    lo: np.ndarray
    hi: np.ndarray
    per_axis: int

    @classmethod
    def spanning(cls, points: np.ndarray, per_axis: int) -> "CoarseBins":
        return cls(points.min(axis=0), points.max(axis=0), int(per_axis))

    @property
    def width(self) -> np.ndarray:
        return (self.hi - self.lo) / self.per_axis

    def measure(self, points: np.ndarray, weights=None) -> transport.DiscreteMeasure:
        idx = np.floor((points - self.lo) / self.width).astype(int)
        np.clip(idx, 0, self.per_axis - 1, out=idx)
        cells, inverse = np.unique(idx, axis=0, return_inverse=True)
        mass = np.bincount(inverse.ravel(), weights=weights, minlength=len(cells))
        return transport.DiscreteMeasure.normalized(self.lo + (cells + 0.5) * self.width, mass)

    def _overlap(self, edges: np.ndarray, axis: int) -> np.ndarray:
        # fraction of each fine cell inside each bin; outer bins extend to infinity
        b = self.lo[axis] + self.width[axis] * np.arange(self.per_axis + 1)
        b[0], b[-1] = -np.inf, np.inf
        lo = np.maximum(edges[:-1, None], b[None, :-1])
        hi = np.minimum(edges[1:, None], b[None, 1:])
        return np.clip(hi - lo, 0.0, None) / np.diff(edges)[:, None]

    def density_measure(self, f: GridDensity) -> transport.DiscreteMeasure:
        """Exact bin masses of a grid density (cells split by overlap length)."""
        mass = f.values * f.grid.cell_volume
        for axis, edges in enumerate(f.grid.edges()):
            w = self._overlap(np.asarray(edges), axis)
            mass = np.moveaxis(np.tensordot(mass, w, axes=([axis], [0])), -1, axis)
        centers = np.meshgrid(*[self.lo[a] + (np.arange(self.per_axis) + 0.5) * self.width[a] for a in range(self.lo.size)], indexing="ij")
        pts = np.column_stack([c.ravel() for c in centers])
        flat = mass.ravel()
        keep = flat > 0
        return transport.DiscreteMeasure.normalized(pts[keep], flat[keep])


@dataclass
class WLLNResult:
    ell: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    samples: list
    slope: float
    monotone: bool

    def rows(self):
        return [(int(e), float(m), float(a), float(b)) for e, m, a, b in zip(self.ell, self.mean, self.lo, self.hi)]


def wlln_experiment(
    pool: SampleBatch,
    reference: SampleBatch,
    bins: CoarseBins,
    ell_list=(1, 4, 16, 64, 256),
    repeats: int = 40,
    n_boot: int = 2000,
    seed: int = 0,
    rescale: bool = False,
) -> WLLNResult:
    """KR distance between the mean of ``ell`` empirical measures and the marginal estimate.

    The reference marginal is built from the independent ``reference``
    batch.  For each ``ell``, ``repeats`` disjoint groups of ``ell`` states are
    drawn from ``pool``; both measures are quantized by ``bins`` before the
    exact transport solve.  Error bars are 95% bootstrap intervals of the
    mean distance over the repeats.
    """
    ell_list = np.asarray(ell_list, dtype=int)
    if np.any(np.diff(ell_list) <= 0):
        raise ValueError("sample sizes must be increasing")
    rng = np.random.default_rng(seed)
    ref = bins.measure(_particle_points(reference, rescale))
    pts = _particle_points(pool, rescale).reshape(len(pool), pool.q.shape[1], -1)
    means, los, his, all_d = [], [], [], []
    for ell in ell_list:
        need = ell * repeats
        if need > len(pool):
            raise ValueError(f"pool of {len(pool)} states too small for {repeats} groups of {ell}")
        order = rng.permutation(len(pool))[:need].reshape(repeats, ell)
        dist = np.array([
            transport.kr_distance_exact(bins.measure(pts[g].reshape(-1, pts.shape[-1])), ref)
            for g in order
        ])
        boot = rng.choice(dist, size=(n_boot, repeats), replace=True).mean(axis=1)
        means.append(dist.mean())
        los.append(np.quantile(boot, 0.025))
        his.append(np.quantile(boot, 0.975))
        all_d.append(dist)
    means, los, his = map(np.array, (means, los, his))
    slope = float(np.polyfit(np.log(ell_list), np.log(means), 1)[0])
    monotone = bool(np.all(means[1:] <= his[:-1]))
    return WLLNResult(ell_list, means, los, his, all_d, slope, monotone)
