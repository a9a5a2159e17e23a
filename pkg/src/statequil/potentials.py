"""Pair-interaction potentials and runtime checks of their admissibility.

A :class:`PairPotential` bundles ``V(r)`` and ``V'(r)`` for ``r > 0``.
:func:`check_hypotheses` decides, on a finite logarithmic probe grid, whether
a potential is smooth, has a benign origin, has a bounded force ratio at
large ``r``, confines, and grows superlinearly (the last two are required
before any mean-field computation).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "PairPotential",
    "HypothesisReport",
    "PotentialDomainError",
    "NotMeanFieldAdmissible",
    "evaluate",
    "check_hypotheses",
    "default_probe",
    "harmonic",
    "softcore",
    "coulomb",
    "gravity",
    "linear",
    "lennard_jones",
    "make_potential",
    "require_meanfield",
]


class PotentialDomainError(ValueError):
    """Raised when a potential is evaluated at a nonpositive distance."""


class NotMeanFieldAdmissible(ValueError):
    """Raised when a potential fails the confinement/superlinearity checks."""


@dataclass(frozen=True)
class PairPotential:
    """Radial pair potential ``V(r)`` with its derivative.

    ``dv_over_r`` is optional; when given it must equal ``deriv(r) / r`` and is
    used by the force kernels to avoid the division (exact for harmonic V).
    """

    id: str
    params: Mapping[str, float]
    _value: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    _deriv: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    _dv_over_r: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, repr=False, compare=False
    )
    charge_sign: int = 1

    @staticmethod
    def _check(r):
        r = np.asarray(r, dtype=float)
        if np.any(~(r > 0)):
            raise PotentialDomainError(f"pair distance must be > 0, got min {np.min(r)!r}")
        return r

    def value(self, r):
        r = self._check(r)
        out = self._value(r)
        return float(out) if out.ndim == 0 else out

    def deriv(self, r):
        r = self._check(r)
        out = self._deriv(r)
        return float(out) if out.ndim == 0 else out

    def dv_over_r(self, r):
        """``V'(r)/r`` without a domain check (callers guarantee ``r > 0``)."""
        r = np.asarray(r, dtype=float)
        if self._dv_over_r is not None:
            return self._dv_over_r(r)
        return self._deriv(r) / r

    def to_config(self) -> dict:
        return {"id": self.id, **dict(self.params)}


def evaluate(potential: PairPotential, r: float) -> float:
    """Return ``V(r)``; raises :class:`PotentialDomainError` for ``r <= 0``."""
    return potential.value(r)


# --- reference potentials -------------------------------------------------

def harmonic(a: float = 1.0) -> PairPotential:
    a = float(a)
    return PairPotential(
        "harmonic",
        {"a": a},
        lambda r: a * r * r,
        lambda r: 2.0 * a * r,
        lambda r: np.full_like(r, 2.0 * a),
    )


def softcore(a: float = 1.0, b: float = 1.0, c: float = 1.0) -> PairPotential:
    """Confining ``V(r) = a r^2 + b / (r^2 + c)``."""
    a, b, c = float(a), float(b), float(c)
    if c <= 0:
        raise ValueError("softcore requires c > 0")
    return PairPotential(
        "softcore",
        {"a": a, "b": b, "c": c},
        lambda r: a * r * r + b / (r * r + c),
        lambda r: 2.0 * a * r - 2.0 * b * r / (r * r + c) ** 2,
        lambda r: 2.0 * a - 2.0 * b / (r * r + c) ** 2,
    )


def coulomb(k: float = 1.0) -> PairPotential:
    k = float(k)
    return PairPotential("coulomb", {"k": k}, lambda r: k / r, lambda r: -k / (r * r))


def gravity(k: float = 1.0) -> PairPotential:
    k = float(k)
    return PairPotential("gravity", {"k": k}, lambda r: -k / r, lambda r: k / (r * r))


def linear(a: float = 1.0) -> PairPotential:
    a = float(a)
    return PairPotential(
        "linear", {"a": a}, lambda r: a * r, lambda r: np.full_like(r, a)
    )


def lennard_jones(k: float = 1.0) -> PairPotential:
    k = float(k)
    return PairPotential(
        "lennard_jones",
        {"k": k},
        lambda r: k * (r**-12 - r**-6),
        lambda r: k * (-12.0 * r**-13 + 6.0 * r**-7),
    )


_REGISTRY: dict[str, Callable[..., PairPotential]] = {
    "harmonic": harmonic,
    "softcore": softcore,
    "coulomb": coulomb,
    "gravity": gravity,
    "linear": linear,
    "lennard_jones": lennard_jones,
}


def make_potential(spec: Mapping) -> PairPotential:
    """Build a potential from ``{"id": "harmonic", "a": 1.0}``-style dicts."""
    spec = dict(spec)
    try:
        factory = _REGISTRY[spec.pop("id")]
    except KeyError as exc:
        raise ValueError(f"unknown potential id {exc.args[0]!r}; known: {sorted(_REGISTRY)}")
    return factory(**spec)


# --- hypothesis checks ----------------------------------------------------

@dataclass(frozen=True)
class HypothesisReport:
    c2_smooth: bool
    repulsive_or_flat_origin: bool
    sublinear_force_growth: bool
    confining: bool
    meanfield_superlinear: bool
    locally_integrable: bool

    @property
    def meanfield_ok(self) -> bool:
        return self.confining and self.meanfield_superlinear

    @property
    def all_pass(self) -> bool:
        return all(asdict(self).values())

    def as_dict(self) -> dict:
        return asdict(self)


PER_DECADE = 25


def default_probe(lo: float = 1e-4, hi: float = 1e4, per_decade: int = PER_DECADE) -> np.ndarray:
    ndec = round(math.log10(hi / lo))
    return np.logspace(math.log10(lo), math.log10(hi), ndec * per_decade + 1)


def _safe(fn, r):
    try:
        with np.errstate(all="ignore"):
            out = np.asarray(fn(r), dtype=float)
    except Exception:  # noqa: BLE001 - any evaluation failure fails the flag
        return None
    if out.shape != r.shape or not np.all(np.isfinite(out)):
        return None
    return out


def _strictly_increasing(y) -> bool:
    return bool(np.all(np.diff(y) > 0))


def _growing(y, per_decade: int) -> bool:
    # Monotone over the top decade and increments that do not die out from
    # one decade to the next (rules out saturation such as -1/r -> 0).
    top = y[-(per_decade + 1):]
    if not _strictly_increasing(top):
        return False
    last = y[-1] - y[-1 - per_decade]
    prev = y[-1 - per_decade] - y[-1 - 2 * per_decade]
    return bool(last > 0 and last >= 0.5 * prev)


def check_hypotheses(potential: PairPotential, probe=None) -> HypothesisReport:
    """Numerical surrogate for the asymptotic admissibility conditions on V.

    Procedure on a log-spaced probe grid (default 1e-4..1e4, 25 per decade):

    * ``c2_smooth``: V, V' and a centered difference of V' are finite everywhere.
    * ``repulsive_or_flat_origin``: over the bottom decade either ``|V'|``
      decreases toward the origin and ``|V'(r_min)| <= 1e-3 max(1, |V'(1)|)``,
      or ``-sign*V'`` increases toward the origin and exceeds
      ``1e3 max(1, |V'(1)|)`` at ``r_min``.
    * ``sublinear_force_growth``: ``|V'|/r`` grows by less than 1.5x over
      the top decade.
    * ``confining``: ``sign*V`` strictly increases over the top decade and the
      last-decade increment is at least half the previous one.
    * ``meanfield_superlinear``: same growth test applied to ``sign*V/r``.
    * ``locally_integrable``: ``r^3 |V(r)|`` is nonincreasing toward the origin
      over the bottom decade and strictly smaller at ``r_min``.
    """
    r = default_probe() if probe is None else np.asarray(probe, dtype=float)
    if r.ndim != 1 or r.size < 2 * PER_DECADE + 1 or r[0] > 1e-4 or r[-1] < 1e4:
        raise ValueError("probe grid must span at least [1e-4, 1e4]")
    pd = int(round((r.size - 1) / math.log10(r[-1] / r[0])))
    s = potential.charge_sign
    v = _safe(potential._value, r)
    dv = _safe(potential._deriv, r)

    c2 = False
    if v is not None and dv is not None:
        h = 1e-6 * r
        lo = _safe(potential._deriv, r - h)
        hi = _safe(potential._deriv, r + h)
        c2 = lo is not None and hi is not None and bool(np.all(np.isfinite((hi - lo) / (2 * h))))

    origin = False
    if dv is not None:
        bottom = dv[: pd + 1]
        unit = _safe(potential._deriv, np.array([1.0]))
        ref = max(1.0, abs(float(unit[0]))) if unit is not None else 1.0
        flat = _strictly_increasing(np.abs(bottom)) and abs(bottom[0]) <= 1e-3 * ref
        rep = -s * bottom
        repulsive = bool(np.all(np.diff(rep) < 0)) and rep[0] >= 1e3 * ref
        origin = bool(flat or repulsive)

    sublinear = False
    if dv is not None:
        ratio = np.abs(dv) / r
        sublinear = bool(ratio[-1] < 1.5 * ratio[-1 - pd] + 1e-300)

    confining = v is not None and s > 0 and _growing(s * v, pd)
    superlinear = v is not None and s > 0 and _growing(s * v / r, pd)

    integrable = False
    if v is not None:
        w = r[: pd + 1] ** 3 * np.abs(v[: pd + 1])
        integrable = bool(np.all(np.diff(w) >= 0) and (w[0] < w[-1] or w[-1] == 0.0))

    return HypothesisReport(
        c2_smooth=bool(c2),
        repulsive_or_flat_origin=origin,
        sublinear_force_growth=sublinear,
        confining=bool(confining),
        meanfield_superlinear=bool(superlinear),
        locally_integrable=integrable,
    )


def require_meanfield(potential: PairPotential) -> None:
    """Refuse mean-field work for potentials that do not confine superlinearly."""
    rep = check_hypotheses(potential)
    if not rep.meanfield_ok:
        raise NotMeanFieldAdmissible(
            f"potential {potential.id!r} fails mean-field hypotheses: "
            f"confining={rep.confining}, meanfield_superlinear={rep.meanfield_superlinear}"
        )
