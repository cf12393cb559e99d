"""Conserved quantities, weighted norms, and dispersive-decay diagnostics.

This module evaluates the scalar functionals attached to a field or a
trajectory:

* mass ``M(u) = ||u||_2^2`` and energy ``E(u) = 1/2 ||grad u||_2^2 + Q(u)``,
  the two quantities conserved by the flow;
* the quartic potential functional
  ``Q(u) = 1/4 <(|x|^{-gamma} * |u|^2) u, u>``, evaluated through the
  spectral convolution kernel;
* weighted norms: ``||u||_2``, ``||grad u||_2``, ``||x u||_2`` and the
  composites ``H1``, ``FH1`` (Fourier-side H1) and ``Sigma``.  The ``Sigma``
  norm uses the *sum* convention ``||u||_Sigma = ||u||_H1 + ||x u||_2``
  (all equivalent-norm choices differ by fixed constants; the sum keeps
  triangle-inequality bookkeeping simple);
* mixed space-time Lebesgue norms ``L_t^q L_x^r`` of a recorded trajectory
  by composite trapezoid quadrature in time (a Richardson-extrapolated
  value is reported alongside; ``q = inf`` is the max over stored samples,
  which is a lower bound for the true supremum);
* the dispersive-decay diagnostic comparing ``||exp(it Lap) phi||_r``
  against ``t^{-theta} ||phi||_2^{1-theta} ||J(t) u(t)||_2^theta``;
* closed evaluation of ``L^r`` norms and of ``Q`` along the *free* flow at
  large times through the lens (dual-grid) representation, which stays
  accurate long after the directly evolved field would have wrapped around
  the periodic box.

Exponent bookkeeping lives in :class:`StrichartzExponents`: for the
interaction kernel exponent ``gamma`` in (4/3, 2) and dimension ``d``, the
canonical spatial exponent is ``r = 4d/(2d - gamma)`` with time exponent
``q = 8/gamma``, auxiliary exponent ``alpha = 8/(4 - gamma)`` and decay rate
``theta = gamma/4``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping, Protocol, Sequence

import numpy as np

from .spectral_core import (
    POSITION,
    ComplexField,
    Grid,
    HartreeKernel,
    apply_J,
    dual_grid,
    free_propagate,
    hartree_potential,
    make_kernel,
    transform,
)

__all__ = [
    "StrichartzExponents",
    "NormLedger",
    "DecayRow",
    "SpacetimeNormReport",
    "mass",
    "gradient_l2",
    "moment_l2",
    "energy",
    "potential_Q",
    "weighted_norms",
    "conservation_ledger",
    "lr_norm",
    "decay_check",
    "spacetime_norm",
    "spacetime_norm_report",
    "series_csv",
    "dual_route_min_time",
    "free_flow_lr",
    "free_flow_potential_Q",
]


# ---------------------------------------------------------------------------
# exponent bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StrichartzExponents:
    """Admissible exponent bundle for interaction exponent ``gamma`` in d dims.

    Derived quantities:

    ``r``      spatial Lebesgue exponent ``4d/(2d - gamma)``
    ``q``      time exponent ``8/gamma``
    ``alpha``  auxiliary time exponent ``8/(4 - gamma)``
    ``theta``  dispersive decay rate ``gamma/4``

    The defect methods return the residuals of the defining identities; all
    of them vanish identically in exact arithmetic and to rounding error in
    floating point.
    """

    gamma: float
    d: int

    def __post_init__(self) -> None:
        if self.d not in (1, 2):
            raise ValueError(f"d must be 1 or 2, got {self.d}")
        if not (4.0 / 3.0 < self.gamma < 2.0):
            raise ValueError(f"gamma must lie in (4/3, 2), got {self.gamma}")

    @property
    def r(self) -> float:
        return 4.0 * self.d / (2.0 * self.d - self.gamma)

    @property
    def q(self) -> float:
        return 8.0 / self.gamma

    @property
    def alpha(self) -> float:
        return 8.0 / (4.0 - self.gamma)

    @property
    def theta(self) -> float:
        return self.gamma / 4.0

    def admissibility_defect(self) -> float:
        """Residual of ``2/q + d/r = d/2`` (sharp-admissible pair)."""
        return 2.0 / self.q + self.d / self.r - self.d / 2.0

    def dual_pairing_defect(self) -> float:
        """Residual of ``1/q' = 1/q + 2/alpha`` with ``q'`` conjugate to q."""
        q_conj = self.q / (self.q - 1.0)
        return 1.0 / q_conj - (1.0 / self.q + 2.0 / self.alpha)

    def theta_defect(self) -> float:
        """Residual of ``theta = d(r - 2)/(2r)`` at the canonical ``r``."""
        return self.d * (self.r - 2.0) / (2.0 * self.r) - self.theta


# ---------------------------------------------------------------------------
# norm ledger
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormLedger:
    """An immutable named map of nonnegative norm values at one time.

    Conventional identifiers: ``mass``, ``energy``, ``Q``, ``L2``,
    ``grad_L2``, ``x_L2``, ``H1``, ``FH1``, ``Sigma``, ``Lr`` and
    ``spacetime-<q>-<r>``; arbitrary identifiers are accepted.
    """

    time: float
    values: Mapping[str, float]

    def __post_init__(self) -> None:
        if not math.isfinite(self.time):
            raise ValueError(f"ledger time must be finite, got {self.time}")
        frozen: dict[str, float] = {}
        for key, raw in dict(self.values).items():
            val = float(raw)
            if not math.isfinite(val) or val < 0.0:
                raise ValueError(
                    f"ledger entry {key!r} must be finite and >= 0, got {raw}"
                )
            frozen[str(key)] = val
        object.__setattr__(self, "values", MappingProxyType(frozen))

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def identifiers(self) -> tuple[str, ...]:
        return tuple(sorted(self.values))

    def to_json(self) -> str:
        return json.dumps(
            {"time": self.time, "values": dict(self.values)}, sort_keys=True
        )

    @staticmethod
    def from_json(text: str) -> "NormLedger":
        payload = json.loads(text)
        return NormLedger(float(payload["time"]), payload["values"])


def series_csv(ledgers: Sequence[NormLedger], identifier: str) -> str:
    """Render one identifier of a ledger time series as CSV (columns t,value)."""
    lines = ["t,value"]
    for ledger in ledgers:
        lines.append(f"{ledger.time!r},{ledger.values[identifier]!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# pointwise functionals
# ---------------------------------------------------------------------------

def _require_position(u: ComplexField, op: str) -> None:
    if u.representation != POSITION:
        raise ValueError(f"{op} expects a position-representation field")


def mass(u: ComplexField) -> float:
    """Total mass ``||u||_2^2`` with the grid's cell measure."""
    _require_position(u, "mass")
    return float(np.sum(np.abs(u.values) ** 2)) * u.grid.cell_volume


def gradient_l2(u: ComplexField) -> float:
    """``||grad u||_2``, computed spectrally."""
    _require_position(u, "gradient_l2")
    hat = transform(u)
    weighted = float(np.sum(u.grid.xi_squared * np.abs(hat.values) ** 2))
    measure = (u.grid.dxi / (2.0 * np.pi)) ** u.grid.d
    return math.sqrt(weighted * measure)


def moment_l2(u: ComplexField) -> float:
    """``||x u||_2`` (first spatial moment in L^2)."""
    _require_position(u, "moment_l2")
    weighted = float(np.sum(u.grid.r_squared * np.abs(u.values) ** 2))
    return math.sqrt(weighted * u.grid.cell_volume)


def potential_Q(u: ComplexField, K: HartreeKernel) -> float:
    """Quartic potential functional ``1/4 <(kernel * |u|^2) u, u>``.

    Real and nonnegative for the repulsive kernel: by Plancherel it equals
    ``1/4 sum_k m(k) |rho_hat(k)|^2`` with multiplier ``m >= 0`` (the density
    spectrum is band-limited by the dealiasing projection, which is
    orthogonal, so positivity survives discretisation).
    """
    _require_position(u, "potential_Q")
    V = hartree_potential(u, u, K)
    value = 0.25 * float(
        np.sum(V.values.real * np.abs(u.values) ** 2)
    ) * u.grid.cell_volume
    return value


def energy(u: ComplexField, K: HartreeKernel) -> float:
    """Conserved energy ``1/2 ||grad u||_2^2 + Q(u)``."""
    return 0.5 * gradient_l2(u) ** 2 + potential_Q(u, K)


def weighted_norms(u: ComplexField, time: float = 0.0) -> NormLedger:
    """Ledger of ``L2``, ``grad_L2``, ``x_L2``, ``H1``, ``FH1`` and ``Sigma``.

    ``H1 = sqrt(L2^2 + grad_L2^2)``, ``FH1 = sqrt(L2^2 + x_L2^2)`` and
    ``Sigma = H1 + x_L2`` (sum convention).
    """
    _require_position(u, "weighted_norms")
    l2 = math.sqrt(mass(u))
    grad = gradient_l2(u)
    x_l2 = moment_l2(u)
    h1 = math.hypot(l2, grad)
    fh1 = math.hypot(l2, x_l2)
    return NormLedger(
        time,
        {
            "L2": l2,
            "grad_L2": grad,
            "x_L2": x_l2,
            "H1": h1,
            "FH1": fh1,
            "Sigma": h1 + x_l2,
        },
    )


def conservation_ledger(u: ComplexField, K: HartreeKernel,
                        time: float = 0.0) -> NormLedger:
    """Ledger of the conserved quantities ``mass``, ``energy`` and ``Q``."""
    q_val = potential_Q(u, K)
    return NormLedger(
        time,
        {
            "mass": mass(u),
            "energy": 0.5 * gradient_l2(u) ** 2 + q_val,
            "Q": q_val,
        },
    )


def lr_norm(u: ComplexField, r: float) -> float:
    """Spatial ``L^r`` norm; ``r = inf`` gives the max over grid nodes."""
    _require_position(u, "lr_norm")
    if math.isinf(r):
        return float(np.max(np.abs(u.values)))
    if r < 1.0:
        raise ValueError(f"r must lie in [1, inf], got {r}")
    amp = np.abs(u.values)
    return float(np.sum(amp**r) * u.grid.cell_volume) ** (1.0 / r)


# ---------------------------------------------------------------------------
# dispersive-decay diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayRow:
    """One row of the decay diagnostic at time ``t``.

    ``dispersive_norm``  ``||exp(it Lap) phi||_r``
    ``weighted_bound``   ``t^{-theta} ||phi||_2^{1-theta} ||J(t) u(t)||_2^theta``
    ``ratio``            their quotient (0 when the field vanishes)
    """

    t: float
    dispersive_norm: float
    weighted_bound: float
    ratio: float


def _vector_J_norm(u: ComplexField, t: float) -> float:
    total = 0.0
    for axis in range(u.grid.d):
        total += apply_J(u, t, axis).l2() ** 2
    return math.sqrt(total)


def decay_check(phi: ComplexField, times: Sequence[float],
                exps: StrichartzExponents) -> tuple[DecayRow, ...]:
    """Dispersive-decay diagnostic for the free flow started from ``phi``.

    For each positive time the free evolution is compared against the
    weighted interpolation bound with rate ``theta = gamma/4``; the reported
    ratios should stay below a single constant across the validity horizon.
    """
    _require_position(phi, "decay_check")
    if phi.grid.d != exps.d:
        raise ValueError("exponent bundle dimension differs from the grid's")
    rows = []
    l2_phi = math.sqrt(mass(phi))
    for t in times:
        t = float(t)
        if t <= 0.0:
            raise ValueError(f"decay_check requires t > 0, got {t}")
        u_t = free_propagate(phi, t)
        disp = lr_norm(u_t, exps.r)
        j_norm = _vector_J_norm(u_t, t)
        bound = t ** (-exps.theta) * l2_phi ** (1.0 - exps.theta) \
            * j_norm**exps.theta
        ratio = disp / bound if bound > 0.0 else 0.0
        rows.append(DecayRow(t, disp, bound, ratio))
    return tuple(rows)


# ---------------------------------------------------------------------------
# space-time norms over recorded trajectories
# ---------------------------------------------------------------------------

class _TimeSeries(Protocol):
    times: Sequence[float]
    fields: Sequence[ComplexField]


@dataclass(frozen=True)
class SpacetimeNormReport:
    """Trapezoid value of an ``L_t^q L_x^r`` norm plus its Richardson mate.

    ``richardson`` is NaN when the stored time grid does not admit a
    coarsened twin (non-uniform spacing or an even sample count).
    """

    value: float
    richardson: float
    samples: int


def _trapezoid(y: np.ndarray, x: np.ndarray) -> float:
    trapz = getattr(np, "trapezoid", None) or np.trapz
    return float(trapz(y, x))


def spacetime_norm_report(traj: _TimeSeries, q: float,
                          r: float) -> SpacetimeNormReport:
    """Mixed norm ``L_t^q L_x^r`` over a recorded trajectory, with detail.

    Time integration uses the composite trapezoid rule on the stored grid;
    when that grid is uniform with an even interval count, a Richardson
    extrapation against the half-resolution restriction is reported too.
    ``q = inf`` takes the max over stored samples (a lower bound of the
    true supremum); ``r = inf`` is the max over grid nodes.
    """
    times = np.asarray(list(traj.times), dtype=float)
    fields = list(traj.fields)
    if len(fields) == 0:
        raise ValueError("spacetime_norm requires a nonempty trajectory")
    if len(fields) != times.size:
        raise ValueError("trajectory has mismatched times and fields")
    if not math.isinf(q) and q < 1.0:
        raise ValueError(f"q must lie in [1, inf], got {q}")
    spatial = np.array([lr_norm(f, r) for f in fields])
    if math.isinf(q):
        value = float(np.max(spatial))
        return SpacetimeNormReport(value, value, times.size)
    if times.size == 1:
        return SpacetimeNormReport(0.0, 0.0, 1)
    integrand = spatial**q
    full = _trapezoid(integrand, times)
    richardson = math.nan
    steps = np.diff(times)
    uniform = np.allclose(steps, steps[0], rtol=1e-9, atol=0.0)
    if uniform and times.size >= 5 and times.size % 2 == 1:
        half = _trapezoid(integrand[::2], times[::2])
        richardson = max((4.0 * full - half) / 3.0, 0.0) ** (1.0 / q)
    return SpacetimeNormReport(full ** (1.0 / q), richardson, times.size)


def spacetime_norm(traj: _TimeSeries, q: float, r: float) -> float:
    """Mixed norm ``L_t^q L_x^r`` of a trajectory (trapezoid in time)."""
    return spacetime_norm_report(traj, q, r).value


# ---------------------------------------------------------------------------
# free-flow functionals through the lens representation
# ---------------------------------------------------------------------------

def dual_route_min_time(grid: Grid) -> float:
    """Smallest time at which the lens representation is grid-resolved.

    The representation samples ``exp(i |x|^2 / (4t)) phi`` before a Fourier
    transform; requiring the chirp's instantaneous frequency at the box edge
    to stay below two-thirds of the Nyquist frequency gives
    ``t >= 3 L dx / (4 pi)``.
    """
    return 3.0 * grid.L * grid.dx / (4.0 * np.pi)


def _lens_field(phi: ComplexField, t: float) -> ComplexField:
    """Fourier transform of the chirped field, as a dual-grid position field.

    For ``u(t) = exp(it Lap) phi`` the stationary-phase factorisation gives
    ``u(t, x) = (4 pi i t)^{-d/2} exp(i|x|^2/(4t)) g_hat(x / (2t))`` with
    ``g = exp(i|.|^2/(4t)) phi``; sampling ``g_hat`` on the frequency lattice
    and reordering it monotonically yields a position-representation field on
    the dual grid (spacing pi/L, half-extent pi/dx).
    """
    _require_position(phi, "free-flow lens evaluation")
    if t < dual_route_min_time(phi.grid):
        raise ValueError(
            "lens representation needs t >= 3*L*dx/(4*pi) = "
            f"{dual_route_min_time(phi.grid):.6g}, got {t}"
        )
    chirp = np.exp((0.25j / t) * phi.grid.r_squared)
    g = ComplexField(phi.grid, chirp * phi.values, POSITION)
    hat = transform(g)
    monotone = np.fft.fftshift(hat.values)
    return ComplexField(dual_grid(phi.grid), monotone, POSITION)


def free_flow_lr(phi: ComplexField, t: float, r: float) -> float:
    """``||exp(it Lap) phi||_r`` evaluated through the lens representation.

    Valid for ``t >= dual_route_min_time(grid)``; unlike direct evolution it
    does not degrade when the dispersed field outgrows the periodic box,
    because the change of variables ``x = 2 t xi`` maps the spreading
    solution back onto a fixed dual grid:
    ``||u(t)||_r = (4 pi t)^{-d/2} (2t)^{d/r} ||g_hat||_{L^r}``.
    """
    lens = _lens_field(phi, t)
    d = phi.grid.d
    prefactor = (4.0 * np.pi * t) ** (-0.5 * d)
    if math.isinf(r):
        return prefactor * lr_norm(lens, r)
    return prefactor * (2.0 * t) ** (d / r) * lr_norm(lens, r)


def free_flow_potential_Q(phi: ComplexField, K: HartreeKernel, t: float,
                          dual_kernel: HartreeKernel | None = None) -> float:
    """``Q(exp(it Lap) phi)`` evaluated through the lens representation.

    The homogeneity of the interaction kernel turns the change of variables
    ``x = 2 t xi`` into an exact prefactor:
    ``Q(u(t)) = (2 pi)^{-2d} (2t)^{-gamma} Q(g_hat)`` with ``Q(g_hat)``
    evaluated on the dual grid.  Pass ``dual_kernel`` (built once with
    :func:`make_kernel` on ``dual_grid(phi.grid)``) to avoid rebuilding it
    in a sweep; it must match ``K``'s exponent and zero-mode policy.
    """
    lens = _lens_field(phi, t)
    if dual_kernel is None:
        dual_kernel = make_kernel(lens.grid, K.gamma,
                                  zero_mode_policy=K.zero_mode_policy)
    if dual_kernel.gamma != K.gamma or dual_kernel.grid != lens.grid:
        raise ValueError("dual kernel does not match the field's dual grid")
    d = phi.grid.d
    prefactor = (2.0 * np.pi) ** (-2.0 * d) * (2.0 * t) ** (-K.gamma)
    return prefactor * potential_Q(lens, dual_kernel)
