"""Perturbation-series hierarchy of the small-data scattering expansion.

Perturbing the initial datum ``u0 -> u0 + eps*v`` expands the flow into a
series ``u^eps(t) = u(t) + sum_k eps^k w_k(t)`` whose coefficients solve a
triangular tower of trilinear integral equations.  Writing ``T(a,b,c) =
(|x|^{-gamma} * (a conj(b))) c`` for the polarized nonlinearity, the tower
involves two Duhamel-type operators:

* the initial-value operator
  ``D(a,b,c)(t) = -i Int_0^t exp(i(t-s) Lap) T(a,b,c)(s) ds``
  (the flow's own Duhamel integral, anchored at ``t = 0``), and
* the scattering-anchored operator
  ``N(a,b,c)(t) = +i Int_t^Tmax exp(i(t-s) Lap) T(a,b,c)(s) ds``
  (anchored at the horizon; the fixed-point operator of the wave-operator
  construction).

The coefficient equations have the same shape on either anchor; this module
solves the *initial-value* tower by default (``w_1(0) = v``, matching a
perturbation of the data), because the remainder verification compares
against direct evolutions from perturbed data.  The horizon-anchored
operator is exposed alongside for the scattering-side constructions.

Coefficient structure, with ``w_0 = u`` the base solution:

    w_1 = exp(it Lap) v + S D(w_0, w_0, w_1)
    w_N = sum_{j+k+l=N} D(w_j, w_k, w_l)          (N >= 2)

where ``S`` sums over the distinct slot-permutations of a multiset of
arguments (1, 3 or 6 summands).  Triples containing index ``N`` are linear
in the unknown and are treated as the Picard fixed-point part; the strictly
lower-index triples form the source.  At ``u0 = 0`` every even coefficient
vanishes and the fixed-point part disappears entirely.

All trajectories share one stored time grid on ``[0, T_max]``; the time
integrals are composite trapezoid sums over the stored nodes (no
re-solving inside the quadrature).  Scattering-side limits
``w_k^+ = lim exp(-it Lap) w_k(t)`` are extracted at the horizon with a
Richardson sharpening whose rate comes from the tail integrand
``t^{-2 gamma/(4-gamma)}``.

The module also houses the sequential Gronwall-type recursion
``a_N = C * sum_{j+k+l=N, j,k,l != N} a_j a_k a_l`` and verifies the
geometric majorant ``a_N <= C1 (C0 a1)^N`` in its strengthened
``<N>^2``-weighted form with the constants ``C2 = sum_k <k>^{-2}``,
``C1 = (9 C C2^2)^{-1/2}`` and ``C0 = 2/C1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .functionals import NormLedger, StrichartzExponents, spacetime_norm
from .propagator import PHYSICAL, SolverConfig, Trajectory, evolve
from .spectral_core import (
    POSITION,
    ComplexField,
    HartreeKernel,
    free_propagate,
    trilinear_T,
)

__all__ = [
    "GronwallSequence",
    "gronwall_sequence",
    "PicardReport",
    "PicardDivergence",
    "HierarchyCoefficients",
    "nonlinear_N",
    "duhamel_from_zero",
    "permutation_count",
    "symmetric_sum_N",
    "solve_w1",
    "solve_wN",
    "build_hierarchy",
    "extract_plus",
    "tail_rate",
    "verify_remainder",
    "RemainderRow",
]


# ---------------------------------------------------------------------------
# Gronwall recursion
# ---------------------------------------------------------------------------

def _angle_bracket_sq(k: np.ndarray | float):
    """<k>^2 = 1 + k^2."""
    return 1.0 + np.square(k)


#: C2 = sum_{k>=0} <k>^{-2} = 1 + (pi coth(pi) - 1)/2, in closed form.
GRONWALL_C2 = 1.0 + (math.pi / math.tanh(math.pi) - 1.0) / 2.0


@dataclass(frozen=True)
class GronwallSequence:
    """The recursion ``a_N = C sum_{j+k+l=N, all != N} a_j a_k a_l`` verified.

    ``a`` holds ``a_1 .. a_N``.  ``C1 = (9 C C2^2)^{-1/2}`` and
    ``C0 = 2/C1`` are the majorant constants (the base case
    ``<1>^2 a_1 <= C1 C0 a_1`` is then an equality, and ``C1 C0 = 2 >= 1``);
    ``C0_empirical`` is the smallest constant ``>= 1/C1`` for which the
    strengthened bound holds on the computed range.
    """

    C: float
    a1: float
    a: np.ndarray
    a0: float
    index_base: int
    C0: float
    C1: float
    C2: float
    C0_empirical: float
    plain_bound_holds: bool
    strengthened_bound_holds: bool

    def orders(self) -> np.ndarray:
        return np.arange(1, self.a.size + 1)

    def majorant(self, C0: float | None = None) -> np.ndarray:
        """``C1 (C0 a1)^N`` over the computed orders."""
        c0 = self.C0 if C0 is None else C0
        return self.C1 * (c0 * self.a1) ** self.orders().astype(float)

    def strengthened_margins(self) -> np.ndarray:
        """``C1 (C0 a1)^N / <N>^2 - a_N`` (nonnegative when the bound holds)."""
        return self.majorant() / _angle_bracket_sq(self.orders()) - self.a

    def growth_rates(self) -> np.ndarray:
        """``a_N^{1/N}`` wherever ``a_N > 0``, else 0."""
        orders = self.orders().astype(float)
        with np.errstate(divide="ignore"):
            return np.where(self.a > 0.0, self.a ** (1.0 / orders), 0.0)


def gronwall_sequence(C: float, a1: float, N: int, *, a0: float = 0.0,
                      index_base: int = 0) -> GronwallSequence:
    """Run the recursion to order ``N`` and verify the geometric majorants.

    ``index_base`` selects whether the index triples ``(j,k,l)`` range over
    nonnegative integers (0, with ``a_0 = a0``) or start at 1; with
    ``a0 = 0`` the two conventions generate identical sequences.
    """
    if not (C > 0.0 and a1 > 0.0):
        raise ValueError(f"C and a1 must be positive, got C={C}, a1={a1}")
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if index_base not in (0, 1):
        raise ValueError(f"index_base must be 0 or 1, got {index_base}")
    if index_base == 1 and a0 != 0.0:
        raise ValueError("a0 is meaningful only with index_base=0")
    if a0 < 0.0:
        raise ValueError(f"a0 must be nonnegative, got {a0}")

    full = np.zeros(N + 1)
    full[0] = a0
    if N >= 1:
        full[1] = a1
    for n in range(2, N + 1):
        prefix = full[:n]  # a_0 .. a_{n-1}: indices != n by construction
        pair = np.convolve(prefix, prefix)  # pair[m] = sum_{j+k=m} a_j a_k
        total = 0.0
        for ell in range(0, n):
            m = n - ell
            if m < pair.size:
                total += prefix[ell] * pair[m]
        full[n] = C * total

    a = full[1:]
    C2 = GRONWALL_C2
    C1 = (9.0 * C * C2**2) ** (-0.5)
    C0 = 2.0 / C1

    orders = np.arange(1, N + 1, dtype=float)
    weighted = _angle_bracket_sq(orders) * a
    majorant = C1 * (C0 * a1) ** orders
    strengthened = bool(np.all(weighted <= majorant * (1.0 + 1e-12)))
    plain = bool(np.all(a <= majorant * (1.0 + 1e-12)))

    # smallest admissible empirical C0 (>= 1/C1) on the computed range
    with np.errstate(divide="ignore"):
        needed = np.where(
            weighted > 0.0, (weighted / C1) ** (1.0 / orders) / a1, 0.0)
    C0_emp = max(float(np.max(needed, initial=0.0)), 1.0 / C1)

    return GronwallSequence(C, a1, a, a0, index_base, C0, C1, C2, C0_emp,
                            plain, strengthened)


# ---------------------------------------------------------------------------
# shared time-grid plumbing
# ---------------------------------------------------------------------------

def _require_shared_grid(trajs: Sequence[Trajectory]) -> Trajectory:
    first = trajs[0]
    for other in trajs[1:]:
        if other.grid != first.grid or other.times.shape != first.times.shape \
                or not np.array_equal(other.times, first.times):
            raise ValueError("trajectories must share one grid and time grid")
        if other.picture != PHYSICAL:
            raise ValueError("hierarchy operators expect physical-picture trajectories")
    if first.picture != PHYSICAL:
        raise ValueError("hierarchy operators expect physical-picture trajectories")
    times = first.times
    if times.size < 2 or times[0] != 0.0 or np.any(np.diff(times) <= 0.0):
        raise ValueError("hierarchy time grids must increase from t=0")
    return first


def tail_rate(gamma: float) -> float:
    """Decay exponent ``2 gamma / (4 - gamma)`` of the Duhamel tail integrand."""
    return 2.0 * gamma / (4.0 - gamma)


def _transported_integrands(term_lists, times) -> list[np.ndarray]:
    """Per-node ``exp(-i s Lap)`` transports of summed trilinear terms.

    ``term_lists[j]`` is the list of position-representation trilinear
    values at node ``j``; they are summed before the single transport.
    """
    out = []
    for s, terms in zip(times, term_lists):
        total = terms[0]
        for extra in terms[1:]:
            total = ComplexField(total.grid, total.values + extra.values,
                                 POSITION)
        out.append(free_propagate(total, -float(s)).values)
    return out


def _node_ledgers(times: np.ndarray, tail: float) -> tuple[NormLedger, ...]:
    return tuple(NormLedger(float(t), {"tail_estimate": tail}) for t in times)


def _cumulative_integral(integrands: list[np.ndarray], times: np.ndarray,
                         rule: str) -> np.ndarray:
    """Running integrals ``P_m = Int_0^{t_m}`` over the stored nodes.

    ``rule = "trapezoid"`` is the composite trapezoid sum; ``rule =
    "simpson"`` fits local parabolas through node triples (fourth-order in
    the node spacing, still using only the stored samples).  Fewer than
    three nodes always fall back to the trapezoid.
    """
    if rule not in ("trapezoid", "simpson"):
        raise ValueError(f"rule must be 'trapezoid' or 'simpson', got {rule!r}")
    stacked = np.stack(integrands)
    flat = stacked.reshape(stacked.shape[0], -1)
    if rule == "simpson" and times.size >= 3:
        from scipy.integrate import cumulative_simpson
        running_re = cumulative_simpson(flat.real, x=times, axis=0, initial=0.0)
        running_im = cumulative_simpson(flat.imag, x=times, axis=0, initial=0.0)
        running = running_re + 1j * running_im
    else:
        steps = np.diff(times)[:, None]
        cells = 0.5 * steps * (flat[:-1] + flat[1:])
        running = np.concatenate(
            [np.zeros((1, flat.shape[1]), dtype=complex),
             np.cumsum(cells, axis=0)])
    return running.reshape(stacked.shape)


def _assemble(anchor: str, integrands: list[np.ndarray], base: Trajectory,
              gamma: float, rule: str) -> tuple[Trajectory, float]:
    """Accumulate transported integrands into a Duhamel trajectory.

    ``anchor = "zero"`` builds ``-i exp(it Lap) Int_0^t``;
    ``anchor = "horizon"`` builds ``+i exp(it Lap) Int_t^Tmax`` and carries
    the analytic estimate of the discarded ``[Tmax, inf)`` tail.
    """
    times = base.times
    grid = base.grid
    n = times.size
    running = _cumulative_integral(integrands, times, rule)
    if anchor == "zero":
        partial = running
        sign = -1j
        tail = 0.0
    else:
        partial = running[-1][None, ...] - running
        sign = 1j
        p = tail_rate(gamma)
        t_last = float(times[-1])
        last_size = math.sqrt(float(np.sum(np.abs(integrands[-1]) ** 2))
                              * grid.cell_volume)
        tail = last_size * t_last / (p - 1.0)
    fields = []
    for m in range(n):
        profile = ComplexField(grid, sign * partial[m], POSITION)
        fields.append(free_propagate(profile, float(times[m])))
    traj = Trajectory(times, tuple(fields), PHYSICAL,
                      _node_ledgers(times, tail))
    return traj, tail


def nonlinear_N(a: Trajectory, b: Trajectory, c: Trajectory,
                K: HartreeKernel, *, tail_tol: float | None = None,
                dealias: bool = True, rule: str = "trapezoid") -> Trajectory:
    """Horizon-anchored integral ``+i Int_t^Tmax exp(i(t-s) Lap) T(a,b,c) ds``.

    Quadrature reuses the stored nodes (composite trapezoid by default;
    ``rule="simpson"`` upgrades to local parabolas).  The analytic estimate
    of the discarded tail beyond the horizon — last integrand norm times
    ``Int_Tmax^inf (s/Tmax)^{-p} ds`` with ``p = 2 gamma/(4-gamma)`` — is
    attached to each node's ledger under ``tail_estimate`` and, when
    ``tail_tol`` is given, enforced.
    """
    base = _require_shared_grid([a, b, c])
    if K.grid != base.grid:
        raise ValueError("kernel grid differs from the trajectories' grid")
    terms = [[trilinear_T(fa, fb, fc, K, dealias=dealias)]
             for fa, fb, fc in zip(a.fields, b.fields, c.fields)]
    integrands = _transported_integrands(terms, base.times)
    traj, tail = _assemble("horizon", integrands, base, K.gamma, rule)
    if tail_tol is not None and tail > tail_tol:
        raise ValueError(
            f"horizon too short: tail estimate {tail:.3e} exceeds {tail_tol:.3e}")
    return traj


def duhamel_from_zero(a: Trajectory, b: Trajectory, c: Trajectory,
                      K: HartreeKernel, *, dealias: bool = True,
                      rule: str = "trapezoid") -> Trajectory:
    """Initial-value integral ``-i Int_0^t exp(i(t-s) Lap) T(a,b,c) ds``."""
    base = _require_shared_grid([a, b, c])
    if K.grid != base.grid:
        raise ValueError("kernel grid differs from the trajectories' grid")
    terms = [[trilinear_T(fa, fb, fc, K, dealias=dealias)]
             for fa, fb, fc in zip(a.fields, b.fields, c.fields)]
    integrands = _transported_integrands(terms, base.times)
    return _assemble("zero", integrands, base, K.gamma, rule)[0]


def permutation_count(labels: tuple[int, int, int]) -> int:
    """Number of distinct slot-permutations of a 3-element multiset: 1, 3 or 6."""
    distinct = len(set(labels))
    return {1: 1, 2: 3, 3: 6}[distinct]


def _distinct_permutations(labels: tuple[int, int, int]):
    seen = []
    j, k, l = labels
    for perm in ((j, k, l), (j, l, k), (k, j, l), (k, l, j), (l, j, k), (l, k, j)):
        if perm not in seen:
            seen.append(perm)
    return seen


def symmetric_sum_N(resolve: Mapping[int, Trajectory],
                    labels: tuple[int, int, int], K: HartreeKernel, *,
                    anchor: str = "horizon", dealias: bool = True,
                    rule: str = "trapezoid") -> Trajectory:
    """Sum of the Duhamel integral over distinct slot-permutations of labels.

    ``resolve`` maps coefficient indices to their trajectories; a missing
    label raises.  The summand count is the multinomial number of distinct
    permutations (1, 3 or 6).  ``anchor`` picks the integral form: ``"zero"``
    for the initial-value operator, ``"horizon"`` for the horizon-anchored
    one.
    """
    if anchor not in ("zero", "horizon"):
        raise ValueError(f"anchor must be 'zero' or 'horizon', got {anchor!r}")
    try:
        trajs = {lab: resolve[lab] for lab in labels}
    except KeyError as missing:
        raise ValueError(f"unresolved coefficient label {missing}") from None
    base = _require_shared_grid([trajs[lab] for lab in labels])
    if K.grid != base.grid:
        raise ValueError("kernel grid differs from the trajectories' grid")
    perms = _distinct_permutations(labels)
    term_lists = []
    for node in range(base.times.size):
        terms = [trilinear_T(trajs[pa].fields[node], trajs[pb].fields[node],
                             trajs[pc].fields[node], K, dealias=dealias)
                 for pa, pb, pc in perms]
        term_lists.append(terms)
    integrands = _transported_integrands(term_lists, base.times)
    return _assemble(anchor, integrands, base, K.gamma, rule)[0]


# ---------------------------------------------------------------------------
# Picard solves for the coefficients
# ---------------------------------------------------------------------------

class PicardDivergence(RuntimeError):
    """Picard iteration failed to contract."""


@dataclass(frozen=True)
class PicardReport:
    """Iteration diagnostics: count, final update size, contraction factor.

    ``contraction`` is the last measured ratio of successive update sizes
    (NaN when fewer than two corrections were needed).
    """

    iterations: int
    final_delta: float
    contraction: float


def _sup_l2_diff(a: Trajectory, b: Trajectory) -> float:
    worst = 0.0
    for fa, fb in zip(a.fields, b.fields):
        delta = math.sqrt(float(np.sum(np.abs(fa.values - fb.values) ** 2))
                          * fa.grid.cell_volume)
        worst = max(worst, delta)
    return worst


def _free_trajectory(v: ComplexField, times: np.ndarray) -> Trajectory:
    fields = tuple(free_propagate(v, float(t)) for t in times)
    return Trajectory(times, fields, PHYSICAL, None)


def _add_trajectories(a: Trajectory, b: Trajectory) -> Trajectory:
    fields = tuple(ComplexField(fa.grid, fa.values + fb.values, POSITION)
                   for fa, fb in zip(a.fields, b.fields))
    return Trajectory(a.times, fields, PHYSICAL, None)


def _picard_linear(source: Trajectory, apply_linear, tol: float,
                   max_iter: int) -> tuple[Trajectory, PicardReport]:
    """Solve ``w = source + L[w]`` by iteration from ``w = source``."""
    current = source
    previous_delta = math.inf
    contraction = math.nan
    for iteration in range(1, max_iter + 1):
        correction = apply_linear(current)
        updated = _add_trajectories(source, correction)
        delta = _sup_l2_diff(updated, current)
        if math.isfinite(previous_delta) and previous_delta > 0.0:
            contraction = delta / previous_delta
        current = updated
        if delta < tol:
            return current, PicardReport(iteration, delta, contraction)
        if math.isfinite(previous_delta) and delta >= previous_delta:
            raise PicardDivergence(
                f"Picard update grew from {previous_delta:.3e} to {delta:.3e} "
                f"(contraction factor {delta / previous_delta:.3f})")
        previous_delta = delta
    raise PicardDivergence(
        f"no convergence after {max_iter} iterations (last update "
        f"{previous_delta:.3e})")


def solve_w1(u_traj: Trajectory, v: ComplexField, K: HartreeKernel, *,
             anchor: str = "zero", tol: float = 1e-8, max_iter: int = 40,
             rule: str = "trapezoid") -> tuple[Trajectory, PicardReport]:
    """First coefficient: ``w_1 = exp(it Lap) v + S D(u, u, w_1)``.

    Linear in ``v``; solved by Picard iteration to ``tol`` in the
    sup-in-time L2 metric.  With ``u = 0`` the integral term vanishes and
    the free flow of ``v`` is returned after one verification pass.
    """
    _require_shared_grid([u_traj])
    if v.grid != u_traj.grid or v.representation != POSITION:
        raise ValueError("v must be a position field on the trajectory grid")
    source = _free_trajectory(v, u_traj.times)

    def apply_linear(w: Trajectory) -> Trajectory:
        return symmetric_sum_N({0: u_traj, 1: w}, (0, 0, 1), K, anchor=anchor,
                               rule=rule)

    return _picard_linear(source, apply_linear, tol, max_iter)


def solve_wN(w_lower: Mapping[int, Trajectory], N: int, K: HartreeKernel, *,
             anchor: str = "zero", tol: float = 1e-8, max_iter: int = 40,
             rule: str = "trapezoid") -> tuple[Trajectory, PicardReport]:
    """Coefficient ``N >= 2``: lower-index triples source a linear fixed point.

    ``w_lower`` must contain indices ``0 .. N-1`` (0 is the base solution).
    Index triples summing to ``N`` with all parts ``< N`` form the source;
    the triples ``{0, 0, N}`` are linear in the unknown and drive the
    Picard part (they vanish when the base solution is zero, collapsing
    the solve to a single assembly).
    """
    if N < 2:
        raise ValueError(f"solve_wN handles N >= 2, got {N}")
    missing = [k for k in range(N) if k not in w_lower]
    if missing:
        raise ValueError(f"missing lower coefficients {missing}")
    base = _require_shared_grid([w_lower[k] for k in range(N)])

    source: Trajectory | None = None
    for j in range(0, N + 1):
        for k in range(j, N + 1):
            l = N - j - k
            if l < k or l > N - 1 or j > N - 1 or k > N - 1:
                continue
            term = symmetric_sum_N(w_lower, (j, k, l), K, anchor=anchor,
                                   rule=rule)
            source = term if source is None else _add_trajectories(source, term)
    if source is None:  # no admissible lower triple (never for N >= 2)
        source = _free_trajectory(
            ComplexField(base.grid, np.zeros(base.grid.shape, complex),
                         POSITION), base.times)

    base_zero = all(float(np.max(np.abs(f.values))) == 0.0
                    for f in w_lower[0].fields)
    if base_zero:
        return source, PicardReport(0, 0.0, math.nan)

    def apply_linear(w: Trajectory) -> Trajectory:
        return symmetric_sum_N({0: w_lower[0], N: w}, (0, 0, N), K,
                               anchor=anchor, rule=rule)

    return _picard_linear(source, apply_linear, tol, max_iter)


# ---------------------------------------------------------------------------
# scattering-side limits
# ---------------------------------------------------------------------------

def extract_plus(wk: Trajectory, gamma: float, *, extrapolate: bool = True,
                 cauchy_check: bool = True) -> ComplexField:
    """Limit ``w_k^+ = lim exp(-it Lap) w_k(t)``, extracted at the horizon.

    The interaction profile at the last stored time ``T`` is sharpened by a
    two-point Richardson step against the profile near ``T/2``, using the
    tail model ``profile(t) = limit - c t^{-beta}``.  The rate ``beta`` is
    measured from the stored increments near ``T/4 -> T/2 -> T`` (smooth
    localized data decays faster than the worst admissible rate, and an
    underestimated ``beta`` would over-amplify the correction); when no
    reliable measurement is possible the analytic floor
    ``2 gamma/(4-gamma) - 1`` is used.  A Cauchy check verifies that the
    profile increments shrink as the horizon grows; failure raises.
    """
    times = wk.times
    if times.size < 3:
        raise ValueError("extract_plus needs at least three stored samples")
    if wk.picture != PHYSICAL:
        raise ValueError("extract_plus expects a physical-picture trajectory")

    def profile(idx: int) -> np.ndarray:
        t = float(times[idx])
        return free_propagate(wk.fields[idx], -t).values

    last = times.size - 1
    t_last = float(times[last])
    mid = int(np.argmin(np.abs(times - 0.5 * t_last)))
    quarter = int(np.argmin(np.abs(times - 0.25 * t_last)))
    p_last = profile(last)
    p_mid = profile(mid)
    delta_late = float(np.linalg.norm(p_last - p_mid))
    # increments at or below rounding scale carry no tail information
    noise_floor = 1e-13 * max(1.0, float(np.linalg.norm(p_last)))
    delta_early = math.nan
    if quarter > 0 and quarter != mid and mid != last:
        p_quarter = profile(quarter)
        delta_early = float(np.linalg.norm(p_mid - p_quarter))
        if cauchy_check and delta_late > delta_early and delta_late > noise_floor:
            raise ValueError(
                "non-Cauchy tail: profile increments grow with the horizon "
                f"({delta_early:.3e} -> {delta_late:.3e})")
    if not extrapolate or delta_late <= noise_floor or mid == last:
        return ComplexField(wk.grid, p_last, POSITION)
    t1, t2 = t_last, float(times[mid])
    if t2 <= 0.0:
        return ComplexField(wk.grid, p_last, POSITION)
    beta = tail_rate(gamma) - 1.0
    if math.isfinite(delta_early) and delta_early > 0.0 \
            and delta_late < delta_early:
        measured = math.log(delta_early / delta_late) / math.log(t1 / t2)
        beta = max(beta, measured)
    wa, wb = t1**beta, t2**beta
    limit = (p_last * wa - p_mid * wb) / (wa - wb)
    return ComplexField(wk.grid, limit, POSITION)


# ---------------------------------------------------------------------------
# hierarchy bundle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HierarchyCoefficients:
    """Computed tower ``w_0 .. w_order`` with scattering limits and ledgers.

    ``w[0]`` is the base solution trajectory; ``w_plus[k]`` is the
    horizon-extracted limit of ``w[k]`` (``w_plus[0]`` being the base
    scattering state).  ``ledger[k]`` records sup-in-time L2 and the
    canonical mixed spacetime norm of ``w[k]``; ``Lambda_fit`` is the
    least-squares geometric rate of the coefficient norms over
    ``k = 1 .. order``.  ``extraction[k]`` records whether the limit was
    Richardson-sharpened (``"richardson"``) or is the plain horizon value
    (``"truncation"``, used when the stored tail is still pre-asymptotic
    and fails the Cauchy test).
    """

    order: int
    w: tuple[Trajectory, ...]
    w_plus: tuple[ComplexField, ...]
    ledger: tuple[NormLedger, ...]
    Lambda_fit: float
    reports: tuple[PicardReport, ...]
    extraction: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.order < 1 or len(self.w) != self.order + 1:
            raise ValueError("coefficient count must be order + 1")
        if len(self.w_plus) != len(self.w) or len(self.ledger) != len(self.w):
            raise ValueError("w_plus and ledger must align with w")
        if len(self.extraction) != len(self.w) or \
                any(mode not in ("richardson", "truncation")
                    for mode in self.extraction):
            raise ValueError("extraction must mark each coefficient as "
                             "'richardson' or 'truncation'")
        for led in self.ledger:
            if any(val < 0.0 for val in led.values.values()):
                raise ValueError("ledger values must be nonnegative")


def _coefficient_ledger(traj: Trajectory, exps: StrichartzExponents,
                        k: int) -> NormLedger:
    sup_l2 = max(math.sqrt(float(np.sum(np.abs(f.values) ** 2))
                           * f.grid.cell_volume) for f in traj.fields)
    mixed = spacetime_norm(traj, exps.alpha, exps.r)
    return NormLedger(float(k), {
        "sup_L2": sup_l2,
        f"spacetime-{exps.alpha:g}-{exps.r:g}": mixed,
        "Y": sup_l2 + mixed,
    })


def fit_geometric_rate(norms: Sequence[float]) -> float:
    """Least-squares geometric rate of ``norms[k-1] ~ Lambda^k``."""
    ks = np.arange(1, len(norms) + 1, dtype=float)
    vals = np.asarray(norms, dtype=float)
    keep = vals > 0.0
    if int(np.sum(keep)) < 2:
        return 0.0
    slope = np.polyfit(ks[keep], np.log(vals[keep]), 1)[0]
    return float(np.exp(slope))


def build_hierarchy(u0: ComplexField, v: ComplexField, K: HartreeKernel,
                    cfg: SolverConfig, order: int, *, anchor: str = "zero",
                    tol: float = 1e-8,
                    rule: str = "trapezoid") -> HierarchyCoefficients:
    """Evolve the base datum and solve the coefficient tower to ``order``."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    base = evolve(u0, cfg, K)
    exps = StrichartzExponents(K.gamma, u0.grid.d)
    w: dict[int, Trajectory] = {0: base}
    reports: list[PicardReport] = []
    w1, report = solve_w1(base, v, K, anchor=anchor, tol=tol, rule=rule)
    w[1] = w1
    reports.append(report)
    for N in range(2, order + 1):
        wN, report = solve_wN(w, N, K, anchor=anchor, tol=tol, rule=rule)
        w[N] = wN
        reports.append(report)
    w_tuple = tuple(w[k] for k in range(order + 1))
    w_plus: list[ComplexField] = []
    extraction: list[str] = []
    for k in range(order + 1):
        try:
            w_plus.append(extract_plus(w[k], K.gamma))
            extraction.append("richardson")
        except ValueError:
            w_plus.append(extract_plus(w[k], K.gamma, extrapolate=False,
                                       cauchy_check=False))
            extraction.append("truncation")
    ledgers = tuple(_coefficient_ledger(w[k], exps, k)
                    for k in range(order + 1))
    lam = fit_geometric_rate([led["Y"] for led in ledgers[1:]])
    return HierarchyCoefficients(order, w_tuple, tuple(w_plus), ledgers, lam,
                                 tuple(reports), tuple(extraction))


# ---------------------------------------------------------------------------
# remainder verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RemainderRow:
    """One remainder measurement: ``R_N(eps)`` and the step ratio.

    ``ratio`` is ``R_N / R_{N-1}`` (NaN at the first order).
    """

    eps: float
    N: int
    R: float
    ratio: float


def verify_remainder(u0: ComplexField, v: ComplexField,
                     eps_list: Sequence[float], K: HartreeKernel,
                     cfg: SolverConfig, N_max: int, *,
                     coeffs: HierarchyCoefficients | None = None,
                     anchor: str = "zero",
                     rule: str = "trapezoid") -> tuple[RemainderRow, ...]:
    """Measure ``R_N(eps) = sup_t ||u^eps - u - sum_{k<=N} eps^k w_k||_2``.

    ``u^eps`` is evolved directly from the perturbed datum ``u0 + eps v``
    on the same configuration; the coefficients come from the hierarchy
    solves (passed in, or built here to order ``N_max``).  Requires every
    ``eps * Lambda_fit < 1`` (inside the fitted convergence radius).
    """
    if N_max < 1:
        raise ValueError(f"N_max must be >= 1, got {N_max}")
    if coeffs is None or coeffs.order < N_max:
        coeffs = build_hierarchy(u0, v, K, cfg, N_max, anchor=anchor,
                                 rule=rule)
    lam = coeffs.Lambda_fit
    for eps in eps_list:
        if eps < 0.0 or (lam > 0.0 and eps * lam >= 1.0):
            raise ValueError(
                f"eps={eps} is outside the fitted convergence radius "
                f"1/Lambda_fit={(1.0 / lam) if lam > 0 else math.inf:.3g}")
    base = coeffs.w[0]
    rows: list[RemainderRow] = []
    for eps in eps_list:
        data = ComplexField(u0.grid, u0.values + eps * v.values, POSITION)
        direct = evolve(data, cfg, K)
        partial = [f.values.copy() for f in base.fields]
        previous_R = math.nan
        for N in range(1, N_max + 1):
            scale = eps**N
            for node, f in enumerate(coeffs.w[N].fields):
                partial[node] = partial[node] + scale * f.values
            worst = 0.0
            for node, f in enumerate(direct.fields):
                diff = f.values - partial[node]
                worst = max(worst, math.sqrt(
                    float(np.sum(np.abs(diff) ** 2)) * u0.grid.cell_volume))
            ratio = worst / previous_R if previous_R and \
                math.isfinite(previous_R) and previous_R > 0.0 else math.nan
            rows.append(RemainderRow(float(eps), N, worst, ratio))
            previous_R = worst
    return tuple(rows)
