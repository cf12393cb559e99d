"""Spectral grid, field, and Riesz-kernel primitives.

Everything downstream (time stepping, scattering operators, perturbation
hierarchies, scaling experiments) is built on the three types defined here: a
periodic ``Grid``, a ``ComplexField`` sampled on it in either position or
frequency representation, and a ``HartreeKernel`` holding the Fourier
multiplier of the attractive-free Riesz potential ``|x|**(-gamma)``.

Conventions
-----------
* Position nodes ``x_j = -L + j*dx`` with ``dx = 2L/n`` (monotone order).
* Frequency nodes ``xi_k = pi*k/L`` with ``k`` in FFT order (0, 1, ..., -1).
* Continuum transform pair ``u_hat(xi) = \\int u(x) exp(-i xi.x) dx`` and its
  ``(2 pi)^{-d}`` inverse.  On the grid
  ``u_hat(xi_k) = dx^d * (-1)^{k_1+...+k_d} * FFT[u]_k`` which makes the
  discrete Plancherel identity exact:
  ``sum |u|^2 dx^d = (2 pi)^{-d} sum |u_hat|^2 dxi^d``.
* Multiplier operators never need the ``(-1)^k`` phases (they cancel), so
  ``ifftn(m * fftn(u))`` applies ``m(xi)`` directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn

__all__ = [
    "Grid",
    "ComplexField",
    "HartreeKernel",
    "make_grid",
    "dual_grid",
    "make_kernel",
    "zero_kernel",
    "riesz_constant",
    "transform",
    "free_propagate",
    "spectral_derivative",
    "hartree_potential",
    "trilinear_T",
    "apply_J",
    "mass_outside_radius",
    "sample_interpolant",
]

POSITION = "position"
FREQUENCY = "frequency"


# --------------------------------------------------------------------------
# grid
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [-L, L)^d.

    Parameters
    ----------
    d : int
        Spatial dimension, 1 or 2.
    n : int
        Points per axis; a power of two, at least 16.
    L : float
        Half box length.  Position nodes are ``-L + j*dx``, ``dx = 2L/n``.

    Derived arrays (meshes, |xi|^2, the 2/3-rule mask) are cached lazily so
    that large grids only pay for what they use.
    """

    d: int
    n: int
    L: float

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def dxi(self) -> float:
        return np.pi / self.L

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.dx**self.d

    @cached_property
    def x1d(self) -> np.ndarray:
        """Per-axis position nodes, monotone."""
        return -self.L + self.dx * np.arange(self.n)

    @cached_property
    def xi1d(self) -> np.ndarray:
        """Per-axis frequency nodes, FFT order."""
        return 2.0 * np.pi * sfft.fftfreq(self.n, d=self.dx)

    @cached_property
    def x_mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.x1d] * self.d), indexing="ij"))

    @cached_property
    def xi_mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.xi1d] * self.d), indexing="ij"))

    @cached_property
    def r_squared(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for ax in self.x_mesh:
            out += ax**2
        return out

    @cached_property
    def xi_squared(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for ax in self.xi_mesh:
            out += ax**2
        return out

    @cached_property
    def alternating_phase(self) -> np.ndarray:
        """(-1)^(k_1+...+k_d) in FFT order; the transform's center phase."""
        k = (sfft.fftfreq(self.n, d=1.0 / self.n)).astype(int)
        sign1d = np.where(k % 2 == 0, 1.0, -1.0)
        out = sign1d
        for _ in range(self.d - 1):
            out = np.multiply.outer(out, sign1d)
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Boolean 2/3-rule mask: keep |k| <= n//3 per axis."""
        k = np.abs(sfft.fftfreq(self.n, d=1.0 / self.n).astype(int))
        keep1d = k <= self.n // 3
        out = keep1d
        for _ in range(self.d - 1):
            out = np.multiply.outer(out, keep1d)
        return out


def make_grid(d: int, n: int, L: float) -> Grid:
    """Validated Grid constructor; rejects d not in {1, 2} and non-powers of two."""
    if d not in (1, 2):
        raise ValueError(f"d must be 1 or 2, got {d}")
    if n < 16 or (n & (n - 1)) != 0:
        raise ValueError(f"n must be a power of two >= 16, got {n}")
    if not (L > 0):
        raise ValueError(f"L must be positive, got {L}")
    return Grid(d=d, n=int(n), L=float(L))


def dual_grid(grid: Grid) -> Grid:
    """The frequency lattice of ``grid`` seen as a position grid.

    Spacing pi/L and half-extent pi/dx, so monotone-ordered frequency samples
    of a field live exactly on the dual grid's position nodes.  Used by the
    pseudoconformal representation of the free flow at large times.
    """
    return Grid(d=grid.d, n=grid.n, L=np.pi / grid.dx)


# --------------------------------------------------------------------------
# fields
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ComplexField:
    """Complex samples on a Grid, tagged position or frequency.

    Values are stored read-only; arithmetic returns new fields.  Position
    values are ``u(x_j)`` in monotone node order; frequency values are the
    continuum-normalized ``u_hat(xi_k)`` in FFT order.
    """

    grid: Grid
    values: np.ndarray
    representation: str = POSITION

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape != self.grid.shape:
            raise ValueError(
                f"values shape {vals.shape} does not match grid shape {self.grid.shape}"
            )
        if self.representation not in (POSITION, FREQUENCY):
            raise ValueError(f"unknown representation {self.representation!r}")
        if vals is self.values and vals.flags.writeable:
            vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    # small arithmetic surface; everything checks grid/representation match
    def _check_compatible(self, other: "ComplexField") -> None:
        if self.grid != other.grid or self.representation != other.representation:
            raise ValueError("fields live on different grids or representations")

    def __add__(self, other: "ComplexField") -> "ComplexField":
        self._check_compatible(other)
        return ComplexField(self.grid, self.values + other.values, self.representation)

    def __sub__(self, other: "ComplexField") -> "ComplexField":
        self._check_compatible(other)
        return ComplexField(self.grid, self.values - other.values, self.representation)

    def __mul__(self, scalar: complex) -> "ComplexField":
        return ComplexField(self.grid, self.values * scalar, self.representation)

    __rmul__ = __mul__

    def __neg__(self) -> "ComplexField":
        return ComplexField(self.grid, -self.values, self.representation)

    def l2(self) -> float:
        """L^2 norm with the representation's natural measure."""
        if self.representation == POSITION:
            w = self.grid.cell_volume
        else:
            w = (self.grid.dxi / (2.0 * np.pi)) ** self.grid.d
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * w))


def transform(u: ComplexField) -> ComplexField:
    """Unitary-up-to-measure change of representation (exact inverse pair).

    position -> frequency:  u_hat(xi_k) = dx^d (-1)^{sum k} FFT[u]
    frequency -> position:  u(x_j) = dx^{-d} IFFT[(-1)^{sum k} u_hat]
    """
    g = u.grid
    phase = g.alternating_phase
    if u.representation == POSITION:
        vals = g.cell_volume * phase * sfft.fftn(u.values, workers=-1)
        return ComplexField(g, vals, FREQUENCY)
    vals = sfft.ifftn(phase * u.values, workers=-1) / g.cell_volume
    return ComplexField(g, vals, POSITION)


def free_propagate(u: ComplexField, t: float) -> ComplexField:
    """exp(i t Laplacian) via the unimodular multiplier exp(-i |xi|^2 t)."""
    if u.representation != POSITION:
        raise ValueError("free_propagate expects a position-representation field")
    if t == 0.0:
        return u
    g = u.grid
    mult = np.exp(-1j * g.xi_squared * t)
    vals = sfft.ifftn(mult * sfft.fftn(u.values, workers=-1), workers=-1)
    return ComplexField(g, vals, POSITION)


def spectral_derivative(u: ComplexField, axis: int) -> ComplexField:
    """d/dx_axis by the i*xi multiplier."""
    if u.representation != POSITION:
        raise ValueError("spectral_derivative expects a position-representation field")
    g = u.grid
    mult = 1j * g.xi_mesh[axis]
    vals = sfft.ifftn(mult * sfft.fftn(u.values, workers=-1), workers=-1)
    return ComplexField(g, vals, POSITION)


# --------------------------------------------------------------------------
# Riesz kernel
# --------------------------------------------------------------------------

def riesz_constant(d: int, gamma: float) -> float:
    """c_{d,gamma} with FT[|x|^{-gamma}](xi) = c_{d,gamma} |xi|^{gamma-d}."""
    return float(
        2.0 ** (d - gamma)
        * np.pi ** (d / 2.0)
        * gamma_fn((d - gamma) / 2.0)
        / gamma_fn(gamma / 2.0)
    )


@lru_cache(maxsize=None)
def _square_angular_integral(p: float) -> float:
    """8 * int_0^{pi/4} cos(theta)^p dtheta — the angular factor of integrals
    of |xi|^{p'} over centered squares (by symmetry of the eight octants)."""
    val, _ = quad(lambda th: np.cos(th) ** p, 0.0, np.pi / 4.0)
    return 8.0 * val


@dataclass(frozen=True)
class HartreeKernel:
    """Fourier multiplier of the Riesz potential on a fixed grid.

    The multiplier samples the continuum symbol c_{d,gamma} |xi|^{gamma-d},
    which is singular (for gamma < d) at xi = 0; the zero mode is replaced
    according to ``zero_mode_policy``:

    * ``cell_average`` — mean of the symbol over the zero frequency cell
      [-dxi/2, dxi/2]^d (closed form in the angular integral).  Scales exactly
      under grid homothety, which the scaling experiments rely on.
    * ``truncated_direct`` — integral of |x|^{-gamma} over the position box
      [-L, L]^d, i.e. the zeroth Fourier coefficient of the truncated kernel.
      Kept as an independent cross-check; the two policies differ only by a
      constant shift of the potential.
    """

    grid: Grid
    gamma: float
    zero_mode_policy: str
    multiplier: np.ndarray

    def __post_init__(self) -> None:
        mult = np.asarray(self.multiplier, dtype=np.float64)
        if mult is self.multiplier and mult.flags.writeable:
            mult = mult.copy()
        mult.flags.writeable = False
        object.__setattr__(self, "multiplier", mult)


def _zero_mode(grid: Grid, gamma: float, policy: str) -> float:
    c = riesz_constant(grid.d, gamma)
    if policy == "cell_average":
        h = grid.dxi / 2.0
        if grid.d == 1:
            # (1/dxi) * int_{-h}^{h} c |xi|^{gamma-1} dxi
            return c * 2.0 ** (1.0 - gamma) * grid.dxi ** (gamma - 1.0) / gamma
        # mean over the square cell: (c / (4 h^2)) * (h^gamma/gamma) * angular
        return c * h ** (gamma - 2.0) / (4.0 * gamma) * _square_angular_integral(-gamma)
    if policy == "truncated_direct":
        L = grid.L
        if grid.d == 1:
            return 2.0 * L ** (1.0 - gamma) / (1.0 - gamma)
        # int over [-L,L]^2 of |x|^{-gamma}
        return L ** (2.0 - gamma) / (2.0 - gamma) * _square_angular_integral(gamma - 2.0)
    raise ValueError(f"unknown zero_mode_policy {policy!r}")


def make_kernel(grid: Grid, gamma: float, zero_mode_policy: str = "cell_average") -> HartreeKernel:
    """Riesz multiplier on ``grid``; validates the admissible gamma window."""
    if not (4.0 / 3.0 < gamma < 2.0):
        raise ValueError(f"gamma must lie in (4/3, 2), got {gamma}")
    if not (gamma < grid.d):
        raise ValueError(
            f"gamma must be smaller than the dimension for the Riesz symbol "
            f"(gamma={gamma}, d={grid.d})"
        )
    c = riesz_constant(grid.d, gamma)
    with np.errstate(divide="ignore"):
        mult = c * np.where(grid.xi_squared > 0.0, grid.xi_squared, 1.0) ** ((gamma - grid.d) / 2.0)
    mult.flat[0] = _zero_mode(grid, gamma, zero_mode_policy)
    return HartreeKernel(grid=grid, gamma=gamma, zero_mode_policy=zero_mode_policy, multiplier=mult)


def zero_kernel(grid: Grid, gamma: float = 1.5) -> HartreeKernel:
    """Vanishing multiplier; turns the evolution into the free flow."""
    return HartreeKernel(grid=grid, gamma=gamma, zero_mode_policy="zero",
                         multiplier=np.zeros(grid.shape))


# --------------------------------------------------------------------------
# nonlinear building blocks
# --------------------------------------------------------------------------

def _dealias(grid: Grid, values: np.ndarray) -> np.ndarray:
    return sfft.ifftn(grid.dealias_mask * sfft.fftn(values, workers=-1), workers=-1)


def hartree_potential(a: ComplexField, b: ComplexField, K: HartreeKernel,
                      dealias: bool = True) -> ComplexField:
    """K * (a conj(b)) as a frequency-domain multiplier product.

    The bilinear density a*conj(b) is 2/3-dealiased before the kernel
    multiply (quadratic product on a periodic grid).  For a == b the result
    is real up to rounding and nonnegative up to discretization.
    """
    if a.grid != b.grid or a.grid != K.grid:
        raise ValueError("fields and kernel must share one grid")
    if a.representation != POSITION or b.representation != POSITION:
        raise ValueError("hartree_potential expects position-representation fields")
    dens = a.values * np.conj(b.values)
    spec = sfft.fftn(dens, workers=-1)
    if dealias:
        spec = spec * a.grid.dealias_mask
    vals = sfft.ifftn(K.multiplier * spec, workers=-1)
    return ComplexField(a.grid, vals, POSITION)


def trilinear_T(u: ComplexField, v: ComplexField, w: ComplexField, K: HartreeKernel,
                dealias: bool = True) -> ComplexField:
    """T(u, v, w) = (K * (u conj(v))) w, with the final product dealiased too."""
    V = hartree_potential(u, v, K, dealias=dealias)
    prod = V.values * w.values
    if dealias:
        prod = _dealias(u.grid, prod)
    return ComplexField(u.grid, prod, POSITION)


def apply_J(f: ComplexField, t: float, axis: int = 0, form: str = "flow") -> ComplexField:
    """Galilean vector field J(t) = x + 2 i t grad, one axis at a time.

    form="flow" uses the conjugation by the free flow,
        J(t) f = exp(itL) [ x (exp(-itL) f) ],
    which is the primary definition here; form="gauge" uses the chirp
    factorization  J(t) = M(t) (2 i t grad) M(-t)  with M(t) = exp(i|x|^2/4t).
    Both reduce to multiplication by x at t = 0.
    """
    g = f.grid
    x = g.x_mesh[axis]
    if t == 0.0:
        return ComplexField(g, x * f.values, POSITION)
    if form == "flow":
        back = free_propagate(f, -t)
        return free_propagate(ComplexField(g, x * back.values, POSITION), t)
    if form == "gauge":
        chirp = np.exp(1j * g.r_squared / (4.0 * t))
        inner = ComplexField(g, f.values / chirp, POSITION)
        dg = spectral_derivative(inner, axis)
        return ComplexField(g, chirp * (2j * t) * dg.values, POSITION)
    raise ValueError(f"unknown form {form!r}")


def mass_outside_radius(u: ComplexField, radius: float) -> float:
    """Fraction of the total mass at nodes with |x| > radius (wrap monitor)."""
    if u.representation != POSITION:
        raise ValueError("mass_outside_radius expects a position-representation field")
    dens = np.abs(u.values) ** 2
    total = float(np.sum(dens))
    if total == 0.0:
        return 0.0
    outside = float(np.sum(dens[u.grid.r_squared > radius**2]))
    return outside / total


def sample_interpolant(u: ComplexField, coords: tuple[np.ndarray, ...]) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``u`` on a tensor grid.

    ``coords`` holds one 1-d array of target coordinates per axis; the
    interpolant is evaluated on their tensor product (separable, one
    Vandermonde factor per axis).  Exact for band-limited fields; used for
    off-lattice resampling such as the dilation x -> x/sigma.
    """
    if u.representation != POSITION:
        raise ValueError("sample_interpolant expects a position-representation field")
    g = u.grid
    if len(coords) != g.d:
        raise ValueError(f"need {g.d} coordinate arrays, got {len(coords)}")
    coeff = sfft.fftn(u.values, workers=-1) / g.n**g.d
    # The interpolant sum_k c_k exp(i xi_k (x + L)) reproduces u at the nodes;
    # fold the -L origin shift into the evaluation points.
    mats = [np.exp(1j * np.outer(np.asarray(pts) + g.L, g.xi1d)) for pts in coords]
    if g.d == 1:
        return mats[0] @ coeff
    return mats[0] @ coeff @ mats[1].T
