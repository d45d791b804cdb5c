"""Macroscopic flying-body collapse basis: vee-potential wavepackets in SI.

This module works in SI units, unlike the spin modules.  The collapse
operator for a rigid body pushed around by a line density of ambient
molecules reduces, near its minimum, to a kinetic term plus a vee potential
``slope * |x - x0|``.  Its ground state is a shifted Airy function:

    psi0(x) = exp(i p0 x / hbar) * Ai(|zeta| - E0),   zeta = (x - x0) / s

with ``s = (2 b)^(-1/3)`` and ``E0`` the negated first zero of Ai'.  In the
``zeta`` frame the eigenproblem is ``-chi'' + |zeta| chi = E chi``, which is
well conditioned regardless of how extreme the SI scales are; everything
physical is recovered by back-scaling.

The Airy function itself is evaluated from scratch: the Maclaurin pair for
small arguments, the same pair summed in double-double arithmetic in the
band where plain doubles lose the cancellation, and the standard
asymptotic expansions beyond.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize
from scipy.linalg import solve_banded

HBAR = 1.054571817e-34  # J s
C_LIGHT = 2.99792458e8  # m / s

# hi/lo double-double splits of Ai(0) = 3^(-2/3)/Gamma(2/3) and
# -Ai'(0) = 3^(-1/3)/Gamma(1/3)
_C1_HI, _C1_LO = 0.3550280538878172, 2.05233632436212e-17
_C2_HI, _C2_LO = 0.2588194037928068, -2.522243111610832e-17

_SERIES_CUT = 4.5  # plain doubles keep ~1e-11 relative accuracy below this
_ASYMPTOTIC_CUT = 7.5  # asymptotic truncation error ~e^(-2 zeta) < 1e-11 beyond

_EDGE_AMPLITUDE = 1e-12


# ---------------------------------------------------------------------------
# double-double helpers (vectorized; arrays of hi/lo parts)
# ---------------------------------------------------------------------------

_SPLITTER = 134217729.0  # 2^27 + 1


def _two_sum(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


def _quick_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


def _two_prod(a, b):
    p = a * b
    ta = _SPLITTER * a
    ahi = ta - (ta - a)
    alo = a - ahi
    tb = _SPLITTER * b
    bhi = tb - (tb - b)
    blo = b - bhi
    err = ((ahi * bhi - p) + ahi * blo + alo * bhi) + alo * blo
    return p, err


def _dd_add(xh, xl, yh, yl):
    s, e = _two_sum(xh, yh)
    e = e + xl + yl
    return _quick_two_sum(s, e)


def _dd_mul(xh, xl, yh, yl):
    p, e = _two_prod(xh, yh)
    e = e + xh * yl + xl * yh
    return _quick_two_sum(p, e)


def _dd_div_scalar(xh, xl, y):
    q1 = xh / y
    p, e = _two_prod(q1, y)
    rh, rl = _dd_add(xh, xl, -p, -e)
    return _quick_two_sum(q1, (rh + rl) / y)


# ---------------------------------------------------------------------------
# Airy function
# ---------------------------------------------------------------------------


def _maclaurin_double(x: np.ndarray) -> np.ndarray:
    """c1 f(x) - c2 g(x) in plain doubles; adequate for |x| <= 4.5."""
    x3 = x**3
    f = np.ones_like(x)
    tf = np.ones_like(x)
    g = x.copy()
    tg = x.copy()
    for k in range(48):
        tf = tf * x3 / ((3 * k + 2) * (3 * k + 3))
        f = f + tf
        tg = tg * x3 / ((3 * k + 3) * (3 * k + 4))
        g = g + tg
    return _C1_HI * f - _C2_HI * g


def _maclaurin_dd(x: np.ndarray) -> np.ndarray:
    """Same series summed in double-double; the two exponentially growing
    halves cancel to an exponentially small value, so the working precision
    has to carry the headroom."""
    x3h, x3l = _two_prod(x, x)
    x3h, x3l = _dd_mul(x3h, x3l, x, np.zeros_like(x))
    zeros = np.zeros_like(x)

    fh, fl = np.full_like(x, _C1_HI), np.full_like(x, _C1_LO)
    tfh, tfl = fh.copy(), fl.copy()
    gh, gl = _dd_mul(np.full_like(x, _C2_HI), np.full_like(x, _C2_LO), x, zeros)
    tgh, tgl = gh.copy(), gl.copy()
    for k in range(80):
        tfh, tfl = _dd_mul(tfh, tfl, x3h, x3l)
        tfh, tfl = _dd_div_scalar(tfh, tfl, float((3 * k + 2) * (3 * k + 3)))
        fh, fl = _dd_add(fh, fl, tfh, tfl)
        tgh, tgl = _dd_mul(tgh, tgl, x3h, x3l)
        tgh, tgl = _dd_div_scalar(tgh, tgl, float((3 * k + 3) * (3 * k + 4)))
        gh, gl = _dd_add(gh, gl, tgh, tgl)
    rh, rl = _dd_add(fh, fl, -gh, -gl)
    return rh + rl


def _asymptotic_positive(x: np.ndarray) -> np.ndarray:
    """Ai(x) ~ e^(-zeta) / (2 sqrt(pi) x^(1/4)) * sum (-1)^k u_k zeta^(-k)."""
    zeta = (2.0 / 3.0) * x**1.5
    s = np.ones_like(x)
    term = np.ones_like(x)
    prev = np.full_like(x, np.inf)
    active = np.ones(x.shape, dtype=bool)
    for k in range(1, 41):
        term = term * (-(6 * k - 5) * (6 * k - 1) / (72.0 * k)) / zeta
        mag = np.abs(term)
        active &= mag < prev  # stop at the smallest term, per element
        s = np.where(active, s + term, s)
        prev = mag
    with np.errstate(over="ignore"):
        pref = np.exp(-zeta) / (2.0 * math.sqrt(math.pi) * x**0.25)
    return pref * s


def _asymptotic_negative(x: np.ndarray) -> np.ndarray:
    """Oscillatory expansion for large negative arguments."""
    z = -x
    zeta = (2.0 / 3.0) * z**1.5
    even = np.ones_like(z)
    odd = np.zeros_like(z)
    v = np.ones_like(z)
    prev = np.full_like(z, np.inf)
    active = np.ones(z.shape, dtype=bool)
    for k in range(1, 41):
        v = v * ((6 * k - 5) * (6 * k - 1) / (72.0 * k)) / zeta
        mag = np.abs(v)
        active &= mag < prev
        sign = -1.0 if (k // 2) % 2 else 1.0
        if k % 2:
            odd = np.where(active, odd + sign * v, odd)
        else:
            even = np.where(active, even + sign * v, even)
        prev = mag
    angle = zeta - math.pi / 4.0
    return (np.cos(angle) * even + np.sin(angle) * odd) / (
        math.sqrt(math.pi) * z**0.25
    )


def airy_ai(x):
    """The Airy function Ai, accurate to ~1e-10 relative for |x| <= 10.

    Accepts scalars or arrays.  Underflows smoothly to 0 for large positive
    arguments.
    """
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    xf = np.atleast_1d(arr).ravel()
    if not np.all(np.isfinite(xf)):
        raise ValueError("argument must be finite")
    out = np.empty_like(xf)
    ax = np.abs(xf)
    m_small = ax <= _SERIES_CUT
    m_mid = ~m_small & (ax < _ASYMPTOTIC_CUT)
    m_pos = xf >= _ASYMPTOTIC_CUT
    m_neg = xf <= -_ASYMPTOTIC_CUT
    if m_small.any():
        out[m_small] = _maclaurin_double(xf[m_small])
    if m_mid.any():
        out[m_mid] = _maclaurin_dd(xf[m_mid])
    if m_pos.any():
        out[m_pos] = _asymptotic_positive(xf[m_pos])
    if m_neg.any():
        out[m_neg] = _asymptotic_negative(xf[m_neg])
    if scalar:
        return float(out[0])
    return out.reshape(arr.shape)


def airy_ai_prime(x):
    """Derivative Ai'(x) from the differentiated Maclaurin pair.

    Valid on the series domain |x| <= 4.5, which covers the turning-point
    region where the ground level lives.
    """
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    xf = np.atleast_1d(arr).ravel().astype(float)
    if np.any(np.abs(xf) > _SERIES_CUT):
        raise ValueError(f"airy_ai_prime is implemented for |x| <= {_SERIES_CUT}")
    x3 = xf**3
    fp = 0.5 * xf**2
    tf = fp.copy()
    gp = np.ones_like(xf)
    tg = np.ones_like(xf)
    for k in range(1, 48):
        tf = tf * x3 * (k + 1) / (k * (3 * k + 2) * (3 * k + 3))
        fp = fp + tf
    for k in range(48):
        tg = tg * x3 / ((3 * k + 1) * (3 * k + 3))
        gp = gp + tg
    out = _C1_HI * fp - _C2_HI * gp
    if scalar:
        return float(out[0])
    return out.reshape(arr.shape)


@lru_cache(maxsize=1)
def vee_ground_level() -> float:
    """Ground level of -chi'' + |zeta| chi = E chi: the negated first zero
    of Ai', located by root finding on the series implementation."""
    return float(-optimize.brentq(airy_ai_prime, -1.2, -0.9, xtol=1e-15))


# ---------------------------------------------------------------------------
# physical parameters and the reduced eigenproblem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BulletParams:
    """Rigid cubic body of mass ``mass_kg`` in a molecular line density.

    ``line_density_per_m`` is in SI (per meter).  ``velocity_m_s`` and
    ``center_m`` set the packet's mean velocity and position and do not
    affect any spread.
    """

    mass_kg: float = 0.01
    density_kg_m3: float = 7850.0  # steel
    barrier_j: float = 1.0
    line_density_per_m: float = 3.2e21  # 3.2e19 per cm
    velocity_m_s: float = 0.0
    center_m: float = 0.0

    def __post_init__(self):
        for name in ("mass_kg", "density_kg_m3", "barrier_j", "line_density_per_m"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")
        for name in ("velocity_m_s", "center_m"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def half_side_m(self) -> float:
        """Half of the cube side, from mass and density."""
        return 0.5 * (self.mass_kg / self.density_kg_m3) ** (1.0 / 3.0)

    @property
    def slope_b(self) -> float:
        """Vee-potential slope b = m^2 c^2 / (a hbar^2), in 1/m^3."""
        return self.mass_kg**2 * C_LIGHT**2 / (self.half_side_m * HBAR**2)

    @property
    def momentum_kg_m_s(self) -> float:
        return self.mass_kg * self.velocity_m_s


@dataclass(frozen=True)
class VeeOperator:
    """Reduced collapse operator: prefactor * [(-i d/dx - p0/hbar)^2 + b|x - x0|]."""

    prefactor_j_m2: float
    slope_b: float
    x0_m: float
    p0_kg_m_s: float
    length_scale_m: float


def collapse_operator_vee(params: BulletParams) -> VeeOperator:
    a = params.half_side_m
    b = params.slope_b
    pref = (
        params.barrier_j
        * params.line_density_per_m
        * a
        * HBAR**2
        / (params.mass_kg**2 * C_LIGHT**2)
    )
    return VeeOperator(
        prefactor_j_m2=pref,
        slope_b=b,
        x0_m=params.center_m,
        p0_kg_m_s=params.momentum_kg_m_s,
        length_scale_m=(2.0 * b) ** (-1.0 / 3.0),
    )


@dataclass(frozen=True)
class GridSpec:
    """Uniform dimensionless grid zeta in [-half_width, half_width]."""

    half_width: float = 13.0
    num_points: int = 4001

    def __post_init__(self):
        if self.half_width <= 2.0:
            raise ValueError("half_width must exceed the packet's core region")
        if self.num_points < 101:
            raise ValueError("num_points too small for a meaningful grid")

    def zeta(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.num_points)


@dataclass
class WavePacket:
    """Complex amplitudes on a uniform position grid, discretely normalized."""

    grid: np.ndarray
    values: np.ndarray
    dx: float

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.grid.shape != self.values.shape:
            raise ValueError("grid and values must have equal length")
        norm = float(np.sum(np.abs(self.values) ** 2) * self.dx)
        if abs(norm - 1.0) > 1e-8:
            raise ValueError(f"discrete norm {norm:.12g} is not 1")


def _closed_form_profile(zeta: np.ndarray) -> np.ndarray:
    chi = airy_ai(np.abs(zeta) - vee_ground_level())
    dz = zeta[1] - zeta[0]
    return chi / math.sqrt(float(np.sum(chi**2) * dz))


def _grid_profile(zeta: np.ndarray) -> tuple[np.ndarray, float]:
    """Ground state of the discretized -chi'' + |zeta| chi by inverse iteration."""
    n = zeta.size
    dz = zeta[1] - zeta[0]
    diag = 2.0 / dz**2 + np.abs(zeta)
    off = np.full(n - 1, -1.0 / dz**2)
    banded = np.zeros((3, n))
    banded[0, 1:] = off
    banded[1] = diag
    banded[2, :-1] = off

    def matvec(v):
        out = diag * v
        out[:-1] += off * v[1:]
        out[1:] += off * v[:-1]
        return out

    chi = np.exp(-0.5 * zeta**2)
    chi /= np.linalg.norm(chi)
    level = float(chi @ matvec(chi))
    for _ in range(200):
        chi = solve_banded((1, 1), banded, chi)
        chi /= np.linalg.norm(chi)
        new_level = float(chi @ matvec(chi))
        if abs(new_level - level) < 1e-14:
            level = new_level
            break
        level = new_level
    if chi[n // 2] < 0.0:
        chi = -chi
    return chi / math.sqrt(float(np.sum(chi**2) * dz)), level


GROUND_STATE_METHODS = ("closed_form", "finite_difference")


def ground_state(
    params: BulletParams,
    grid: GridSpec | None = None,
    method: str = "closed_form",
) -> tuple[WavePacket, float]:
    """Lowest vee-potential eigenstate in SI coordinates.

    Returns the packet and the dimensionless ground level of the reduced
    problem.  ``closed_form`` evaluates the shifted Airy profile;
    ``finite_difference`` solves the discretized eigenproblem and is the
    independent cross-check.  The grid must be wide enough that the profile
    has decayed below 1e-12 at the edges.
    """
    if method not in GROUND_STATE_METHODS:
        raise ValueError(f"unknown ground-state method {method!r}")
    grid = grid or GridSpec()
    zeta = grid.zeta()
    if method == "closed_form":
        chi = _closed_form_profile(zeta)
        level = vee_ground_level()
    else:
        chi, level = _grid_profile(zeta)
    if max(abs(float(chi[0])), abs(float(chi[-1]))) >= _EDGE_AMPLITUDE:
        raise ValueError(
            "grid too narrow: the packet has not decayed below "
            f"{_EDGE_AMPLITUDE} at the edges; widen half_width"
        )
    op = collapse_operator_vee(params)
    s = op.length_scale_m
    x = op.x0_m + s * zeta
    step_phase = abs(op.p0_kg_m_s) * s * (zeta[1] - zeta[0]) / HBAR
    if step_phase > math.pi:
        raise ValueError(
            "boost phase winds more than pi per grid step; the packet scale "
            "cannot resolve this velocity (reduce it or refine the grid)"
        )
    phase = np.exp(1j * op.p0_kg_m_s * x / HBAR)
    values = chi.astype(complex) * phase / math.sqrt(s)
    return WavePacket(x, values, s * (zeta[1] - zeta[0])), level


@dataclass(frozen=True)
class UncertaintyReport:
    a_m: float
    b_per_m3: float
    delta_x_formula_m: float
    delta_x_numeric_m: float
    delta_v_formula_m_s: float
    delta_v_numeric_m_s: float
    product_over_hbar_formula: float
    product_over_hbar_numeric: float


def uncertainties(params: BulletParams, grid: GridSpec | None = None) -> UncertaintyReport:
    """Position and velocity spreads of the collapse packet.

    The formula route evaluates the printed closed forms

        dx = (hbar^2 / (2 c^2 rho^(1/3)))^(1/3) * m^(-5/9)
        dv = (1/2) (2 hbar c^2 rho^(1/3))^(1/3) * m^(-4/9)

    (equivalently b^(-1/3) and hbar/(2 m dx)); the numeric route takes
    second moments of the finite-difference ground state and back-scales.
    Neither depends on the barrier height or the molecular density, which
    only set when collapses fire, not what they produce.
    """
    m = params.mass_kg
    rho = params.density_kg_m3
    dx_f = (HBAR**2 / (2.0 * C_LIGHT**2 * rho ** (1.0 / 3.0))) ** (1.0 / 3.0) * m ** (-5.0 / 9.0)
    dv_f = 0.5 * (2.0 * HBAR * C_LIGHT**2 * rho ** (1.0 / 3.0)) ** (1.0 / 3.0) * m ** (-4.0 / 9.0)

    grid = grid or GridSpec()
    zeta = grid.zeta()
    dz = float(zeta[1] - zeta[0])
    chi, _ = _grid_profile(zeta)
    mean = float(np.sum(zeta * chi**2) * dz)
    dzeta = math.sqrt(float(np.sum((zeta - mean) ** 2 * chi**2) * dz))
    dchi = np.gradient(chi, dz)
    dk = math.sqrt(float(np.sum(dchi**2) * dz))

    s = collapse_operator_vee(params).length_scale_m
    dx_n = s * dzeta
    dp_n = HBAR * dk / s
    dv_n = dp_n / m

    return UncertaintyReport(
        a_m=params.half_side_m,
        b_per_m3=params.slope_b,
        delta_x_formula_m=dx_f,
        delta_x_numeric_m=dx_n,
        delta_v_formula_m_s=dv_f,
        delta_v_numeric_m_s=dv_n,
        product_over_hbar_formula=m * dx_f * dv_f / HBAR,
        product_over_hbar_numeric=dx_n * dp_n / HBAR,
    )


def dominance_ratio(params: BulletParams) -> float:
    """Kinetic coefficient of the collapse operator over that of the
    body's own Hamiltonian: (eta n a / c^2) / (m / 2)."""
    return (
        2.0
        * params.barrier_j
        * params.line_density_per_m
        * params.half_side_m
        / (params.mass_kg * C_LIGHT**2)
    )


def bullet_report(params: BulletParams, grid: GridSpec | None = None) -> dict:
    """JSON-ready summary; the product entry is the numeric-moment one."""
    rep = uncertainties(params, grid)
    return {
        "a": rep.a_m,
        "b": rep.b_per_m3,
        "delta_x_formula": rep.delta_x_formula_m,
        "delta_x_numeric": rep.delta_x_numeric_m,
        "delta_v_formula": rep.delta_v_formula_m_s,
        "delta_v_numeric": rep.delta_v_numeric_m_s,
        "product_over_hbar": rep.product_over_hbar_numeric,
        "dominance_ratio": dominance_ratio(params),
    }
