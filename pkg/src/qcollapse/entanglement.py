"""Von Neumann entropy of the system qubit and its first two time derivatives.

Entropy is reported in nats throughout; the rate formulas then carry no
base-conversion factors.  The derivative estimators regularize the
``0 * log 0`` singularity at product states with an eigenvalue cutoff,
because product states are exactly where collapse dynamics operates.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import core

LN2 = math.log(2.0)

# eigenvalues below this contribute 0 to -sum(lam * ln(lam))
EIG_CUTOFF = 1e-12

# below this smallest eigenvalue, d(entropy)/dt is ill-conditioned and the
# analytic rate formula falls back to finite differences
ANALYTIC_MIN_EIGENVALUE = 1e-10

DEFAULT_FD_STEP = 1e-4
DEFAULT_ACCEL_STEP = 1e-3
RICHARDSON_REPORT_TOL = 1e-4

TRACE_COLUMNS = ("t", "epsilon", "epsilon_dot", "epsilon_ddot")


def entropy_from_eigenvalues(eigenvalues) -> float:
    lams = np.asarray(eigenvalues, dtype=float)
    lams = lams[lams > EIG_CUTOFF]
    if lams.size == 0:
        return 0.0
    return max(0.0, float(-np.sum(lams * np.log(lams))))


def entropy(rho) -> float:
    """Von Neumann entropy -sum(lam * ln(lam)) in nats."""
    if not isinstance(rho, core.DensityMatrix):
        rho = core.DensityMatrix(rho)
    return entropy_from_eigenvalues(rho.eigenvalues())


def _qubit_eigenvalues(amps: np.ndarray) -> tuple[float, float]:
    """Eigenvalues of the system qubit's reduced state, closed form."""
    m = amps.reshape(2, -1)
    r00 = float(np.real(np.vdot(m[0], m[0])))
    r11 = float(np.real(np.vdot(m[1], m[1])))
    r01 = complex(np.vdot(m[1], m[0]))  # <0|rho|1>
    tr = r00 + r11
    disc = math.sqrt(max((r00 - r11) ** 2 + 4.0 * abs(r01) ** 2, 0.0))
    return 0.5 * (tr - disc), 0.5 * (tr + disc)


def state_entropy(psi) -> float:
    """Entropy of the system qubit for a full register state."""
    amps = psi.amplitudes if isinstance(psi, core.StateVector) else np.asarray(psi, complex)
    return entropy_from_eigenvalues(_qubit_eigenvalues(amps))


def block_entropies(block: np.ndarray) -> np.ndarray:
    """System-qubit entropies for every column of a (dim, m) state block."""
    dim, m = block.shape
    b = block.reshape(2, dim // 2, m)
    r00 = np.einsum("em,em->m", b[0], b[0].conj()).real
    r11 = np.einsum("em,em->m", b[1], b[1].conj()).real
    r01 = np.einsum("em,em->m", b[0], b[1].conj())
    disc = np.sqrt(np.maximum((r00 - r11) ** 2 + 4.0 * np.abs(r01) ** 2, 0.0))
    tr = r00 + r11
    lams = np.stack([0.5 * (tr - disc), 0.5 * (tr + disc)])
    out = np.zeros(m)
    mask = lams > EIG_CUTOFF
    out -= np.sum(np.where(mask, lams * np.log(np.where(mask, lams, 1.0)), 0.0), axis=0)
    return np.maximum(out, 0.0)


def _entropy_at_offset(psi: core.StateVector, h: core.PauliTermSum, dt: float) -> float:
    return state_entropy(core.evolve(psi, h, dt))


def _finite_diff_speed(psi, h, fd_step: float) -> float:
    d_full = (
        _entropy_at_offset(psi, h, fd_step) - _entropy_at_offset(psi, h, -fd_step)
    ) / (2.0 * fd_step)
    half = 0.5 * fd_step
    d_half = (
        _entropy_at_offset(psi, h, half) - _entropy_at_offset(psi, h, -half)
    ) / (2.0 * half)
    if abs(d_half - d_full) > RICHARDSON_REPORT_TOL:
        warnings.warn(
            f"entangling-speed finite difference is step sensitive: "
            f"levels differ by {abs(d_half - d_full):.3e}",
            RuntimeWarning,
            stacklevel=3,
        )
    # one Richardson halving: cancels the O(h^2) error of the central stencil
    return (4.0 * d_half - d_full) / 3.0


def entangling_speed(
    psi: core.StateVector,
    h: core.PauliTermSum,
    method: str = "analytic",
    fd_step: float = DEFAULT_FD_STEP,
) -> float:
    """d(entropy)/dt of the system qubit at the given instant.

    ``analytic`` evaluates -Tr(rho_dot ln rho) with
    rho_dot = Tr_env(-i [H, |psi><psi|]); when the reduced state has an
    eigenvalue below ``ANALYTIC_MIN_EIGENVALUE`` the logarithm is
    ill-conditioned, so the call falls back to ``finite_diff`` and reports
    the fallback with a warning.  ``finite_diff`` uses a central difference
    with one Richardson halving and warns when the two levels disagree by
    more than ``RICHARDSON_REPORT_TOL``.
    """
    if method not in ("analytic", "finite_diff"):
        raise ValueError(f"unknown entangling-speed method {method!r}")
    if fd_step <= 0.0:
        raise ValueError("fd_step must be positive")
    if method == "finite_diff":
        return _finite_diff_speed(psi, h, fd_step)

    amps = psi.amplitudes
    rho = core.partial_trace_system(psi).entries
    lams, vecs = np.linalg.eigh(rho)
    if float(lams.min()) < ANALYTIC_MIN_EIGENVALUE:
        warnings.warn(
            "reduced state is nearly pure; analytic entangling speed is "
            "ill-conditioned, falling back to finite differences",
            RuntimeWarning,
            stacklevel=2,
        )
        return _finite_diff_speed(psi, h, fd_step)

    hpsi = core.apply_operator(h, amps)
    phi = hpsi.reshape(2, -1)
    mat = amps.reshape(2, -1)
    rho_dot = -1j * (phi @ mat.conj().T - mat @ phi.conj().T)
    lam_dots = np.real(np.einsum("ik,ij,jk->k", vecs.conj(), rho_dot, vecs))
    return float(-np.sum(lam_dots * np.log(lams)))


def entangling_acceleration(
    psi: core.StateVector,
    h: core.PauliTermSum,
    delta: float = DEFAULT_ACCEL_STEP,
) -> float:
    """d^2(entropy)/dt^2 via second differences of exact short evolutions.

    At a product state both the entropy and its first derivative vanish, so
    the one-sided stencil (eps(2d) - 2 eps(d)) / d^2 applies; elsewhere the
    symmetric second difference is used.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if delta < 1e-8:
        raise ValueError("delta underflows the second-difference stencil")
    eps0 = state_entropy(psi)
    if eps0 < 1e-9:
        e1 = _entropy_at_offset(psi, h, delta)
        e2 = _entropy_at_offset(psi, h, 2.0 * delta)
        return (e2 - 2.0 * e1) / delta**2
    e_plus = _entropy_at_offset(psi, h, delta)
    e_minus = _entropy_at_offset(psi, h, -delta)
    return (e_plus - 2.0 * eps0 + e_minus) / delta**2


@dataclass
class EntanglementTrace:
    """Time series of (t, entropy, speed, acceleration) for one register."""

    times: np.ndarray
    epsilon: np.ndarray
    epsilon_dot: np.ndarray
    epsilon_ddot: np.ndarray
    model_tag: str = "custom"
    n_env: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.epsilon = np.asarray(self.epsilon, dtype=float)
        self.epsilon_dot = np.asarray(self.epsilon_dot, dtype=float)
        self.epsilon_ddot = np.asarray(self.epsilon_ddot, dtype=float)
        n = self.times.size
        if not all(a.size == n for a in (self.epsilon, self.epsilon_dot, self.epsilon_ddot)):
            raise ValueError("trace columns must have equal length")
        if n > 1 and not np.all(np.diff(self.times) > 0.0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.epsilon < -1e-12) or np.any(self.epsilon > LN2 + 1e-9):
            raise ValueError("entropy out of the [0, ln 2] range for a qubit")

    def __len__(self) -> int:
        return int(self.times.size)

    def rows(self, units: str = "nats"):
        scale = _unit_scale(units)
        for i in range(len(self)):
            yield (
                self.times[i],
                self.epsilon[i] * scale,
                self.epsilon_dot[i] * scale,
                self.epsilon_ddot[i] * scale,
            )

    def to_csv(self, path_or_file, comment: str | None = None, units: str = "nats") -> None:
        """Write columns t, epsilon, epsilon_dot, epsilon_ddot."""
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        f = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            if comment:
                f.write(f"# {comment}\n")
            writer = csv.writer(f)
            writer.writerow(TRACE_COLUMNS)
            for row in self.rows(units):
                writer.writerow([repr(float(v)) for v in row])
        finally:
            if own:
                f.close()

    def to_csv_text(self, comment: str | None = None, units: str = "nats") -> str:
        buf = io.StringIO()
        self.to_csv(buf, comment=comment, units=units)
        return buf.getvalue()


def _unit_scale(units: str) -> float:
    if units == "nats":
        return 1.0
    if units == "bits":
        return 1.0 / LN2
    raise ValueError(f"unknown entropy units {units!r}")


def compute_trace(
    initial: core.StateVector,
    h: core.PauliTermSum,
    t_max: float,
    dt: float,
    fd_step: float = DEFAULT_FD_STEP,
    accel_delta: float = DEFAULT_ACCEL_STEP,
    speed_method: str = "finite_diff",
    model_tag: str = "custom",
) -> EntanglementTrace:
    """Sample entropy, speed, and acceleration along a purely unitary run.

    The default speed estimator is the finite-difference one because traces
    routinely pass through (near-)product states where the analytic formula
    would fall back anyway.
    """
    if t_max <= 0.0 or dt <= 0.0:
        raise ValueError("t_max and dt must be positive")
    steps = int(round(t_max / dt))
    times = np.arange(steps + 1) * dt
    eps = np.empty(steps + 1)
    eps_dot = np.empty(steps + 1)
    eps_ddot = np.empty(steps + 1)
    state = initial
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for k in range(steps + 1):
            if k > 0:
                state = core.evolve(state, h, dt)
            eps[k] = state_entropy(state)
            eps_dot[k] = entangling_speed(state, h, method=speed_method, fd_step=fd_step)
            eps_ddot[k] = entangling_acceleration(state, h, delta=accel_delta)
    return EntanglementTrace(times, eps, eps_dot, eps_ddot, model_tag, initial.n_env)


def first_speed_peak(trace: EntanglementTrace, floor: float = 1e-6) -> tuple[int, float, float]:
    """Index, time, and value of the first interior local maximum of the speed.

    Falls back to the global maximum when no interior peak exists on the
    sampled grid (e.g. when the window ends mid-rise).
    """
    sd = trace.epsilon_dot
    for k in range(1, len(trace) - 1):
        if sd[k] > floor and sd[k] > sd[k - 1] and sd[k] >= sd[k + 1]:
            return k, float(trace.times[k]), float(sd[k])
    k = int(np.argmax(sd))
    return k, float(trace.times[k]), float(sd[k])


def max_speed(trace: EntanglementTrace) -> float:
    return float(np.max(trace.epsilon_dot))
