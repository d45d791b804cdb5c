"""Collapse-basis determination, Born sampling, and collapse trajectories.

The system qubit's candidate bases live on the Bloch sphere, so a basis is
two angles (theta, phi).  Two independent routes produce a collapse basis:

* a brute-force scan that minimizes the weighted mean of the branch
  entanglement accelerations over the sphere, and
* the eigenbasis of the interaction Hamiltonian averaged over an
  environment state ("collapse operator"), which is expected to approach
  the scanned basis as the environment grows.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import core, entanglement

logger = logging.getLogger(__name__)

ZERO_WEIGHT_TOL = 1e-12
FLAT_LANDSCAPE_TOL = 1e-9
TIE_TOL = 1e-9
DEGENERACY_RTOL = 1e-10

EVENT_FIELDS = (
    "t_c",
    "theta",
    "phi",
    "weights",
    "outcome",
    "e_before",
    "e_after_ensemble",
    "e_after_actual",
    "rng_draw",
    "seed",
)


class CompletenessError(ValueError):
    """Measurement operators fail sum(M^dag M) = I beyond tolerance."""


@dataclass(frozen=True)
class CandidateBasis:
    """Orthonormal qubit basis pair parametrized by Bloch angles.

    ``A0 = cos(theta/2)|0> + e^{i phi} sin(theta/2)|1>`` and ``A1`` is the
    antipodal state in the same phase convention.
    """

    theta: float
    phi: float

    def state_pair(self) -> np.ndarray:
        """Rows are A0 and A1."""
        half = self.theta / 2.0
        ph = np.exp(1j * self.phi)
        return np.array(
            [
                [math.cos(half), ph * math.sin(half)],
                [math.sin(half), -ph * math.cos(half)],
            ],
            dtype=complex,
        )

    def bloch_axis(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array(
            [st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)]
        )

    @classmethod
    def from_bloch_vector(cls, vec) -> "CandidateBasis":
        v = np.asarray(vec, dtype=float)
        r = float(np.linalg.norm(v))
        if r == 0.0:
            raise ValueError("zero Bloch vector has no direction")
        v = v / r
        theta = math.acos(min(1.0, max(-1.0, v[2])))
        phi = math.atan2(v[1], v[0]) % (2.0 * math.pi)
        return cls(theta, phi)


def canonical_angles(theta: float, phi: float) -> tuple[float, float]:
    """Fold arbitrary angles into theta in [0, pi], phi in [0, 2 pi)."""
    theta = theta % (2.0 * math.pi)
    if theta > math.pi:
        theta = 2.0 * math.pi - theta
        phi = phi + math.pi
    return theta, phi % (2.0 * math.pi)


def basis_axis_distance(a: CandidateBasis, b: CandidateBasis) -> float:
    """Angle in [0, pi/2] between the two basis axes (pair order ignored)."""
    dot = abs(float(np.dot(a.bloch_axis(), b.bloch_axis())))
    return math.acos(min(1.0, dot))


@dataclass(frozen=True)
class RelativeDecomposition:
    """State written as sum_i c_i |A_i>|E_i> with normalized env branches."""

    basis: CandidateBasis
    weights: np.ndarray
    env_states: np.ndarray
    zero_weight: tuple

    @property
    def n_env(self) -> int:
        return int(round(math.log2(self.env_states.shape[1])))

    def branch_state(self, i: int) -> np.ndarray:
        a = self.basis.state_pair()[i]
        return np.kron(a, self.env_states[i])

    def reconstruct(self) -> np.ndarray:
        rows = self.basis.state_pair()
        out = np.zeros(2 * self.env_states.shape[1], dtype=complex)
        for i in range(2):
            out += self.weights[i] * np.kron(rows[i], self.env_states[i])
        return out

    def born_probabilities(self) -> np.ndarray:
        return np.abs(self.weights) ** 2


def decompose(psi: core.StateVector, basis: CandidateBasis) -> RelativeDecomposition:
    """Relative-state decomposition of a register state in a qubit basis.

    Branch amplitudes are the norms of the partial projections, so they are
    real and nonnegative; each environment branch absorbs the phase.
    Branches below ``ZERO_WEIGHT_TOL`` get weight zero and a flagged
    placeholder environment vector.
    """
    mat = psi.amplitudes.reshape(2, -1)
    rows = basis.state_pair()
    weights = np.zeros(2)
    env = np.zeros((2, mat.shape[1]), dtype=complex)
    flags = []
    for i in range(2):
        proj = rows[i].conj() @ mat
        c = float(np.linalg.norm(proj))
        if c < ZERO_WEIGHT_TOL:
            weights[i] = 0.0
            env[i, 0] = 1.0  # placeholder, never weighted
            flags.append(True)
        else:
            weights[i] = c
            env[i] = proj / c
            flags.append(False)
    total = float(np.sum(weights**2))
    if abs(total - 1.0) > 1e-10:
        raise ValueError(f"branch weights sum to {total:.12g}, not 1")
    return RelativeDecomposition(basis, weights, env, tuple(flags))


def _branch_accelerations(
    sys_rows: np.ndarray,
    env_rows: np.ndarray,
    h: core.PauliTermSum,
    delta: float,
) -> np.ndarray:
    """One-sided second-difference entropy acceleration per product branch.

    Rows define product states kron(sys_rows[i], env_rows[i]); both factors
    must be normalized.  Branches start as exact product states, so the
    one-sided stencil from :mod:`entanglement` applies.
    """
    block = np.einsum("ma,me->mae", sys_rows, env_rows).reshape(sys_rows.shape[0], -1).T
    b1 = core.evolve_many(block, h, delta)
    b2 = core.evolve_many(b1, h, delta)
    s1 = entanglement.block_entropies(b1)
    s2 = entanglement.block_entropies(b2)
    return (s2 - 2.0 * s1) / delta**2


def mean_entangling_acceleration(
    decomp: RelativeDecomposition,
    h: core.PauliTermSum,
    delta: float = entanglement.DEFAULT_ACCEL_STEP,
) -> float:
    """Born-weighted mean of the branch entanglement accelerations."""
    keep = [i for i in range(2) if not decomp.zero_weight[i]]
    if not keep:
        return 0.0
    rows = decomp.basis.state_pair()[keep]
    acc = _branch_accelerations(rows, decomp.env_states[keep], h, delta)
    probs = decomp.born_probabilities()[keep]
    return float(np.sum(probs * acc))


def _mean_accel_grid(
    amps: np.ndarray,
    h: core.PauliTermSum,
    thetas: np.ndarray,
    phis: np.ndarray,
    delta: float,
    chunk: int = 2048,
) -> np.ndarray:
    """Mean branch acceleration for a batch of (theta, phi) candidates."""
    mat = amps.reshape(2, -1)
    half = thetas / 2.0
    ph = np.exp(1j * phis)
    a0 = np.stack([np.cos(half), ph * np.sin(half)], axis=1)
    a1 = np.stack([np.sin(half), -ph * np.cos(half)], axis=1)
    out = np.zeros(thetas.size)
    for a_rows in (a0, a1):
        proj = a_rows.conj() @ mat
        c = np.linalg.norm(proj, axis=1)
        env = proj / np.maximum(c, ZERO_WEIGHT_TOL)[:, None]
        probs = c**2
        for start in range(0, thetas.size, chunk):
            sl = slice(start, min(start + chunk, thetas.size))
            acc = _branch_accelerations(a_rows[sl], env[sl], h, delta)
            out[sl] += probs[sl] * acc
    return out


@dataclass(frozen=True)
class ScanSettings:
    n_theta: int = 64
    n_phi: int = 64
    accel_delta: float = entanglement.DEFAULT_ACCEL_STEP
    refine: bool = True

    def __post_init__(self):
        if self.n_theta < 2 or self.n_phi < 1:
            raise ValueError("scan grid must have at least 2 x 1 cells")


@dataclass
class ScanReport:
    theta_values: np.ndarray
    phi_values: np.ndarray
    mean_accelerations: np.ndarray
    flat: bool
    coarse_minimum: tuple
    minimum: tuple
    nm_evaluations: int = 0


def scan_collapse_basis(
    psi: core.StateVector,
    h: core.PauliTermSum,
    settings: ScanSettings | None = None,
) -> tuple[CandidateBasis, ScanReport]:
    """Minimize the mean branch acceleration over the Bloch sphere.

    A coarse grid locates the basin; Nelder-Mead polishes the minimum from
    the best cell.  Grid ties within ``TIE_TOL`` break toward the smallest
    theta, then the smallest phi, so repeated scans are reproducible.  A
    landscape whose grid spread is below ``FLAT_LANDSCAPE_TOL`` is flagged
    flat and returned unrefined.
    """
    settings = settings or ScanSettings()
    thetas = np.linspace(0.0, math.pi, settings.n_theta)
    phis = np.linspace(0.0, 2.0 * math.pi, settings.n_phi, endpoint=False)
    tt, pp = np.meshgrid(thetas, phis, indexing="ij")
    values = _mean_accel_grid(
        psi.amplitudes, h, tt.ravel(), pp.ravel(), settings.accel_delta
    ).reshape(settings.n_theta, settings.n_phi)

    vmin = float(values.min())
    vmax = float(values.max())
    flat = (vmax - vmin) < FLAT_LANDSCAPE_TOL

    tie = np.argwhere(values <= vmin + TIE_TOL)
    ti, pi_ = min((int(i), int(j)) for i, j in tie)  # smallest theta, then phi
    coarse = (float(thetas[ti]), float(phis[pi_]), float(values[ti, pi_]))

    best_theta, best_phi, best_val = coarse
    nm_evals = 0
    if settings.refine and not flat:
        def objective(x):
            return float(
                _mean_accel_grid(
                    psi.amplitudes, h, np.array([x[0]]), np.array([x[1]]),
                    settings.accel_delta,
                )[0]
            )

        res = optimize.minimize(
            objective,
            x0=np.array([best_theta, best_phi]),
            method="Nelder-Mead",
            options={"xatol": 1e-5, "fatol": 1e-14, "maxiter": 200},
        )
        nm_evals = int(res.nfev)
        if res.fun <= best_val:
            best_theta, best_phi = canonical_angles(res.x[0], res.x[1])
            best_val = float(res.fun)

    basis = CandidateBasis(best_theta, best_phi)
    report = ScanReport(
        theta_values=thetas,
        phi_values=phis,
        mean_accelerations=values,
        flat=flat,
        coarse_minimum=coarse,
        minimum=(best_theta, best_phi, best_val),
        nm_evaluations=nm_evals,
    )
    return basis, report


@dataclass(frozen=True)
class CollapseOperatorResult:
    matrix: np.ndarray
    eigenvalues: tuple
    basis: CandidateBasis | None
    degenerate: bool


def collapse_operator(
    h: core.PauliTermSum,
    env_state: np.ndarray | None = None,
    psi: core.StateVector | None = None,
) -> CollapseOperatorResult:
    """Interaction Hamiltonian averaged over an environment state.

    Exactly one of ``env_state`` (an explicit vector on the environment
    factor) or ``psi`` (a full register state whose reduced environment
    supplies the expectations) must be given.  The result is a 2 x 2
    Hermitian operator on the system qubit; when its Bloch vector vanishes
    relative to the interaction strength there is no preferred eigenbasis
    and the result is flagged degenerate with no basis claimed.
    """
    if (env_state is None) == (psi is None):
        raise ValueError("supply exactly one of env_state or psi")
    inter = h.interaction_terms()
    cmat = np.zeros((2, 2), dtype=complex)
    scale = 0.0
    if env_state is not None:
        env = np.asarray(env_state, dtype=complex).ravel()
        if env.size != 2 ** (h.num_sites - 1):
            raise ValueError("explicit environment vector has the wrong length")
        nrm = float(np.linalg.norm(env))
        if abs(nrm - 1.0) > 1e-8:
            raise ValueError("environment vector must be normalized")
    else:
        if psi.num_sites != h.num_sites:
            raise ValueError("state register does not match the operator")
    for term in inter:
        letter = term.string[core.SYSTEM_SITE]
        if env_state is not None:
            env_string = term.string[1:]
            val = complex(np.vdot(env, core._apply_string(env, env_string)))
        else:
            full = "I" + term.string[1:]
            val = complex(
                np.vdot(psi.amplitudes, core._apply_string(psi.amplitudes, full))
            )
        cmat += term.coefficient * val.real * core.PAULI_MATRICES[letter]
        scale += abs(term.coefficient)

    bloch = np.array(
        [float(cmat[0, 1].real), float(-cmat[0, 1].imag), float(cmat[0, 0].real)]
    )
    r = float(np.linalg.norm(bloch))
    if scale == 0.0 or r <= DEGENERACY_RTOL * scale:
        return CollapseOperatorResult(cmat, (0.0, 0.0), None, True)
    basis = CandidateBasis.from_bloch_vector(bloch)
    return CollapseOperatorResult(cmat, (r, -r), basis, False)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Collapse trigger: fire when the entangling speed reaches the threshold."""

    epsilon_dot_threshold: float
    check_interval: float

    def __post_init__(self):
        # entanglement can only be released, never forced, by shrinking, so
        # nonpositive thresholds are meaningless
        if not self.epsilon_dot_threshold > 0.0:
            raise ValueError("threshold must be strictly positive")
        if not (self.check_interval > 0.0 and math.isfinite(self.check_interval)):
            raise ValueError("check_interval must be positive and finite")


def check_threshold(epsilon_dot: float, policy: ThresholdPolicy) -> bool:
    """True when the speed is at or above the threshold (boundary fires)."""
    return epsilon_dot >= policy.epsilon_dot_threshold


@dataclass(frozen=True)
class SampleResult:
    outcome_index: int
    state: core.StateVector
    rng_draw: float


def sample_outcome(decomp: RelativeDecomposition, rng: np.random.Generator) -> SampleResult:
    """Inverse-CDF Born sampling; returns the collapsed product state."""
    probs = decomp.born_probabilities()
    cdf = np.cumsum(probs / probs.sum())
    u = float(rng.random())
    outcome = int(np.searchsorted(cdf, u, side="right"))
    outcome = min(outcome, probs.size - 1)
    state = core.StateVector(decomp.branch_state(outcome), normalize=True)
    return SampleResult(outcome, state, u)


@dataclass(frozen=True)
class CollapseEvent:
    """Record of one collapse along a trajectory."""

    t_c: float
    basis: CandidateBasis
    born_weights: tuple
    outcome_index: int
    e_before: float
    e_after_ensemble: float
    e_after_actual: float
    rng_draw: float

    def __post_init__(self):
        total = sum(self.born_weights)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"Born weights sum to {total:.12g}, not 1")
        if not 0 <= self.outcome_index < len(self.born_weights):
            raise ValueError("outcome index out of range")

    def to_json_dict(self, seed: int) -> dict:
        return {
            "t_c": self.t_c,
            "theta": self.basis.theta,
            "phi": self.basis.phi,
            "weights": list(self.born_weights),
            "outcome": self.outcome_index,
            "e_before": self.e_before,
            "e_after_ensemble": self.e_after_ensemble,
            "e_after_actual": self.e_after_actual,
            "rng_draw": self.rng_draw,
            "seed": seed,
        }


def events_to_jsonl(events, seed: int) -> str:
    """One JSON object per line, fixed key order."""
    lines = [json.dumps(e.to_json_dict(seed)) for e in events]
    return "".join(line + "\n" for line in lines)


BASIS_METHODS = ("scan", "collapse_operator", "auto")


def _determine_basis(
    state: core.StateVector,
    h: core.PauliTermSum,
    method: str,
    scan_settings: ScanSettings,
) -> CandidateBasis | None:
    if method in ("collapse_operator", "auto"):
        result = collapse_operator(h, psi=state)
        if not result.degenerate:
            return result.basis
        logger.info("collapse operator degenerate; falling back to basis scan")
    basis, report = scan_collapse_basis(state, h, scan_settings)
    if report.flat:
        logger.warning("flat basis landscape; collapse event skipped")
        return None
    return basis


def run_trajectory(
    initial: core.StateVector,
    h: core.PauliTermSum,
    policy: ThresholdPolicy,
    t_max: float,
    seed: int,
    basis_method: str = "auto",
    scan_settings: ScanSettings | None = None,
    fd_step: float = entanglement.DEFAULT_FD_STEP,
    accel_delta: float = entanglement.DEFAULT_ACCEL_STEP,
    model_tag: str = "custom",
) -> tuple[entanglement.EntanglementTrace, list[CollapseEvent]]:
    """Evolve, checking the threshold on a fixed grid; collapse on crossings.

    At every multiple of ``policy.check_interval`` the entangling speed is
    measured (finite differences; uniformly valid through product states).
    On a crossing the collapse basis is determined by ``basis_method``
    ("scan", "collapse_operator" with scan fallback on degeneracy, or
    "auto", an alias of the latter), the state is decomposed, an outcome is
    Born-sampled, energies are audited, and the product branch replaces the
    state.  Runs are deterministic given the seed and step sizes.  Event
    times are grid times; no sub-step root polishing is attempted.
    """
    # imported here: energy builds on the decomposition types above
    from . import energy as energy_mod

    if basis_method not in BASIS_METHODS:
        raise ValueError(f"unknown basis method {basis_method!r}")
    if t_max <= 0.0:
        raise ValueError("t_max must be positive")
    scan_settings = scan_settings or ScanSettings()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))

    dt = policy.check_interval
    steps = int(math.ceil(t_max / dt - 1e-12))
    times = np.arange(steps + 1) * dt
    eps = np.empty(steps + 1)
    eps_dot = np.empty(steps + 1)
    eps_ddot = np.empty(steps + 1)
    events: list[CollapseEvent] = []
    state = initial

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for k in range(steps + 1):
            if k > 0:
                state = core.evolve(state, h, dt)
            eps[k] = entanglement.state_entropy(state)
            eps_dot[k] = entanglement.entangling_speed(
                state, h, method="finite_diff", fd_step=fd_step
            )
            eps_ddot[k] = entanglement.entangling_acceleration(state, h, delta=accel_delta)
            if not check_threshold(eps_dot[k], policy):
                continue
            basis = _determine_basis(state, h, basis_method, scan_settings)
            if basis is None:
                continue
            decomp = decompose(state, basis)
            e_before = energy_mod.energy_before(state, h)
            e_after = energy_mod.energy_after_ensemble(decomp, h)
            sample = sample_outcome(decomp, rng)
            e_actual = energy_mod.energy_before(sample.state, h)
            events.append(
                CollapseEvent(
                    t_c=float(times[k]),
                    basis=basis,
                    born_weights=tuple(float(p) for p in decomp.born_probabilities()),
                    outcome_index=sample.outcome_index,
                    e_before=e_before,
                    e_after_ensemble=e_after,
                    e_after_actual=e_actual,
                    rng_draw=sample.rng_draw,
                )
            )
            state = sample.state

    trace = entanglement.EntanglementTrace(
        times, eps, eps_dot, eps_ddot, model_tag, initial.n_env
    )
    return trace, events


def detector_unitary(c_click: complex) -> np.ndarray:
    """Joint unitary for a two-level detector absorbing a photon.

    Factor order is (field, detector) with field basis {vacuum, photon} and
    detector basis {unclick, click}: |photon, unclick> rotates partially
    into |vacuum, click> with amplitude ``c_click``.
    """
    p = abs(c_click) ** 2
    if p > 1.0:
        raise ValueError("|c_click| must be <= 1")
    root = math.sqrt(1.0 - p)
    u = np.eye(4, dtype=complex)
    # indices: 1 = |vacuum, click>, 2 = |photon, unclick>
    u[1, 1] = root
    u[2, 1] = -np.conj(c_click)
    u[1, 2] = c_click
    u[2, 2] = root
    return u


def derive_measurement_operators(
    joint_unitary: np.ndarray,
    ready_state: np.ndarray,
    collapse_basis: np.ndarray,
    atol: float = 1e-9,
) -> list[np.ndarray]:
    """Measurement operators on the measured factor of a joint unitary.

    The joint space is ordered kron(measured system, apparatus).  For each
    apparatus basis vector ``B_m``, ``M_m = (I (x) <B_m|) U (I (x) |ready>)``.
    The set must satisfy sum(M^dag M) = I; a violation beyond ``atol``
    raises :class:`CompletenessError` naming the residual norm, which is the
    signature of a non-unitary input.
    """
    u = np.asarray(joint_unitary, dtype=complex)
    basis = np.asarray(collapse_basis, dtype=complex)
    ready = np.asarray(ready_state, dtype=complex).ravel()
    d_a = ready.size
    if basis.shape != (d_a, d_a):
        raise ValueError("collapse basis must be d_A orthonormal rows of length d_A")
    if np.max(np.abs(basis @ basis.conj().T - np.eye(d_a))) > 1e-10:
        raise ValueError("collapse basis rows are not orthonormal")
    if abs(np.linalg.norm(ready) - 1.0) > 1e-10:
        raise ValueError("ready state must be normalized")
    if u.shape[0] != u.shape[1] or u.shape[0] % d_a != 0:
        raise ValueError("joint unitary size is not a multiple of the apparatus size")
    d_s = u.shape[0] // d_a
    if d_s > 16 or d_a > 16:
        raise ValueError("dense path supports factor dimensions up to 16")

    u4 = u.reshape(d_s, d_a, d_s, d_a)
    ops = [np.einsum("a,iajb,b->ij", basis[m].conj(), u4, ready) for m in range(d_a)]
    total = sum(m.conj().T @ m for m in ops)
    residual = float(np.max(np.abs(total - np.eye(d_s))))
    if residual > atol:
        raise CompletenessError(
            f"sum(M^dag M) deviates from identity by {residual:.3e}; "
            "the joint operator is not unitary on the ready sector"
        )
    return ops
