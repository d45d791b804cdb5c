"""Qubit-register states, Pauli-string operators, and unitary time evolution.

Conventions used throughout the package:

* site 0 of every register is the distinguished system qubit; sites 1..N
  are environment spins,
* amplitudes are stored with site 0 as the most significant bit, so that
  ``amps.reshape([2] * num_sites)[b0, b1, ..., bN]`` indexes per-site bits,
* couplings and times are dimensionless (hbar = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np

SYSTEM_SITE = 0

# Dense eigendecomposition is exact and cacheable; beyond this register size
# it stops being affordable and the fixed-step integrator takes over.
DENSE_SITE_LIMIT = 12

_NORM_ATOL = 1e-8
_RK4_LOCAL_ERROR = 1e-12
_RK4_NORM_GUARD = 1e-6

SYSTEM_ONLY = "system"
ENV_ONLY = "environment"
INTERACTION = "interaction"

PAULI_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "Y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}


class IntegrationError(RuntimeError):
    """Raised when the fixed-step integrator loses unitarity."""


def _num_sites_for(length: int) -> int:
    n = int(round(math.log2(length)))
    if n < 1 or 2**n != length:
        raise ValueError(f"amplitude length {length} is not a power of two >= 2")
    return n


class StateVector:
    """Normalized complex amplitudes over a tensor product of qubits."""

    __slots__ = ("amplitudes", "num_sites")

    def __init__(self, amplitudes, normalize: bool = False):
        amps = np.asarray(amplitudes, dtype=complex).ravel()
        n = _num_sites_for(amps.size)
        norm = float(np.linalg.norm(amps))
        if normalize:
            if norm == 0.0:
                raise ValueError("cannot normalize the zero vector")
            amps = amps / norm
        elif abs(norm - 1.0) > _NORM_ATOL:
            raise ValueError(f"state norm {norm:.12g} is not 1 within {_NORM_ATOL}")
        self.amplitudes = amps
        self.num_sites = n

    @property
    def n_env(self) -> int:
        """Number of environment spins (register size minus the system qubit)."""
        return self.num_sites - 1

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def fidelity(self, other: "StateVector") -> float:
        """Squared overlap |<self|other>|^2."""
        return float(abs(np.vdot(self.amplitudes, other.amplitudes)) ** 2)

    @classmethod
    def computational(cls, bits) -> "StateVector":
        """Basis state |b0 b1 ... bN> for a sequence of 0/1 bits."""
        bits = list(bits)
        idx = 0
        for b in bits:
            if b not in (0, 1):
                raise ValueError("bits must be 0 or 1")
            idx = 2 * idx + b
        amps = np.zeros(2 ** len(bits), dtype=complex)
        amps[idx] = 1.0
        return cls(amps)

    @classmethod
    def from_site_states(cls, site_states) -> "StateVector":
        """Tensor product of normalized single-site vectors (site 0 first)."""
        vecs = [np.asarray(v, dtype=complex).ravel() for v in site_states]
        for v in vecs:
            if v.size != 2:
                raise ValueError("each site state must have length 2")
        return cls(reduce(np.kron, vecs), normalize=True)

    @classmethod
    def uniform_plus(cls, num_sites: int) -> "StateVector":
        """|+>^(num_sites), the equal superposition of all bit strings."""
        if num_sites < 1:
            raise ValueError("num_sites must be >= 1")
        dim = 2**num_sites
        return cls(np.full(dim, 1.0 / math.sqrt(dim), dtype=complex))


def spin_state(theta: float, phi: float = 0.0) -> np.ndarray:
    """Single spin state cos(theta/2)|0> + e^{i phi} sin(theta/2)|1>."""
    return np.array(
        [math.cos(theta / 2.0), np.exp(1j * phi) * math.sin(theta / 2.0)],
        dtype=complex,
    )


@dataclass(frozen=True)
class BipartiteSplit:
    """One distinguished degree of freedom (site 0) versus the rest."""

    system_site: int
    env_sites: tuple

    def __post_init__(self):
        if self.system_site != SYSTEM_SITE:
            raise ValueError("the system qubit is fixed at site 0")
        if self.system_site in self.env_sites:
            raise ValueError("system site cannot also be an environment site")
        expected = tuple(range(1, len(self.env_sites) + 1))
        if tuple(sorted(self.env_sites)) != expected:
            raise ValueError("environment sites must cover 1..N exactly once")

    @classmethod
    def for_register(cls, num_sites: int) -> "BipartiteSplit":
        return cls(SYSTEM_SITE, tuple(range(1, num_sites)))

    @property
    def num_sites(self) -> int:
        return 1 + len(self.env_sites)


class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite d x d matrix."""

    __slots__ = ("entries",)

    _HERMITIAN_ATOL = 1e-12
    _TRACE_ATOL = 1e-10
    _EIG_FLOOR = -1e-10

    def __init__(self, entries):
        m = np.asarray(entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("density matrix must be square")
        if np.max(np.abs(m - m.conj().T)) > self._HERMITIAN_ATOL:
            raise ValueError("density matrix is not Hermitian")
        tr = complex(np.trace(m))
        if abs(tr - 1.0) > self._TRACE_ATOL:
            raise ValueError(f"density matrix trace {tr:.12g} is not 1")
        m = 0.5 * (m + m.conj().T)
        if float(np.min(np.linalg.eigvalsh(m))) < self._EIG_FLOOR:
            raise ValueError("density matrix has a significantly negative eigenvalue")
        self.entries = m

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    def purity(self) -> float:
        return float(np.real(np.trace(self.entries @ self.entries)))


@dataclass(frozen=True)
class PauliTerm:
    coefficient: float
    string: str
    partition: str


def _classify(string: str) -> str:
    on_system = string[SYSTEM_SITE] != "I"
    on_env = any(c != "I" for c in string[1:])
    if on_system and on_env:
        return INTERACTION
    if on_system:
        return SYSTEM_ONLY
    # all-identity terms are constant offsets; grouped with the environment
    return ENV_ONLY


class PauliTermSum:
    """Hermitian operator as a weighted sum of Pauli strings.

    Terms are tagged by which side of the system/environment split they act
    on.  Instances are immutable after construction; spectral data is cached
    lazily, which makes repeated evolutions under the same operator cheap.
    """

    __slots__ = ("terms", "num_sites", "_diag", "_eig", "_dense")

    def __init__(self, terms, num_sites: int | None = None):
        packed = []
        for coeff, string in terms:
            if isinstance(coeff, complex) and abs(coeff.imag) > 1e-12:
                raise ValueError(
                    f"coefficient {coeff} is not real; only Hermitian sums are supported"
                )
            c = float(np.real(coeff))
            if not math.isfinite(c):
                raise ValueError("coefficients must be finite")
            s = str(string).upper()
            if any(ch not in "IXYZ" for ch in s):
                raise ValueError(f"invalid Pauli string {string!r}")
            packed.append((c, s))
        lengths = {len(s) for _, s in packed}
        if len(lengths) > 1:
            raise ValueError("all Pauli strings must have the same length")
        if lengths:
            inferred = lengths.pop()
            if num_sites is not None and num_sites != inferred:
                raise ValueError("num_sites disagrees with the Pauli strings")
            num_sites = inferred
        if num_sites is None:
            raise ValueError("num_sites is required for an empty term list")
        if num_sites < 1:
            raise ValueError("num_sites must be >= 1")

        self.terms = tuple(
            PauliTerm(c, s, _classify(s)) for c, s in packed
        )
        self.num_sites = int(num_sites)
        self._diag = None
        self._eig = None
        self._dense = None

    @property
    def dim(self) -> int:
        return 2**self.num_sites

    @property
    def is_diagonal(self) -> bool:
        return all(set(t.string) <= {"I", "Z"} for t in self.terms)

    def system_terms(self) -> tuple:
        return tuple(t for t in self.terms if t.partition == SYSTEM_ONLY)

    def environment_terms(self) -> tuple:
        return tuple(t for t in self.terms if t.partition == ENV_ONLY)

    def interaction_terms(self) -> tuple:
        return tuple(t for t in self.terms if t.partition == INTERACTION)

    def coefficient_scale(self) -> float:
        """Upper bound on the spectral norm: sum of |coefficients|."""
        return float(sum(abs(t.coefficient) for t in self.terms))

    def diagonal(self) -> np.ndarray:
        """Diagonal of the operator in the computational basis (I/Z terms only)."""
        if not self.is_diagonal:
            raise ValueError("operator has off-diagonal terms")
        if self._diag is None:
            z_diag = np.array([1.0, -1.0])
            i_diag = np.ones(2)
            diag = np.zeros(self.dim)
            for t in self.terms:
                vec = np.ones(1)
                for ch in t.string:
                    vec = np.kron(vec, z_diag if ch == "Z" else i_diag)
                diag += t.coefficient * vec
            self._diag = diag
        return self._diag

    def dense(self) -> np.ndarray:
        """Materialize the full matrix (small registers only)."""
        if self.num_sites > DENSE_SITE_LIMIT:
            raise ValueError(
                f"refusing to materialize a {self.dim} x {self.dim} matrix"
            )
        if self._dense is None:
            h = np.zeros((self.dim, self.dim), dtype=complex)
            for t in self.terms:
                h += t.coefficient * reduce(
                    np.kron, [PAULI_MATRICES[ch] for ch in t.string]
                )
            self._dense = h
        return self._dense

    def eigensystem(self):
        """Cached (eigenvalues, eigenvectors) of the dense matrix."""
        if self._eig is None:
            evals, evecs = np.linalg.eigh(self.dense())
            self._eig = (evals, evecs)
        return self._eig


def _axis_factor(values, axis: int, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = 2
    return np.asarray(values).reshape(shape)


def _apply_string(amps: np.ndarray, string: str) -> np.ndarray:
    """Apply a Pauli string to a flat amplitude array."""
    n = len(string)
    arr = amps.reshape([2] * n)
    for k, ch in enumerate(string):
        if ch == "I":
            continue
        if ch in ("X", "Y"):
            arr = np.flip(arr, axis=k)
        if ch == "Y":
            arr = arr * _axis_factor([-1.0j, 1.0j], k, n)
        elif ch == "Z":
            arr = arr * _axis_factor([1.0, -1.0], k, n)
    return np.asarray(arr).reshape(-1)


def _apply_terms(op: PauliTermSum, amps: np.ndarray) -> np.ndarray:
    out = np.zeros_like(amps)
    for t in op.terms:
        if t.coefficient != 0.0:
            out += t.coefficient * _apply_string(amps, t.string)
    return out


def apply_operator(op: PauliTermSum, psi) -> np.ndarray:
    """H |psi>, term by term, without materializing the matrix.

    Returns the raw (generally unnormalized) amplitude array.
    """
    amps = psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi, dtype=complex)
    if amps.size != op.dim:
        raise ValueError(
            f"operator on {op.num_sites} sites applied to a length-{amps.size} state"
        )
    return _apply_terms(op, amps)


def expectation(op: PauliTermSum, psi) -> float:
    """<psi|H|psi> for a normalized state; the imaginary residue must be tiny."""
    amps = psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi, dtype=complex)
    val = complex(np.vdot(amps, apply_operator(op, amps)))
    if abs(val.imag) > 1e-8 * max(1.0, abs(val)):
        raise ValueError(f"expectation value {val} has a non-Hermitian residue")
    return float(val.real)


def _rk4_steps(dt: float, scale: float) -> int:
    if scale <= 0.0:
        return 1
    # local RK4 error per step ~ (scale*h)^5 / 120
    h = (120.0 * _RK4_LOCAL_ERROR) ** 0.2 / scale
    return max(1, int(math.ceil(abs(dt) / h)))


def _evolve_rk4(amps: np.ndarray, h: PauliTermSum, dt: float) -> np.ndarray:
    steps = _rk4_steps(dt, h.coefficient_scale())
    hs = dt / steps
    y = amps.astype(complex)
    for _ in range(steps):
        k1 = -1j * _apply_terms(h, y)
        k2 = -1j * _apply_terms(h, y + 0.5 * hs * k1)
        k3 = -1j * _apply_terms(h, y + 0.5 * hs * k2)
        k4 = -1j * _apply_terms(h, y + hs * k3)
        y = y + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        nrm = float(np.linalg.norm(y))
        if abs(nrm - 1.0) > _RK4_NORM_GUARD:
            raise IntegrationError(
                f"integrator norm drifted to {nrm:.6g}; step size too coarse"
            )
        y = y / nrm
    return y


def _evolve_block(block: np.ndarray, h: PauliTermSum, dt: float, method: str) -> np.ndarray:
    if method == "auto":
        if h.is_diagonal:
            method = "diagonal"
        elif h.num_sites <= DENSE_SITE_LIMIT:
            method = "dense"
        else:
            method = "rk4"
    if method == "diagonal":
        phases = np.exp(-1j * dt * h.diagonal())
        return block * (phases[:, None] if block.ndim == 2 else phases)
    if method == "dense":
        evals, evecs = h.eigensystem()
        phases = np.exp(-1j * dt * evals)
        rotated = evecs.conj().T @ block
        rotated = rotated * (phases[:, None] if block.ndim == 2 else phases)
        return evecs @ rotated
    if method == "rk4":
        if block.ndim == 1:
            return _evolve_rk4(block, h, dt)
        return np.column_stack([_evolve_rk4(col, h, dt) for col in block.T])
    raise ValueError(f"unknown evolution method {method!r}")


def evolve(psi: StateVector, h: PauliTermSum, dt: float, method: str = "auto") -> StateVector:
    """exp(-i H dt) |psi>.

    Diagonal operators are advanced by pure phases; other operators use a
    cached dense eigendecomposition up to ``DENSE_SITE_LIMIT`` sites and a
    fixed-step 4th-order integrator beyond that.  The integrator's step is
    chosen so the local error stays below 1e-12 and every step renormalizes;
    drift beyond 1e-6 raises :class:`IntegrationError` instead of passing
    silently.
    """
    if psi.num_sites != h.num_sites:
        raise ValueError(
            f"state on {psi.num_sites} sites evolved by an operator on {h.num_sites}"
        )
    if not math.isfinite(dt):
        raise ValueError("dt must be finite")
    out = _evolve_block(psi.amplitudes, h, dt, method)
    nrm = float(np.linalg.norm(out))
    if abs(nrm - 1.0) > 1e-10:
        raise IntegrationError(f"evolution drifted the norm to {nrm:.12g}")
    return StateVector(out / nrm)


def evolve_many(block: np.ndarray, h: PauliTermSum, dt: float, method: str = "auto") -> np.ndarray:
    """Evolve the columns of a (dim, m) block of normalized states."""
    block = np.asarray(block, dtype=complex)
    if block.shape[0] != h.dim:
        raise ValueError("block dimension does not match the operator")
    return _evolve_block(block, h, dt, method)


def partial_trace_system(psi: StateVector, split: BipartiteSplit | None = None) -> DensityMatrix:
    """Reduced 2 x 2 density matrix of the system qubit."""
    if split is None:
        split = BipartiteSplit.for_register(psi.num_sites)
    if split.num_sites != psi.num_sites:
        raise ValueError("split does not match the register size")
    m = psi.amplitudes.reshape(2, -1)
    return DensityMatrix(m @ m.conj().T)


def _site_string(letters: dict, num_sites: int) -> str:
    chars = ["I"] * num_sites
    for site, letter in letters.items():
        chars[site] = letter
    return "".join(chars)


def degenerate_ising(n_env: int, g: float = 1.0) -> PauliTermSum:
    """Uniform Z0-Zk couplings with strength g and no self terms.

    All terms commute, so the evolution is exactly periodic with period
    2*pi/g, which is what the revival experiment exploits.
    """
    if n_env < 1:
        raise ValueError("n_env must be >= 1")
    n = n_env + 1
    terms = [(g, _site_string({0: "Z", k: "Z"}, n)) for k in range(1, n)]
    return PauliTermSum(terms)


def transverse_coupled(n_env: int) -> PauliTermSum:
    """Transverse self terms on every site plus uniform Z0-Zk couplings."""
    if n_env < 1:
        raise ValueError("n_env must be >= 1")
    n = n_env + 1
    terms = [(1.0, _site_string({0: "X"}, n))]
    terms += [(1.0, _site_string({0: "Z", k: "Z"}, n)) for k in range(1, n)]
    terms += [(1.0, _site_string({k: "X"}, n)) for k in range(1, n)]
    return PauliTermSum(terms)


def build_hamiltonian(
    model: str,
    n_env: int | None = None,
    g: float = 1.0,
    terms=None,
) -> PauliTermSum:
    """Construct one of the named spin models, or a custom term list.

    ``custom`` takes explicit ``terms``; an empty list is the zero operator
    and then needs ``n_env`` to fix the register size.
    """
    key = model.strip().lower()
    if key == "degenerate_ising":
        return degenerate_ising(_require_n_env(n_env), g)
    if key == "transverse_coupled":
        return transverse_coupled(_require_n_env(n_env))
    if key == "custom":
        if terms:
            return PauliTermSum(terms)
        return PauliTermSum([], num_sites=_require_n_env(n_env) + 1)
    raise ValueError(
        f"unknown model {model!r} (known models: custom, degenerate_ising, "
        "transverse_coupled)"
    )


def _require_n_env(n_env: int | None) -> int:
    if n_env is None or n_env < 1:
        raise ValueError("this model requires n_env >= 1")
    return n_env
