"""Truncated system (x) chain Fock space and sparse operator construction.

Basis ordering: a state index decomposes as mixed radix
``(system digits, bath_1 occupation, ..., bath_M occupation)`` with the
system index most significant.  Each bath contributes one block index into
the lexicographically ordered list of occupation vectors (n_1 ... n_{N_m})
with n_1 + ... + n_{N_m} <= p.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import DimensionOverflow, ShapeMismatch

STATE_CAP = 2**24

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
# Basis index 0 is the excited state: sigma_minus maps |e> -> |g>.
SIGMA_MINUS = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T

NAMED_MATRICES = {
    "sigma_x": SIGMA_X,
    "sigma_y": SIGMA_Y,
    "sigma_z": SIGMA_Z,
    "sigma_minus": SIGMA_MINUS,
    "sigma_plus": SIGMA_PLUS,
    "identity": np.eye(2, dtype=complex),
}

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class TimeProfile:
    """Scalar time profile multiplying a constant Hamiltonian term."""

    kind: str = "const"          # const | cos | sin
    frequency: float = 0.0

    def __call__(self, t: float) -> float:
        if self.kind == "const":
            return 1.0
        if self.kind == "cos":
            return math.cos(self.frequency * t)
        if self.kind == "sin":
            return math.sin(self.frequency * t)
        raise ValueError(f"unknown profile kind {self.kind!r}")

    @property
    def is_constant(self):
        return self.kind == "const"


@dataclass(frozen=True)
class SystemModel:
    """Qudit register, k-local Hamiltonian terms, and jump operators."""

    n: int
    d: int
    hs_terms: tuple = ()     # (support tuple, matrix, TimeProfile)
    jumps: tuple = ()        # (support tuple, matrix, bath index)
    klocal_strict: bool = False

    def __post_init__(self):
        terms = []
        for support, mat, profile in self.hs_terms:
            mat = np.asarray(mat, dtype=complex)
            self._check_local(support, mat)
            if np.max(np.abs(mat - mat.conj().T)) > HERMITIAN_TOL:
                raise ValueError("system Hamiltonian terms must be Hermitian")
            if self.klocal_strict and np.linalg.norm(mat, 2) > 1.0 + HERMITIAN_TOL:
                raise ValueError("k-local flag requires ||H_i|| <= 1")
            if not isinstance(profile, TimeProfile):
                profile = TimeProfile(*profile) if profile else TimeProfile()
            terms.append((tuple(support), mat, profile))
        object.__setattr__(self, "hs_terms", tuple(terms))
        jumps = []
        for support, mat, bath in self.jumps:
            mat = np.asarray(mat, dtype=complex)
            self._check_local(support, mat)
            if self.klocal_strict and np.linalg.norm(mat, 2) > 1.0 + HERMITIAN_TOL:
                raise ValueError("k-local flag requires ||L_alpha|| <= 1")
            jumps.append((tuple(support), mat, int(bath)))
        object.__setattr__(self, "jumps", tuple(jumps))

    def _check_local(self, support, mat):
        if any(q < 0 or q >= self.n for q in support):
            raise ValueError("support references qudits outside the register")
        dim = self.d ** len(support)
        if mat.shape != (dim, dim):
            raise ShapeMismatch(
                f"operator on {len(support)} qudits must be {dim}x{dim}"
            )

    @property
    def sys_dim(self):
        return self.d**self.n

    @property
    def bath_count(self):
        return 1 + max((b for _, _, b in self.jumps), default=-1)

    def jump_matrix(self, bath: int):
        """Full-register jump operator of the given bath (dense)."""
        out = np.zeros((self.sys_dim, self.sys_dim), dtype=complex)
        for support, mat, b in self.jumps:
            if b == bath:
                out += embed_system_operator(self.n, self.d, support, mat)
        return out

    def jump_norm(self, bath: int) -> float:
        return float(np.linalg.norm(self.jump_matrix(bath), 2))

    def hs_matrix(self, t: float = 0.0):
        """Dense H_S(t) on the full register."""
        out = np.zeros((self.sys_dim, self.sys_dim), dtype=complex)
        for support, mat, profile in self.hs_terms:
            out += profile(t) * embed_system_operator(self.n, self.d, support, mat)
        return out

    @property
    def time_dependent(self):
        return any(not p.is_constant for _, _, p in self.hs_terms)


def embed_system_operator(n: int, d: int, support, mat):
    """Embed an operator on `support` into the full d**n register (dense)."""
    support = tuple(support)
    if len(set(support)) != len(support):
        raise ValueError("support qudits must be distinct")
    mat = np.asarray(mat, dtype=complex)
    k = len(support)
    rest = [q for q in range(n) if q not in support]
    # tensordot axes: (support rows, support cols, rest rows, rest cols)
    eye = np.eye(d ** len(rest), dtype=complex).reshape((d,) * (2 * len(rest)))
    full = np.tensordot(mat.reshape((d,) * (2 * k)), eye, axes=0)
    # reorder to (rows in support+rest order, cols likewise) ...
    axes = (list(range(k)) + list(range(2 * k, 2 * k + len(rest)))
            + list(range(k, 2 * k)) + list(range(2 * k + len(rest), 2 * n)))
    full = full.transpose(axes)
    # ... then to natural qudit order on both row and column groups
    row_order = list(support) + rest
    perm = [row_order.index(q) for q in range(n)]
    full = full.transpose(perm + [n + p for p in perm])
    return full.reshape(d**n, d**n)


@lru_cache(maxsize=64)
def _occupation_table(modes: int, cap: int):
    """All occupation vectors with sum <= cap, lexicographically ordered."""
    rows = []

    def rec(prefix, remaining, slots):
        if slots == 0:
            rows.append(tuple(prefix))
            return
        for v in range(remaining + 1):
            rec(prefix + [v], remaining - v, slots - 1)

    rec([], cap, modes)
    table = np.array(sorted(rows), dtype=np.int64)
    index = {tuple(row): i for i, row in enumerate(table)}
    return table, index


@dataclass(frozen=True)
class TruncatedSpace:
    """Indexed basis of (system) x (M baths x N_m modes, <= p quanta each)."""

    n: int
    d: int
    baths: int
    modes: int
    cap: int
    table: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        table, _ = _occupation_table(self.modes, self.cap)
        object.__setattr__(self, "table", table)
        if self.dimension > STATE_CAP:
            raise DimensionOverflow(
                f"dimension {self.dimension} exceeds cap {STATE_CAP}"
            )

    @property
    def block_size(self):
        return math.comb(self.modes + self.cap, self.cap)

    @property
    def sys_dim(self):
        return self.d**self.n

    @property
    def env_dim(self):
        return self.block_size**self.baths

    @property
    def dimension(self):
        return self.sys_dim * self.env_dim

    def index_to_labels(self, index: int):
        """(system digits, per-bath occupation tuples) for a basis index."""
        blocks = []
        for _ in range(self.baths):
            index, b = divmod(index, self.block_size)
            blocks.append(tuple(int(v) for v in self.table[b]))
        blocks.reverse()
        digits = []
        for _ in range(self.n):
            index, dig = divmod(index, self.d)
            digits.append(dig)
        digits.reverse()
        return tuple(digits), tuple(blocks)

    def labels_to_index(self, digits, blocks) -> int:
        _, occ_index = _occupation_table(self.modes, self.cap)
        idx = 0
        for dig in digits:
            idx = idx * self.d + dig
        for occ in blocks:
            idx = idx * self.block_size + occ_index[tuple(occ)]
        return idx

    def bath_occupancy_sums(self, bath: int):
        """Total occupation of one bath for every basis index (vectorized)."""
        block_sums = self.table.sum(axis=1)
        idx = np.arange(self.dimension)
        shift = self.block_size ** (self.baths - 1 - bath)
        return block_sums[(idx // shift) % self.block_size]

    def vacuum_index(self, digits) -> int:
        return self.labels_to_index(digits, [(0,) * self.modes] * self.baths)


def enumerate_basis(n: int, d: int, baths: int, modes: int, cap: int) -> TruncatedSpace:
    """Build the truncated space; dimension d^n * C(modes+cap, cap)^baths."""
    if min(n, d, baths, modes) < 1 or cap < 0:
        raise ValueError("counts must be >= 1 (cap >= 0)")
    return TruncatedSpace(n, d, baths, modes, cap)


@dataclass(frozen=True)
class SparseOperator:
    """Sparse matrix on a truncated space with a Hermiticity tag."""

    dimension: int
    matrix: sp.csr_matrix = field(repr=False)
    hermitian: bool = False

    def __post_init__(self):
        if self.matrix.shape != (self.dimension, self.dimension):
            raise ShapeMismatch("matrix shape inconsistent with dimension")
        if self.hermitian:
            probe = (self.matrix - self.matrix.conj().T).tocoo()
            if probe.nnz and np.max(np.abs(probe.data)) > HERMITIAN_TOL * max(
                1.0, abs(self.matrix).max()
            ):
                raise ValueError("operator tagged hermitian is not Hermitian")

    def to_coordinate_text(self) -> str:
        """Documented debug dump: `row col re im` per line, 17 digits."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        buf = io.StringIO()
        buf.write(f"# dimension {self.dimension} nnz {coo.nnz} "
                  f"hermitian {int(self.hermitian)}\n")
        for k in order:
            buf.write(f"{coo.row[k]} {coo.col[k]} "
                      f"{coo.data[k].real:.17g} {coo.data[k].imag:.17g}\n")
        return buf.getvalue()


def _bath_local(space: TruncatedSpace, bath: int, block: sp.spmatrix):
    """Lift a block-size operator on one bath to the full space."""
    left = space.sys_dim * space.block_size**bath
    right = space.block_size ** (space.baths - 1 - bath)
    out = sp.identity(left, format="csr", dtype=complex)
    out = sp.kron(out, block, format="csr")
    if right > 1:
        out = sp.kron(out, sp.identity(right, format="csr", dtype=complex),
                      format="csr")
    return out


def _block_lower(space: TruncatedSpace, mode: int) -> sp.csr_matrix:
    table, occ_index = _occupation_table(space.modes, space.cap)
    rows, cols, vals = [], [], []
    for col, occ in enumerate(table):
        nj = occ[mode]
        if nj > 0:
            target = list(occ)
            target[mode] -= 1
            rows.append(occ_index[tuple(target)])
            cols.append(col)
            vals.append(math.sqrt(nj))
    b = space.block_size
    return sp.csr_matrix((vals, (rows, cols)), shape=(b, b), dtype=complex)


def ladder(space: TruncatedSpace, bath: int, mode: int,
           kind: str = "lower") -> SparseOperator:
    """Annihilation (`lower`) or creation (`raise`) operator a_{bath, mode}.

    Raising out of the particle cap maps to zero (adjoint of the truncated
    lowering operator).
    """
    if not 0 <= bath < space.baths or not 0 <= mode < space.modes:
        raise ValueError("bath or mode index out of range")
    block = _block_lower(space, mode)
    if kind == "raise":
        block = block.conj().T.tocsr()
    elif kind != "lower":
        raise ValueError("kind must be 'lower' or 'raise'")
    return SparseOperator(space.dimension, _bath_local(space, bath, block))


def _system_on_space(space: TruncatedSpace, mat) -> sp.csr_matrix:
    return sp.kron(sp.csr_matrix(mat),
                   sp.identity(space.env_dim, format="csr", dtype=complex),
                   format="csr")


def build_hamiltonian_parts(model: SystemModel, chains, space: TruncatedSpace):
    """(constant part, [(term, profile), ...]) of the dilated Hamiltonian.

    Constant part: bath onsite/hopping terms, the system-bath couplings
    ||v_alpha|| (L_alpha a^dag_{alpha,1} + h.c.), and constant-profile system
    terms.  Non-constant system terms are returned separately so repeated
    builds only rescale cached matrices.
    """
    if len(chains) != space.baths:
        raise ShapeMismatch("need one ChainCoefficients per bath")
    for c in chains:
        if c.modes != space.modes:
            raise ShapeMismatch("chain modes inconsistent with the space")

    dim = space.dimension
    h_const = sp.csr_matrix((dim, dim), dtype=complex)

    table, occ_index = _occupation_table(space.modes, space.cap)
    for alpha, coeffs in enumerate(chains):
        # onsite: diagonal in the occupation basis
        diag_block = table @ np.asarray(coeffs.onsite)
        idx = np.arange(dim)
        shift = space.block_size ** (space.baths - 1 - alpha)
        full_diag = diag_block[(idx // shift) % space.block_size]
        h_const = h_const + sp.diags(full_diag, format="csr", dtype=complex)

        # hopping within the bath block (occupation total is conserved)
        b = space.block_size
        rows, cols, vals = [], [], []
        for col, occ in enumerate(table):
            for j, t_j in enumerate(coeffs.hopping):
                if occ[j] > 0:
                    target = list(occ)
                    target[j] -= 1
                    target[j + 1] += 1
                    rows.append(occ_index[tuple(target)])
                    cols.append(col)
                    vals.append(t_j * math.sqrt(occ[j] * (occ[j + 1] + 1)))
        hop = sp.csr_matrix((vals, (rows, cols)), shape=(b, b), dtype=complex)
        hop = hop + hop.conj().T
        h_const = h_const + _bath_local(space, alpha, hop)

        # system-bath coupling through the first chain mode
        l_mat = model.jump_matrix(alpha)
        lower1 = ladder(space, alpha, 0, "lower").matrix
        l_full = _system_on_space(space, l_mat)
        coupling = coeffs.v_norm * (l_full @ lower1.conj().T)
        h_const = h_const + coupling + coupling.conj().T

    profiled = []
    for support, mat, profile in model.hs_terms:
        term = _system_on_space(
            space, embed_system_operator(model.n, model.d, support, mat))
        if profile.is_constant:
            h_const = h_const + term
        else:
            profiled.append((term, profile))
    return h_const, profiled


def build_hamiltonian(model: SystemModel, chains, space: TruncatedSpace,
                      t: float = 0.0) -> SparseOperator:
    """Sparse dilated Hamiltonian at time t, conjugated by the particle cap."""
    h_const, profiled = build_hamiltonian_parts(model, chains, space)
    h = h_const
    for term, profile in profiled:
        h = h + profile(t) * term
    return SparseOperator(space.dimension, h.tocsr(), hermitian=True)


def hamiltonian_norm_estimate(model: SystemModel, chains,
                              space: TruncatedSpace, t: float = 0.0) -> float:
    """A-priori bound ||H|| <= ||H_S|| + 2 sqrt(p+1) sum ||L|| ||v||
    + p M N_m omega_c + 2 omega_c (p+1) M (N_m - 1)."""
    hs_norm = float(np.linalg.norm(model.hs_matrix(t), 2))
    p, m, nm = space.cap, space.baths, space.modes
    coup = sum(model.jump_norm(a) * chains[a].v_norm for a in range(m))
    wc = max(c.omega_c for c in chains)
    return (hs_norm + 2.0 * math.sqrt(p + 1) * coup
            + p * m * nm * wc + 2.0 * wc * (p + 1) * m * (nm - 1))


def project_particle_sector(space: TruncatedSpace, state, cap: int):
    """Zero amplitudes with any bath occupation above `cap` (idempotent)."""
    if cap > space.cap:
        raise ValueError("sector cap exceeds the space cap")
    state = np.asarray(state, dtype=complex)
    keep = np.ones(space.dimension, dtype=bool)
    for alpha in range(space.baths):
        keep &= space.bath_occupancy_sums(alpha) <= cap
    out = state.copy()
    out[~keep] = 0.0
    return out


# -- initial environment states ----------------------------------------------

@dataclass(frozen=True)
class InitialEnvState:
    """Per-bath initial state: vacuum, single photon, or coherent.

    ``amplitudes`` are chain-mode coefficients (single photon: projection of
    a frequency-domain wavepacket onto the mode functions; coherent:
    displacements).  ``residual`` is the squared weight of the wavepacket
    outside the chain span, reported into the initialization error budget.
    """

    kind: str = "vacuum"              # vacuum | single_photon | coherent
    amplitudes: np.ndarray | None = None
    residual: float = 0.0

    def moments(self):
        """(mu1, mu2) of the bath occupation for the prepared state."""
        if self.kind == "vacuum":
            return 0.0, 0.0
        if self.kind == "single_photon":
            return 1.0, 1.0
        nbar = float(np.sum(np.abs(self.amplitudes) ** 2))
        return nbar, nbar * (nbar + 1.0)


def project_wavepacket(coeffs, coupling, samples_omega, samples_values):
    """Project a frequency-domain wavepacket onto the chain mode functions.

    Returns (amplitudes, residual_sq).  The wavepacket need not be
    normalized; amplitudes are c_j = <phi_j, xi> with phihat_j = q_j vhat.
    """
    from .chain import _refined_jacobi, orthonormal_polynomials

    w = np.asarray(samples_omega, dtype=float)
    xi = np.asarray(samples_values, dtype=complex)
    _, _, mass, _ = _refined_jacobi(coupling, coeffs.omega_c, coeffs.modes)
    sel = np.abs(w) <= coeffs.omega_c
    q = orthonormal_polynomials(coeffs, mass, w[sel])
    vhat = np.asarray(coupling.vhat(w[sel]))
    amps = np.trapezoid(q * (np.conj(vhat) * xi[sel])[None, :], w[sel], axis=1)
    norm_sq = float(np.trapezoid(np.abs(xi) ** 2, w))
    residual = max(norm_sq - float(np.sum(np.abs(amps) ** 2)), 0.0)
    return amps, residual


def assemble_initial_state(space: TruncatedSpace, sys_state,
                           env_states) -> tuple[np.ndarray, float]:
    """Full normalized state vector and the total initialization weight lost.

    ``sys_state`` is a dense system vector; ``env_states`` holds one
    InitialEnvState per bath.
    """
    if len(env_states) != space.baths:
        raise ShapeMismatch("need one environment state per bath")
    sys_state = np.asarray(sys_state, dtype=complex)
    if sys_state.shape != (space.sys_dim,):
        raise ShapeMismatch("system state has wrong dimension")

    table, _ = _occupation_table(space.modes, space.cap)
    blocks = []
    lost = 0.0
    for st in env_states:
        vec = np.zeros(space.block_size, dtype=complex)
        if st.kind == "vacuum":
            vec[0] = 1.0
        elif st.kind == "single_photon":
            amps = np.asarray(st.amplitudes, dtype=complex)
            if amps.shape != (space.modes,):
                raise ShapeMismatch("single-photon amplitudes need length modes")
            for j in range(space.modes):
                occ = [0] * space.modes
                occ[j] = 1
                vec[np.flatnonzero((table == occ).all(axis=1))[0]] = amps[j]
            lost += st.residual
        elif st.kind == "coherent":
            disp = np.asarray(st.amplitudes, dtype=complex)
            if disp.shape != (space.modes,):
                raise ShapeMismatch("displacements need length modes")
            for i, occ in enumerate(table):
                amp = np.exp(-0.5 * float(np.sum(np.abs(disp) ** 2)))
                for j, nj in enumerate(occ):
                    amp = amp * disp[j] ** nj / math.sqrt(math.factorial(nj))
                vec[i] = amp
            lost += 1.0 - float(np.sum(np.abs(vec) ** 2))
        else:
            raise ValueError(f"unknown environment state kind {st.kind!r}")
        nrm = float(np.linalg.norm(vec))
        if nrm == 0.0:
            raise ValueError("environment state has zero weight in the space")
        blocks.append(vec / nrm)

    env = blocks[0]
    for vec in blocks[1:]:
        env = np.kron(env, vec)
    full = np.kron(sys_state / np.linalg.norm(sys_state), env)
    return full, lost
