"""
Cluster Hamiltonians for an NV center coupled to a driven P1 bath.

Every bath spin lives in the rotating frame of its own hyperfine branch, so
the branch shift itself drops out. What remains (in MHz):

* pair couplings: ``C[ZZ - (XX + YY)/2]`` within a branch, ``C ZZ`` across branches;
* NV dephasing ``A_Sz S_z J_z`` with ``S_z = (1 + σz)/2``;
* driving ``Δ J_z + Ω J_α = Ω̄ J_P`` for spins whose branch carries a tone;
* optional static mean-field shifts along each spin's own ``P`` axis.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import constants, sparse
from scipy.spatial import cKDTree

from .spin import SpinOperator, kron_all

GAMMA_E_MHZ_PER_T = -28024.0  # electron γ/2π

_SX = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
_SY = np.array([[0, -0.5j], [0.5j, 0]], dtype=complex)
_SZ = np.array([[0.5, 0], [0, -0.5]], dtype=complex)
_ID = np.eye(2, dtype=complex)
SPIN_HALF_OPS = {"x": _SX, "y": _SY, "z": _SZ}

MAGIC_COS = 1 / math.sqrt(3)


def dipolar_prefactor(gamma_i: float = GAMMA_E_MHZ_PER_T, gamma_j: float = GAMMA_E_MHZ_PER_T) -> float:
    """``μ0 ħ γi γj / 4π`` expressed in MHz·nm³ (γ given as γ/2π in MHz/T)."""
    gi = 2 * np.pi * gamma_i * 1e6
    gj = 2 * np.pi * gamma_j * 1e6
    rad_per_s = constants.mu_0 / (4 * np.pi) * constants.hbar * gi * gj / 1e-27
    return rad_per_s / (2 * np.pi) / 1e6


_EE = dipolar_prefactor()


def dipolar_coupling(pos_i, pos_j, gamma_i: float = GAMMA_E_MHZ_PER_T,
                     gamma_j: float = GAMMA_E_MHZ_PER_T) -> float:
    """Secular dipolar coupling ``C_ij`` (MHz) between two spins at positions in nm."""
    r = np.asarray(pos_j, dtype=float) - np.asarray(pos_i, dtype=float)
    d = float(np.linalg.norm(r))
    if d == 0:
        raise ValueError("dipolar coupling undefined at zero separation")
    return dipolar_prefactor(gamma_i, gamma_j) / d**3 * (1 - 3 * (r[2] / d) ** 2)


def coupling_matrix(positions) -> np.ndarray:
    """All pairwise electron-electron ``C_ij`` (MHz); zero on the diagonal."""
    x = np.asarray(positions, dtype=float).reshape(-1, 3)
    diff = x[None, :, :] - x[:, None, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, 1.0)
    c = _EE / d2**1.5 * (1 - 3 * diff[..., 2] ** 2 / d2)
    np.fill_diagonal(c, 0.0)
    return c


def secular_nv_coupling(pos_bath, gamma_s: float = GAMMA_E_MHZ_PER_T,
                        gamma_i: float = GAMMA_E_MHZ_PER_T) -> float:
    """z-component ``A_Sz`` (MHz) of the NV–bath coupling for an NV at the origin."""
    r = np.asarray(pos_bath, dtype=float)
    d = float(np.linalg.norm(r))
    if d == 0:
        raise ValueError("NV coupling undefined at zero separation")
    return dipolar_prefactor(gamma_s, gamma_i) / d**3 * (1 - 3 * (r[2] / d) ** 2)


def nv_couplings(positions) -> np.ndarray:
    x = np.asarray(positions, dtype=float).reshape(-1, 3)
    d = np.linalg.norm(x, axis=1)
    if np.any(d == 0):
        raise ValueError("bath spin at the NV site")
    return _EE / d**3 * (1 - 3 * (x[:, 2] / d) ** 2)


# --- driving -----------------------------------------------------------------

@dataclass(frozen=True)
class DrivingTone:
    target_branch: str
    Omega: float  # MHz
    Delta: float = 0.0  # MHz, detuning from the branch resonance
    alpha: float = 0.0  # rad

    def __post_init__(self):
        if self.Omega < 0:
            raise ValueError("Rabi frequency must be non-negative")


@dataclass(frozen=True)
class TiltedFrame:
    theta: float = 0.0
    Omega_bar: float = 0.0
    alpha: float = 0.0

    @property
    def cos(self) -> float:
        return math.cos(self.theta)

    @property
    def sin(self) -> float:
        return math.sin(self.theta)

    def axes(self):
        """Unit vectors ``(P, Q, Q⊥)`` in lab ``(x, y, z)`` coordinates."""
        a = np.array([math.sin(self.alpha), math.cos(self.alpha), 0.0])
        a_perp = np.array([math.cos(self.alpha), -math.sin(self.alpha), 0.0])
        z = np.array([0.0, 0.0, 1.0])
        p = self.cos * z + self.sin * a
        q = self.cos * a - self.sin * z
        return p, q, a_perp

    def operators(self):
        """Spin-1/2 matrices ``(J_P, J_Q, J_Q⊥)``."""
        return tuple(v[0] * _SX + v[1] * _SY + v[2] * _SZ for v in self.axes())


IDENTITY_FRAME = TiltedFrame()


def tilted_frame(tone: DrivingTone | None = None) -> TiltedFrame:
    """Frame whose ``P`` axis is the effective field ``Δ ẑ + Ω α̂`` of ``tone``."""
    if tone is None or (tone.Omega == 0 and tone.Delta == 0):
        return IDENTITY_FRAME
    return TiltedFrame(math.atan2(tone.Omega, tone.Delta), math.hypot(tone.Omega, tone.Delta), tone.alpha)


class ProtocolName(str, enum.Enum):
    FREE = "free"
    RESONANT = "resonant"
    LG = "lg"
    HYBRID_LG = "hybrid_lg"


def _is_magic(tone: DrivingTone, tol: float = 1e-9) -> bool:
    return tone.Omega > 0 and abs(abs(tone.Delta) - tone.Omega / math.sqrt(2)) <= tol * max(1.0, tone.Omega)


@dataclass(frozen=True)
class DrivingProtocol:
    name: str = "free"
    tones: tuple = ()
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tones", tuple(self.tones))
        object.__setattr__(self, "name", ProtocolName(self.name).value)
        if not self.label:
            object.__setattr__(self, "label", self.name)
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        targets = [t.target_branch for t in self.tones]
        if len(set(targets)) != len(targets):
            out.append("at most one tone per branch is allowed")
        if self.name == "free" and self.tones:
            out.append("the free protocol carries no tones")
        if self.name == "hybrid_lg":
            if not any(t.Delta == 0 and t.Omega > 0 for t in self.tones):
                out.append("hybrid_lg needs at least one resonant tone")
            if not any(_is_magic(t) for t in self.tones):
                out.append("hybrid_lg needs at least one tone at the magic detuning |Δ| = Ω/√2")
        return out

    def tone_for(self, branch: str) -> DrivingTone | None:
        for t in self.tones:
            if t.target_branch == branch:
                return t
        return None

    def frame_for(self, branch: str) -> TiltedFrame:
        return tilted_frame(self.tone_for(branch))

    @property
    def effective_rabi(self) -> list[float]:
        return [tilted_frame(t).Omega_bar for t in self.tones if t.Omega > 0 or t.Delta != 0]


def free_protocol() -> DrivingProtocol:
    return DrivingProtocol("free", (), "free")


def resonant_protocol(branches, Omega: float, label: str = "") -> DrivingProtocol:
    tones = tuple(DrivingTone(b, Omega) for b in branches)
    return DrivingProtocol("resonant", tones, label or f"resonant{len(tones)}")


def lg_protocol(branches, Omega: float, sign: int = 1, label: str = "lg") -> DrivingProtocol:
    d = sign * Omega / math.sqrt(2)
    return DrivingProtocol("lg", tuple(DrivingTone(b, Omega, d) for b in branches), label)


def hybrid_lg_protocol(resonant_branch: str, magic_branch: str, Omega: float,
                       sign: int = 1, label: str = "hybrid_lg") -> DrivingProtocol:
    tones = (DrivingTone(resonant_branch, Omega, 0.0),
             DrivingTone(magic_branch, Omega, sign * Omega / math.sqrt(2)))
    return DrivingProtocol("hybrid_lg", tones, label)


def preset_protocol(key: str, Omega: float = 7.0, isotope: str = "N15", magic_sign: int = 1) -> DrivingProtocol:
    """The driving schemes compared in the T2-vs-concentration study.

    ``resonant2`` and ``hybrid_lg`` address the two off-axis branches (the most
    populated ones); ``resonant4`` adds the two on-axis branches.
    """
    if key == "free":
        return free_protocol()
    if key == "resonant2":
        return resonant_protocol(("off+", "off-"), Omega, "resonant2")
    if key == "resonant4":
        return resonant_protocol(("off+", "off-", "on+", "on-"), Omega, "resonant4")
    if key == "hybrid_lg":
        return hybrid_lg_protocol("off-", "off+", Omega, magic_sign)
    if key == "lg2":
        return lg_protocol(("off+", "off-"), Omega, magic_sign, "lg2")
    raise KeyError(f"unknown protocol preset {key!r}")


# --- clusters ----------------------------------------------------------------

@dataclass(frozen=True)
class DipolarCoupling:
    C: float
    pair: tuple
    flip_flop_allowed: bool


@dataclass(frozen=True, eq=False)
class SpinCluster:
    """Bath spins (positions in nm, branch labels) coupled to an NV at the origin."""

    positions: np.ndarray
    branches: tuple
    r_d: float = math.inf
    indices: tuple = ()

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "branches", tuple(self.branches))
        if len(self.branches) != len(pos):
            raise ValueError("one branch label per bath spin is required")
        if not self.indices:
            object.__setattr__(self, "indices", tuple(range(len(pos))))

    @property
    def n(self) -> int:
        return len(self.branches)

    def couplings(self) -> list[DipolarCoupling]:
        c = coupling_matrix(self.positions)
        d = np.linalg.norm(self.positions[:, None] - self.positions[None], axis=-1)
        out = []
        for i in range(self.n):
            for j in range(i + 1, self.n):
                if d[i, j] <= self.r_d:
                    out.append(DipolarCoupling(float(c[i, j]), (i, j), self.branches[i] == self.branches[j]))
        return out


def two_site(a: np.ndarray, i: int, b: np.ndarray, j: int, n: int) -> np.ndarray:
    ops = [_ID] * n
    ops[i] = a
    ops[j] = b
    return kron_all(ops)


def one_site(a: np.ndarray, i: int, n: int) -> np.ndarray:
    ops = [_ID] * n
    ops[i] = a
    return kron_all(ops)


@dataclass(frozen=True, eq=False)
class ClusterOperators:
    """Bath-space pieces of a cluster Hamiltonian.

    With the NV in ``S_z = 1`` the bath sees ``h_bath + nv_term``; with
    ``S_z = 0`` it sees ``h_bath``. ``jp[i]`` is spin ``i``'s ``J_P`` on the
    bath space, used to add mean-field shifts.
    """

    h_bath: np.ndarray
    nv_term: np.ndarray
    jp: tuple
    frames: tuple
    real: bool

    def blocks(self, mean_field=None):
        h = self.h_bath
        if mean_field is not None:
            mf = np.asarray(mean_field)
            if np.any(mf):
                h = h + sum(b * op for b, op in zip(mf, self.jp) if b != 0)
        return h + self.nv_term, h


def cluster_operators(cluster: SpinCluster, protocol: DrivingProtocol, max_spins: int = 12) -> ClusterOperators:
    n = cluster.n
    if n > max_spins:
        raise ValueError(f"cluster of {n} bath spins exceeds the limit of {max_spins}")
    dim = 2**n
    h = np.zeros((dim, dim), dtype=complex)
    for cp in cluster.couplings():
        i, j = cp.pair
        if cp.flip_flop_allowed:
            h += cp.C * (two_site(_SZ, i, _SZ, j, n)
                         - 0.5 * (two_site(_SX, i, _SX, j, n) + two_site(_SY, i, _SY, j, n)))
        else:
            h += cp.C * two_site(_SZ, i, _SZ, j, n)
    frames = tuple(protocol.frame_for(b) for b in cluster.branches)
    jp = []
    for i, fr in enumerate(frames):
        p_op = fr.operators()[0]
        jp.append(one_site(p_op, i, n))
        if fr.Omega_bar:
            h += fr.Omega_bar * jp[-1]
    a = nv_couplings(cluster.positions) if n else np.zeros(0)
    # J_z^i is diagonal: (+1/2, -1/2) on bit i (site 0 is the most significant bit)
    bits = (np.arange(dim)[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    nv_diag = ((0.5 - bits) * a[None, :]).sum(axis=1) if n else np.zeros(1)
    real = all(abs(fr.sin * math.cos(fr.alpha)) < 1e-15 for fr in frames)
    if real:
        h = h.real.copy()
        jp = [op.real.copy() for op in jp]
    return ClusterOperators(h, np.diag(nv_diag), tuple(jp), frames, real)


def cluster_hamiltonian(cluster: SpinCluster, protocol: DrivingProtocol, mean_field=None,
                        max_dim: int = 8192) -> SpinOperator:
    """Full Hamiltonian on ``NV ⊗ bath``; the NV is the leftmost qubit."""
    if 2 ** (cluster.n + 1) > max_dim:
        raise ValueError(f"Hilbert dimension 2^{cluster.n + 1} exceeds max_dim={max_dim}")
    ops = cluster_operators(cluster, protocol, max_spins=cluster.n)
    h_up, h_dn = ops.blocks(mean_field)
    up = np.diag([1.0, 0.0])
    dn = np.diag([0.0, 1.0])
    full = np.kron(up, h_up) + np.kron(dn, h_dn)
    labels = ("NV",) + tuple(cluster.indices)
    return SpinOperator(full, labels, (2,) * (cluster.n + 1))


# --- mean field ---------------------------------------------------------------

def mean_field_coefficient(frame_i: TiltedFrame, frame_j: TiltedFrame, same_branch: bool, C_ij: float) -> float:
    """Coefficient multiplying ``J_P^i ⟨J_P^j⟩`` for a static neighbour ``j``."""
    if same_branch:
        return C_ij * (frame_i.cos**2 - 0.5 * frame_i.sin**2)
    return C_ij * frame_i.cos * frame_j.cos


def mean_field_term(cluster: SpinCluster, cluster_spin: int, mf_position, mf_branch: str,
                    projection: float, protocol: DrivingProtocol) -> SpinOperator:
    """Static shift on ``cluster_spin`` from one mean-field spin locked at ``projection``."""
    if abs(abs(projection) - 0.5) > 1e-12:
        raise ValueError("mean-field projection must be ±1/2")
    branch_i = cluster.branches[cluster_spin]
    fi, fj = protocol.frame_for(branch_i), protocol.frame_for(mf_branch)
    pos_i = cluster.positions[cluster_spin]
    if np.linalg.norm(np.asarray(mf_position) - pos_i) > cluster.r_d:
        coeff = 0.0
    else:
        coeff = mean_field_coefficient(fi, fj, branch_i == mf_branch, dipolar_coupling(pos_i, mf_position))
    op = one_site(fi.operators()[0], cluster_spin, cluster.n)
    return SpinOperator(coeff * projection * op, tuple(cluster.indices), (2,) * cluster.n)


def mean_field_matrix(bath_positions, bath_branches, all_positions, all_branches,
                      protocol: DrivingProtocol, r_d: float) -> sparse.csr_matrix:
    """Sparse ``G`` with ``G[i, j]`` the mean-field coefficient of spin ``j`` on bath spin ``i``.

    Columns index ``all_positions`` (bath spins first, then the mean-field
    shell). Pairs farther apart than ``r_d`` and the self term are zero.
    """
    bp = np.asarray(bath_positions, dtype=float).reshape(-1, 3)
    ap = np.asarray(all_positions, dtype=float).reshape(-1, 3)
    n_b, n_a = len(bp), len(ap)
    if n_b == 0 or n_a == 0:
        return sparse.csr_matrix((n_b, n_a))
    tree_a = cKDTree(ap)
    tree_b = cKDTree(bp)
    r = min(r_d, 1e12)
    pairs = tree_b.query_ball_tree(tree_a, r)
    frames_b = [protocol.frame_for(b) for b in bath_branches]
    frame_cache = {}
    rows, cols, vals = [], [], []
    for i, js in enumerate(pairs):
        for j in js:
            if j == i and np.all(ap[j] == bp[i]):
                continue
            rvec = ap[j] - bp[i]
            d = float(np.linalg.norm(rvec))
            if d == 0:
                continue
            c = _EE / d**3 * (1 - 3 * (rvec[2] / d) ** 2)
            bj = all_branches[j]
            if bj not in frame_cache:
                frame_cache[bj] = protocol.frame_for(bj)
            v = mean_field_coefficient(frames_b[i], frame_cache[bj], bath_branches[i] == bj, c)
            if v != 0:
                rows.append(i)
                cols.append(j)
                vals.append(v)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n_b, n_a))


# --- first-order average Hamiltonian ------------------------------------------

@dataclass(frozen=True)
class AveragedInteraction:
    """Secular pair interaction in units of ``C``: ``pp·J_P J_P + transverse·(J_Q J_Q + J_Q⊥ J_Q⊥)``."""

    pp: float
    transverse: float

    @property
    def scalar(self) -> float:
        """Coefficient of the isotropic part ``J¹·J²``."""
        return (self.pp + self.transverse) / 2

    @property
    def antisymmetric(self) -> float:
        """Coefficient of ``J_P J_P - J_Q J_Q - J_Q⊥ J_Q⊥``."""
        return (self.pp - self.transverse) / 2

    @property
    def vanishes(self) -> bool:
        return abs(self.pp) < 1e-12 and abs(self.transverse) < 1e-12


def averaged_interaction(theta_1: float, theta_2: float, same_branch: bool,
                         same_Omega_bar: bool) -> AveragedInteraction:
    """First-order average of a dipolar pair coupling in the frames of two drives.

    ``same_Omega_bar`` selects the regime ``|Ω̄1 - Ω̄2| << C`` (transverse
    terms co-rotate and survive); otherwise ``|Ω̄1 - Ω̄2| >> C`` and only the
    ``J_P J_P`` part is secular.
    """
    c1, s1, c2, s2 = math.cos(theta_1), math.sin(theta_1), math.cos(theta_2), math.sin(theta_2)
    if same_branch:
        if abs(theta_1 - theta_2) > 1e-12:
            raise ValueError("spins of one branch share the same drive and tilt angle")
        p2 = c1 * c1 - 0.5 * s1 * s1
        return AveragedInteraction(p2, -0.5 * p2)
    if same_Omega_bar:
        return AveragedInteraction(c1 * c2, 0.5 * s1 * s2)
    return AveragedInteraction(c1 * c2, 0.0)
