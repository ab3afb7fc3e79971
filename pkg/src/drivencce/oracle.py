"""
Brute-force reference: propagate the full NV ⊗ bath density matrix.

Nothing here reuses the block-diagonal shortcuts of :mod:`drivencce.dynamics`
or the operator assembly of :mod:`drivencce.hamiltonian`. Operators are built
with :func:`drivencce.spin.embed`, the drive is written as ``Δ J_z + Ω J_α``
rather than through the tilted frame, and the echo is evaluated as
``Tr[U_H ρ U_H† σ]`` for ``σ = σx, σy``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import constants

from .dynamics import CoherenceCurve, HahnEchoSchedule
from .spin import SIGMA_X, SIGMA_Y, SpinOperator, DensityMatrix, embed, evolve, local_spin_ops

MAX_BATH_SPINS = 12
_GAMMA_E = -28.024e9 * 2 * math.pi  # rad s^-1 T^-1


@dataclass(frozen=True, eq=False)
class ExactSystem:
    positions: np.ndarray  # nm
    branches: tuple
    r_d: float = math.inf

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if len(pos) > MAX_BATH_SPINS:
            raise ValueError(f"oracle refuses {len(pos)} bath spins (limit {MAX_BATH_SPINS})")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "branches", tuple(self.branches))
        if len(self.branches) != len(pos):
            raise ValueError("one branch per bath spin")

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def dim(self) -> int:
        return 2 ** (self.n + 1)


def _coupling_mhz(r_vec) -> float:
    r = float(np.linalg.norm(r_vec))
    cos2 = (r_vec[2] / r) ** 2
    rad_s = constants.mu_0 * constants.hbar * _GAMMA_E**2 / (4 * math.pi * (r * 1e-9) ** 3) * (1 - 3 * cos2)
    return rad_s / (2 * math.pi) / 1e6


def exact_hamiltonian(system: ExactSystem, protocol=None) -> SpinOperator:
    space = ["NV"] + list(range(system.n))
    jx, jy, jz = local_spin_ops(0.5)
    ident = SpinOperator(np.eye(2 ** (system.n + 1)), tuple(space))
    sz_nv = 0.5 * (ident + 2 * embed(jz, "NV", space))
    J = {i: tuple(embed(op, i, space) for op in (jx, jy, jz)) for i in range(system.n)}
    h = 0 * ident
    for i in range(system.n):
        a = _coupling_mhz(system.positions[i])
        h = h + a * (sz_nv @ J[i][2])
    for i in range(system.n):
        for j in range(i + 1, system.n):
            rv = system.positions[j] - system.positions[i]
            if np.linalg.norm(rv) > system.r_d:
                continue
            c = _coupling_mhz(rv)
            zz = J[i][2] @ J[j][2]
            if system.branches[i] == system.branches[j]:
                h = h + c * (zz - 0.5 * (J[i][0] @ J[j][0] + J[i][1] @ J[j][1]))
            else:
                h = h + c * zz
    if protocol is not None:
        for i, b in enumerate(system.branches):
            tone = protocol.tone_for(b)
            if tone is None:
                continue
            j_alpha = math.sin(tone.alpha) * J[i][0] + math.cos(tone.alpha) * J[i][1]
            h = h + tone.Delta * J[i][2] + tone.Omega * j_alpha
    return h


def exact_hahn_echo(system: ExactSystem, protocol, schedule: HahnEchoSchedule,
                    midpoint_pulse=None, return_complex: bool = False):
    """Exact ``L(2τ) = ⟨σx⟩`` after ``U(τ)(-iσx)U(τ)``.

    ``midpoint_pulse`` optionally lists one 2×2 unitary per bath spin applied
    together with the NV π pulse (DEER). With ``return_complex`` the result is
    ``⟨σx⟩ + i⟨σy⟩``.
    """
    h = exact_hamiltonian(system, protocol)
    d_bath = 2**system.n
    plus = np.array([1, 1]) / math.sqrt(2)
    rho0 = DensityMatrix(np.kron(np.outer(plus, plus), np.eye(d_bath) / d_bath))
    pulse = -1j * SIGMA_X
    if midpoint_pulse is not None:
        for p in midpoint_pulse:
            pulse = np.kron(pulse, p)
    else:
        pulse = np.kron(pulse, np.eye(d_bath))
    sx = np.kron(SIGMA_X, np.eye(d_bath))
    sy = np.kron(SIGMA_Y, np.eye(d_bath))
    out = []
    for tau in schedule.tau_grid:
        u = evolve(h, tau)
        if not u.is_unitary():
            raise RuntimeError("propagator lost unitarity")
        rho = u.apply(rho0).matrix
        rho = pulse @ rho @ pulse.conj().T
        rho = u.apply(DensityMatrix(rho))
        if abs(np.trace(rho.matrix) - 1) > 1e-10:
            raise RuntimeError("trace not preserved")
        lx = np.trace(rho.matrix @ sx)
        ly = np.trace(rho.matrix @ sy)
        out.append(lx.real + 1j * ly.real)
    out = np.array(out)
    if return_complex:
        return out
    return CoherenceCurve(schedule.times, out.real, {"oracle": True, "n_spins": system.n}, out)
