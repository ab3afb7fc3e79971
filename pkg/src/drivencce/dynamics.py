"""
Hahn-echo and DEER coherence of an NV center coupled to a bath cluster.

The NV is treated in a two-level subspace, so every cluster Hamiltonian is
block diagonal: ``H_up = H_B + Σ A_i J_z^i`` when ``S_z = 1`` and
``H_dn = H_B`` when ``S_z = 0``. For ``ρ = |X+⟩⟨X+| ⊗ 𝟙/d`` the echo signal is

    l(2τ) = ⟨σx⟩ + i⟨σy⟩ = Tr[U_dn U_up U_dn† U_up†] / d,

which only needs the two ``d × d`` blocks. Writing ``W = V_dn† V_up`` in the
eigenbases of both blocks and ``X = W e^{-2πi E_up τ} W†`` gives
``l = Σ_ab e_a |X_ab|² e_b* / d`` with ``e = e^{-2πi E_dn τ}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import (
    ClusterOperators,
    DrivingProtocol,
    SpinCluster,
    cluster_operators,
    free_protocol,
)
from .spin import apply_local, evolve

_BATCH_BYTES = 64 * 2**20


@dataclass(frozen=True)
class HahnEchoSchedule:
    tau_grid: np.ndarray  # µs

    def __post_init__(self):
        tau = np.asarray(self.tau_grid, dtype=float).ravel()
        if tau.size == 0:
            raise ValueError("τ grid is empty")
        if np.any(tau <= 0) or np.any(np.diff(tau) <= 0):
            raise ValueError("τ values must be positive and strictly increasing")
        object.__setattr__(self, "tau_grid", tau)

    @property
    def times(self) -> np.ndarray:
        return 2 * self.tau_grid

    def __len__(self) -> int:
        return self.tau_grid.size


@dataclass
class CoherenceCurve:
    times: np.ndarray  # 2τ in µs
    values: np.ndarray  # L = Re l
    metadata: dict = field(default_factory=dict)
    complex_values: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal length")

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values), initial=0.0))

    def write(self, path, protocol: str = "", seed="") -> None:
        """Tab-separated ``2τ, L, protocol, seed`` with repr floats."""
        with open(path, "w") as fh:
            fh.write("# two_tau_us\tL\tprotocol\tseed\n")
            for t, v in zip(self.times, self.values):
                fh.write(f"{float(t)!r}\t{float(v)!r}\t{protocol}\t{seed}\n")

    @classmethod
    def read(cls, path) -> "CoherenceCurve":
        data = np.loadtxt(path, usecols=(0, 1), ndmin=2, comments="#")
        return cls(data[:, 0], data[:, 1])


def tau_mask(tau_grid, rabi_frequencies, threshold: float = 0.1) -> np.ndarray:
    """True where ``τ`` is kept: ``2τ·Ω̄`` must not sit within ``threshold`` cycles above an integer."""
    tau = np.asarray(tau_grid, dtype=float)
    keep = np.ones(tau.shape, dtype=bool)
    for w in rabi_frequencies:
        if w > 0:
            keep &= np.mod(2 * tau * w, 1.0) >= threshold
    return keep


def masked_schedule(tau_grid, protocol: DrivingProtocol, threshold: float = 0.1):
    """Apply :func:`tau_mask` for the active tones of ``protocol``; returns ``(schedule, mask)``."""
    tau = np.asarray(tau_grid, dtype=float)
    keep = tau_mask(tau, protocol.effective_rabi, threshold)
    return HahnEchoSchedule(tau[keep]), keep


def _tau_batches(n_tau: int, d: int):
    step = max(1, _BATCH_BYTES // (16 * d * d))
    for start in range(0, n_tau, step):
        yield slice(start, min(n_tau, start + step))


def echo_from_blocks(h_up: np.ndarray, h_dn: np.ndarray, tau_grid) -> np.ndarray:
    """Complex Hahn-echo signal ``l(2τ)`` from the two NV-conditioned bath blocks."""
    tau = np.asarray(tau_grid, dtype=float)
    d = h_up.shape[0]
    if d == 1:
        phase = np.exp(-2j * np.pi * (h_up[0, 0] - h_dn[0, 0]) * tau)
        return phase * np.conj(phase) + 0j
    e_up, v_up = np.linalg.eigh(h_up)
    e_dn, v_dn = np.linalg.eigh(h_dn)
    w = v_dn.conj().T @ v_up
    wh = w.conj().T
    out = np.empty(tau.size, dtype=complex)
    for sl in _tau_batches(tau.size, d):
        ph_up = np.exp(-2j * np.pi * np.outer(tau[sl], e_up))
        ph_dn = np.exp(-2j * np.pi * np.outer(tau[sl], e_dn))
        x = (w[None, :, :] * ph_up[:, None, :]) @ wh[None, :, :]
        a2 = (x * x.conj()).real
        out[sl] = np.einsum("ta,tab,tb->t", ph_dn, a2, ph_dn.conj()) / d
    return out


def echo_from_operators(ops: ClusterOperators, tau_grid, mean_field=None) -> np.ndarray:
    h_up, h_dn = ops.blocks(mean_field)
    return echo_from_blocks(h_up, h_dn, tau_grid)


def hahn_echo(cluster: SpinCluster, protocol: DrivingProtocol | None, schedule: HahnEchoSchedule,
              mean_field=None, max_spins: int = 12, metadata: dict | None = None) -> CoherenceCurve:
    """Hahn-echo coherence of the NV for a single cluster (no truncation)."""
    protocol = protocol or free_protocol()
    ops = cluster_operators(cluster, protocol, max_spins=max_spins)
    l = echo_from_operators(ops, schedule.tau_grid, mean_field)
    meta = {"protocol": protocol.label, "n_spins": cluster.n}
    meta.update(metadata or {})
    return CoherenceCurve(schedule.times, l.real, meta, l)


# --- two-spin flip-flops -------------------------------------------------------

@dataclass(frozen=True)
class FlipFlop:
    amplitude: float
    frequency: float  # MHz; |⟨⇓|U|⇑⟩| = amplitude·|sin(2π·frequency·t/4)|

    def transition(self, t) -> np.ndarray:
        return self.amplitude * np.abs(np.sin(2 * np.pi * self.frequency * np.asarray(t) / 4))


def flip_flop_rate(A_B: float, C: float) -> FlipFlop:
    """Pseudo-spin flip-flop amplitude and frequency for a pair detuned by ``A_B``.

    Pair Hamiltonian: ``a_1 J_z¹ + a_2 J_z² + C[J_z¹J_z² - (J_x¹J_x² + J_y¹J_y²)/2]``
    with ``A_B = a_1 - a_2``.
    """
    freq = math.sqrt(4 * A_B * A_B + C * C)
    if freq == 0:
        return FlipFlop(1.0, 0.0)
    return FlipFlop(abs(C) / freq, freq)


# --- DEER ------------------------------------------------------------------------

@dataclass
class DEERScan:
    probe_frequencies: np.ndarray
    coherence: np.ndarray
    reference: float = 1.0  # Hahn-echo value without a bath pulse
    metadata: dict = field(default_factory=dict)

    def dips(self, depth: float = 0.0) -> np.ndarray:
        """Probe frequencies of local minima lying below ``reference - depth``."""
        c = self.coherence
        idx = [i for i in range(1, len(c) - 1)
               if c[i] <= c[i - 1] and c[i] <= c[i + 1] and c[i] < self.reference - depth]
        return self.probe_frequencies[idx]


def bath_pulse(detuning: float, linewidth: float) -> np.ndarray:
    """Selective bath π pulse as a rectangular rotation of Rabi frequency ``linewidth``.

    Resonant spins (``detuning = 0``) are inverted exactly; the pulse is
    applied instantaneously on the NV time scale.
    """
    from .hamiltonian import SPIN_HALF_OPS

    h = detuning * SPIN_HALF_OPS["z"] + linewidth * SPIN_HALF_OPS["x"]
    return evolve(h, 1 / (2 * linewidth)).matrix


def _conj_by_pulse(pulses, m):
    # P M P† = (P (P M)†)†
    pm = apply_local(pulses, m)
    return apply_local(pulses, pm.conj().T).conj().T


def deer_signal(ops: ClusterOperators, shifts, probes, tau: float, linewidth: float = 2.0) -> np.ndarray:
    """Complex DEER echo ``Tr[P M P† N]/d`` for each probe, ``M = U_up U_dn†``, ``N = U_up† U_dn``."""
    h_up, h_dn = ops.blocks()
    u_up = evolve(h_up, tau).matrix
    u_dn = evolve(h_dn, tau).matrix
    m = u_up @ u_dn.conj().T
    nmat = u_up.conj().T @ u_dn
    d = m.shape[0]
    out = np.empty(len(probes), dtype=complex)
    for k, f in enumerate(probes):
        pulses = [bath_pulse(s - f, linewidth) for s in shifts]
        pmp = _conj_by_pulse(pulses, m)
        out[k] = np.einsum("ij,ji->", pmp, nmat) / d
    return out


def deer_spectrum(config, isotope, probe_grid, fixed_tau: float | None = None, linewidth: float = 2.0,
                  branch_seed: int = 0, centers=None) -> DEERScan:
    """DEER scan of one configuration; bath spins are flipped at the echo midpoint.

    ``fixed_tau`` defaults to ``0.2 / max|A_Sz|`` so the strongest coupled spin
    stays within a quarter turn of phase.
    """
    from .hamiltonian import nv_couplings
    from .lattice import interaction_cutoff
    from .p1 import sample_branches

    if centers is None:
        centers = sample_branches(config.bath_spins, isotope, branch_seed)
    positions = np.array([c.position for c in centers], dtype=float).reshape(-1, 3)
    r_d = interaction_cutoff(config.concentration_ppm) if hasattr(config, "concentration_ppm") else math.inf
    cluster = SpinCluster(positions, [c.branch for c in centers], r_d)
    probes = np.asarray(probe_grid, dtype=float)
    if cluster.n == 0:
        return DEERScan(probes, np.ones(probes.size), 1.0)
    if fixed_tau is None:
        fixed_tau = 0.2 / float(np.max(np.abs(nv_couplings(positions))))
    ops = cluster_operators(cluster, free_protocol())
    shifts = [c.shift for c in centers]
    l = deer_signal(ops, shifts, probes, fixed_tau, linewidth)
    ref = echo_from_operators(ops, [fixed_tau])[0].real
    return DEERScan(probes, l.real, float(ref), {"tau": fixed_tau, "linewidth": linewidth})


def deer_ensemble(concentration_ppm: float, isotope, probe_grid, n_bath: int = 8, n_configs: int = 10,
                  master_seed: int = 0, linewidth: float = 2.0, fixed_tau: float | None = None) -> DEERScan:
    """Average DEER scans over independent configurations.

    A handful of spins rarely samples every branch, so averaging is needed for
    all resonances to show up.
    """
    from .lattice import generate_bath, split_seed

    probes = np.asarray(probe_grid, dtype=float)
    total = np.zeros(probes.size)
    ref = 0.0
    for i in range(n_configs):
        seed = split_seed(master_seed, i)
        cfg = generate_bath(concentration_ppm, n_bath, 0, seed)
        scan = deer_spectrum(cfg, isotope, probes, fixed_tau, linewidth, branch_seed=split_seed(seed, 1))
        total += scan.coherence
        ref += scan.reference
    return DEERScan(probes, total / n_configs, ref / n_configs,
                    {"n_configs": n_configs, "n_bath": n_bath, "linewidth": linewidth,
                     "concentration_ppm": concentration_ppm})
