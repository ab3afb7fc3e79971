import numpy as np
import pytest

from drivencce.dynamics import HahnEchoSchedule, flip_flop_rate, hahn_echo
from drivencce.hamiltonian import SpinCluster, dipolar_coupling, free_protocol, preset_protocol, secular_nv_coupling
from drivencce.oracle import MAX_BATH_SPINS, ExactSystem, exact_hahn_echo, exact_hamiltonian

SCHED = HahnEchoSchedule(np.linspace(0.2, 4.0, 12))


def test_empty_system():
    c = exact_hahn_echo(ExactSystem(np.zeros((0, 3)), []), None, SCHED)
    assert np.allclose(c.values, 1.0, atol=1e-14)


def test_refuses_large_systems():
    with pytest.raises(ValueError):
        ExactSystem(np.ones((MAX_BATH_SPINS + 1, 3)), ["off+"] * (MAX_BATH_SPINS + 1))


def test_hamiltonian_hermitian(rng):
    h = exact_hamiltonian(ExactSystem(rng.normal(size=(3, 3)) * 2, ["off+", "off+", "on-"]),
                          preset_protocol("hybrid_lg"))
    assert h.dim == 16 and h.is_hermitian()


def test_pair_envelope_follows_pseudo_spin():
    # Two same-branch spins far from each other's branch partners: with the NV
    # in |0> they flip freely, with the NV in |+1> they are detuned by A_B.
    # The echo is bounded below by the pseudo-spin flip amplitudes.
    pos = np.array([[1.2, 0.4, 2.0], [2.5, -0.7, 1.1]])
    c = dipolar_coupling(*pos)
    a_b = secular_nv_coupling(pos[0]) - secular_nv_coupling(pos[1])
    curve = exact_hahn_echo(ExactSystem(pos, ["off+", "off+"]), None, SCHED)
    assert np.all(curve.values <= 1 + 1e-12)
    depth = 1 - curve.values.min()
    assert depth <= 2 * (flip_flop_rate(0, c).amplitude ** 2) + 1e-12
    assert depth > 0
    # undetuned pair with no NV coupling difference does nothing
    sym = np.array([[1.0, 1.0, 0.5], [-1.0, -1.0, 0.5]])
    flat = exact_hahn_echo(ExactSystem(sym, ["off+", "off+"]), None, SCHED)
    assert np.abs(flat.values - 1).max() < 1e-10
    assert a_b != 0


@pytest.mark.parametrize("proto", ["free", "hybrid_lg"])
def test_agrees_with_block_dynamics(rng, proto):
    pos = rng.normal(size=(4, 3)) * 2
    br = ["off+", "off-", "off+", "on+"]
    o = exact_hahn_echo(ExactSystem(pos, br), preset_protocol(proto), SCHED)
    d = hahn_echo(SpinCluster(pos, br), preset_protocol(proto), SCHED)
    assert np.abs(o.values - d.values).max() < 1e-12


def test_r_d_respected():
    pos = np.array([[0, 0, 1.5], [0, 0, 5.0]])
    cut = exact_hahn_echo(ExactSystem(pos, ["off+"] * 2, r_d=2.0), None, SCHED)
    assert np.abs(cut.values - 1).max() < 1e-10
