import numpy as np
import pytest

from drivencce.lattice import generate_bath
from drivencce.p1 import (
    Isotope,
    Orientation,
    P1Center,
    branch_populations,
    branch_shift,
    branch_table,
    hyperfine_diag,
    sample_branches,
    write_branch_table,
)


def test_hyperfine_diag_values():
    assert hyperfine_diag("N15")[1] == 159.7
    assert hyperfine_diag("N14")[1] == 114.0264
    a_perp, a_par = hyperfine_diag("N15")
    assert (a_par + a_perp) / 2 == pytest.approx(136.765, abs=1e-12)


@pytest.mark.parametrize("iso,on,m,expected", [
    ("N15", True, 0.5, 79.85), ("N15", True, -0.5, -79.85),
    ("N15", False, 0.5, 59.91), ("N15", False, -0.5, -59.91),
    ("N14", True, 1, 114.03), ("N14", True, -1, -114.03),
    ("N14", False, 1, 85.58), ("N14", False, -1, -85.58),
    ("N14", False, 0, 0.0), ("N14", True, 0, 0.0),
])
def test_branch_shift_table(iso, on, m, expected):
    assert branch_shift(iso, on, m) == pytest.approx(expected, abs=0.01)


@pytest.mark.parametrize("iso,m", [("N15", 0.5), ("N14", 1)])
def test_shift_odd_under_nuclear_flip(iso, m):
    for on in (True, False):
        assert branch_shift(iso, on, -m) == -branch_shift(iso, on, m)


def test_on_axis_n15_is_half_a_parallel():
    assert branch_shift("N15", True, 0.5) == pytest.approx(159.7 / 2, abs=1e-12)


def test_invalid_nuclear_state():
    with pytest.raises(ValueError):
        branch_shift("N15", True, 1)
    with pytest.raises(ValueError):
        P1Center((0, 0, 1), Orientation.A, Isotope.N15, 0.0)


def test_orientation_axis():
    assert Orientation.D.on_axis
    assert not any(o.on_axis for o in (Orientation.A, Orientation.B, Orientation.C))


def test_populations():
    n15 = branch_populations("N15")
    assert [b.population for b in n15] == [3 / 8, 3 / 8, 1 / 8, 1 / 8]
    n14 = branch_populations("N14")
    assert len(n14) == 5
    for table in (n15, n14):
        assert abs(sum(b.population for b in table) - 1) < 1e-12
        shifts = sorted(b.shift for b in table)
        assert np.allclose(shifts, sorted(-s for s in shifts))


def test_branch_table_export(tmp_path):
    path = tmp_path / "branches.tsv"
    write_branch_table("N14", path)
    rows = [line.split("\t") for line in path.read_text().splitlines()[1:]]
    assert {r[0] for r in rows} == set(branch_table("N14"))
    assert sum(float(r[2]) for r in rows) == pytest.approx(1.0)


def test_sampling_statistics():
    # multinomial oracle: each branch count within 3 binomial sigma of n·p
    sites = [type("S", (), {"position": (1.0, 0, 0), "site_index": i})() for i in range(100_000)]
    centers = sample_branches(sites, "N15", 11)
    labels = np.array([c.branch for c in centers])
    n = len(labels)
    for b in branch_populations("N15"):
        k = np.count_nonzero(labels == b.label)
        sigma = np.sqrt(n * b.population * (1 - b.population))
        assert abs(k - n * b.population) < 3 * sigma
    assert {c.m_I for c in centers} == {0.5, -0.5}


def test_sampling_deterministic():
    cfg = generate_bath(20, 10, 5, 3)
    a = sample_branches(cfg, "N14", 99)
    b = sample_branches(cfg, "N14", 99)
    assert a == b
    assert len(a) == 15
    assert a[0].position == cfg.bath_spins[0].position
