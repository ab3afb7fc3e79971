"""P1-center hyperfine structure: branch shifts, populations and random assignment."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

# Off-axis Jahn-Teller orientations sit at this polar angle from the field.
OFF_AXIS_BETA_DEG = 109.5

_A_DIAG = {
    # (A_perp, A_parallel) in MHz
    "N14": (81.312, 114.0264),
    "N15": (113.83, 159.7),
}


class Isotope(str, enum.Enum):
    N14 = "N14"
    N15 = "N15"


class Orientation(str, enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"

    @property
    def on_axis(self) -> bool:
        return self is Orientation.D


@dataclass(frozen=True)
class HyperfineBranch:
    label: str
    shift: float  # MHz, relative to the bare electron Larmor frequency
    population: float
    on_axis: bool | None  # None for the merged N14 m_I = 0 level
    m_I: float


@dataclass(frozen=True)
class P1Center:
    position: tuple
    orientation: Orientation
    isotope: Isotope
    m_I: float
    site_index: int = -1

    def __post_init__(self):
        allowed = (-1.0, 0.0, 1.0) if Isotope(self.isotope) is Isotope.N14 else (-0.5, 0.5)
        if self.m_I not in allowed:
            raise ValueError(f"m_I={self.m_I} invalid for {self.isotope}")

    @property
    def branch(self) -> str:
        return branch_label(self.isotope, self.orientation.on_axis, self.m_I)

    @property
    def shift(self) -> float:
        return branch_shift(self.isotope, self.orientation.on_axis, self.m_I)


def hyperfine_diag(isotope) -> tuple[float, float]:
    """``(A_perp, A_parallel)`` in MHz of the principal-axis hyperfine tensor."""
    return _A_DIAG[Isotope(isotope).value]


def _splitting(isotope, beta_deg: float) -> float:
    a_perp, a_par = hyperfine_diag(isotope)
    a_plus, a_minus = (a_par + a_perp) / 2, (a_par - a_perp) / 2
    c2b = np.cos(2 * np.deg2rad(beta_deg))
    return float(np.sqrt(a_plus**2 + a_minus**2 + 2 * a_plus * a_minus * c2b))


def branch_shift(isotope, on_axis: bool, m_I: float) -> float:
    """Electron precession shift (MHz) for a P1 center in nuclear dressed state ``m_I``."""
    isotope = Isotope(isotope)
    beta = 0.0 if on_axis else OFF_AXIS_BETA_DEG
    root = _splitting(isotope, beta)
    if isotope is Isotope.N15:
        if m_I not in (-0.5, 0.5):
            raise ValueError(f"m_I={m_I} invalid for N15")
        return float(np.sign(m_I)) * root / 2
    if m_I not in (-1, 0, 1):
        raise ValueError(f"m_I={m_I} invalid for N14")
    return float(np.sign(m_I)) * root


def branch_label(isotope, on_axis: bool | None, m_I: float) -> str:
    if m_I == 0:
        return "0"
    return f"{'on' if on_axis else 'off'}{'+' if m_I > 0 else '-'}"


def branch_populations(isotope) -> list[HyperfineBranch]:
    """Hyperfine branches with populations for an unpolarized, isotropic P1 ensemble."""
    isotope = Isotope(isotope)
    m_values = (0.5, -0.5) if isotope is Isotope.N15 else (1.0, -1.0)
    n_nuc = 2 if isotope is Isotope.N15 else 3
    out = []
    for on_axis, n_orient in ((False, 3), (True, 1)):
        for m in m_values:
            pop = Fraction(n_orient, 4 * n_nuc)
            out.append(HyperfineBranch(branch_label(isotope, on_axis, m),
                                       branch_shift(isotope, on_axis, m), float(pop), on_axis, m))
    if isotope is Isotope.N14:
        out.append(HyperfineBranch("0", 0.0, float(Fraction(4, 12)), None, 0.0))
    return out


def branch_table(isotope) -> dict[str, HyperfineBranch]:
    return {b.label: b for b in branch_populations(isotope)}


def write_branch_table(isotope, path) -> None:
    with open(path, "w") as fh:
        fh.write("# label\tshift_MHz\tpopulation\n")
        for b in branch_populations(isotope):
            fh.write(f"{b.label}\t{b.shift!r}\t{b.population!r}\n")


def sample_branches(config, isotope, seed) -> list[P1Center]:
    """Assign a random orientation and nuclear state to every impurity of ``config``.

    ``config`` is a :class:`~drivencce.lattice.BathConfiguration` (bath spins
    first, then mean-field spins) or a sequence of impurity sites. Orientations
    are uniform over A–D and nuclear states uniform over the dressed basis.
    """
    isotope = Isotope(isotope)
    sites = list(config.all_sites) if hasattr(config, "all_sites") else list(config)
    rng = np.random.default_rng(seed)
    orient = rng.integers(0, 4, size=len(sites))
    m_values = np.array([0.5, -0.5]) if isotope is Isotope.N15 else np.array([1.0, 0.0, -1.0])
    m_idx = rng.integers(0, len(m_values), size=len(sites))
    orientations = list(Orientation)
    return [
        P1Center(tuple(float(x) for x in s.position), orientations[o], isotope,
                 float(m_values[k]), s.site_index)
        for s, o, k in zip(sites, orient, m_idx)
    ]
