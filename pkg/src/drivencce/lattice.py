"""
Random P1 configurations on the diamond lattice around a central NV at the origin.

Impurities occupy carbon sites independently with probability ``ppm * 1e-6``.
The lattice is grown one cubic shell of unit cells at a time until the sphere
holding the requested number of bath and mean-field spins is fully populated,
so arbitrarily low concentrations work without a fixed bounding box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

A0_NM = 0.3567  # conventional cubic lattice constant of diamond

# Diamond = FCC + (1/4, 1/4, 1/4) basis; 8 atoms per conventional cell.
_FCC = np.array([[0, 0, 0], [0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]])
BASIS = np.vstack([_FCC, _FCC + 0.25])

_OFF = 1 << 20
_SPAN = 1 << 21


@dataclass(frozen=True)
class ImpuritySite:
    position: tuple  # nm
    site_index: int

    @property
    def radius(self) -> float:
        return math.sqrt(sum(x * x for x in self.position))


@dataclass(frozen=True)
class BathGeometry:
    r_b: float
    r_mf: float
    r_d: float

    def __post_init__(self):
        if not (0 < self.r_b <= self.r_mf) or self.r_d <= 0:
            raise ValueError(f"invalid bath geometry {self}")


@dataclass
class BathConfiguration:
    bath_spins: list
    mean_field_spins: list
    seed: int
    concentration_ppm: float
    r_b: float = 0.0
    r_mf: float = 0.0

    @property
    def all_sites(self) -> list:
        return list(self.bath_spins) + list(self.mean_field_spins)

    @property
    def bath_positions(self) -> np.ndarray:
        return np.array([s.position for s in self.bath_spins], dtype=float).reshape(-1, 3)

    @property
    def mean_field_positions(self) -> np.ndarray:
        return np.array([s.position for s in self.mean_field_spins], dtype=float).reshape(-1, 3)

    @property
    def geometry(self) -> BathGeometry:
        return BathGeometry(self.r_b, self.r_mf, interaction_cutoff(self.concentration_ppm))


def interaction_cutoff(concentration_ppm: float) -> float:
    """Pair-interaction cutoff ``r_d = 65 nm / ρ(ppm)``."""
    if not concentration_ppm > 0:
        raise ValueError("concentration must be positive")
    return 65.0 / concentration_ppm


def split_seed(master_seed: int, *keys: int) -> int:
    """Derive an independent 64-bit seed from ``master_seed`` and integer keys.

    Uses numpy's ``SeedSequence`` hashing, so the result depends only on the
    inputs and not on the machine or worker count.
    """
    ss = np.random.SeedSequence([int(master_seed), *(int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _encode(cells: np.ndarray, basis: np.ndarray) -> np.ndarray:
    c = cells.astype(np.int64) + _OFF
    return ((c[:, 0] * _SPAN + c[:, 1]) * _SPAN + c[:, 2]) * 8 + basis


def _shell_sites(k: int) -> int:
    return 8 * ((2 * k) ** 3 - (2 * k - 2) ** 3) - (1 if k == 1 else 0)


def _sample_shell(rng: np.random.Generator, k: int, count: int):
    """``count`` distinct uniformly random sites of cubic shell ``k`` (NV site excluded)."""
    chosen: dict[int, tuple] = {}
    frac = _shell_sites(k) / (8 * (2 * k) ** 3)
    while len(chosen) < count:
        m = int(1.5 * (count - len(chosen)) / frac) + 8
        cells = rng.integers(-k, k, size=(m, 3))
        basis = rng.integers(0, 8, size=m)
        inner = np.all((cells >= -(k - 1)) & (cells <= k - 2), axis=1)
        nv = np.all(cells == 0, axis=1) & (basis == 0)
        keep = ~inner & ~nv
        for code, cell, b in zip(_encode(cells[keep], basis[keep]), cells[keep], basis[keep]):
            if len(chosen) == count:
                break
            chosen.setdefault(int(code), (cell, int(b)))
    codes = list(chosen)
    pos = np.array([(chosen[c][0] + BASIS[chosen[c][1]]) * A0_NM for c in codes]).reshape(-1, 3)
    return np.array(codes, dtype=np.int64), pos


def generate_bath(concentration_ppm: float, n_bath: int, n_mf: int, seed: int) -> BathConfiguration:
    """Populate the lattice and keep the ``n_bath`` closest impurities as the bath.

    The next ``n_mf`` impurities by distance form the mean-field shell. ``r_b``
    and ``r_mf`` are the radii of the last bath and last mean-field impurity.
    """
    if not 0 < concentration_ppm <= 100:
        raise ValueError("concentration must be in (0, 100] ppm")
    if n_bath < 0 or n_mf < 0:
        raise ValueError("spin counts must be non-negative")
    target = n_bath + n_mf
    p = concentration_ppm * 1e-6
    rng = np.random.default_rng(seed)
    codes, positions = [], []
    k = 0
    n_inside = 0
    while n_inside < target:
        k += 1
        if k >= _OFF:
            raise RuntimeError("lattice extent exhausted before reaching the requested spin count")
        count = int(rng.binomial(_shell_sites(k), p))
        if count:
            c, x = _sample_shell(rng, k, count)
            codes.append(c)
            positions.append(x)
        if positions:
            r = np.linalg.norm(np.vstack(positions), axis=1)
            n_inside = int(np.count_nonzero(r < k * A0_NM))
    if target == 0:
        return BathConfiguration([], [], seed, concentration_ppm)
    codes = np.concatenate(codes)
    positions = np.vstack(positions)
    r = np.linalg.norm(positions, axis=1)
    order = np.lexsort((codes, r))[:target]
    sites = [ImpuritySite(tuple(float(v) for v in positions[i]), int(codes[i])) for i in order]
    radii = r[order]
    r_b = float(radii[n_bath - 1]) if n_bath else 0.0
    r_mf = float(radii[-1])
    return BathConfiguration(sites[:n_bath], sites[n_bath:], seed, concentration_ppm, r_b, r_mf)


def site_count_within(radius_nm: float) -> int:
    """Number of diamond lattice sites (NV excluded) with ``|r| <= radius_nm``."""
    k = int(math.ceil(radius_nm / A0_NM)) + 1
    g = np.arange(-k, k)
    cells = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 1, 3)
    pts = (cells + BASIS[None]) * A0_NM
    return int(np.count_nonzero(np.linalg.norm(pts, axis=-1) <= radius_nm)) - 1


def write_configuration(config: BathConfiguration, path, centers=None) -> None:
    """Plain-text table: ``x y z shell branch site_index`` per impurity.

    Floats are written with ``repr`` so a read-back reproduces them bit-exactly.
    """
    branches = [c.branch for c in centers] if centers is not None else None
    with open(path, "w") as fh:
        fh.write(f"# concentration_ppm {config.concentration_ppm!r}\n")
        fh.write(f"# seed {config.seed}\n")
        fh.write(f"# r_b {config.r_b!r}\n# r_mf {config.r_mf!r}\n")
        if centers is not None:
            fh.write(f"# isotope {centers[0].isotope.value if centers else 'N15'}\n")
        fh.write("# x_nm\ty_nm\tz_nm\tshell\tbranch\tsite_index\n")
        for n, site in enumerate(config.all_sites):
            shell = "bath" if n < len(config.bath_spins) else "mf"
            branch = branches[n] if branches is not None else "-"
            x, y, z = site.position
            fh.write(f"{float(x)!r}\t{float(y)!r}\t{float(z)!r}\t{shell}\t{branch}\t{site.site_index}\n")


def read_configuration(path):
    """Inverse of :func:`write_configuration`; returns ``(config, branches or None)``."""
    meta = {}
    bath, mf, branches = [], [], []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2:
                    meta[parts[0]] = parts[1]
                continue
            if not line.strip():
                continue
            x, y, z, shell, branch, idx = line.split("\t")
            site = ImpuritySite((float(x), float(y), float(z)), int(idx))
            (bath if shell == "bath" else mf).append(site)
            branches.append(branch)
    config = BathConfiguration(bath, mf, int(meta["seed"]), float(meta["concentration_ppm"]),
                               float(meta["r_b"]), float(meta["r_mf"]))
    if all(b == "-" for b in branches):
        return config, None
    return config, branches


def max_pair_coupling(positions) -> float | None:
    """Largest ``|C_ij|`` (MHz) between any two electron spins, or None for < 2 spins."""
    from .hamiltonian import coupling_matrix

    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(positions) < 2:
        return None
    c = np.abs(coupling_matrix(positions))
    return float(c.max())


def pair_distances(configs, bins: int | np.ndarray = 30):
    """Histogram of the strongest bath pair coupling of each configuration.

    Returns ``(values, counts, edges)``; configurations with fewer than two
    bath spins contribute nothing.
    """
    values = []
    for cfg in configs:
        pos = cfg.bath_positions if hasattr(cfg, "bath_positions") else cfg
        v = max_pair_coupling(pos)
        if v is not None:
            values.append(v)
    values = np.array(values)
    if values.size == 0:
        return values, np.array([], dtype=int), np.array([])
    counts, edges = np.histogram(values, bins=bins)
    return values, counts, edges
