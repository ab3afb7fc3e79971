"""
Partition cluster-correlation expansion with mean-field averaging.

The bath is split into partitions of at most ``K`` spins by a size-capped
k-means. Clusters are connected unions of up to ``M`` partitions, and the
coherence is the product of irreducible factors

    L̃_C = L_C / Π_{C' ⊊ C} L̃_{C'}.

Spins outside a cluster enter as static fields along their own drive axis
``P``, with projections ``±1/2`` drawn at random. In ``internal`` mode each
``L_C`` is averaged over ``n_mf`` draws before division. In ``external`` mode
the full product is formed per draw and averaged afterwards.

Seeding: mean-field draws for cluster ``C`` come from
``default_rng([config_seed, *sorted(C)])`` in internal mode and from
``default_rng([config_seed, 2**32, sample])`` per global sample in external
mode, so results do not depend on evaluation order or worker count.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree

from .dynamics import CoherenceCurve, HahnEchoSchedule, echo_from_blocks
from .hamiltonian import (
    DrivingProtocol,
    SpinCluster,
    cluster_operators,
    coupling_matrix,
    mean_field_matrix,
)
from .lattice import generate_bath, interaction_cutoff, split_seed
from .p1 import sample_branches

log = logging.getLogger(__name__)

INSTABILITY_TOL = 1e-6
ZERO_TOL = 1e-12


@dataclass(frozen=True)
class CCEConfig:
    M: int = 2
    K: int = 4
    n_mf: int = 100
    mode: str = "internal"
    r_d: float | None = None  # None: use the concentration rule
    max_cluster_dim: int = 512
    clamp: bool = False
    kmeans_seed: int = 0

    def __post_init__(self):
        if self.M < 1 or self.K < 1 or self.n_mf < 1:
            raise ValueError("M, K and n_mf must all be at least 1")
        if self.mode not in ("internal", "external"):
            raise ValueError(f"unknown averaging mode {self.mode!r}")
        if self.r_d is not None and self.r_d <= 0:
            raise ValueError("r_d must be positive")

    @property
    def max_bath_spins(self) -> int:
        return int(math.log2(self.max_cluster_dim)) - 1


@dataclass(frozen=True)
class Partition:
    members: frozenset


@dataclass(frozen=True)
class Cluster:
    spins: frozenset
    parts: frozenset  # partition indices

    @property
    def order(self) -> int:
        return len(self.parts)


@dataclass
class InteractionGraph:
    n: int
    edges: dict  # (i, j) with i < j -> |C_ij|
    adjacency: list

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    @property
    def n_edges(self) -> int:
        return len(self.edges)


@dataclass
class FactorizationResult:
    curve: CoherenceCurve
    tilde_factors: dict | None
    instability_count: int
    clusters: list
    partitions: list
    complex_values: np.ndarray
    mobius_values: np.ndarray | None = None
    kmeans_history: list = field(default_factory=list)


def _positions(bath) -> np.ndarray:
    if len(bath) and hasattr(bath[0], "position"):
        return np.array([s.position for s in bath], dtype=float).reshape(-1, 3)
    return np.asarray(bath, dtype=float).reshape(-1, 3)


def build_interaction_graph(bath, r_d: float) -> InteractionGraph:
    """Undirected graph joining spins closer than ``r_d``, weighted by ``|C_ij|``."""
    if not r_d > 0:
        raise ValueError("r_d must be positive")
    pos = _positions(bath)
    n = len(pos)
    adjacency = [set() for _ in range(n)]
    edges = {}
    if n > 1:
        pairs = cKDTree(pos).query_pairs(r_d, output_type="ndarray")
        for i, j in pairs:
            i, j = int(min(i, j)), int(max(i, j))
            c = coupling_matrix(pos[[i, j]])[0, 1]
            edges[(i, j)] = abs(float(c))
            adjacency[i].add(j)
            adjacency[j].add(i)
    return InteractionGraph(n, dict(sorted(edges.items())), adjacency)


def _balanced_assign(d2: np.ndarray, K: int) -> np.ndarray:
    """Greedy capacity-``K`` assignment in order of global distance rank."""
    n, k = d2.shape
    labels = -np.ones(n, dtype=int)
    load = np.zeros(k, dtype=int)
    for flat in np.argsort(d2, axis=None, kind="stable"):
        i, c = divmod(int(flat), k)
        if labels[i] < 0 and load[c] < K:
            labels[i] = c
            load[c] += 1
    return labels


def _objective(x, centroids, labels) -> float:
    return float(np.sum((x - centroids[labels]) ** 2))


def kmeans_partition(positions, K: int, seed: int = 0, n_init: int = 5, max_iter: int = 100,
                     return_history: bool = False):
    """Split spins into ``ceil(N/K)`` groups of at most ``K`` by size-capped k-means.

    Each restart seeds centroids with k-means++, then alternates a greedy
    capacity-constrained assignment with centroid updates. An assignment is
    accepted only if it does not raise the objective under the current
    centroids, which makes the objective non-increasing per iteration.
    """
    x = _positions(positions)
    n = len(x)
    if n == 0:
        raise ValueError("cannot partition an empty bath")
    if K < 1:
        raise ValueError("K must be at least 1")
    k = math.ceil(n / K)
    if K == 1 or k == 1:
        parts = [Partition(frozenset([i])) for i in range(n)] if K == 1 else [Partition(frozenset(range(n)))]
        return (parts, [[0.0]]) if return_history else parts
    rng = np.random.default_rng(seed)
    best = None
    histories = []
    for _ in range(n_init):
        idx = [int(rng.integers(n))]
        for _ in range(1, k):
            d2 = np.min(((x[:, None] - x[idx][None]) ** 2).sum(-1), axis=1)
            if d2.sum() == 0:
                idx.append(int(rng.integers(n)))
            else:
                idx.append(int(rng.choice(n, p=d2 / d2.sum())))
        centroids = x[idx].copy()
        labels = _balanced_assign(((x[:, None] - centroids[None]) ** 2).sum(-1), K)
        history = [_objective(x, centroids, labels)]
        for _ in range(max_iter):
            new_centroids = np.array([x[labels == c].mean(axis=0) for c in range(k)])
            history.append(_objective(x, new_centroids, labels))
            candidate = _balanced_assign(((x[:, None] - new_centroids[None]) ** 2).sum(-1), K)
            centroids = new_centroids
            if _objective(x, centroids, candidate) < _objective(x, centroids, labels) - 1e-15:
                labels = candidate
                history.append(_objective(x, centroids, labels))
            else:
                break
        histories.append(history)
        obj = _objective(x, centroids, labels)
        if best is None or obj < best[0] - 1e-15:
            best = (obj, labels.copy())
    labels = best[1]
    parts = [Partition(frozenset(int(i) for i in np.flatnonzero(labels == c))) for c in range(k)]
    parts.sort(key=lambda p: min(p.members))
    return (parts, histories) if return_history else parts


def _partition_adjacency(graph: InteractionGraph, partitions) -> list:
    owner = {}
    for p, part in enumerate(partitions):
        for s in part.members:
            owner[s] = p
    adj = [set() for _ in partitions]
    for i, j in graph.edges:
        a, b = owner[i], owner[j]
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
    return adj


def enumerate_clusters(graph: InteractionGraph, partitions, M: int) -> list:
    """All connected unions of at most ``M`` partitions, ordered by size."""
    adj = _partition_adjacency(graph, partitions)
    level = {frozenset([p]) for p in range(len(partitions))}
    found = list(level)
    for _ in range(1, M):
        nxt = set()
        for s in level:
            for p in s:
                for q in adj[p]:
                    if q not in s:
                        nxt.add(s | {q})
        level = nxt
        found.extend(level)
    found.sort(key=lambda s: (len(s), sorted(s)))
    return [Cluster(frozenset().union(*(partitions[p].members for p in s)), s) for s in found]


def _subclusters(clusters) -> dict:
    """Proper enumerated subclusters of every cluster, keyed by partition set."""
    keys = [c.parts for c in clusters]
    return {k: [q for q in keys if q < k] for k in keys}


def mobius_exponents(clusters) -> dict:
    """Integer exponent of each ``L_C`` in the product of all irreducible factors."""
    keys = sorted((c.parts for c in clusters), key=lambda s: (len(s), sorted(s)))
    mu = {}
    for a in keys:
        mu[(a, a)] = 1
        for b in keys:
            if a < b:
                between = [z for z in keys if a <= z < b]
                mu[(a, b)] = -sum(mu[(a, z)] for z in between if (a, z) in mu)
    # the recursion above needs ``b`` processed in increasing size, which ``keys`` guarantees
    return {a: sum(mu.get((a, b), 0) for b in keys if a <= b) for a in keys}


class _ClusterEvaluator:
    """Echo signals of one cluster for arbitrary mean-field samples."""

    def __init__(self, cluster: Cluster, positions, branches, protocol, r_d, G, tau):
        spins = sorted(cluster.spins)
        self.spins = spins
        sc = SpinCluster(positions[spins], [branches[i] for i in spins], r_d, tuple(spins))
        self.ops = cluster_operators(sc, protocol, max_spins=len(spins))
        g = G[spins].toarray() if G is not None else np.zeros((len(spins), 0))
        if g.shape[1]:
            g[:, spins] = 0.0
        self.g = g
        self.tau = tau

    def fields(self, signs: np.ndarray) -> np.ndarray:
        return signs @ self.g.T

    def signals(self, fields: np.ndarray) -> np.ndarray:
        """One echo curve per row of ``fields``; identical rows are evaluated once."""
        if fields.shape[1] == 0 or not np.any(fields):
            l = echo_from_blocks(*self.ops.blocks(), self.tau)
            return np.tile(l, (len(fields), 1))
        uniq, inverse = np.unique(np.round(fields, 12), axis=0, return_inverse=True)
        vals = np.array([echo_from_blocks(*self.ops.blocks(f), self.tau) for f in uniq])
        return vals[np.ravel(inverse)]


def _signs(rng: np.random.Generator, n_samples: int, n_all: int) -> np.ndarray:
    return rng.choice(np.array([-0.5, 0.5]), size=(n_samples, n_all))


def _irreducible(clusters, lc: dict, n_tau: int, clamp: bool):
    subs = _subclusters(clusters)
    tilde = {}
    unstable = 0
    for c in clusters:
        denom = np.ones(n_tau, dtype=complex)
        for q in subs[c.parts]:
            denom *= tilde[q]
        t = lc[c.parts].copy()
        tiny = np.abs(denom) < ZERO_TOL
        unstable += int(np.count_nonzero(tiny))
        t[~tiny] = t[~tiny] / denom[~tiny]
        t[tiny] = 1.0
        big = np.abs(t) > 1 + INSTABILITY_TOL
        unstable += int(np.count_nonzero(big))
        if clamp and np.any(big):
            t[big] = t[big] / np.abs(t[big])
        tilde[c.parts] = t
    total = np.ones(n_tau, dtype=complex)
    for t in tilde.values():
        total *= t
    return tilde, total, unstable


def cce_coherence(bath, protocol: DrivingProtocol, schedule: HahnEchoSchedule, cce: CCEConfig, seed: int,
                  mean_field_spins=(), r_d: float | None = None, keep_factors: bool = True,
                  metadata: dict | None = None) -> FactorizationResult:
    """Coherence of one bath configuration by (p)CCE with mean-field averaging.

    ``bath`` and ``mean_field_spins`` are sequences of P1 centers (anything
    with ``position`` and ``branch``). Out-of-cluster bath spins and the
    mean-field shell both act through static fields within ``r_d``.
    """
    r_d = r_d if r_d is not None else (cce.r_d if cce.r_d is not None else math.inf)
    tau = schedule.tau_grid
    n_tau = tau.size
    n = len(bath)
    meta = {"protocol": protocol.label, "seed": seed, "M": cce.M, "K": cce.K, "n_mf": cce.n_mf,
            "mode": cce.mode}
    meta.update(metadata or {})
    if n == 0:
        ones = np.ones(n_tau, dtype=complex)
        return FactorizationResult(CoherenceCurve(schedule.times, ones.real, meta, ones), {}, 0, [], [], ones, ones)
    pos = _positions(bath)
    branches = [s.branch for s in bath]
    all_sites = list(bath) + list(mean_field_spins)
    all_pos = _positions(all_sites)
    all_branches = [s.branch for s in all_sites]

    graph = build_interaction_graph(pos, r_d if math.isfinite(r_d) else 1e12)
    partitions, history = kmeans_partition(pos, cce.K, seed=cce.kmeans_seed, return_history=True)
    clusters = enumerate_clusters(graph, partitions, cce.M)
    biggest = max(len(c.spins) for c in clusters)
    if 2 ** (biggest + 1) > cce.max_cluster_dim:
        raise ValueError(f"cluster of {biggest} spins exceeds max_cluster_dim={cce.max_cluster_dim}")
    G = mean_field_matrix(pos, branches, all_pos, all_branches, protocol, r_d) if len(all_pos) > 1 else None
    evaluators = {c.parts: _ClusterEvaluator(c, pos, branches, protocol, r_d, G, tau) for c in clusters}
    n_all = len(all_pos)

    if cce.mode == "internal":
        lc = {}
        for c in clusters:
            ev = evaluators[c.parts]
            rng = np.random.default_rng([int(seed), *sorted(c.spins)])
            signs = _signs(rng, cce.n_mf, n_all)
            lc[c.parts] = ev.signals(ev.fields(signs)).mean(axis=0)
        tilde, total, unstable = _irreducible(clusters, lc, n_tau, cce.clamp)
        exps = mobius_exponents(clusters)
        mob = np.ones(n_tau, dtype=complex)
        for k, e in exps.items():
            if e:
                mob *= lc[k] ** e
    else:
        total = np.zeros(n_tau, dtype=complex)
        unstable = 0
        for s in range(cce.n_mf):
            rng = np.random.default_rng([int(seed), 2**32, s])
            signs = _signs(rng, 1, n_all)
            lc = {c.parts: evaluators[c.parts].signals(evaluators[c.parts].fields(signs))[0] for c in clusters}
            _, prod, u = _irreducible(clusters, lc, n_tau, cce.clamp)
            total += prod
            unstable += u
        total /= cce.n_mf
        tilde, mob = None, None

    if unstable:
        log.warning("seed %s: %d unstable irreducible factors", seed, unstable)
    meta["instability_count"] = unstable
    curve = CoherenceCurve(schedule.times, total.real, meta, total)
    return FactorizationResult(curve, tilde if keep_factors else None, unstable, clusters, partitions,
                               total, mob, history)


# --- ensembles ------------------------------------------------------------------

@dataclass
class EnsembleResult:
    curve: CoherenceCurve
    per_config: list
    seeds: list
    failures: dict = field(default_factory=dict)


def configuration_coherence(concentration_ppm: float, protocol: DrivingProtocol, schedule: HahnEchoSchedule,
                            cce: CCEConfig, config_seed: int, n_bath: int, n_mf_shell: int = 0,
                            isotope: str = "N15") -> CoherenceCurve:
    """Generate one configuration from ``config_seed`` and return its coherence curve."""
    cfg = generate_bath(concentration_ppm, n_bath, n_mf_shell, config_seed)
    centers = sample_branches(cfg, isotope, split_seed(config_seed, 1))
    r_d = cce.r_d if cce.r_d is not None else interaction_cutoff(concentration_ppm)
    res = cce_coherence(centers[:n_bath], protocol, schedule, cce, config_seed,
                        mean_field_spins=centers[n_bath:], r_d=r_d, keep_factors=False,
                        metadata={"concentration_ppm": concentration_ppm})
    return res.curve


def _config_task(args):
    conc, protocol, schedule, cce, seed, n_bath, n_mf_shell, isotope = args
    try:
        return seed, configuration_coherence(conc, protocol, schedule, cce, seed, n_bath, n_mf_shell, isotope), None
    except Exception as exc:  # reported per seed, the ensemble carries on
        return seed, None, f"{type(exc).__name__}: {exc}"


def ensemble_coherence(concentration_ppm: float, protocol: DrivingProtocol, schedule: HahnEchoSchedule,
                       cce: CCEConfig, n_s: int, master_seed: int, n_bath: int = 12, n_mf_shell: int = 0,
                       isotope: str = "N15", workers: int | None = None) -> EnsembleResult:
    """Average the coherence of ``n_s`` configurations with seeds ``split_seed(master_seed, i)``.

    Results are reduced in configuration order, so the mean does not depend on
    ``workers``.
    """
    if n_s < 1:
        raise ValueError("n_s must be at least 1")
    seeds = [split_seed(master_seed, i) for i in range(n_s)]
    tasks = [(concentration_ppm, protocol, schedule, cce, s, n_bath, n_mf_shell, isotope) for s in seeds]
    workers = workers or os.cpu_count() or 1
    if workers > 1 and n_s > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n_s)) as pool:
            results = list(pool.map(_config_task, tasks))
    else:
        results = [_config_task(t) for t in tasks]
    curves, ok_seeds, failures = [], [], {}
    for seed, curve, err in results:
        if err is None:
            curves.append(curve)
            ok_seeds.append(seed)
        else:
            failures[seed] = err
    if not curves:
        raise RuntimeError(f"every configuration failed: {failures}")
    mean = np.mean([c.values for c in curves], axis=0)
    meta = {"protocol": protocol.label, "concentration_ppm": concentration_ppm, "n_s": len(curves),
            "master_seed": master_seed, "failed_seeds": sorted(failures)}
    return EnsembleResult(CoherenceCurve(schedule.times, mean, meta), curves, ok_seeds, failures)
