from collections import namedtuple
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drivencce.cce import (
    CCEConfig,
    Partition,
    build_interaction_graph,
    cce_coherence,
    configuration_coherence,
    enumerate_clusters,
    ensemble_coherence,
    kmeans_partition,
    mobius_exponents,
)
from drivencce.dynamics import HahnEchoSchedule
from drivencce.hamiltonian import coupling_matrix, preset_protocol
from drivencce.oracle import ExactSystem, exact_hahn_echo

BathSpin = namedtuple("BathSpin", "position branch")
SCHED = HahnEchoSchedule(np.linspace(0.2, 4.0, 10))


def _bath(pos, branches):
    return [BathSpin(np.asarray(p, float), b) for p, b in zip(pos, branches)]


def _random_bath(seed, n, scale=2.5, branches=("off+", "off-", "off+", "on-")):
    r = np.random.default_rng(seed)
    pos = r.normal(size=(n, 3)) * scale
    return pos, [branches[i % len(branches)] for i in range(n)]


# --- graph ---------------------------------------------------------------------

def test_graph_cutoff_boundary():
    pos = np.array([[0, 0, 0], [0, 0, 1.0], [0, 0, 2.5]])
    g = build_interaction_graph(pos, 1.01)
    assert g.has_edge(0, 1) and not g.has_edge(1, 2) and g.n_edges == 1
    assert build_interaction_graph(pos, 0.99).n_edges == 0
    assert g.edges[(0, 1)] == pytest.approx(abs(coupling_matrix(pos[:2])[0, 1]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 25), st.floats(0.5, 6.0))
def test_graph_matches_brute_force(seed, n, r_d):
    pos = np.random.default_rng(seed).uniform(-5, 5, size=(n, 3))
    g = build_interaction_graph(pos, r_d)
    brute = {(i, j) for i, j in combinations(range(n), 2) if np.linalg.norm(pos[i] - pos[j]) < r_d}
    assert set(g.edges) == brute
    for i in range(n):
        assert g.adjacency[i] == {j for j in range(n) if j != i and (min(i, j), max(i, j)) in brute}


# --- k-means -------------------------------------------------------------------

def test_kmeans_separated_pairs():
    pos = [[0, 0, 0], [0, 0, 0.2], [10, 0, 0], [10, 0, 0.2]]
    parts = kmeans_partition(pos, 2, seed=3)
    assert {p.members for p in parts} == {frozenset({0, 1}), frozenset({2, 3})}


def test_kmeans_capacity_and_cover():
    pos = np.random.default_rng(7).uniform(-20, 20, size=(180, 3))
    parts = kmeans_partition(pos, 4, seed=0)
    sizes = sorted(len(p.members) for p in parts)
    assert len(parts) == 45 and sizes == [4] * 45
    assert frozenset().union(*(p.members for p in parts)) == frozenset(range(180))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 30), st.integers(1, 6))
def test_kmeans_invariants(seed, n, K):
    pos = np.random.default_rng(seed).normal(size=(n, 3)) * 4
    parts, hist = kmeans_partition(pos, K, seed=seed % 97, return_history=True)
    assert all(1 <= len(p.members) <= K for p in parts)
    assert sum(len(p.members) for p in parts) == n
    assert len(parts) == -(-n // K)
    for h in hist:
        assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))
    assert kmeans_partition(pos, K, seed=seed % 97) == parts


def test_kmeans_rejects_empty():
    with pytest.raises(ValueError):
        kmeans_partition(np.zeros((0, 3)), 2)


# --- clusters ------------------------------------------------------------------

def _singletons(n):
    return [Partition(frozenset([i])) for i in range(n)]


def test_enumerate_triangle():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    g = build_interaction_graph(pos, 2.0)
    assert len(enumerate_clusters(g, _singletons(3), 1)) == 3
    assert len(enumerate_clusters(g, _singletons(3), 2)) == 6
    assert len(enumerate_clusters(g, _singletons(3), 3)) == 7


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 9), st.integers(1, 4))
def test_enumerate_matches_exhaustive(seed, n, M):
    pos = np.random.default_rng(seed).uniform(0, 4, size=(n, 3))
    g = build_interaction_graph(pos, 2.0)
    parts = _singletons(n)

    def connected(s):
        s = set(s)
        seen, stack = set(), [next(iter(s))]
        while stack:
            v = stack.pop()
            if v not in seen:
                seen.add(v)
                stack.extend(u for u in g.adjacency[v] if u in s)
        return seen == s

    want = {frozenset(c) for k in range(1, M + 1) for c in combinations(range(n), k) if connected(c)}
    got = [c.parts for c in enumerate_clusters(g, parts, M)]
    assert len(got) == len(set(got)) and set(got) == want


def test_mobius_full_order_keeps_only_top():
    pos = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float)
    clusters = enumerate_clusters(build_interaction_graph(pos, 5.0), _singletons(3), 3)
    exps = mobius_exponents(clusters)
    top = frozenset({0, 1, 2})
    assert exps[top] == 1 and all(e == 0 for k, e in exps.items() if k != top)


# --- coherence -----------------------------------------------------------------

@pytest.mark.parametrize("proto", ["free", "hybrid_lg", "resonant2"])
def test_full_order_matches_oracle(proto):
    pos, br = _random_bath(11, 4)
    protocol = preset_protocol(proto)
    res = cce_coherence(_bath(pos, br), protocol, SCHED, CCEConfig(M=4, K=1, n_mf=3), seed=5)
    ref = exact_hahn_echo(ExactSystem(pos, br), protocol, SCHED)
    assert np.abs(res.complex_values - ref.complex_values).max() < 1e-10


def test_single_partition_is_exact():
    pos, br = _random_bath(2, 5)
    res = cce_coherence(_bath(pos, br), preset_protocol("hybrid_lg"), SCHED, CCEConfig(M=1, K=5, n_mf=2), seed=0)
    ref = exact_hahn_echo(ExactSystem(pos, br), preset_protocol("hybrid_lg"), SCHED)
    assert np.abs(res.curve.values - ref.values).max() < 1e-10
    assert res.instability_count == 0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_tilde_product_equals_mobius(seed):
    pos, br = _random_bath(seed, 8, scale=3.0)
    res = cce_coherence(_bath(pos, br), preset_protocol("free"), SCHED, CCEConfig(M=2, K=2, n_mf=4), seed=seed)
    if res.instability_count == 0:
        assert np.abs(res.complex_values - res.mobius_values).max() < 1e-12


def test_tilde_factors_reconstruct_cluster_signals():
    pos, br = _random_bath(4, 6)
    res = cce_coherence(_bath(pos, br), preset_protocol("free"), SCHED, CCEConfig(M=2, K=2, n_mf=2), seed=1)
    prod = np.ones(len(SCHED), dtype=complex)
    for f in res.tilde_factors.values():
        prod *= f
    assert np.abs(prod - res.complex_values).max() < 1e-12


def test_deterministic_and_seed_sensitive():
    pos, br = _random_bath(9, 8)
    bath, mf = _bath(pos[:6], br[:6]), _bath(pos[6:], br[6:])
    cfg = CCEConfig(M=2, K=2, n_mf=5)
    a = cce_coherence(bath, preset_protocol("hybrid_lg"), SCHED, cfg, seed=3, mean_field_spins=mf)
    b = cce_coherence(bath, preset_protocol("hybrid_lg"), SCHED, cfg, seed=3, mean_field_spins=mf)
    c = cce_coherence(bath, preset_protocol("hybrid_lg"), SCHED, cfg, seed=4, mean_field_spins=mf)
    assert np.array_equal(a.complex_values, b.complex_values)
    assert not np.array_equal(a.complex_values, c.complex_values)


def test_external_mode_without_fields_equals_internal():
    # far-apart partitions and no shell: no cluster sees a field
    pos = np.array([[0, 0, 1.0], [0.3, 0, 1.2], [30, 0, 1.0], [30.3, 0, 1.2]])
    br = ["off+"] * 4
    kw = dict(seed=0, r_d=2.0)
    i = cce_coherence(_bath(pos, br), preset_protocol("free"), SCHED, CCEConfig(M=2, K=2, n_mf=3), **kw)
    e = cce_coherence(_bath(pos, br), preset_protocol("free"), SCHED,
                      CCEConfig(M=2, K=2, n_mf=3, mode="external"), **kw)
    assert np.abs(i.complex_values - e.complex_values).max() < 1e-12


def test_empty_bath():
    res = cce_coherence([], preset_protocol("free"), SCHED, CCEConfig(), seed=0)
    assert np.all(res.curve.values == 1)


def test_cluster_size_limit():
    pos, br = _random_bath(0, 6)
    with pytest.raises(ValueError):
        cce_coherence(_bath(pos, br), preset_protocol("free"), SCHED, CCEConfig(M=1, K=6, max_cluster_dim=64), seed=0)


def test_config_validation():
    with pytest.raises(ValueError):
        CCEConfig(M=0)
    with pytest.raises(ValueError):
        CCEConfig(mode="sideways")
    assert CCEConfig(max_cluster_dim=512).max_bath_spins == 8


def test_ensemble_single_config_and_workers():
    proto = preset_protocol("free")
    cce = CCEConfig(M=2, K=2, n_mf=3)
    one = ensemble_coherence(20, proto, SCHED, cce, n_s=1, master_seed=5, n_bath=6, workers=1)
    direct = configuration_coherence(20, proto, SCHED, cce, one.seeds[0], 6)
    assert np.array_equal(one.curve.values, direct.values)
    seq = ensemble_coherence(20, proto, SCHED, cce, n_s=3, master_seed=1, n_bath=6, workers=1)
    par = ensemble_coherence(20, proto, SCHED, cce, n_s=3, master_seed=1, n_bath=6, workers=2)
    assert np.abs(seq.curve.values - par.curve.values).max() < 1e-14
    with pytest.raises(ValueError):
        ensemble_coherence(20, proto, SCHED, cce, n_s=0, master_seed=1)
