import math
from collections import Counter

import numpy as np
import pytest

from gcplan.core.errors import EnumerationGuardError
from gcplan.models.plan import SamplerConfig, Traversal
from gcplan.models.policy import EdgeDistribution, EdgeScores
from gcplan.services.conditioning import hard_mask
from gcplan.services.lane_graph import compute_route_mask
from gcplan.services.policy import softmax_per_node
from gcplan.services.traversal import enumerate_traversals, sample_traversals, traversal_log_prob
from tests.factories import random_distribution, random_route_fixture


def uniform(graph):
    return softmax_per_node(EdgeScores(edges=graph.out_edges, values=tuple(np.zeros(len(e)) for e in graph.out_edges)))


def test_enumeration_on_chain(chain_graph):
    """A uniform chain stops after each node with halving probability"""
    results = dict(enumerate_traversals(uniform(chain_graph), 0, max_nodes=8))
    assert results == {
        Traversal((0,), True): pytest.approx(0.5),
        Traversal((0, 1), True): pytest.approx(0.25),
        Traversal((0, 1, 2), True): pytest.approx(0.25),
    }


def test_enumeration_respects_node_cap(chain_graph):
    """Traversals that reach the node cap end without a terminal edge"""
    results = dict(enumerate_traversals(uniform(chain_graph), 0, max_nodes=2))
    assert results == {
        Traversal((0,), True): pytest.approx(0.5),
        Traversal((0, 1), False): pytest.approx(0.5),
    }


def test_enumeration_guard(long_chain_graph):
    """Enumeration refuses to produce more traversals than the limit"""
    with pytest.raises(EnumerationGuardError):
        enumerate_traversals(uniform(long_chain_graph), 0, max_nodes=10, limit=3)


def test_sampling_is_deterministic(fork_graph):
    """The same seed gives the same traversals"""
    cfg = SamplerConfig(num_samples=50, max_nodes=8, seed=3)
    dist = uniform(fork_graph)
    assert sample_traversals(dist, 0, cfg) == sample_traversals(dist, 0, cfg)


def test_samples_do_not_depend_on_sample_count(fork_graph):
    """Sample k is the same whether 10 or 100 samples are drawn"""
    dist = uniform(fork_graph)
    few = sample_traversals(dist, 0, SamplerConfig(num_samples=10, max_nodes=8, seed=9))
    many = sample_traversals(dist, 0, SamplerConfig(num_samples=100, max_nodes=8, seed=9))
    assert few == many[:10]


def test_sampling_matches_enumeration(fork_graph):
    """Empirical traversal frequencies approach the enumerated probabilities"""
    dist = uniform(fork_graph)
    samples = sample_traversals(dist, 0, SamplerConfig(num_samples=4000, max_nodes=8, seed=1))
    counts = Counter(samples)
    for traversal, prob in enumerate_traversals(dist, 0, max_nodes=8):
        assert counts[traversal] / 4000 == pytest.approx(prob, abs=0.03)


def test_samples_start_at_start_and_follow_edges(fork_graph):
    """Every sampled traversal starts at the start node and moves along graph edges"""
    samples = sample_traversals(uniform(fork_graph), 0, SamplerConfig(num_samples=200, max_nodes=3, seed=4))
    for traversal in samples:
        assert traversal.nodes[0] == 0
        assert 1 <= len(traversal) <= 3
        for u, v in zip(traversal.nodes[:-1], traversal.nodes[1:]):
            assert fork_graph.edge_between(u, v) is not None


def test_hard_masked_samples_stay_on_route(fork_graph):
    """Hard-masked samples never visit the branch that misses the goal"""
    route = compute_route_mask(fork_graph, 0, 5)
    dist = hard_mask(uniform(fork_graph), route)
    for traversal in sample_traversals(dist, 0, SamplerConfig(num_samples=500, max_nodes=8, seed=2)):
        assert set(traversal.nodes) <= route.on_route_nodes


def test_bad_start_node_rejected(chain_graph):
    """The start node must exist"""
    with pytest.raises(ValueError):
        sample_traversals(uniform(chain_graph), 7, SamplerConfig(num_samples=5))


def test_traversal_log_prob(fork_graph):
    """Log probability sums edge log probabilities, including the terminal edge"""
    dist = uniform(fork_graph)
    assert traversal_log_prob(dist, Traversal((0, 1), True)) == pytest.approx(math.log(0.5) + math.log(1 / 3))
    assert traversal_log_prob(dist, Traversal((0, 1, 4), False)) == pytest.approx(math.log(0.5) + math.log(1 / 3))
    masked = hard_mask(dist, compute_route_mask(fork_graph, 0, 5))
    assert traversal_log_prob(masked, Traversal((0, 1, 2), False)) == -math.inf
    assert traversal_log_prob(dist, Traversal((0, 3), False)) == -math.inf


def fixed(graph, overrides):
    """Distribution with the given per-node probabilities, uniform elsewhere."""
    probs = []
    for node, edges in enumerate(graph.out_edges):
        if node in overrides:
            probs.append(np.asarray(overrides[node], dtype=float))
        else:
            probs.append(np.full(len(edges), 1.0 / len(edges)))
    return EdgeDistribution(edges=graph.out_edges, probs=tuple(probs))


def test_deterministic_chain_samples(chain_graph):
    """With successor probability 1 every sample walks the whole chain up to the node cap"""
    dist = fixed(chain_graph, {0: [1.0, 0.0], 1: [1.0, 0.0]})
    for traversal in sample_traversals(dist, 0, SamplerConfig(num_samples=20, max_nodes=3, seed=0)):
        assert traversal.nodes == (0, 1, 2)
    assert traversal_log_prob(dist, Traversal((0, 1, 2), True)) == 0.0


def test_terminal_certain_at_start(chain_graph):
    """A start node that always stops yields single-node terminated traversals"""
    dist = fixed(chain_graph, {0: [0.0, 1.0]})
    samples = sample_traversals(dist, 0, SamplerConfig(num_samples=30, max_nodes=8, seed=5))
    assert set(samples) == {Traversal((0,), True)}


def test_fork_branch_frequency(fork_graph):
    """A 0.7 / 0.3 fork is sampled at the right rate"""
    dist = fixed(fork_graph, {1: [0.7, 0.3, 0.0], 2: [0.0, 1.0], 4: [0.0, 1.0]})
    samples = sample_traversals(dist, 1, SamplerConfig(num_samples=10_000, max_nodes=8, seed=12))
    share = sum(t.nodes[1] == 2 for t in samples) / len(samples)
    assert share == pytest.approx(0.7, abs=0.02)


def test_fork_enumeration_and_log_prob(fork_graph):
    """Enumerating a fork with immediate terminals gives the branch probabilities"""
    dist = fixed(fork_graph, {1: [0.7, 0.3, 0.0], 2: [0.0, 1.0], 4: [0.0, 1.0]})
    results = dict(enumerate_traversals(dist, 1, max_nodes=8))
    assert results == {
        Traversal((1, 2), True): pytest.approx(0.7),
        Traversal((1, 4), True): pytest.approx(0.3),
    }
    assert traversal_log_prob(dist, Traversal((1, 2), True)) == pytest.approx(math.log(0.7))


def test_single_node_cap(fork_graph):
    """With a cap of one node the only traversal is the start"""
    assert enumerate_traversals(uniform(fork_graph), 0, max_nodes=1) == [(Traversal((0,), False), 1.0)]


def test_diamond_reaching_exit(diamond_graph):
    """The chance of reaching the exit adds up over both lanes of the diamond"""
    dist = uniform(diamond_graph)
    results = enumerate_traversals(dist, 0, max_nodes=8)
    reach = sum(p for t, p in results if 4 in t.nodes)
    assert 0.0 < reach < 1.0
    assert sum(p for _, p in results) == pytest.approx(1.0)
    via_neighbour = sum(p for t, p in results if 4 in t.nodes and 2 in t.nodes)
    assert 0.0 < via_neighbour < reach


@pytest.mark.slow
def test_hard_masked_samples_stay_on_route_on_random_graphs():
    """Across many random graphs no hard-masked sample ever leaves the route"""
    for seed in range(1000):
        graph, start, goal = random_route_fixture(seed)
        route = compute_route_mask(graph, start, goal)
        dist = hard_mask(random_distribution(graph, seed), route)
        samples = sample_traversals(dist, start, SamplerConfig(num_samples=1000, max_nodes=12, seed=seed))
        for traversal in samples:
            assert set(traversal.nodes) <= route.on_route_nodes, f"seed {seed}: {traversal.nodes}"


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(50))
def test_sampling_matches_enumeration_on_random_graphs(seed):
    """Sampled traversal frequencies are within 0.02 total variation of the enumerated distribution"""
    graph, start, _ = random_route_fixture(seed, max_nodes=8)
    dist = random_distribution(graph, seed)
    k = 50_000
    exact = dict(enumerate_traversals(dist, start, max_nodes=4))
    counts = Counter(sample_traversals(dist, start, SamplerConfig(num_samples=k, max_nodes=4, seed=seed)))
    assert set(counts) <= set(exact)
    tv = 0.5 * sum(abs(counts[t] / k - p) for t, p in exact.items())
    assert tv < 0.02
