import random

import numpy as np
import pytest

from distinfer.harness.metrics import cliques_minimal, is_spanning_tree, rip_holds, steiner_cliques
from distinfer.harness.runner import agreed_tree, build_world, converged_components
from distinfer.harness.scenario import parse_scenario
from distinfer.overlay import (LinkEstimate, Q_FLOOR, apply_swap, clique_update, evaluate_swaps,
                               junction_tree, on_beacon, payload_bytes, reachable_update, tree_cost,
                               tree_path)


def random_tree(nodes, rng):
    adj = {i: set() for i in nodes}
    for k in range(1, len(nodes)):
        a, b = nodes[k], nodes[rng.randrange(k)]
        adj[a].add(b)
        adj[b].add(a)
    return adj


# Four calibration nodes on the tree 2 - 1 - 3 - 4.  Nodes 1 and 4 carry T2
# (through the temperature potentials they were given) but node 3 does not.
FIG3_ADJ = {1: {2, 3}, 2: {1}, 3: {1, 4}, 4: {3}}
FIG3_LOCAL = {
    1: frozenset({"T1", "B1", "T2"}),
    2: frozenset({"T2", "B2"}),
    3: frozenset({"T3", "B3", "T1"}),
    4: frozenset({"T4", "B4", "T2"}),
}


class TestLinkEstimate:
    def test_all_heard_rises_monotonically(self):
        est, rates = LinkEstimate(), []
        for _ in range(100):
            est = on_beacon(est, True)
            rates.append(est.rate)
        assert np.all(np.diff(rates) > 0) and rates[-1] > 0.99
        assert est.alive

    def test_all_missed_decays(self):
        est = LinkEstimate(rate=1.0, alive=True)
        for _ in range(100):
            est = on_beacon(est, False)
        assert est.rate < 1e-4

    def test_bernoulli_stream(self):
        # A single end value of an alpha=0.1 EWMA has stationary sd ~0.1 at p=0.7,
        # so the +-0.05 band is asserted on the running estimate's average, and
        # the spread of end values is checked against the EWMA variance.
        p, alpha = 0.7, 0.1
        finals = []
        for seed in range(200):
            rng = np.random.default_rng(seed)
            est, trail = LinkEstimate(), []
            for heard in rng.random(500) < p:
                est = on_beacon(est, bool(heard))
                trail.append(est.rate)
            finals.append(est.rate)
            if seed < 20:
                assert abs(np.mean(trail[50:]) - p) <= 0.05
        finals = np.array(finals)
        assert abs(finals.mean() - p) <= 0.02
        sd = np.sqrt(alpha / (2 - alpha) * p * (1 - p))
        assert finals.std() == pytest.approx(sd, rel=0.15)

    def test_update_rule(self):
        est = on_beacon(LinkEstimate(rate=0.5), True)
        assert est.rate == pytest.approx(0.55)

    def test_silence_marks_lost(self):
        est = on_beacon(LinkEstimate(), True, now=0.0)
        est = on_beacon(est, False, now=3.0, loss_after=5.0)
        assert est.alive
        est = on_beacon(est, False, now=6.0, loss_after=5.0)
        assert not est.alive


class TestJunctionTreeRules:
    def test_leaf_sends_local(self):
        out = reachable_update(FIG3_LOCAL[2], {}, [1])
        assert out == {1: FIG3_LOCAL[2]}

    def test_isolated_or_leaf_clique_is_local(self):
        c, s = clique_update(FIG3_LOCAL[2], {1: frozenset({"T9"})}, [1])
        assert c == FIG3_LOCAL[2]
        assert s == {1: frozenset()}

    def test_figure3_node3_adds_t2(self):
        reach, cliques, seps = junction_tree(FIG3_ADJ, FIG3_LOCAL)
        assert "T2" in reach[(1, 3)] and "T2" in reach[(4, 3)]
        assert "T2" in cliques[3] and "T2" not in FIG3_LOCAL[3]
        assert seps[(3, 4)] == frozenset({"T2"})
        assert rip_holds(FIG3_ADJ, cliques, FIG3_LOCAL)
        # swapping 4's edge from 3 to 1 lets node 3 drop T2
        adj = {1: {2, 3, 4}, 2: {1}, 3: {1}, 4: {1}}
        _, cliques2, _ = junction_tree(adj, FIG3_LOCAL)
        assert cliques2[3] == FIG3_LOCAL[3]

    @pytest.mark.parametrize("seed", range(20))
    def test_fixed_point_matches_central_oracles(self, seed):
        rng = random.Random(seed)
        nodes = list(range(1, rng.randint(3, 12)))
        adj = random_tree(nodes, rng)
        pool = [f"X{k}" for k in range(8)]
        local = {i: frozenset(rng.sample(pool, rng.randint(0, 3))) for i in nodes}
        reach, cliques, seps = junction_tree(adj, local)
        assert cliques == steiner_cliques(adj, local)
        assert rip_holds(adj, cliques, local)
        assert cliques_minimal(adj, cliques, local)
        for i in nodes:
            inbox = {j: reach[(j, i)] for j in adj[i]}
            assert reachable_update(local[i], inbox, adj[i]) == {j: reach[(i, j)] for j in adj[i]}


class TestCost:
    def test_payload_bytes(self):
        assert payload_bytes(0) == 16
        assert payload_bytes(1) == 8 * 2 + 16
        assert payload_bytes(3) == 8 * (3 + 6) + 16

    def test_empty_separators_header_only(self):
        seps = {(1, 2): frozenset(), (2, 1): frozenset()}
        assert tree_cost(seps, lambda i, j: 1.0) == 32.0

    def test_halving_quality_doubles_term(self):
        seps = {(1, 2): frozenset({"a"}), (2, 1): frozenset({"a"})}
        q = {(1, 2): 1.0, (2, 1): 1.0}
        base = tree_cost(seps, q)
        q[(1, 2)] = 0.5
        assert tree_cost(seps, q) - base == pytest.approx(payload_bytes(1))

    def test_floor(self):
        seps = {(1, 2): frozenset()}
        assert tree_cost(seps, {(1, 2): 0.0}) == 16 / Q_FLOOR

    def test_hand_computed_five_node_tree(self):
        # star 1-{2,3} plus chain 3-4-5; separators listed by hand
        seps = {
            (1, 2): {"a"}, (2, 1): {"a"},
            (1, 3): {"a", "b"}, (3, 1): {"a", "b"},
            (3, 4): {"c"}, (4, 3): {"c"},
            (4, 5): set(), (5, 4): set(),
        }
        q = {(1, 2): 0.5, (2, 1): 1.0, (1, 3): 0.8, (3, 1): 0.8, (3, 4): 1.0, (4, 3): 0.25,
             (4, 5): 1.0, (5, 4): 1.0}
        expected = (32 / 0.5 + 32 / 1.0) + 2 * (56 / 0.8) + (32 / 1.0 + 32 / 0.25) + (16 + 16)
        assert tree_cost(seps, q) == pytest.approx(expected)


class TestSwaps:
    def test_path(self):
        assert tree_path(FIG3_ADJ, 2, 4) == [2, 1, 3, 4]

    def test_no_alternative_links(self):
        props = evaluate_swaps(FIG3_ADJ, FIG3_LOCAL, lambda i, j: 1.0, lambda i, j: False, 4, 3)
        assert props == []

    def test_figure3_node4_learns_swap_to_1(self):
        q = lambda i, j: 1.0
        props = evaluate_swaps(FIG3_ADJ, FIG3_LOCAL, q, lambda i, j: True, 4, 3)
        assert {p.new_edge for p in props} == {(4, 1), (4, 2)}
        best = min(props, key=lambda p: p.delta)
        assert best.new_edge == (4, 1) and best.delta < 0

    def test_edge_must_be_in_tree(self):
        with pytest.raises(ValueError):
            evaluate_swaps(FIG3_ADJ, FIG3_LOCAL, lambda i, j: 1.0, lambda i, j: True, 4, 1)

    @pytest.mark.parametrize("seed", range(25))
    def test_delta_matches_central_recompute(self, seed):
        rng = random.Random(seed)
        nodes = list(range(1, rng.randint(4, 10)))
        adj = random_tree(nodes, rng)
        pool = [f"X{k}" for k in range(6)]
        local = {i: frozenset(rng.sample(pool, rng.randint(1, 3))) for i in nodes}
        qtab = {(i, j): rng.uniform(0.2, 1.0) for i in nodes for j in nodes if i != j}
        q = lambda i, j: qtab[(i, j)]

        def cost(a):
            return tree_cost(junction_tree(a, local)[2], q)

        before = cost(adj)
        for o in nodes:
            for c in sorted(adj[o]):
                for p in evaluate_swaps(adj, local, q, lambda i, j: True, o, c):
                    after = apply_swap(adj, p)
                    assert is_spanning_tree(after)
                    assert p.delta == pytest.approx(cost(after) - before, rel=1e-9, abs=1e-6)


def run_world(text, until):
    w = build_world(parse_scenario(text))
    w.sim.run(until)
    return w


class TestProtocol:
    def test_two_nodes_agree(self):
        w = run_world("""seed 1
model calibration nodes=2 graph=chain model_seed=1
links uniform q=1.0
""", 40.0)
        adj = agreed_tree(w)
        assert adj == {1: {2}, 2: {1}}
        assert all(ok for _, ok in converged_components(w))

    def test_ten_nodes_perfect_links_span(self):
        w = run_world("""seed 3
model calibration nodes=10 graph=geometric model_seed=3
links uniform q=1.0
""", 80.0)
        adj = agreed_tree(w)
        assert is_spanning_tree(adj)
        comps = converged_components(w)
        assert len(comps) == 1 and comps[0][1]

    def test_root_failure_reconverges(self):
        w = run_world("""seed 2
model calibration nodes=8 graph=geometric model_seed=2
links uniform q=1.0
kill 1 40
""", 150.0)
        assert 1 not in w.sim.alive
        adj = agreed_tree(w)
        assert set(adj) == set(range(2, 9)) and is_spanning_tree(adj)
        comps = converged_components(w)
        assert len(comps) == 1 and comps[0][1]
