import math
from pathlib import Path

import networkx as nx
import numpy as np
import pytest

from distinfer.harness.baseline import (candidate_graph, offline_tree_optimum, parse_graph,
                                        spanning_tree_cost)
from distinfer.harness.calibration import gen_calibration, temperature_graph
from distinfer.harness.metrics import (cliques_minimal, forest_components, gaussian_kl, is_spanning_tree,
                                       rip_holds, rms, steiner_cliques)
from distinfer.harness.modelfile import ModelBundle, ModelFileError, parse_model, write_model
from distinfer.harness.oracle import OracleError, oracle_posterior
from distinfer.harness.runner import rows_to_csv, run_scenario, CSV_FIELDS
from distinfer.harness.scenario import ScenarioError, parse_node_set, parse_scenario
from distinfer.model import build_external_jtree, reparameterize

ROOT = Path(__file__).resolve().parents[1]


class TestCalibration:
    def test_two_node_chain(self):
        cal = gen_calibration(2, "chain", seed=0)
        m = cal.model
        assert len(m.env_vars) + len(m.measurements) == 6
        assert cal.temp_edges == [(1, 2)]
        pairwise = [f for f in m.prior_factors if len(f.scope) == 2]
        assert len(pairwise) == 1

    def test_needs_two_nodes(self):
        with pytest.raises(ValueError):
            gen_calibration(1)

    def test_disconnected_graph_rejected(self):
        coords = np.array([[0.0, 0.0], [0.05, 0.0], [0.9, 0.9], [0.95, 0.9]])
        with pytest.raises(ValueError):
            temperature_graph(coords, "geometric", radius=0.2)

    def test_prior_matches_displayed_factorization(self):
        cal = gen_calibration(5, "chain", seed=1, temp_var=4.0, smooth_var=0.25, bias_var=1.0)
        mean, cov = cal.model.prior_joint().moment_stats()
        n = 5
        lap = np.diag([1, 2, 2, 2, 1]) - (np.eye(n, k=1) + np.eye(n, k=-1))
        t_cov = np.linalg.inv(lap / 0.25 + np.eye(n) / 4.0)
        np.testing.assert_allclose(cov[:n, :n], t_cov, rtol=1e-10)
        np.testing.assert_allclose(cov[n:, n:], np.eye(n), rtol=1e-10)
        np.testing.assert_allclose(cov[:n, n:], 0.0, atol=1e-12)
        np.testing.assert_allclose(mean[:n], 20.0)

    def test_zero_bias_variance(self):
        cal = gen_calibration(6, seed=2, bias_var=0.0)
        post = oracle_posterior(cal.model)
        for i in cal.nodes:
            assert abs(post.mean_of(f"B{i}")) < 1e-6

    def test_sampled_statistics_match_model(self):
        coords = np.array([[0.1, 0.1], [0.3, 0.2], [0.5, 0.1], [0.7, 0.3]])
        base = gen_calibration(4, "chain", seed=0, coords=coords)
        _, cov = base.model.prior_joint().moment_stats()
        var_m = cov[0, 0] + cov[4, 4] + base.params["noise_var"]
        var_b = cov[4, 4]
        n = 1000
        ms = np.array([gen_calibration(4, "chain", seed=s, coords=coords).model.observations["M1"]
                       for s in range(n)])
        bs = np.array([gen_calibration(4, "chain", seed=s, coords=coords).true_bias[1] for s in range(n)])
        assert abs(ms.mean() - 20.0) <= 3 * math.sqrt(var_m / n)
        assert abs(ms.var(ddof=1) - var_m) <= 3 * var_m * math.sqrt(2 / (n - 1))
        assert abs(bs.mean()) <= 3 * math.sqrt(var_b / n)
        assert abs(bs.var(ddof=1) - var_b) <= 3 * var_b * math.sqrt(2 / (n - 1))


class TestMetrics:
    def test_rms(self):
        truth = {1: 1.0, 2: -2.0, 3: 0.5}
        assert rms(truth, truth) == 0.0
        assert rms({k: 0.0 for k in truth}, truth) == pytest.approx(math.sqrt((1 + 4 + 0.25) / 3))
        est = {1: 1.5, 2: -1.0, 3: None}
        assert rms(est, truth) == pytest.approx(math.sqrt((0.25 + 1.0) / 2))
        with pytest.raises(ValueError):
            rms({1: None}, truth)

    def test_gaussian_kl(self):
        assert gaussian_kl([0.0], [[1.0]], [0.0], [[1.0]]) == 0.0
        # 1-d closed form: log(s_q/s_p) + (s_p^2 + d^2) / (2 s_q^2) - 1/2
        assert gaussian_kl([1.0], [[4.0]], [0.0], [[1.0]]) == pytest.approx(math.log(0.5) + 2.5 - 0.5)
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 3))
        cov = a @ a.T + np.eye(3)
        assert gaussian_kl(np.ones(3), cov, np.zeros(3), 2 * cov) > 0

    def test_forest_helpers(self):
        adj = {1: {2}, 2: {1}, 3: set()}
        assert forest_components(adj) == [{1, 2}, {3}]
        assert not is_spanning_tree(adj)
        assert is_spanning_tree({1: {2}, 2: {1, 3}, 3: {2}})

    def test_rip_and_minimality(self):
        adj = {1: {2}, 2: {1, 3}, 3: {2}}
        local = {1: {"a"}, 2: set(), 3: {"a"}}
        assert not rip_holds(adj, {1: {"a"}, 2: set(), 3: {"a"}})
        cliques = steiner_cliques(adj, local)
        assert cliques[2] == {"a"}
        assert rip_holds(adj, cliques, local) and cliques_minimal(adj, cliques, local)
        padded = {**cliques, 1: frozenset({"a", "b"})}
        assert not cliques_minimal(adj, padded, local)


class TestOracle:
    def test_global_and_local(self):
        cal = gen_calibration(8, seed=3)
        glob = oracle_posterior(cal.model)
        loc = oracle_posterior(cal.model, ["M1"])
        assert glob.cov[0, 0] < loc.cov[0, 0]

    def test_decomposable_priors_equal_original(self):
        cal = gen_calibration(8, seed=4)
        tree = reparameterize(build_external_jtree(cal.model), cal.model)
        a = oracle_posterior(cal.model)
        b = oracle_posterior(cal.model, priors=tree.marginals, variables=cal.model.env_vars)
        np.testing.assert_allclose(a.mean, b.mean, rtol=1e-9)
        np.testing.assert_allclose(a.cov, b.cov, rtol=1e-8, atol=1e-12)

    def test_missing_prior_reported(self):
        cal = gen_calibration(4, seed=0)
        tree = reparameterize(build_external_jtree(cal.model), cal.model)
        with pytest.raises(OracleError):
            oracle_posterior(cal.model, ["M1", "M2", "M3", "M4"], priors=tree.marginals[:1])

    def test_global_beats_local_on_average(self):
        g, l = [], []
        for s in range(50):
            cal = gen_calibration(10, seed=s)
            glob = oracle_posterior(cal.model)
            g.append(rms({i: glob.mean_of(cal.targets[i]) for i in cal.nodes}, cal.true_bias))
            l.append(rms({i: oracle_posterior(cal.model, [f"M{i}"]).mean_of(cal.targets[i]) for i in cal.nodes},
                         cal.true_bias))
        assert np.mean(g) < np.mean(l)


class TestModelFile:
    def test_round_trip_is_lossless(self):
        cal = gen_calibration(5, seed=7)
        bundle = ModelBundle(cal.model, dict(cal.targets), dict(cal.true_bias),
                             {i: tuple(cal.coords[i - 1]) for i in cal.nodes})
        text = write_model(bundle)
        again = parse_model(text)
        assert write_model(again) == text
        a, b = cal.model, again.model
        assert a.env_vars == b.env_vars and a.observations == b.observations
        for f, g in zip(a.prior_factors, b.prior_factors):
            np.testing.assert_array_equal(f.precision, g.precision)
            np.testing.assert_array_equal(f.info, g.info)

    @pytest.mark.parametrize("text,line", [
        ("var a\nfactor a prec=1,2\n", 2),
        ("var a\n\nbogus 1\n", 3),
        ("var a\nmeasurement M parents=a coef=1 noise=x\n", 2),
    ])
    def test_errors_carry_line_numbers(self, text, line):
        with pytest.raises(ModelFileError, match=f"line {line}"):
            parse_model(text)

    def test_semantic_error(self):
        with pytest.raises(ModelFileError):
            parse_model("var a\nmeasurement M parents=z coef=1\n")


class TestScenario:
    def test_node_sets(self):
        assert parse_node_set("1-3,7") == {1, 2, 3, 7}

    def test_full_grammar(self):
        sc = parse_scenario("""# comment
seed 5
duration 100
sample 2
latency 0.01
inference both
redundancy 2
model calibration nodes=6 graph=chain model_seed=3
links uniform q=0.9
link 1 2 0.5 both
interference 10 20 A=1-3 B=4-6
failure rate=0.01 seed=2 exempt=1
kill 3 50
protocol optimize=1 q_min=0.5
""")
        assert sc.seed == 5 and sc.inference == "both" and sc.redundancy == 2
        assert sc.link_overrides == [(1, 2, 0.5), (2, 1, 0.5)]
        assert sc.interference == [(10.0, 20.0, {1, 2, 3}, {4, 5, 6})]
        assert sc.kills == {3: 50.0} and sc.failure_exempt == {1}
        assert sc.protocol.optimize and sc.protocol.q_min == 0.5

    @pytest.mark.parametrize("text,line", [
        ("seed x\n", 1),
        ("seed 1\nmodel calibration nodes=4\ninference magic\n", 3),
        ("model calibration nodes=4\n\nlink 1 2 1.5\n", 3),
        ("model calibration nodes=4\ninterference 5 1 A=1 B=2\n", 2),
        ("model calibration nodes=4\nredundancy 0\n", 2),
        ("model calibration nodes=4\nteleport 1\n", 2),
    ])
    def test_errors_carry_line_numbers(self, text, line):
        with pytest.raises(ScenarioError, match=f"line {line}"):
            parse_scenario(text)

    def test_missing_model(self):
        with pytest.raises(ScenarioError):
            parse_scenario("seed 1\n")

    def test_shipped_scenarios_parse(self):
        files = sorted((ROOT / "scenarios").glob("*.txt"))
        assert len(files) == 9
        for f in files:
            parse_scenario(f.read_text())


class TestBaseline:
    def test_triangle_is_exhaustive(self):
        g = nx.cycle_graph([1, 2, 3])
        res = offline_tree_optimum(g, {1: {"a"}, 2: {"a"}, 3: {"b"}})
        assert res.method == "exhaustive" and res.evaluated == 3
        # the best tree keeps the two "a" holders adjacent
        assert 2 in res.tree[1]

    def test_star_when_separators_equal(self):
        g = nx.star_graph(5)
        local = {i: {"x"} for i in g}
        res = offline_tree_optimum(g, local)
        assert res.evaluated == 1
        expected = 10 * (8 * 2 + 16)
        assert res.cost == pytest.approx(expected)

    def test_disconnected(self):
        g = nx.Graph([(1, 2)])
        g.add_node(3)
        with pytest.raises(ValueError):
            offline_tree_optimum(g, {})

    @pytest.mark.parametrize("seed", range(3))
    def test_annealing_not_worse_than_greedy(self, seed):
        rng = np.random.default_rng(seed)
        g = nx.random_geometric_graph(20, 0.4, seed=seed)
        while not nx.is_connected(g):
            g = nx.random_geometric_graph(20, 0.4, seed=int(rng.integers(1 << 20)))
        qtab = {}
        for a, b in g.edges:
            qtab[(a, b)] = qtab[(b, a)] = float(rng.uniform(0.3, 1.0))
        pool = [f"X{k}" for k in range(10)]
        local = {i: set(rng.choice(pool, size=2, replace=False)) for i in g}
        q = lambda i, j: qtab.get((i, j), 0.0)
        greedy = nx.maximum_spanning_tree(nx.Graph([(a, b, {"w": qtab[(a, b)]}) for a, b in g.edges]),
                                          weight="w")
        adj = {i: set(greedy[i]) for i in g}
        greedy_cost = spanning_tree_cost(adj, local, q)
        res = offline_tree_optimum(g, local, q, seed=seed, steps=300, restarts=1)
        assert res.method == "annealing"
        assert res.cost <= greedy_cost + 1e-9
        assert is_spanning_tree({i: set(v) for i, v in res.tree.items()})

    def test_parse_graph(self):
        g, local, quality = parse_graph("node 1 a,b\nnode 2 b\nedge 1 2 0.9 0.5\n")
        assert local[1] == {"a", "b"} and quality[(2, 1)] == 0.5
        assert g.edges[1, 2]["q"] == 0.5
        with pytest.raises(ValueError, match="line 2"):
            parse_graph("node 1\nedge 1\n")

    def test_candidate_graph_uses_weaker_direction(self):
        q = {(1, 2): 0.9, (2, 1): 0.4, (2, 3): 1.0, (3, 2): 1.0}
        g = candidate_graph([1, 2, 3], q, q_min=0.5)
        assert sorted(g.edges) == [(2, 3)]


RUN_SCEN = """seed 2
duration 80
inference both
model calibration nodes=8 graph=geometric model_seed=2
links uniform q=1.0
"""


@pytest.fixture(scope="module")
def result():
    return run_scenario(parse_scenario(RUN_SCEN))


class TestRuns:
    def test_starts_local_and_ends_global(self, result):
        first, last = result.rows[0], result.rows[-1]
        assert first.rms_robust == pytest.approx(first.rms_local_oracle, abs=1e-9)
        assert last.rms_robust == pytest.approx(last.rms_global_oracle, abs=1e-9)
        assert last.rms_sumprod == pytest.approx(last.rms_global_oracle, abs=1e-9)
        assert last.spanning_tree_valid == 1 and last.rip_valid == 1

    def test_csv_schema(self, result):
        text = rows_to_csv(result.rows)
        header = text.splitlines()[0].split(",")
        assert header == list(CSV_FIELDS) == [
            "time", "spanning_tree_valid", "rip_valid", "rms_robust", "rms_sumprod", "rms_global_oracle",
            "rms_local_oracle", "invalid_belief_count", "tree_cost", "bytes_sent_total"]
        assert len(text.splitlines()) == 81

    def test_bytes_monotone_and_oracle_constant(self, result):
        b = [r.bytes_sent_total for r in result.rows]
        assert all(x <= y for x, y in zip(b, b[1:]))
        assert len({r.rms_global_oracle for r in result.rows}) == 1
