"""Local edge swaps lower the communication cost of the spanning tree.

A 7-node network with perfect links on a random connectivity graph runs the
spanning-tree protocol with swap optimization enabled.  The cost of each
stable tree is compared with the exhaustive offline optimum.
"""
import networkx as nx

from distinfer.harness.baseline import offline_tree_optimum
from distinfer.harness.runner import converged_components, run_scenario
from distinfer.harness.scenario import parse_scenario


def main(seed=5, n=7):
    g = nx.relabel_nodes(nx.connected_watts_strogatz_graph(n, 4, 0.5, seed=seed), lambda i: i + 1)
    text = "\n".join([f"seed {seed}", "duration 300", "inference robust",
                      f"model calibration nodes={n} graph=geometric model_seed={seed}",
                      "links none", "protocol optimize=1"]
                     + [f"link {a} {b} 1.0 both" for a, b in g.edges])
    costs = []

    def probe(t, w, row):
        cc = converged_components(w)
        if len(cc) == 1 and cc[0][1] and row.spanning_tree_valid:
            if not costs or costs[-1][1] != row.tree_cost:
                costs.append((t, row.tree_cost))

    w = run_scenario(parse_scenario(text), probe=probe).worlds["robust"]
    opt = offline_tree_optimum(g, {i: w.nodes[i].V for i in g})
    for t, c in costs:
        print(f"t={t:5.0f}  tree cost {c:8.1f}")
    print(f"offline optimum {opt.cost:.1f} ({opt.method})")


if __name__ == "__main__":
    main()
