"""Node failures with one versus three replicas of every clique marginal.

With three replicas the network keeps answering exactly for a long time; with
one replica it falls back toward local inference once prior pieces die, but
no node is ever left without a valid belief.
"""
from pathlib import Path

from distinfer.harness.runner import replicas_intact, run_scenario
from distinfer.harness.scenario import parse_scenario

SCENARIO = Path(__file__).resolve().parents[1] / "scenarios" / "failure_20.txt"


def run(redundancy):
    text = SCENARIO.read_text().replace("redundancy 3", f"redundancy {redundancy}")
    intact = []
    res = run_scenario(parse_scenario(text), probe=lambda t, w, row: intact.append(replicas_intact(w)))
    return res.rows, intact


def main():
    for red in (1, 3):
        rows, intact = run(red)
        print(f"redundancy {red}")
        print("  time  robust  oracle  local  replicas")
        for row, ok in list(zip(rows, intact))[::25]:
            print(f"{row.time:6.0f} {row.rms_robust:7.3f} {row.rms_global_oracle:7.3f} "
                  f"{row.rms_local_oracle:6.3f}  {'intact' if ok else 'lost'}")


if __name__ == "__main__":
    main()
