"""Smoke test for the planhead_py extension module.

Build first, e.g. `maturin develop -m crates/python/Cargo.toml`, then run
`python python/smoke_test.py`.
"""

import math
import os
import tempfile

import planhead_py as ph


def main():
    corpus = ph.generate_corpus(0, 48)
    assert len(corpus) == 48
    s = corpus[0]
    assert len(s.gt_traj) == 6 and len(s.scene_descriptor) == 28
    assert ph.Scenario.from_json(s.to_json()).id == s.id

    strategy, block = ph.oracle_reasoning(s)
    cmds = ph.parse_command_block(block)
    assert set(cmds) == {"Direction Control", "Lane Management", "Speed Control", "Emergency Control"}
    assert ph.round_trip_commands(block) == block
    try:
        ph.parse_command_block("Direction Control: FLY")
    except ValueError:
        pass
    else:
        raise AssertionError("bad command block was accepted")

    coarse = ph.coarsen(s.gt_traj)
    end = lambda pts: (sum(p[0] for p in pts), sum(p[1] for p in pts))
    assert all(math.isclose(a, b, abs_tol=1e-9) for a, b in zip(end(coarse), end(s.gt_traj)))

    assert ph.kl_gaussian([0.0], [0.0], [1.0], [0.0]) == 0.5
    m = ph.l2_metric(s.gt_traj, s.gt_traj)
    assert m["avg"] == 0.0

    planner = ph.Planner(seed=0)
    before = planner.evaluate(corpus)["vad_avg"]["l2"]["avg"]
    losses = planner.train(corpus, epochs=3, seed=0)
    assert len(losses) == 3 and all(math.isfinite(x) for x in losses)
    fine, coarse_plan = planner.plan(s)
    assert len(fine) == 6 and coarse_plan is not None and len(coarse_plan) == 6
    after = planner.evaluate(corpus)["vad_avg"]["l2"]["avg"]
    print(f"train-set avg L2 before {before:.3f} m, after {after:.3f} m")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ck.json")
        planner.save(path)
        again = ph.Planner.load(path)
        assert again.plan(s) == planner.plan(s)

    buf = ph.MemoryBuffer()
    buf.insert([1.0, 0.0], "a")
    buf.insert([0.0, 1.0], "b")
    idx, payload, sim = buf.lookup([0.0, 2.0])
    assert (idx, payload) == (1, "b") and math.isclose(sim, 1.0)
    assert len(buf) == 2

    print("smoke test passed")


if __name__ == "__main__":
    main()
