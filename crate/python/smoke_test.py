"""Smoke test for the exitlab Python extension.

Build first:  pip install --no-build-isolation -e crates/python
"""

import json
import math
import os
import tempfile

import exitlab_py as ex


def main():
    law = ex.EnvironmentLaw(3, 0.05)
    env = law.sample(6.0, seed=11)
    assert len(env) > 0
    q = env.site([0, 0, 0])
    assert abs(sum(q) - 1.0) < 1e-12 and min(q) > 0

    ex_env = env.exit_measure(5.0)
    ex_srw = ex.srw_exit_measure(3, 5.0)
    assert abs(sum(ex_env.values()) - 1.0) < 1e-10
    l1 = sum(abs(ex_env.get(z, 0.0) - p) for z, p in ex_srw.items())
    l1 += sum(p for z, p in ex_env.items() if z not in ex_srw)
    print(f"exit law: {len(ex_env)} boundary sites, l1 distance to SRW {l1:.4f}")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "env.bin")
        env.save(path)
        again = ex.Environment.load(path)
        assert again.site([1, 0, 0]) == env.site([1, 0, 0])

        cfg = json.dumps({"L": [5], "eps": 0.05, "n_env": 3, "seed": 4})
        manifest = ex.run_experiment("probe", cfg, os.path.join(d, "out"))
        names = [a["path"] for a in manifest["artifacts"]]
        assert "probe.csv" in names, names
        print(f"probe run wrote {len(names)} files, failed checks: {len(manifest['failures'])}")

    p = ex.probe(law, 6.0, n_env=4, seed=1, t=3.0)
    print(f"probe L=6: b = {p['b_total']}, cond pass = {p['condition']['pass']}")

    reps = ex.lclt(3, 2.0, [1, 2, 4])
    assert all(abs(r["mass"] + r["truncated_mass"] - 1.0) < 1e-10 for r in reps)
    print("lclt e(n):", [round(r["scaled_error"], 5) for r in reps])

    g = ex.green(2.0, [[6, 0, 0], [0, 8, 0]])
    print("green ratios:", [round(e["ratio"], 5) for e in g["entries"]])

    c = ex.brownian_comparison(3, 6.0, 6.0)
    print(f"brownian comparison L=6: scaled gap {c['scaled_gap']:.4f}")

    dens = ex.poisson_kernel(4.0, [0.0, 0.0, 0.0], [4.0, 0.0, 0.0])
    assert abs(dens - 1.0 / (4 * math.pi * 16.0)) < 1e-12

    try:
        ex.EnvironmentLaw(3, 0.5)
    except ValueError:
        pass
    else:
        raise AssertionError("eps = 0.5 must be rejected")
    print("smoke test ok")


if __name__ == "__main__":
    main()
