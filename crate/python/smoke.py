"""Smoke test for the deqnc extension.

Build and run from the repository root:

    cargo build --release -p deqnc-py --features extension-module
    cp target/release/libdeqnc.so python/deqnc.so
    python3 python/smoke.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import deqnc  # noqa: E402


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    s = deqnc.make_etf(4, 6, alpha=2.0, seed=1)
    gram = [[sum(s[r][i] * s[r][j] for r in range(6)) for j in range(4)] for i in range(4)]
    target = deqnc.etf_gram(4, 2.0)
    assert all(close(gram[i][j], target[i][j], 1e-10) for i in range(4) for j in range(4))

    assert close(deqnc.cross_entropy([[0.0, 0.0], [0.0, 0.0]], [0, 1]), math.log(2), 1e-15)
    assert deqnc.accuracy([[0.7, 0.7, 0.7]] * 3, [0, 1, 2]) == 1 / 3

    w = [[0.2, 0.1], [0.0, 0.3]]
    h0 = [[1.0, 0.5], [-1.0, 2.0]]
    z = deqnc.fixed_point(w, h0)
    z_it, iters, converged = deqnc.fixed_point_iterate(w, h0, epsilon=1e-13, t_max=1000)
    assert converged and iters > 1
    assert all(close(z[i][j], z_it[i][j], 1e-10) for i in range(2) for j in range(2))

    lhs, rhs = deqnc.lemma1_bound([2.0, 2.0, 2.0], 0, 0.5, 1.0)
    assert close(lhs, rhs, 1e-12)
    deq_bound, explicit_bound = deqnc.balanced_lower_bounds(1.0, 1.0, 4, 1.0)
    assert deq_bound <= explicit_bound

    with tempfile.TemporaryDirectory() as tmp:
        cfg = deqnc.ExperimentConfig.from_toml(
            'name = "smoke"\nk = 3\nd = 4\nn = 5\nsteps = 200\nlog_every = 50\n',
            output_dir=os.path.join(tmp, "run"),
        )
        record = deqnc.run_experiment(cfg)
        assert record["config_hash"] == cfg.hash()
        assert [h["head"] for h in record["heads"]] == ["explicit", "deq"]
        assert len({h["h0_sha256"] for h in record["heads"]}) == 1
        assert os.path.exists(os.path.join(tmp, "run", "deq", "trace.csv"))

    try:
        deqnc.ExperimentConfig.from_toml("k = 3\nd = 4\n")
    except ValueError:
        pass
    else:
        raise AssertionError("config without a layout must be rejected")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
