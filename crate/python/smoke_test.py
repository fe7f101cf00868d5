"""Smoke test for the btme Python module.

Build and install first, e.g.
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/btme-*.whl
"""

import math
from pathlib import Path

import btme

ROOT = Path(__file__).resolve().parent.parent


def main():
    # deviations 0.1, 0.5 against 0.5, 0.3, 0.9: four wins, one loss, one tie
    y = btme.count_comparisons([[[0.1], [0.5]], [[0.5], [0.3], [0.9]]])
    assert y.num_treatments == 2 and y.num_features == 1
    assert y.get(0, 0, 1) == 4 and y.get(0, 1, 0) == 1 and y.ties(0, 0, 1) == 1

    y2 = btme.Comparisons([[[0, 80], [20, 0]]], [10, 10])
    ll = btme.log_likelihood(y2, [1.0, 0.0], [[1.0], [1.0]])
    p = 1.0 / (1.0 + math.exp(-1.0))
    expected = math.log(math.comb(100, 80)) + 80 * math.log(p) + 20 * math.log(1.0 - p)
    assert abs(ll - expected) < 1e-9, (ll, expected)

    draws = btme.run_chain(y2, samples=5000, seed=1)
    assert draws.num_samples == 5000 and len(draws.d[0]) == 2
    assert all(min(row) == 0.0 for row in draws.d)
    summary = draws.summary()
    assert summary["d_hat"][0] > summary["d_hat"][1]

    sim, truth = btme.simulate(3, 2, n=5, seed=4)
    assert sim.num_treatments == 3 and len(truth["w"]) == 3
    assert btme.Comparisons.from_csv(sim.to_csv()).to_nested() == sim.to_nested()

    assert abs(btme.spearman([1, 2, 3], [10, 20, 30]) - 1.0) < 1e-12

    data = (ROOT / "fixtures" / "synthetic_8x10x4.csv").read_text()
    config = (ROOT / "fixtures" / "synthetic_8x10x4.toml").read_text().replace("samples = 20000", "samples = 3000")
    out = btme.rank(data, config)
    s = out["summary"]
    assert len(s["treatments"]) == 8
    for fm in s["prevailing"]:
        m = fm["matrix"]
        assert all(m[i][i] == 0.5 for i in range(8))
    print("map order:", " > ".join(s["ranking"][0]["order"]), f"({s['ranking'][0]['prob']:.3f})")

    try:
        btme.rank(data, "seed = 1\n")
    except ValueError as e:
        assert "features" in str(e)
    else:
        raise AssertionError("missing features accepted")

    study = btme.run_study([(2, 1)], replicates=2, samples=500)
    assert len(study["replicates"]) == 2
    print("python smoke test ok")


if __name__ == "__main__":
    main()
