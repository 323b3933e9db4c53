"""Smoke test for the spectral_denoise extension module.

Build and run from the repository root:

    cargo build --release -p spectral-denoise-py
    cp target/release/libspectral_denoise_py.so python/spectral_denoise.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import random
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import spectral_denoise as sd


def spiked(p, n, values, seed):
    rng = random.Random(seed)
    x = [[0.0] * n for _ in range(p)]
    for k, t in enumerate(values):
        u = [rng.gauss(0, 1) for _ in range(p)]
        v = [rng.gauss(0, 1) for _ in range(n)]
        nu, nv = math.sqrt(sum(a * a for a in u)), math.sqrt(sum(b * b for b in v))
        for i in range(p):
            for j in range(n):
                x[i][j] += t * u[i] * v[j] / (nu * nv)
    y = [[x[i][j] + rng.gauss(0, 1) / math.sqrt(n) for j in range(n)] for i in range(p)]
    return x, y


def rel_error(a, b):
    num = sum((a[i][j] - b[i][j]) ** 2 for i in range(len(a)) for j in range(len(a[0])))
    den = sum(v * v for row in b for v in row)
    return math.sqrt(num / den)


def main():
    gamma = 0.5
    assert abs(sd.bulk_edge(gamma) - (1 + math.sqrt(gamma))) < 1e-12
    assert abs(sd.population_threshold(gamma) - gamma ** 0.25) < 1e-12
    lam = sd.forward_singular_value(2.0, gamma)
    assert abs(sd.invert_singular_value(lam, gamma) - 2.0) < 1e-10
    c, ct = sd.cosines(2.0, gamma)
    assert 0 < c < 1 and 0 < ct < 1

    p, n = 60, 120
    x, y = spiked(p, n, [4.0, 2.5], seed=1)

    shrunk = sd.svs_shrink(y)
    plain = sd.spectral_denoise(y)
    assert shrunk.rank == plain.rank == 2, (shrunk.rank, plain.rank)
    assert max(abs(a - b) for ra, rb in zip(shrunk.x_hat, plain.x_hat) for a, b in zip(ra, rb)) < 1e-10
    assert rel_error(shrunk.x_hat, x) < rel_error(y, x)

    weights = [1.0 + (i % 3) for i in range(p)]
    weighted = sd.spectral_denoise(y, row_weights=weights)
    assert len(weighted.alpha) == 2 and weighted.mu > 0

    x_loc, _, rank = sd.localized_denoise(y, 2, 2)
    assert rank == 2 and len(x_loc) == p

    rows, cols = list(range(20)), list(range(30))
    x_sub, _, _ = sd.submatrix_denoise(y, rows, cols)
    assert len(x_sub) == 20 and len(x_sub[0]) == 30

    white, tau = sd.whiten_denoise(y, [1.0] * p, [1.0] * n)
    assert white.rank == 2 and abs(tau - 1.0) < 1e-12

    entries = [(i, j, y[i][j]) for i in range(p) for j in range(n) if (i + j) % 5]
    q = math.sqrt(0.8)
    completed = sd.missing_data_denoise(entries, 1 / math.sqrt(n), [q] * p, [q] * n)
    assert len(completed.x_hat) == p

    try:
        sd.spectral_denoise(y, rank=5)
    except sd.BelowDetectionThreshold as e:
        assert "index 2" in str(e)
    else:
        raise AssertionError("forced rank should fail")

    report = json.loads(sd.run_experiment(scenario="submatrix", scale=0.1, replicates=2, seed=3))
    assert report["scenario"] == "submatrix" and report["version"] == sd.__version__
    assert "localized-checkerboard" in sd.SCENARIOS

    print(f"spectral_denoise {sd.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
