"""Time the compiled and numpy changepoint kernels on cohort-sized batches.

    python3 benchmarks/bench_bocpd.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from mcpd.bocpd import BACKEND, CpdConfig, batch_changepoint_probabilities, changepoint_probabilities


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    cfg = CpdConfig(prior=(0.0, 0.1, 1.0, 0.1))
    backends = ["python"] + (["compiled"] if BACKEND == "compiled" else [])
    print(f"{'shape':>16} {'backend':>9} {'best ms':>9} {'speedup':>8}")
    for shape in ((1200, 6, 3), (1200, 6, 67), (10000, 6, 3)):
        X = rng.normal(size=shape)
        ref = None
        for b in backends:
            out = batch_changepoint_probabilities(X, cfg, backend=b)
            if ref is None:
                ref = out
            assert np.allclose(out, ref, rtol=1e-12, atol=1e-15), "backends disagree"
            t = min(timeit.repeat(lambda: batch_changepoint_probabilities(X, cfg, backend=b),
                                  number=1, repeat=args.repeat))
            base = t if b == "python" else base
            print(f"{str(shape):>16} {b:>9} {1e3 * t:9.2f} {base / t:8.1f}x")
    X = rng.normal(size=(200, 6, 3))
    t = min(timeit.repeat(lambda: [changepoint_probabilities(x, cfg) for x in X], number=1, repeat=3))
    print(f"{'(200, 6, 3)':>16} {'per-step':>9} {1e3 * t:9.2f}   (reference loop over bocpd_step)")
    if BACKEND != "compiled":
        print("compiled extension not built; only the numpy kernel was timed")


if __name__ == "__main__":
    main()
