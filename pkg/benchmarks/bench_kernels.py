"""Benchmark the compiled kernel backend against the numpy fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 5]

Times the blockwise attention kernel and the accumulator merge on a grid of
block shapes typical of schedule execution, and reports the speedup of the
compiled extension (if built) over the pure numpy path.
"""

import argparse
import time

from ringsim import _kernels_ref, rng

try:
    from ringsim import _kernels as compiled
except ImportError:
    compiled = None

SHAPES = [
    # (tokens_q, tokens_k, heads, head_dim)
    (16, 16, 4, 16),
    (64, 64, 8, 32),
    (256, 256, 8, 64),
    (1024, 1024, 8, 64),
]


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_attention(impl, q, k, v, repeats):
    return best_of(lambda: impl.attention_block(q, k, v, _kernels_ref.MASK_CAUSAL,
                                                0, 0), repeats)


def bench_merge(impl, state, repeats):
    a_out, a_lse, b_out, b_lse = state
    return best_of(lambda: impl.merge_state(a_out, a_lse, b_out, b_lse), repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if compiled is None:
        print("compiled extension not built; showing numpy backend only")
        print("(build it with: python3 setup.py build_ext --inplace)")

    header = f"{'shape (Tq,Tk,H,D)':>22} {'kernel':>10} {'numpy ms':>10}"
    if compiled is not None:
        header += f" {'compiled ms':>12} {'speedup':>8}"
    print(header)
    for tq, tk, heads, dim in SHAPES:
        q, k, v = rng.attention_inputs(1, max(tq, tk), heads, dim)
        q = q[:tq]
        k, v = k[:tk], v[:tk]
        a_out = rng.uniform(2, (tq, heads, dim), -3, 3)
        a_lse = rng.uniform(3, (heads, tq), -5, 5)
        b_out = rng.uniform(4, (tq, heads, dim), -3, 3)
        b_lse = rng.uniform(5, (heads, tq), -5, 5)
        state = (a_out, a_lse, b_out, b_lse)

        for name, runner, payload in (("attention", bench_attention, (q, k, v)),
                                      ("merge", bench_merge, (state,))):
            t_py = runner(_kernels_ref, *payload, args.repeats)
            line = f"{f'({tq},{tk},{heads},{dim})':>22} {name:>10} {t_py * 1e3:10.3f}"
            if compiled is not None:
                t_cy = runner(compiled, *payload, args.repeats)
                line += f" {t_cy * 1e3:12.3f} {t_py / t_cy:7.2f}x"
            print(line)


if __name__ == "__main__":
    main()
