"""Compare the compiled stereo-matching kernels with their numpy versions.

    python benchmarks/bench_kernels.py --height 128 --width 416 --max-disp 64
"""

import argparse
import timeit

import numpy as np

from uamd import _kernels
from uamd.data import synth_scene
from uamd.sgm import PATHS_8

py = _kernels.python_kernels


def best_of(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--height", type=int, default=128)
    ap.add_argument("--width", type=int, default=416)
    ap.add_argument("--max-disp", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    if _kernels.BACKEND != "cython":
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation` first")

    sample, _ = synth_scene(args.height, args.width, 3, min(16, args.width // 4 - 1), seed=0)
    left = np.rint(sample.left * 255).sum(axis=0).astype(np.int32)
    right = np.rint(sample.right * 255).sum(axis=0).astype(np.int32)
    codes_l = _kernels.census_transform(left, 2)
    codes_r = _kernels.census_transform(right, 2)
    cost = _kernels.census_cost(codes_l, codes_r, args.max_disp, 24.0)

    def aggregate(impl):
        return lambda: [impl.aggregate_path(cost, 10.0, 120.0, dy, dx) for dy, dx in PATHS_8]

    cases = {
        "census_transform": (lambda: _kernels.census_transform(left, 2), lambda: py.census_transform(left, 2)),
        "census_cost": (lambda: _kernels.census_cost(codes_l, codes_r, args.max_disp, 24.0),
                        lambda: py.census_cost(codes_l, codes_r, args.max_disp, 24.0)),
        "aggregate_8_paths": (aggregate(_kernels), aggregate(py)),
    }
    print(f"image {args.height}x{args.width}, {args.max_disp} disparities, best of {args.repeat}")
    print(f"{'kernel':<20}{'cython [s]':>12}{'numpy [s]':>12}{'speedup':>10}  identical")
    for name, (fast, slow) in cases.items():
        a, b = fast(), slow()
        same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, list) else np.array_equal(a, b)
        t_fast, t_slow = best_of(fast, args.repeat), best_of(slow, args.repeat)
        print(f"{name:<20}{t_fast:>12.4f}{t_slow:>12.4f}{t_slow / t_fast:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
