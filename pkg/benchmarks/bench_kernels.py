"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from pqclab import _pykernels
from pqclab.env import GridSpec, Task, sample_scene
from pqclab.planner import build_graph

try:
    from pqclab import _ckernels
except ImportError:
    _ckernels = None


def cases():
    sc = sample_scene(Task.PEG_INSERTION, GridSpec.full(), 6, 3)
    g = build_graph(sc)
    src = np.flatnonzero(sc.goal_mask & g.vertices).astype(np.int32)
    opp = sc.grid.opposite_actions
    x = np.random.default_rng(0).random((64, 32, 32, 2))
    cols = _pykernels.im2col(x, 3, 2)
    return {
        "dijkstra 21x21x12": lambda m: m.dijkstra(g.nbr, g.cost, opp, src),
        "im2col 64x32x32x2 k3 s2": lambda m: m.im2col(x, 3, 2),
        "col2im 64x32x32x2 k3 s2": lambda m: m.col2im(cols, x.shape, 3, 2),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'kernel':28s}" + "".join(f"{n:>12s}" for n, _ in backends) + "   speedup")
    for name, fn in cases().items():
        times = [min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat)) for _, m in backends]
        row = f"{name:28s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"   {times[0] / times[1]:6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
