"""Compare the compiled GRU kernel against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 200] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from lawprompt._kernels import _gru_py

try:
    from lawprompt._kernels import _gru as _gru_c
except ImportError:  # extension not built
    _gru_c = None

SHAPES = [(16, 32, 16), (64, 32, 16), (64, 64, 32), (256, 32, 16)]


def _inputs(T, d_in, d_g, rng):
    X = rng.normal(size=(T, d_in))
    w = [rng.uniform(-0.3, 0.3, size=(d_g, d_in + d_g)) for _ in range(3)]
    b = [rng.uniform(-0.3, 0.3, size=d_g) for _ in range(3)]
    return X, w, b, np.zeros(d_g)


def bench(module, T, d_in, d_g, repeat):
    rng = np.random.default_rng(0)
    X, (wz, wr, wh), (bz, br, bh), h0 = _inputs(T, d_in, d_g, rng)
    H, Z, R, C = module.gru_forward(X, wz, wr, wh, bz, br, bh, h0)
    dH = rng.normal(size=(T, d_g))
    fwd = min(timeit.repeat(lambda: module.gru_forward(X, wz, wr, wh, bz, br, bh, h0), number=1, repeat=repeat))
    bwd = min(timeit.repeat(lambda: module.gru_backward(X, wz, wr, wh, H, Z, R, C, dH), number=1, repeat=repeat))
    return fwd, bwd


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--json", help="also write the rows as JSON")
    args = ap.parse_args(argv)
    backends = {"python": _gru_py}
    if _gru_c is not None:
        backends["compiled"] = _gru_c
    else:
        print("compiled extension not available; timing the fallback only")
    rows = []
    print(f"{'T':>5} {'d_in':>5} {'d_g':>4} {'backend':>9} {'forward ms':>11} {'backward ms':>12}")
    for T, d_in, d_g in SHAPES:
        for name, mod in backends.items():
            f, b = bench(mod, T, d_in, d_g, args.repeat)
            rows.append({"T": T, "d_in": d_in, "d_g": d_g, "backend": name, "forward_s": f, "backward_s": b})
            print(f"{T:>5} {d_in:>5} {d_g:>4} {name:>9} {f * 1e3:>11.4f} {b * 1e3:>12.4f}")
        if len(backends) == 2:
            py, c = rows[-2], rows[-1]
            print(f"{'':>26} speedup  {py['forward_s'] / c['forward_s']:>8.1f}x {py['backward_s'] / c['backward_s']:>11.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
