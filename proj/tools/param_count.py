#!/usr/bin/env python3
"""Counts KARMA parameters by listing every tensor shape (independent of the C++ code)."""
import argparse
import math


def mamba_shapes(d_in, n, d_conv, expand):
    di = expand * d_in
    r = math.ceil(d_in / 16)
    return [(d_in, 2 * di), (di, d_conv), (di,), (di, 2 * n), (di, r), (r, di), (di,),
            (di, n), (di,), (di, d_in)]


def model_shapes(L, T, D, Es, Et, blocks, I, n, d_conv, expand, shared=True, affine=False):
    shapes = [(D, I), (I,), (I, I), (I, I), (I, I), (I, I), (I, D), (D,), (I, D), (D,)]
    shapes += [(L, Es), (Es,), (L, Et), (Et,), (Es,)]
    for _ in range(blocks):
        shapes += mamba_shapes(Es // 2, n, d_conv, expand) * 2
        shapes += mamba_shapes(Es, n, d_conv, expand) * (1 if shared else 2)
        shapes += [(Es,)]
    shapes += mamba_shapes(Et, n, d_conv, expand)
    shapes += [(Es, T), (T,), (Et, T), (T,)]
    if affine:
        shapes += [(D,), (D,)]
    return shapes


def main():
    p = argparse.ArgumentParser()
    for k, v in dict(L=96, T=96, D=7, E_s=64, E_t=64, N_blocks=2, I=64, N=16, d_conv=4, expand=2).items():
        p.add_argument("--" + k, type=int, default=v)
    a = p.parse_args()
    shapes = model_shapes(a.L, a.T, a.D, a.E_s, a.E_t, a.N_blocks, a.I, a.N, a.d_conv, a.expand)
    print(sum(math.prod(s) for s in shapes))


if __name__ == "__main__":
    main()
