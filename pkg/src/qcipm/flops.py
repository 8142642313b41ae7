"""Lightweight floating-point operation accounting for the numerical kernels.

Counts are recorded per named kernel into every active tally. With no tally
active the record calls are near-free, so the hot paths keep their counters
unconditionally.
"""
from __future__ import annotations

from contextlib import contextmanager

_stack: list[dict] = []


def record(key: str, count: int) -> None:
    """Add `count` operations to `key` in every active tally."""
    if _stack:
        c = int(count)
        for tab in _stack:
            tab[key] = tab.get(key, 0) + c


@contextmanager
def tally():
    """Collect per-kernel operation counts for the enclosed block.

    Yields a dict mapping kernel name to accumulated count. Tallies nest;
    inner blocks contribute to every enclosing tally.
    """
    tab: dict = {}
    _stack.append(tab)
    try:
        yield tab
    finally:
        _stack.remove(tab)


def gemm_cost(m: int, k: int, n: int) -> int:
    # multiply + add per entry of an (m,k) @ (k,n) product
    return 2 * m * k * n


def syrk_cost(m: int, k: int) -> int:
    # symmetric rank-k product G'(k,m) of a (k,m) operand, exploiting symmetry
    return m * m * k


def chol_cost(n: int) -> int:
    return n * n * n // 3
