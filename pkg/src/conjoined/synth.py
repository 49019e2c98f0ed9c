"""Planted-bicluster count matrices for benchmarking.

A design places rectangular blocks on an ``R x C`` grid. Probability mass
``p`` is shared equally among the blocks and spread uniformly over each
block's cells; the remaining ``1 - p`` is spread uniformly over the cells
outside every block. Counts are one multinomial draw of size ``N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .bicluster import Bicluster
from .countmat import SparseCountMatrix

Range = Tuple[int, int]  # half-open [start, stop)

# block side as a fraction of min(R, C) / n_blocks
SIDE_FRACTION = 0.6


@dataclass(frozen=True)
class SynthSpec:
    R: int
    C: int
    N: int
    p: float
    blocks: List[Tuple[Range, Range]] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.R < 1 or self.C < 1:
            raise ValueError("R and C must be positive")
        if self.N < 0:
            raise ValueError("N must be nonnegative")
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must lie strictly between 0 and 1, got {self.p}")
        blocks = [tuple(tuple(int(v) for v in rng) for rng in b) for b in self.blocks]
        for (r0, r1), (c0, c1) in blocks:
            if r1 <= r0 or c1 <= c0:
                raise ValueError("zero-area block")
            if r0 < 0 or c0 < 0 or r1 > self.R or c1 > self.C:
                raise ValueError("block range outside the matrix")
        object.__setattr__(self, "blocks", blocks)


def diagonal_blocks(R, C, n_blocks, side=None, overlap_last=False):
    """Square blocks packed along the main diagonal from the origin.

    ``side`` defaults to ``floor(SIDE_FRACTION * min(R, C) / n_blocks)``.
    With ``overlap_last`` the final block starts halfway into the one
    before it, so the two share half their rows and columns.
    """
    if side is None:
        side = int(SIDE_FRACTION * min(R, C) // n_blocks)
    if side < 1:
        raise ValueError("matrix too small for the requested blocks")
    blocks = []
    start = 0
    for b in range(n_blocks):
        if overlap_last and b == n_blocks - 1 and b > 0:
            start -= side - side // 2
        blocks.append(((start, start + side), (start, start + side)))
        start += side
    return blocks


_PRESETS = {
    1: dict(R=50, C=50, N=4000, p=0.8, n_blocks=1, overlap=False),
    2: dict(R=20, C=20, N=4000, p=0.5, n_blocks=2, overlap=False),
    3: dict(R=50, C=50, N=4000, p=0.7, n_blocks=3, overlap=True),
    4: dict(R=100, C=100, N=10000, p=0.7, n_blocks=5, overlap=False),
}


def case_presets(case_id, seed=0):
    """Benchmark designs 1-4.

    1: one block; 2: two disjoint blocks; 3: three blocks, the last two
    sharing half their rows and columns; 4: five disjoint blocks.
    """
    try:
        c = _PRESETS[int(case_id)]
    except (KeyError, ValueError, TypeError):
        raise ValueError(f"unknown case {case_id!r}; expected 1, 2, 3 or 4") from None
    blocks = diagonal_blocks(c["R"], c["C"], c["n_blocks"], overlap_last=c["overlap"])
    return SynthSpec(R=c["R"], C=c["C"], N=c["N"], p=c["p"], blocks=blocks, seed=seed)


def block_mask(spec, b):
    (r0, r1), (c0, c1) = spec.blocks[b]
    m = np.zeros((spec.R, spec.C), dtype=bool)
    m[r0:r1, c0:c1] = True
    return m


def make_theta(spec):
    """Cell probability matrix of a design; entries sum to one."""
    theta = np.zeros((spec.R, spec.C))
    covered = np.zeros((spec.R, spec.C), dtype=bool)
    if spec.blocks:
        share = spec.p / len(spec.blocks)
        for b in range(len(spec.blocks)):
            m = block_mask(spec, b)
            theta[m] += share / m.sum()
            covered |= m
    outside = ~covered
    if outside.any():
        theta[outside] += (1.0 - spec.p if spec.blocks else 1.0) / outside.sum()
    # renormalize: p is lost when blocks cover every cell
    return theta / theta.sum()


def sample_counts(theta, N, seed):
    """One multinomial draw of ``N`` tokens over the cells of ``theta``."""
    theta = np.asarray(theta, dtype=float)
    rng = np.random.default_rng(seed)
    flat = rng.multinomial(int(N), theta.ravel() / theta.sum())
    return SparseCountMatrix.from_dense(flat.reshape(theta.shape))


def true_biclusters(spec):
    """One bicluster per block, in block order."""
    return [Bicluster(range(r0, r1), range(c0, c1), 1.0)
            for (r0, r1), (c0, c1) in spec.blocks]


def simulate(spec):
    """Sample a matrix for ``spec`` using its seed; returns ``(matrix, truth)``."""
    return sample_counts(make_theta(spec), spec.N, spec.seed), true_biclusters(spec)
