"""Counter-based Gaussian streams.

Every block of rows is drawn from its own Philox generator keyed by
``(seed, stream, block)``, so a block's numbers never depend on how many
blocks are generated, in which order, or by which worker.  Uniforms are
built from the top 53 bits of each raw draw and mapped to normals by the
inverse CDF.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

from .errors import InvalidArgumentError

__all__ = ["BLOCK_ROWS", "STREAMS", "block_normals", "normals"]

BLOCK_ROWS = 2048
_U64 = (1 << 64) - 1

# stream ids keep independent uses of one seed apart
STREAMS = {
    "wiener": 1,
    "fbm": 2,
    "residual": 3,
    "novikov_lhs": 4,
    "novikov_rhs": 5,
}


def _check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= _U64:
        raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def block_normals(seed: int, stream: int, block: int, rows: int, cols: int) -> np.ndarray:
    """Standard normals of shape ``(rows, cols)`` for one block."""
    seed = _check_seed(seed)
    key = seed | (int(stream) << 64) | (int(block) << 80)
    bits = np.random.Philox(key=key).random_raw(rows * cols)
    u = ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return ndtri(u).reshape(rows, cols)


def normals(seed: int, stream: int, start_row: int, rows: int, cols: int,
            block_rows: int = BLOCK_ROWS) -> np.ndarray:
    """Rows ``start_row .. start_row + rows`` of the stream, assembled from whole blocks."""
    first = start_row // block_rows
    last = (start_row + rows - 1) // block_rows
    parts = [block_normals(seed, stream, b, block_rows, cols) for b in range(first, last + 1)]
    full = np.concatenate(parts, axis=0)
    off = start_row - first * block_rows
    return full[off:off + rows]
