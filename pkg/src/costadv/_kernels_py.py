"""Pure-Python reference for the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def fictitious_play_steps(values, row_cum, col_cum, row_counts, col_counts, n_steps):
    """Advance alternating fictitious play by ``n_steps`` rounds, in place.

    Rows minimise and columns maximise.  ``np.argmin`` / ``np.argmax`` break
    ties toward the lowest index, matching the compiled loop.
    """
    for _ in range(n_steps):
        r = int(np.argmin(row_cum))
        row_counts[r] += 1
        col_cum += values[r]
        c = int(np.argmax(col_cum))
        col_counts[c] += 1
        row_cum += values[:, c]
