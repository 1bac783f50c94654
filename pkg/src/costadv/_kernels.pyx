# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loop for fictitious play.

Must stay bit-for-bit equivalent to ``_kernels_py.fictitious_play_steps``.
"""

cimport cython


def fictitious_play_steps(
    const double[:, ::1] values,
    double[::1] row_cum,
    double[::1] col_cum,
    long long[::1] row_counts,
    long long[::1] col_counts,
    Py_ssize_t n_steps,
):
    cdef Py_ssize_t n_rows = values.shape[0]
    cdef Py_ssize_t n_cols = values.shape[1]
    cdef Py_ssize_t step, i, j, r, c
    cdef double best

    with nogil:
        for step in range(n_steps):
            # defender (rows) best-responds by minimising cumulative cost
            r = 0
            best = row_cum[0]
            for i in range(1, n_rows):
                if row_cum[i] < best:
                    best = row_cum[i]
                    r = i
            row_counts[r] += 1
            for j in range(n_cols):
                col_cum[j] += values[r, j]

            # attacker (columns) best-responds by maximising cumulative cost
            c = 0
            best = col_cum[0]
            for j in range(1, n_cols):
                if col_cum[j] > best:
                    best = col_cum[j]
                    c = j
            col_counts[c] += 1
            for i in range(n_rows):
                row_cum[i] += values[i, c]
