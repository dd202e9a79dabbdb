# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled twins of the kernels in ``_fallback.py``."""
import numpy as np

from libc.math cimport ceil, floor, cos, sin, fabs, sqrt, INFINITY
from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair
from libcpp.vector cimport vector

cdef double _EPS = 1e-12
cdef double _BIG = 1e300


def row_prefix(values):
    v = np.asarray(values, dtype=np.float64)
    out = np.zeros((v.shape[0], v.shape[1] + 1))
    np.cumsum(v, axis=1, out=out[:, 1:])
    return out


def footprint_sum(xs, ys, ths, double[:, ::1] prefix, double res,
                  double half_x, double half_y, double out_value):
    cdef double[::1] X = np.ascontiguousarray(xs, dtype=np.float64).ravel()
    cdef double[::1] Y = np.ascontiguousarray(ys, dtype=np.float64).ravel()
    cdef double[::1] TH = np.ascontiguousarray(ths, dtype=np.float64).ravel()
    cdef Py_ssize_t m = X.shape[0]
    cdef Py_ssize_t height = prefix.shape[0]
    cdef Py_ssize_t width = prefix.shape[1] - 1
    result = np.zeros(m)
    cdef double[::1] out = result
    cdef Py_ssize_t k
    cdef long jj, ia, ib, i0c, i1c
    cdef double cx, cy, c, s, ext_y, j_lo, j_hi, j, dy, ua, ub, va, vb
    cdef double lo1, hi1, lo2, hi2, xlo, xhi, i0, i1, count, total, seg, inside
    with nogil:
        for k in range(m):
            cx = X[k]
            cy = Y[k]
            c = cos(TH[k])
            s = sin(TH[k])
            ext_y = half_x * fabs(s) + half_y * fabs(c)
            j_lo = ceil((cy - ext_y) / res - 0.5)
            j_hi = floor((cy + ext_y) / res - 0.5)
            total = 0.0
            j = j_lo
            while j <= j_hi:
                dy = (j + 0.5) * res - cy
                if fabs(c) > _EPS:
                    ua = (-half_x - dy * s) / c
                    ub = (half_x - dy * s) / c
                    lo1 = ua if ua < ub else ub
                    hi1 = ub if ua < ub else ua
                elif fabs(dy * s) <= half_x:
                    lo1 = -_BIG
                    hi1 = _BIG
                else:
                    lo1 = _BIG
                    hi1 = -_BIG
                if fabs(s) > _EPS:
                    va = (dy * c - half_y) / s
                    vb = (dy * c + half_y) / s
                    lo2 = va if va < vb else vb
                    hi2 = vb if va < vb else va
                elif fabs(dy * c) <= half_y:
                    lo2 = -_BIG
                    hi2 = _BIG
                else:
                    lo2 = _BIG
                    hi2 = -_BIG
                xlo = lo1 if lo1 > lo2 else lo2
                xhi = hi1 if hi1 < hi2 else hi2
                if xlo <= xhi:
                    i0 = ceil((cx + xlo) / res - 0.5)
                    i1 = floor((cx + xhi) / res - 0.5)
                    count = i1 - i0 + 1.0
                    if count > 0:
                        inside = 0.0
                        seg = 0.0
                        if j >= 0 and j < height:
                            jj = <long>j
                            i0c = <long>(0 if i0 < 0 else (width if i0 > width else i0))
                            i1c = <long>(0 if i1 + 1.0 < 0 else (width if i1 + 1.0 > width else i1 + 1.0))
                            if i1c > i0c:
                                inside = <double>(i1c - i0c)
                                seg = prefix[jj, i1c] - prefix[jj, i0c]
                        total = total + seg
                        total = total + (count - inside) * out_value
                j += 1.0
            out[k] = total
    return result


ctypedef pair[double, long] Entry


def geodesic_field(free, long goal_row, long goal_col, double res):
    cdef unsigned char[:, ::1] fr = np.ascontiguousarray(free, dtype=np.uint8)
    cdef long h = fr.shape[0]
    cdef long w = fr.shape[1]
    dist_arr = np.full((h, w), np.inf)
    cdef double[:, ::1] dist = dist_arr
    cdef vector[unsigned char] done
    done.resize(h * w, 0)
    cdef priority_queue[Entry] heap
    cdef double diag = res * sqrt(2.0)
    cdef double d, nd
    cdef long k, r, cc, rr, c2, dr, dc
    dist[goal_row, goal_col] = 0.0
    heap.push(Entry(-0.0, goal_row * w + goal_col))
    with nogil:
        while not heap.empty():
            d = -heap.top().first
            k = heap.top().second
            heap.pop()
            if done[k]:
                continue
            done[k] = 1
            r = k // w
            cc = k - r * w
            for dr in range(-1, 2):
                rr = r + dr
                if rr < 0 or rr >= h:
                    continue
                for dc in range(-1, 2):
                    if dr == 0 and dc == 0:
                        continue
                    c2 = cc + dc
                    if c2 < 0 or c2 >= w:
                        continue
                    if not fr[rr, c2] or done[rr * w + c2]:
                        continue
                    if dr != 0 and dc != 0:
                        if not fr[r, c2] and not fr[rr, cc]:
                            continue
                        nd = d + diag
                    else:
                        nd = d + res
                    if nd < dist[rr, c2]:
                        dist[rr, c2] = nd
                        heap.push(Entry(-nd, rr * w + c2))
    return dist_arr
