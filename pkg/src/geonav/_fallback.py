"""Pure Python / numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable (or when
``GEONAV_PURE_PYTHON=1``). Every function here has a twin with the same
signature and the same floating-point expression order in ``_kernels.pyx``.
"""
import heapq
import math

import numpy as np

_EPS = 1e-12
_BIG = 1e300


def row_prefix(values: np.ndarray) -> np.ndarray:
    """Row-wise prefix sums: out[r, i] = sum(values[r, :i]); shape (H, W + 1)."""
    v = np.asarray(values, dtype=np.float64)
    out = np.zeros((v.shape[0], v.shape[1] + 1))
    np.cumsum(v, axis=1, out=out[:, 1:])
    return out


def footprint_sum(xs, ys, ths, prefix, res, half_x, half_y, out_value):
    """Sum grid values over the rotated-rectangle footprint at each pose.

    Poses are in grid-local coordinates (cell (0, 0) lower corner at the origin,
    axis aligned). A cell is covered iff its centre lies inside the closed
    rectangle with half extents ``half_x`` (along heading) and ``half_y``.
    Covered cells outside the grid contribute ``out_value`` each.

    Rasterisation is scanline based: for every cell row the covered cells form a
    contiguous interval, whose sum is read from ``prefix`` (see :func:`row_prefix`).
    Returns a flat float64 array with one entry per pose.
    """
    xs = np.ascontiguousarray(xs, dtype=np.float64).ravel()
    ys = np.ascontiguousarray(ys, dtype=np.float64).ravel()
    ths = np.ascontiguousarray(ths, dtype=np.float64).ravel()
    height, width = prefix.shape[0], prefix.shape[1] - 1
    m = xs.shape[0]
    if m == 0:
        return np.zeros(0)
    c = np.cos(ths)
    s = np.sin(ths)
    ext_y = half_x * np.abs(s) + half_y * np.abs(c)
    j_lo = np.ceil((ys - ext_y) / res - 0.5)
    j_hi = np.floor((ys + ext_y) / res - 0.5)
    nrows = int(np.max(j_hi - j_lo)) + 1
    if nrows <= 0:
        return np.zeros(m)
    j = j_lo[:, None] + np.arange(nrows)[None, :]
    row_ok = j <= j_hi[:, None]
    dy = (j + 0.5) * res - ys[:, None]
    c2 = c[:, None]
    s2 = s[:, None]

    with np.errstate(divide="ignore", invalid="ignore"):
        # |dx*c + dy*s| <= half_x
        cu = np.abs(c2) > _EPS
        ua = (-half_x - dy * s2) / c2
        ub = (half_x - dy * s2) / c2
        u_in = np.abs(dy * s2) <= half_x
        lo1 = np.where(cu, np.minimum(ua, ub), np.where(u_in, -_BIG, _BIG))
        hi1 = np.where(cu, np.maximum(ua, ub), np.where(u_in, _BIG, -_BIG))
        # |-dx*s + dy*c| <= half_y
        sv = np.abs(s2) > _EPS
        va = (dy * c2 - half_y) / s2
        vb = (dy * c2 + half_y) / s2
        v_in = np.abs(dy * c2) <= half_y
        lo2 = np.where(sv, np.minimum(va, vb), np.where(v_in, -_BIG, _BIG))
        hi2 = np.where(sv, np.maximum(va, vb), np.where(v_in, _BIG, -_BIG))

    xlo = np.maximum(lo1, lo2)
    xhi = np.minimum(hi1, hi2)
    ok = row_ok & (xlo <= xhi)
    xlo = np.where(ok, xlo, 0.0)
    xhi = np.where(ok, xhi, 0.0)
    i0 = np.ceil((xs[:, None] + xlo) / res - 0.5)
    i1 = np.floor((xs[:, None] + xhi) / res - 0.5)
    count = np.where(ok, np.maximum(i1 - i0 + 1.0, 0.0), 0.0)

    jin = (j >= 0) & (j < height) & (count > 0)
    i0c = np.clip(i0, 0, width).astype(np.int64)
    i1c = np.clip(i1 + 1.0, 0, width).astype(np.int64)
    inside = np.where(jin, np.maximum(i1c - i0c, 0), 0)
    jr = np.clip(j, 0, height - 1).astype(np.int64)
    seg = prefix[jr, i1c] - prefix[jr, i0c]
    seg = np.where(jin & (i1c > i0c), seg, 0.0)
    outside = count - inside
    # same accumulation order as the compiled kernel: row by row
    total = np.zeros(m)
    for r in range(nrows):
        total = total + seg[:, r]
        total = total + outside[:, r] * out_value
    return total


def geodesic_field(free, goal_row, goal_col, res):
    """Dijkstra over the 8-connected free-cell graph, distances in metres.

    Diagonal steps are forbidden when both orthogonal cells they cut past are
    blocked. Unreachable cells are +inf.
    """
    free = np.asarray(free, dtype=bool)
    h, w = free.shape
    fl = free.ravel().tolist()
    dist = [math.inf] * (h * w)
    diag = res * math.sqrt(2.0)
    start = goal_row * w + goal_col
    dist[start] = 0.0
    heap = [(0.0, start)]
    done = [False] * (h * w)
    pop, push = heapq.heappop, heapq.heappush
    while heap:
        d, k = pop(heap)
        if done[k]:
            continue
        done[k] = True
        r, cc = divmod(k, w)
        for dr in (-1, 0, 1):
            rr = r + dr
            if rr < 0 or rr >= h:
                continue
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                c2 = cc + dc
                if c2 < 0 or c2 >= w:
                    continue
                n = rr * w + c2
                if not fl[n] or done[n]:
                    continue
                if dr != 0 and dc != 0:
                    if not fl[r * w + c2] and not fl[rr * w + cc]:
                        continue
                    nd = d + diag
                else:
                    nd = d + res
                if nd < dist[n]:
                    dist[n] = nd
                    push(heap, (nd, n))
    return np.array(dist, dtype=np.float64).reshape(h, w)
