"""Quadtree acceleration of the pairwise Biot-Savart sum.

A bucketed quadtree is built over the particle positions as flat arrays,
then each target traverses it with the acceptance rule

    cell size / distance-to-center-of-circulation < theta.

Accepted cells contribute a multipole evaluation about their center of
circulation: the monopole term plus the second-moment (quadrupole)
correction; the dipole term vanishes by the choice of expansion center.
Cells containing the target never satisfy the rule for theta < 1, so
self-interaction is only ever excluded in leaf sums.
"""

from __future__ import annotations

import numba
import numpy as np

from .kernel import COLLISION_RADIUS

LEAF_SIZE = 16
_MAX_DEPTH = 48
_TWO_PI = 2.0 * np.pi


@numba.njit(cache=True, nogil=True)
def _build(pos):
    n = pos.shape[0]
    xmin = pos[:, 0].min()
    xmax = pos[:, 0].max()
    ymin = pos[:, 1].min()
    ymax = pos[:, 1].max()
    cx0 = 0.5 * (xmin + xmax)
    cy0 = 0.5 * (ymin + ymax)
    half0 = 0.5 * max(xmax - xmin, ymax - ymin) * (1.0 + 1e-12) + 1e-300

    cap = 8 * n + 64
    node_cx = np.empty(cap)
    node_cy = np.empty(cap)
    node_half = np.empty(cap)
    node_start = np.empty(cap, np.int64)
    node_count = np.empty(cap, np.int64)
    node_child0 = np.full(cap, -1, np.int64)
    node_comx = np.empty(cap)
    node_comy = np.empty(cap)
    node_sxx = np.empty(cap)
    node_sxy = np.empty(cap)
    node_syy = np.empty(cap)

    perm = np.arange(n)
    scratch = np.empty(n, np.int64)

    node_cx[0] = cx0
    node_cy[0] = cy0
    node_half[0] = half0
    node_start[0] = 0
    node_count[0] = n
    n_nodes = 1

    stack_node = np.empty(4 * _MAX_DEPTH + 8, np.int64)
    stack_depth = np.empty(4 * _MAX_DEPTH + 8, np.int64)
    stack_node[0] = 0
    stack_depth[0] = 0
    top = 1

    while top > 0:
        top -= 1
        nid = stack_node[top]
        depth = stack_depth[top]
        start = node_start[nid]
        count = node_count[nid]

        comx = 0.0
        comy = 0.0
        for t in range(start, start + count):
            comx += pos[perm[t], 0]
            comy += pos[perm[t], 1]
        if count > 0:
            comx /= count
            comy /= count
        sxx = 0.0
        sxy = 0.0
        syy = 0.0
        for t in range(start, start + count):
            dx = pos[perm[t], 0] - comx
            dy = pos[perm[t], 1] - comy
            sxx += dx * dx
            sxy += dx * dy
            syy += dy * dy
        node_comx[nid] = comx
        node_comy[nid] = comy
        node_sxx[nid] = sxx
        node_sxy[nid] = sxy
        node_syy[nid] = syy

        if count <= LEAF_SIZE or depth >= _MAX_DEPTH or node_half[nid] < 1e-12:
            continue

        cx = node_cx[nid]
        cy = node_cy[nid]
        # Quadrant order: (x <= cx, y <= cy), (x > cx, y <= cy),
        #                 (x <= cx, y > cy), (x > cx, y > cy).
        counts = np.zeros(4, np.int64)
        for t in range(start, start + count):
            p = perm[t]
            q = (1 if pos[p, 0] > cx else 0) + (2 if pos[p, 1] > cy else 0)
            counts[q] += 1
        offs = np.zeros(5, np.int64)
        for q in range(4):
            offs[q + 1] = offs[q] + counts[q]
        fill = offs[:4].copy()
        for t in range(start, start + count):
            p = perm[t]
            q = (1 if pos[p, 0] > cx else 0) + (2 if pos[p, 1] > cy else 0)
            scratch[start + fill[q]] = p
            fill[q] += 1
        for t in range(start, start + count):
            perm[t] = scratch[t]

        child0 = n_nodes
        node_child0[nid] = child0
        hh = 0.5 * node_half[nid]
        for q in range(4):
            cid = child0 + q
            node_cx[cid] = cx + (hh if (q & 1) else -hh)
            node_cy[cid] = cy + (hh if (q & 2) else -hh)
            node_half[cid] = hh
            node_start[cid] = start + offs[q]
            node_count[cid] = counts[q]
            if counts[q] > 0:
                stack_node[top] = cid
                stack_depth[top] = depth + 1
                top += 1
            else:
                node_comx[cid] = node_cx[cid]
                node_comy[cid] = node_cy[cid]
                node_sxx[cid] = 0.0
                node_sxy[cid] = 0.0
                node_syy[cid] = 0.0
        n_nodes += 4

    return (
        perm,
        node_half[:n_nodes],
        node_start[:n_nodes],
        node_count[:n_nodes],
        node_child0[:n_nodes],
        node_comx[:n_nodes],
        node_comy[:n_nodes],
        node_sxx[:n_nodes],
        node_sxy[:n_nodes],
        node_syy[:n_nodes],
    )


@numba.njit(cache=True, nogil=True, parallel=True)
def _traverse(
    pos,
    theta2,
    eps2,
    perm,
    node_half,
    node_start,
    node_count,
    node_child0,
    node_comx,
    node_comy,
    node_sxx,
    node_sxy,
    node_syy,
    out,
):
    n = pos.shape[0]
    inv_two_pi_n = 1.0 / (_TWO_PI * n)
    coll2 = COLLISION_RADIUS * COLLISION_RADIUS
    for i in numba.prange(n):
        xi = pos[i, 0]
        yi = pos[i, 1]
        bx = 0.0
        by = 0.0
        stack = np.empty(4 * _MAX_DEPTH + 8, np.int64)
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            nid = stack[top]
            count = node_count[nid]
            if count == 0:
                continue
            dx = xi - node_comx[nid]
            dy = yi - node_comy[nid]
            d2 = dx * dx + dy * dy
            size = 2.0 * node_half[nid]
            child0 = node_child0[nid]
            if child0 >= 0 and size * size >= theta2 * d2:
                stack[top] = child0
                stack[top + 1] = child0 + 1
                stack[top + 2] = child0 + 2
                stack[top + 3] = child0 + 3
                top += 4
            elif child0 < 0 and not (size * size < theta2 * d2):
                start = node_start[nid]
                for t in range(start, start + count):
                    j = perm[t]
                    if j == i:
                        continue
                    px = xi - pos[j, 0]
                    py = yi - pos[j, 1]
                    r2 = px * px + py * py
                    if r2 < coll2:
                        continue
                    s = inv_two_pi_n / (r2 + eps2)
                    bx -= py * s
                    by += px * s
            else:
                # Far cell: monopole plus quadrupole about the circulation
                # center (the dipole term is zero by construction).
                g = 1.0 / (d2 + eps2)
                cnt = float(count)
                bx -= dy * g * cnt * inv_two_pi_n
                by += dx * g * cnt * inv_two_pi_n
                sxx = node_sxx[nid]
                sxy = node_sxy[nid]
                syy = node_syy[nid]
                g2 = g * g
                quad = sxx * dx * dx + 2.0 * sxy * dx * dy + syy * dy * dy
                common = -2.0 * (sxx + syy) * g2 + 8.0 * quad * g2 * g
                wx = -4.0 * (sxx * dx + sxy * dy) * g2 + dx * common
                wy = -4.0 * (sxy * dx + syy * dy) * g2 + dy * common
                bx += 0.5 * inv_two_pi_n * (-wy)
                by += 0.5 * inv_two_pi_n * wx
        out[i, 0] = bx
        out[i, 1] = by


def tree_drift(pos: np.ndarray, theta: float, eps2: float) -> np.ndarray:
    """Evaluate the drift sum for all particles via the quadtree."""
    tree = _build(pos)
    out = np.empty_like(pos)
    _traverse(pos, theta * theta, eps2, *tree, out)
    return out
