"""Naive per-definition reference implementations.

Plain Python over nested lists; deliberately share nothing with the package
code they check.
"""

from __future__ import annotations

import itertools
from collections import deque

N4 = ((1, 0), (-1, 0), (0, 1), (0, -1))
N8 = N4 + ((1, 1), (1, -1), (-1, 1), (-1, -1))


def binarize(values: list[list[int]], fraction: float) -> list[list[bool]]:
    h, w = len(values), len(values[0])
    n = h * w
    k = int(fraction * n + 0.5)
    cells = sorted(((values[y][x], y * w + x) for y in range(h) for x in range(w)))
    chosen = {idx for _, idx in cells[:k]}
    return [[(y * w + x) in chosen for x in range(w)] for y in range(h)]


def fill_holes(bits: list[list[bool]], bg_nbrs=N4) -> list[list[bool]]:
    h, w = len(bits), len(bits[0])
    reach = [[False] * w for _ in range(h)]
    q = deque()
    for y in range(h):
        for x in range(w):
            if (y in (0, h - 1) or x in (0, w - 1)) and not bits[y][x]:
                reach[y][x] = True
                q.append((y, x))
    while q:
        y, x = q.popleft()
        for dx, dy in bg_nbrs:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and not bits[ny][nx] and not reach[ny][nx]:
                reach[ny][nx] = True
                q.append((ny, nx))
    return [[not reach[y][x] for x in range(w)] for y in range(h)]


def _get(bits, y, x):
    return 0 <= y < len(bits) and 0 <= x < len(bits[0]) and bits[y][x]


def erode(bits, offsets):
    h, w = len(bits), len(bits[0])
    return [[all(_get(bits, y + dy, x + dx) for dx, dy in offsets) for x in range(w)] for y in range(h)]


def dilate(bits, offsets):
    h, w = len(bits), len(bits[0])
    out = [[False] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            if bits[y][x]:
                for dx, dy in offsets:
                    if 0 <= y + dy < h and 0 <= x + dx < w:
                        out[y + dy][x + dx] = True
    return out


def opening(bits, offsets):
    return dilate(erode(bits, offsets), offsets)


def square_offsets(r=1):
    return [(dx, dy) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]


def disk_offsets(r):
    return [(dx, dy) for dx, dy in square_offsets(r) if dx * dx + dy * dy <= r * r]


def components(bits, nbrs=N8) -> list[list[int]]:
    """Breadth-first flood fill in scan order."""
    h, w = len(bits), len(bits[0])
    lab = [[0] * w for _ in range(h)]
    nxt = 0
    for y in range(h):
        for x in range(w):
            if bits[y][x] and not lab[y][x]:
                nxt += 1
                lab[y][x] = nxt
                q = deque([(y, x)])
                while q:
                    cy, cx = q.popleft()
                    for dx, dy in nbrs:
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and bits[ny][nx] and not lab[ny][nx]:
                            lab[ny][nx] = nxt
                            q.append((ny, nx))
    return lab


def largest(bits, nbrs=N8):
    lab = components(bits, nbrs)
    sizes = {}
    for row in lab:
        for v in row:
            if v:
                sizes[v] = sizes.get(v, 0) + 1
    if not sizes:
        return [row[:] for row in bits]
    best = min(sizes, key=lambda k: (-sizes[k], k))
    return [[v == best for v in row] for row in lab]


def pr_envelope_ap(flags_in_rank_order: list[bool], n_gt: int) -> float:
    """Brute force: precision at every cut-off, interpolated at each recall level j/n_gt."""
    points = []
    tp = 0
    for i, f in enumerate(flags_in_rank_order, start=1):
        tp += f
        points.append((tp / n_gt, tp / i))
    total = 0.0
    for j in range(1, n_gt + 1):
        level = j / n_gt
        ok = [p for r, p in points if r >= level - 1e-12]
        total += (max(ok) if ok else 0.0) / n_gt
    return total


def greedy_match_by_enumeration(iou: list[list[float]], conf: list[float], thresh: float):
    """Exhaustively enumerate partial matchings and pick the greedy-equivalent one.

    Predictions ranked by (-conf, index). The chosen matching maximizes,
    lexicographically over that ranking, each prediction's (matched?, iou,
    -gt index), which is exactly what a greedy pass produces.
    """
    n_p, n_g = len(conf), len(iou[0]) if iou else 0
    order = sorted(range(n_p), key=lambda i: (-conf[i], i))
    best_key, best = None, None
    options = [None] + list(range(n_g))
    for assign in itertools.product(options, repeat=n_p):
        used = [g for g in assign if g is not None]
        if len(used) != len(set(used)):
            continue
        if any(g is not None and iou[p][g] < thresh for p, g in enumerate(assign)):
            continue
        key = tuple((0, 0.0, 0) if assign[p] is None else (1, iou[p][assign[p]], -assign[p]) for p in order)
        if best_key is None or key > best_key:
            best_key, best = key, assign
    return {p: g for p, g in enumerate(best) if g is not None}
