"""Independent oracles used by unit and acceptance tests.

These deliberately re-implement transitions and enumeration from scratch so
they share no code path with the library functions they check.
"""

import itertools

import numpy as np

_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))  # up, down, left, right, stay


def oracle_step(cell, action, rows, cols):
    dr, dc = _DELTAS[action]
    r, c = cell[0] + dr, cell[1] + dc
    if 0 <= r < rows and 0 <= c < cols:
        return (r, c)
    return cell


def brute_force_visitations(reward, start, horizon):
    """Exact MaxEnt state occupancy by enumerating all 5^H action sequences.

    Each sequence tau is weighted exp(sum of rewards of the arrived-at
    states) / Z; occupancy counts the states at t = 0..H-1.
    """
    reward = np.asarray(reward, dtype=float)
    rows, cols = reward.shape
    counts = np.zeros((rows, cols))
    z = 0.0
    for seq in itertools.product(range(5), repeat=horizon):
        cell = start
        logw = 0.0
        visited = [cell]
        for a in seq:
            cell = oracle_step(cell, a, rows, cols)
            logw += reward[cell]
            visited.append(cell)
        w = float(np.exp(logw))
        z += w
        for c in visited[:horizon]:
            counts[c] += w
    return counts / z


def bfs_path_length(blocked, start, goal):
    """Unweighted 4-connected shortest path length in cells, or None."""
    rows, cols = blocked.shape
    if blocked[start] or blocked[goal]:
        return None
    from collections import deque

    dist = {start: 0}
    q = deque([start])
    while q:
        cur = q.popleft()
        if cur == goal:
            return dist[cur]
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nxt = (cur[0] + dr, cur[1] + dc)
            if 0 <= nxt[0] < rows and 0 <= nxt[1] < cols \
                    and not blocked[nxt] and nxt not in dist:
                dist[nxt] = dist[cur] + 1
                q.append(nxt)
    return None
