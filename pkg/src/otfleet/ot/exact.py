"""Exact solver for the uniform-marginal transportation problem.

The problem is scaled to an integer-supply bipartite min-cost flow: each
of the ``l_e`` expert nodes supplies ``l_b`` units and each of the ``l_b``
rollout nodes demands ``l_e`` units (total flow ``l_e * l_b``), so the
returned mass is ``flow / (l_e * l_b)`` and the marginal constraints hold
exactly. Arc costs are kept as ``fractions.Fraction`` values (floats are
dyadic rationals, so the conversion is lossless) and the successive
shortest path algorithm runs entirely in exact arithmetic; the solution
is therefore optimal for the given float costs, with no scaling
resolution to tune.

Intended as a reference/oracle path: dimensions are capped (64x64 by
default) and speed is secondary to exactness.
"""

from __future__ import annotations

import heapq
from fractions import Fraction

import numpy as np

from otfleet.errors import SizeError
from otfleet.ot.cost import CostMatrix
from otfleet.ot.plan import TransportPlan

DEFAULT_SIZE_CAP = 64


def solve_exact(cost: CostMatrix, size_cap: int = DEFAULT_SIZE_CAP) -> TransportPlan:
    """Globally optimal transport plan for ``cost`` under uniform marginals."""
    l_e, l_b = cost.values.shape
    if l_e > size_cap or l_b > size_cap:
        raise SizeError(
            f"exact solver capped at {size_cap}x{size_cap}, got {l_e}x{l_b}"
        )

    c = [[Fraction(cost.values[i, j]) for j in range(l_b)] for i in range(l_e)]
    flow = np.zeros((l_e, l_b), dtype=np.int64)
    supply = [l_b] * l_e  # scaled row marginal: (1/l_e) * l_e * l_b
    demand = [l_e] * l_b  # scaled column marginal: (1/l_b) * l_e * l_b
    pot_row = [Fraction(0)] * l_e
    pot_col = [Fraction(0)] * l_b

    remaining = l_e * l_b
    while remaining > 0:
        # multi-source Dijkstra over the residual graph; nodes are
        # rows [0, l_e) and columns [l_e, l_e + l_b)
        n_nodes = l_e + l_b
        dist: list[Fraction | None] = [None] * n_nodes
        parent = [-1] * n_nodes
        done = [False] * n_nodes
        heap: list[tuple[Fraction, int]] = []
        for i in range(l_e):
            if supply[i] > 0:
                dist[i] = Fraction(0)
                heapq.heappush(heap, (Fraction(0), i))

        while heap:
            d, node = heapq.heappop(heap)
            if done[node]:
                continue
            done[node] = True
            if node < l_e:
                i = node
                base = d + pot_row[i]
                for j in range(l_b):
                    nd = base + c[i][j] - pot_col[j]
                    col = l_e + j
                    if dist[col] is None or nd < dist[col]:
                        dist[col] = nd
                        parent[col] = i
                        heapq.heappush(heap, (nd, col))
            else:
                j = node - l_e
                base = d + pot_col[j]
                for i in range(l_e):
                    if flow[i, j] > 0:
                        nd = base - c[i][j] - pot_row[i]
                        if dist[i] is None or nd < dist[i]:
                            dist[i] = nd
                            parent[i] = node
                            heapq.heappush(heap, (nd, i))

        # cheapest reachable column with unmet demand
        best_j = -1
        best_d: Fraction | None = None
        for j in range(l_b):
            if demand[j] > 0 and dist[l_e + j] is not None:
                if best_d is None or dist[l_e + j] < best_d:
                    best_d = dist[l_e + j]
                    best_j = j
        assert best_j >= 0, "transportation problem is always feasible"

        # walk back to find the bottleneck, then augment
        path: list[tuple[int, int, bool]] = []  # (row, col, forward)
        node = l_e + best_j
        while True:
            prev = parent[node]
            if node >= l_e:
                path.append((prev, node - l_e, True))
                node = prev
            else:
                path.append((node, prev - l_e, False))
                node = prev
            if node < l_e and parent[node] == -1:
                break
        origin = node
        bottleneck = min(supply[origin], demand[best_j])
        for i, j, forward in path:
            if not forward:
                bottleneck = min(bottleneck, int(flow[i, j]))
        for i, j, forward in path:
            flow[i, j] += bottleneck if forward else -bottleneck
        supply[origin] -= bottleneck
        demand[best_j] -= bottleneck
        remaining -= bottleneck

        for i in range(l_e):
            if dist[i] is not None:
                pot_row[i] += dist[i]
        for j in range(l_b):
            if dist[l_e + j] is not None:
                pot_col[j] += dist[l_e + j]

    mass = flow.astype(np.float64) / float(l_e * l_b)
    return TransportPlan.from_mass(cost, mass)
