"""Dinic max-flow on real capacities, returning the source side of a minimum cut."""

from __future__ import annotations

from collections import deque


class FlowNetwork:
    def __init__(self, n: int):
        self.n = n
        self.adj: list[list[int]] = [[] for _ in range(n)]
        self.to: list[int] = []
        self.cap: list[float] = []

    def add_edge(self, u: int, v: int, c: float) -> None:
        if c <= 0.0:
            return
        self.adj[u].append(len(self.to))
        self.to.append(v)
        self.cap.append(float(c))
        self.adj[v].append(len(self.to))
        self.to.append(u)
        self.cap.append(0.0)

    def _levels(self, s, t, eps):
        level = [-1] * self.n
        level[s] = 0
        q = deque([s])
        to, cap, adj = self.to, self.cap, self.adj
        while q:
            u = q.popleft()
            for e in adj[u]:
                v = to[e]
                if level[v] < 0 and cap[e] > eps:
                    level[v] = level[u] + 1
                    q.append(v)
        return level if level[t] >= 0 else None

    def max_flow(self, s: int, t: int, eps: float = 1e-12) -> float:
        to, cap, adj = self.to, self.cap, self.adj
        total = 0.0
        while True:
            level = self._levels(s, t, eps)
            if level is None:
                return total
            ptr = [0] * self.n
            while True:
                # iterative DFS along the level graph
                path: list[int] = []
                u = s
                while u != t:
                    edges = adj[u]
                    advanced = False
                    while ptr[u] < len(edges):
                        e = edges[ptr[u]]
                        v = to[e]
                        if cap[e] > eps and level[v] == level[u] + 1:
                            path.append(e)
                            u = v
                            advanced = True
                            break
                        ptr[u] += 1
                    if not advanced:
                        if u == s:
                            break
                        level[u] = -1
                        e = path.pop()
                        u = to[e ^ 1]
                        ptr[u] += 1
                if u != t:
                    break
                f = min(cap[e] for e in path)
                for e in path:
                    cap[e] -= f
                    cap[e ^ 1] += f
                total += f

    def source_side(self, s: int, eps: float = 1e-12) -> list[bool]:
        """Nodes reachable from ``s`` in the residual network (call after max_flow)."""
        seen = [False] * self.n
        seen[s] = True
        q = deque([s])
        while q:
            u = q.popleft()
            for e in self.adj[u]:
                v = self.to[e]
                if not seen[v] and self.cap[e] > eps:
                    seen[v] = True
                    q.append(v)
        return seen
