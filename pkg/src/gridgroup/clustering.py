"""Partition contingencies into k groups from a distance matrix.

All three algorithms pick group representatives among the points
themselves, so only pairwise distances are needed. Ties are broken toward
the lowest contingency index unless a seed asks otherwise, and groups are
numbered by ascending center index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = ['Grouping', 'k_centers', 'k_medoids', 'divisive', 'cluster',
           'max_radius', 'total_distance', 'ALGORITHMS']

K_CENTERS = 'k_centers'
K_MEDOIDS = 'k_medoids'
DIVISIVE_K_CENTERS = 'divisive_k_centers'
DIVISIVE_K_MEDOIDS = 'divisive_k_medoids'
ALGORITHMS = (K_CENTERS, K_MEDOIDS, DIVISIVE_K_CENTERS, DIVISIVE_K_MEDOIDS)


@dataclass(frozen=True)
class Grouping:
    """A partition of contingency positions ``0..M-1`` into ``k`` groups.

    ``assignment[i]`` is the group of contingency ``i`` and ``centers[g]``
    the position of the representative of group ``g``.
    """
    assignment: tuple
    centers: tuple
    metric: str = ''
    algorithm: str = ''
    seed: int | None = None

    def __post_init__(self):
        a = tuple(int(x) for x in self.assignment)
        c = tuple(int(x) for x in self.centers)
        object.__setattr__(self, 'assignment', a)
        object.__setattr__(self, 'centers', c)
        k, M = len(c), len(a)
        if not 1 <= k <= M:
            raise ValidationError(f"need 1 <= k <= M, got k={k}, M={M}")
        if set(a) != set(range(k)):
            raise ValidationError("every group must be nonempty")
        for g, ctr in enumerate(c):
            if not 0 <= ctr < M or a[ctr] != g:
                raise ValidationError(f"center of group {g} is not a member")

    @property
    def k(self):
        return len(self.centers)

    @property
    def M(self):
        return len(self.assignment)

    def members(self, g):
        return [i for i, x in enumerate(self.assignment) if x == g]

    def groups(self):
        return [self.members(g) for g in range(self.k)]

    def to_dict(self, ids):
        return {"metric": self.metric, "algorithm": self.algorithm,
                "k": self.k, "seed": self.seed,
                "groups": [{"center": ids[self.centers[g]],
                            "members": [ids[i] for i in self.members(g)]}
                           for g in range(self.k)]}

    @classmethod
    def from_dict(cls, d, ids):
        pos = {x: i for i, x in enumerate(ids)}
        assignment = [None] * len(ids)
        centers = []
        try:
            for g, grp in enumerate(d["groups"]):
                centers.append(pos[grp["center"]])
                for m in grp["members"]:
                    assignment[pos[m]] = g
        except KeyError as exc:
            raise ValidationError(f"grouping references unknown id {exc}") from exc
        if any(x is None for x in assignment):
            raise ValidationError("grouping does not cover every contingency")
        return cls(assignment, centers, d.get("metric", ''),
                   d.get("algorithm", ''), d.get("seed"))


def max_radius(D, grouping):
    D = np.asarray(D)
    return float(max(D[i, grouping.centers[g]]
                     for i, g in enumerate(grouping.assignment)))


def total_distance(D, grouping):
    D = np.asarray(D)
    return float(sum(D[i, grouping.centers[g]]
                     for i, g in enumerate(grouping.assignment)))


def _values(D):
    D = np.asarray(getattr(D, 'values', D), dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValidationError("distance matrix must be square")
    return D


def _check_k(k, M):
    if not 1 <= k <= M:
        raise ValidationError(f"k={k} out of range 1..{M}")


def _assign(D, centers):
    """Nearest-center assignment, canonical group order, centers self-assigned."""
    centers = sorted(centers)
    assignment = np.argmin(D[:, centers], axis=1)
    for g, c in enumerate(centers):
        assignment[c] = g
    return assignment.tolist(), centers


def _meta(D, kw):
    return dict(metric=getattr(D, 'metric_kind', ''), **kw)


def k_centers(D, k, first=0) -> Grouping:
    """Gonzalez farthest-first traversal starting from index ``first``.

    The largest point-to-center distance is at most twice the optimum.
    """
    V = _values(D)
    M = len(V)
    _check_k(k, M)
    centers = [int(first)]
    near = V[first].copy()
    for _ in range(1, k):
        cand = near.copy()
        cand[centers] = -1.0
        nxt = int(np.argmax(cand))
        centers.append(nxt)
        near = np.minimum(near, V[nxt])
    a, c = _assign(V, centers)
    return Grouping(a, c, **_meta(D, dict(algorithm=K_CENTERS, seed=None)))


def _order(M, seed):
    if seed is None:
        return np.arange(M)
    return np.random.default_rng(seed).permutation(M)


def _pam(V, k, order):
    M = len(V)
    first = min(order, key=lambda i: (V[i].sum(), np.flatnonzero(order == i)[0]))
    medoids = [int(first)]
    near = V[first].copy()
    while len(medoids) < k:
        best, best_gain = None, -np.inf
        for o in order:
            if o in medoids:
                continue
            gain = np.sum(np.maximum(near - V[o], 0.0))
            if gain > best_gain:
                best, best_gain = int(o), gain
        medoids.append(best)
        near = np.minimum(near, V[best])

    scale = max(float(V.max()), 1.0)
    while True:
        cost = np.min(V[:, medoids], axis=1).sum()
        best_delta, best_swap = -1e-12 * scale * M, None
        for mi in range(k):
            others = medoids[:mi] + medoids[mi + 1:]
            base = np.min(V[:, others], axis=1) if others else np.full(M, np.inf)
            # cost of replacing medoids[mi] by each candidate column at once
            new_cost = np.minimum(base[:, None], V).sum(axis=0)
            for o in order:
                if o in medoids:
                    continue
                delta = new_cost[o] - cost
                if delta < best_delta:
                    best_delta, best_swap = delta, (mi, int(o))
        if best_swap is None:
            return medoids
        medoids[best_swap[0]] = best_swap[1]


def _park_jun(V, k, order, max_rounds=100):
    M = len(V)
    denom = V.sum(axis=1)
    denom[denom == 0] = 1.0
    v = (V / denom[:, None]).sum(axis=0)
    rank = np.empty(M, dtype=int)
    rank[order] = np.arange(M)
    medoids = sorted(range(M), key=lambda j: (v[j], rank[j]))[:k]
    for _ in range(max_rounds):
        a, c = _assign(V, medoids)
        a = np.asarray(a)
        new = []
        for g in range(k):
            mem = np.flatnonzero(a == g)
            within = V[np.ix_(mem, mem)].sum(axis=1)
            new.append(int(mem[np.argmin(within)]))
        if sorted(new) == sorted(medoids):
            break
        medoids = new
    return medoids


def k_medoids(D, k, seed=None, method='pam', squared=False) -> Grouping:
    """k-medoids clustering minimizing the sum of distances to the medoids.

    Parameters
    ----------
    D : DistanceMatrix or array_like
    k : int
    seed : int, optional
        Permutes the order in which equal-cost candidates are considered.
        ``None`` breaks ties by lowest index.
    method : {'pam', 'park_jun'}
        PAM (BUILD then best-improvement SWAP) or the faster Park-Jun
        alternation.
    squared : bool
        Cluster on squared distances.
    """
    V = _values(D)
    if squared:
        V = V ** 2
    M = len(V)
    _check_k(k, M)
    order = _order(M, seed)
    if method == 'pam':
        medoids = _pam(V, k, order)
    elif method == 'park_jun':
        medoids = _park_jun(V, k, order)
    else:
        raise ValidationError(f"unknown k-medoids method {method!r}")
    a, c = _assign(V, medoids)
    return Grouping(a, c, **_meta(D, dict(algorithm=K_MEDOIDS, seed=seed)))


def divisive(D, k, base=K_MEDOIDS, seed=None) -> Grouping:
    """Top-down clustering: split the worst cluster until there are k.

    A cluster's score is the mean distance of its members to its center;
    the highest-scoring cluster with more than one member is split in two
    by ``base``. A k-centers split starts its traversal from the current
    center, so the largest radius never grows.
    """
    V = _values(D)
    M = len(V)
    _check_k(k, M)
    if base not in (K_CENTERS, K_MEDOIDS):
        raise ValidationError(f"unknown base algorithm {base!r}")

    def split(members, center):
        sub = V[np.ix_(members, members)]
        if base == K_CENTERS:
            g = k_centers(sub, 2, first=members.index(center))
        else:
            g = k_medoids(sub, 2, seed)
        return [([members[i] for i in g.members(j)], members[g.centers[j]])
                for j in range(2)]

    clusters = [(list(range(M)), k_medoids(V, 1, seed).centers[0])]
    while len(clusters) < k:
        clusters.sort(key=lambda mc: mc[1])
        scores = [np.mean(V[mem, ctr]) if len(mem) > 1 else -np.inf
                  for mem, ctr in clusters]
        worst = int(np.argmax(scores))
        clusters[worst:worst + 1] = split(*clusters[worst])
    a, c = _assign_from(clusters, M)
    algo = DIVISIVE_K_CENTERS if base == K_CENTERS else DIVISIVE_K_MEDOIDS
    return Grouping(a, c, **_meta(D, dict(algorithm=algo, seed=seed)))


def _assign_from(clusters, M):
    clusters = sorted(clusters, key=lambda mc: mc[1])
    assignment = [0] * M
    for g, (mem, _) in enumerate(clusters):
        for i in mem:
            assignment[i] = g
    return assignment, [ctr for _, ctr in clusters]


def cluster(D, k, algorithm, seed=None) -> Grouping:
    if algorithm == K_CENTERS:
        return k_centers(D, k)
    if algorithm == K_MEDOIDS:
        return k_medoids(D, k, seed)
    if algorithm == DIVISIVE_K_CENTERS:
        return divisive(D, k, K_CENTERS, seed)
    if algorithm == DIVISIVE_K_MEDOIDS:
        return divisive(D, k, K_MEDOIDS, seed)
    raise ValidationError(f"unknown clustering algorithm {algorithm!r}; "
                          f"expected one of {ALGORITHMS}")
