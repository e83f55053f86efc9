"""Composite clustering objective and its monotone coordinate-descent solver.

The objective is ``L_c + lambda * L_b + gamma * L_s`` where

* ``L_c`` is the K-Means inertia,
* ``L_b`` sums the within-cluster accuracy gap between groups A and B,
* ``L_s`` sums, over clusters, the squared difference of the group severity totals.

``lambda <= 0`` rewards clusters with large accuracy gaps, ``gamma >= 0``
penalises clusters whose groups carry different total severity.  With
``lambda = gamma = 0`` the solver is plain Lloyd iteration; with ``gamma = 0``
it is the bias-seeking variant without a severity constraint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .cohort import Cohort

TOL = 1e-9
_U64 = 2**64


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    k: int = 5
    lam: float = 0.0
    gamma: float = 0.0
    max_iter: int = 300
    seed: int = 0
    restarts: int = 10

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if not (math.isfinite(self.lam) and self.lam <= 0):
            raise ValueError(f"lambda must be <= 0, got {self.lam}")
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be positive")
        if not 0 <= self.seed < _U64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "lambda": self.lam,
            "gamma": self.gamma,
            "max_iter": self.max_iter,
            "seed": self.seed,
            "restarts": self.restarts,
        }


@dataclass
class ClusteringResult:
    assignment: np.ndarray
    centroids: np.ndarray
    objective: float
    l_c: float
    l_b: float
    l_s: float
    iterations: int
    converged: bool
    hyperparams: Hyperparams
    restart: int = 0
    # objective after the seeding step, then after every assignment pass and centroid update
    trace: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


# ---------------------------------------------------------------------------
# objective terms


def _check_assignment(n: int, assignment, k: int | None = None) -> np.ndarray:
    a = np.asarray(assignment)
    if a.shape != (n,):
        raise ValueError(f"assignment must have length {n}, got shape {a.shape}")
    if n and (a.min() < 0 or (k is not None and a.max() >= k)):
        raise ValueError("assignment has out-of-range cluster indices")
    return a.astype(np.int64, copy=False)


def clustering_cost(cohort: Cohort, assignment, centroids) -> float:
    """Sum of squared Euclidean distances from each instance to its assigned centroid."""
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.ndim != 2 or centroids.shape[1] != cohort.dim:
        raise ValueError(f"centroids must be k x {cohort.dim}, got shape {centroids.shape}")
    a = _check_assignment(cohort.n, assignment, centroids.shape[0])
    diff = cohort.X - centroids[a]
    return float(np.einsum("ij,ij->", diff, diff))


def _group_stats(cohort: Cohort, a: np.ndarray, k: int):
    is_a = cohort.is_a
    corr = cohort.correct.astype(np.float64)
    sev = cohort.severity
    n_a = np.bincount(a[is_a], minlength=k).astype(np.float64)
    n_b = np.bincount(a[~is_a], minlength=k).astype(np.float64)
    c_a = np.bincount(a[is_a], weights=corr[is_a], minlength=k)
    c_b = np.bincount(a[~is_a], weights=corr[~is_a], minlength=k)
    s_a = np.bincount(a[is_a], weights=sev[is_a], minlength=k)
    s_b = np.bincount(a[~is_a], weights=sev[~is_a], minlength=k)
    return n_a, n_b, c_a, c_b, s_a, s_b


def cluster_bias(n_a, n_b, c_a, c_b) -> np.ndarray:
    """Per-cluster |acc_A - acc_B|; 0 where a cluster lacks either group."""
    both = (n_a > 0) & (n_b > 0)
    out = np.zeros(np.shape(n_a))
    out[both] = np.abs(c_a[both] / n_a[both] - c_b[both] / n_b[both])
    return out


def bias_term(cohort: Cohort, assignment, k: int | None = None) -> float:
    a = _check_assignment(cohort.n, assignment, k)
    k = k or int(a.max()) + 1
    n_a, n_b, c_a, c_b, _, _ = _group_stats(cohort, a, k)
    return float(cluster_bias(n_a, n_b, c_a, c_b).sum())


def severity_term(cohort: Cohort, assignment, k: int | None = None) -> float:
    """Sum over clusters of (total severity in A - total severity in B) squared."""
    a = _check_assignment(cohort.n, assignment, k)
    k = k or int(a.max()) + 1
    _, _, _, _, s_a, s_b = _group_stats(cohort, a, k)
    return float(((s_a - s_b) ** 2).sum())


def total_objective(cohort: Cohort, assignment, centroids, h: Hyperparams) -> float:
    k = np.shape(centroids)[0]
    value = clustering_cost(cohort, assignment, centroids)
    if h.lam != 0.0:
        value += h.lam * bias_term(cohort, assignment, k)
    if h.gamma != 0.0:
        value += h.gamma * severity_term(cohort, assignment, k)
    return value


def cluster_means(X: np.ndarray, assignment: np.ndarray, k: int) -> np.ndarray:
    counts = np.bincount(assignment, minlength=k).astype(np.float64)
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, assignment, X)
    return sums / counts[:, None]


# ---------------------------------------------------------------------------
# seeding


def init_centroids(cohort: Cohort, h: Hyperparams) -> np.ndarray:
    """Distance-weighted farthest-point seeding (k-means++ style), seeded by ``h.seed``.

    Each new centroid is drawn with probability proportional to its squared
    distance from the nearest chosen centroid, so duplicates of chosen points
    are never picked while any other point remains.  Centroids are always
    distinct instances; only when every remaining instance coincides with a
    chosen centroid does the draw fall back to uniform.
    """
    n, k = cohort.n, h.k
    if k > n:
        raise ValueError(f"k={k} exceeds the number of instances ({n})")
    X = cohort.X
    rng = np.random.default_rng(h.seed)
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    available = np.ones(n, dtype=bool)
    available[chosen[0]] = False
    for _ in range(1, k):
        w = np.where(available, d2, 0.0)
        total = w.sum()
        if total > 0:
            idx = int(rng.choice(n, p=w / total))
        else:
            idx = int(rng.choice(np.flatnonzero(available)))
        chosen.append(idx)
        available[idx] = False
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return X[chosen].copy()


# ---------------------------------------------------------------------------
# solver state


def sq_distances(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass
class _State:
    assignment: np.ndarray
    n_a: np.ndarray
    n_b: np.ndarray
    c_a: np.ndarray
    c_b: np.ndarray
    s_a: np.ndarray
    s_b: np.ndarray

    @classmethod
    def build(cls, cohort: Cohort, assignment: np.ndarray, k: int) -> "_State":
        return cls(assignment.astype(np.int64), *_group_stats(cohort, assignment, k))

    def sizes(self) -> np.ndarray:
        return self.n_a + self.n_b

    def l_b(self) -> float:
        return float(cluster_bias(self.n_a, self.n_b, self.c_a, self.c_b).sum())

    def l_s(self) -> float:
        return float(((self.s_a - self.s_b) ** 2).sum())

    def move(self, i: int, to: int, is_a: bool, correct: float, severity: float):
        frm = self.assignment[i]
        if is_a:
            self.n_a[frm] -= 1
            self.n_a[to] += 1
            self.c_a[frm] -= correct
            self.c_a[to] += correct
            self.s_a[frm] -= severity
            self.s_a[to] += severity
        else:
            self.n_b[frm] -= 1
            self.n_b[to] += 1
            self.c_b[frm] -= correct
            self.c_b[to] += correct
            self.s_b[frm] -= severity
            self.s_b[to] += severity
        self.assignment[i] = to


def empty_cluster_repair(state: _State, dist: np.ndarray, cohort: Cohort) -> _State:
    """Fill each empty cluster with the instance farthest from its current centroid.

    Donors come only from clusters with at least two members, so a repair never
    opens a new hole.  Ties go to the lowest instance index.
    """
    k = dist.shape[1]
    for e in range(k):
        if state.sizes()[e] > 0:
            continue
        own = dist[np.arange(cohort.n), state.assignment]
        donors = state.sizes()[state.assignment] >= 2
        if not donors.any():
            raise SolverError("cannot repair empty cluster: k exceeds the number of instances")
        i = int(np.argmax(np.where(donors, own, -np.inf)))
        state.move(i, e, bool(cohort.is_a[i]), float(cohort.correct[i]), float(cohort.severity[i]))
    return state


@njit(cache=True)
def _pair_term(n_a, n_b, c_a, c_b, s_a, s_b, lam, gam):
    bias = 0.0
    if n_a > 0 and n_b > 0:
        bias = abs(c_a / n_a - c_b / n_b)
    gap = s_a - s_b
    return lam * bias + gam * gap * gap


@njit(cache=True)
def _assignment_pass(dist, assign, is_a, correct, sev, n_a, n_b, c_a, c_b, s_a, s_b, lam, gam, tol):
    """One sequential sweep; returns the number of accepted moves.

    Centroids stay fixed (``dist`` is precomputed); group counts, correct counts
    and severity totals are updated in place after each move.  Moves that would
    empty their source cluster are not candidates.
    """
    n, k = dist.shape
    moves = 0
    for i in range(n):
        a = assign[i]
        if n_a[a] + n_b[a] <= 1:
            continue
        x_a = is_a[i]
        w = correct[i]
        s = sev[i]
        before_src = _pair_term(n_a[a], n_b[a], c_a[a], c_b[a], s_a[a], s_b[a], lam, gam)
        if x_a:
            after_src = _pair_term(n_a[a] - 1, n_b[a], c_a[a] - w, c_b[a], s_a[a] - s, s_b[a], lam, gam)
        else:
            after_src = _pair_term(n_a[a], n_b[a] - 1, c_a[a], c_b[a] - w, s_a[a], s_b[a] - s, lam, gam)
        leave = after_src - before_src - dist[i, a]
        best = -1
        best_delta = np.inf
        for j in range(k):
            if j == a:
                continue
            before_dst = _pair_term(n_a[j], n_b[j], c_a[j], c_b[j], s_a[j], s_b[j], lam, gam)
            if x_a:
                after_dst = _pair_term(n_a[j] + 1, n_b[j], c_a[j] + w, c_b[j], s_a[j] + s, s_b[j], lam, gam)
            else:
                after_dst = _pair_term(n_a[j], n_b[j] + 1, c_a[j], c_b[j] + w, s_a[j], s_b[j] + s, lam, gam)
            delta = leave + dist[i, j] + after_dst - before_dst
            if delta < best_delta:
                best_delta = delta
                best = j
        if best >= 0 and best_delta < -tol:
            j = best
            if x_a:
                n_a[a] -= 1
                n_a[j] += 1
                c_a[a] -= w
                c_a[j] += w
                s_a[a] -= s
                s_a[j] += s
            else:
                n_b[a] -= 1
                n_b[j] += 1
                c_b[a] -= w
                c_b[j] += w
                s_b[a] -= s
                s_b[j] += s
            assign[i] = j
            moves += 1
    return moves


def _objective(X, state: _State, centroids, h: Hyperparams) -> tuple[float, float, float, float]:
    diff = X - centroids[state.assignment]
    l_c = float(np.einsum("ij,ij->", diff, diff))
    l_b = state.l_b()
    l_s = state.l_s()
    return l_c + h.lam * l_b + h.gamma * l_s, l_c, l_b, l_s


def fit_from(cohort: Cohort, h: Hyperparams, centroids, restart: int = 0) -> ClusteringResult:
    """Run the solver from explicit initial centroids (no restarts)."""
    X = cohort.X
    k = h.k
    centroids = np.array(centroids, dtype=np.float64)
    if centroids.shape != (k, cohort.dim):
        raise ValueError(f"initial centroids must be {k} x {cohort.dim}")
    if k > cohort.n:
        raise ValueError(f"k={k} exceeds the number of instances ({cohort.n})")

    dist = sq_distances(X, centroids)
    state = _State.build(cohort, np.argmin(dist, axis=1), k)
    empty_cluster_repair(state, dist, cohort)
    centroids = cluster_means(X, state.assignment, k)
    trace = [_objective(X, state, centroids, h)[0]]

    is_a = np.ascontiguousarray(cohort.is_a)
    correct = cohort.correct.astype(np.float64)
    sev = np.ascontiguousarray(cohort.severity)
    converged = False
    iterations = 0
    while iterations < h.max_iter:
        iterations += 1
        dist = sq_distances(X, centroids)
        moves = _assignment_pass(
            dist, state.assignment, is_a, correct, sev,
            state.n_a, state.n_b, state.c_a, state.c_b, state.s_a, state.s_b,
            float(h.lam), float(h.gamma), TOL,
        )
        if moves == 0:
            converged = True
            break
        trace.append(_objective(X, state, centroids, h)[0])
        centroids = cluster_means(X, state.assignment, k)
        trace.append(_objective(X, state, centroids, h)[0])

    objective, l_c, l_b, l_s = _objective(X, state, centroids, h)
    if not math.isfinite(objective):
        raise SolverError("objective is not finite")
    return ClusteringResult(
        assignment=state.assignment,
        centroids=centroids,
        objective=objective,
        l_c=l_c,
        l_b=l_b,
        l_s=l_s,
        iterations=iterations,
        converged=converged,
        hyperparams=h,
        restart=restart,
        trace=trace,
    )


def fit(cohort: Cohort, h: Hyperparams) -> ClusteringResult:
    """Best of ``h.restarts`` runs; restart r is seeded with ``seed + r``."""
    if h.k > cohort.n:
        raise ValueError(f"k={h.k} exceeds the number of instances ({cohort.n})")
    best = None
    for r in range(h.restarts):
        seeded = replace(h, seed=(h.seed + r) % _U64)
        result = fit_from(cohort, h, init_centroids(cohort, seeded), restart=r)
        if best is None or result.objective < best.objective:
            best = result
    return best


def is_one_move_stable(cohort: Cohort, result: ClusteringResult, tol: float = TOL) -> bool:
    """Exhaustively check that no single-instance move lowers the objective.

    Centroids are held at the result's values; moves that would empty a
    cluster are outside the feasible set and are skipped.
    """
    h = result.hyperparams
    a = result.assignment.copy()
    k = result.k
    base = total_objective(cohort, a, result.centroids, h)
    sizes = np.bincount(a, minlength=k)
    for i in range(cohort.n):
        src = a[i]
        if sizes[src] <= 1:
            continue
        for j in range(k):
            if j == src:
                continue
            a[i] = j
            if total_objective(cohort, a, result.centroids, h) < base - tol:
                return False
        a[i] = src
    return True
