"""p-median facility location.

Choose ``m`` of ``n`` candidate sites and send every demand point to its
cheapest open site so that ``sum_i a_i * d[i, j(i)]`` is minimal.  The model
is the classic ReVelle-Swain formulation::

    min   sum_ij a_i d_ij x_ij
    s.t.  sum_j x_ij = 1        for every i
          x_ij <= x_jj          for every i != j
          sum_j x_jj = m
          x_ij in {0, 1}

Three solvers are provided: exhaustive enumeration (test oracle), greedy
construction plus vertex-substitution local search, and an exact
branch-and-bound driven by a Lagrangian bound (assignment rows dualised,
multipliers improved by subgradient ascent).
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

EXACT = "exact"
HEURISTIC = "heuristic-with-gap"


class PMedianError(ValueError):
    pass


class BudgetExceeded(PMedianError):
    pass


@dataclass(frozen=True)
class PMedianInstance:
    weights: np.ndarray
    costs: np.ndarray
    m: int
    labels: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        d = np.asarray(getattr(self.costs, "values", self.costs), dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "costs", d)
        n = len(w)
        if w.ndim != 1 or n == 0:
            raise PMedianError("weights must be a non-empty vector")
        if d.shape != (n, n):
            raise PMedianError(f"cost matrix shape {d.shape} does not match {n} weights")
        if not (np.all(np.isfinite(w)) and np.all(w >= 0)):
            raise PMedianError("weights must be finite and non-negative")
        if not (np.all(np.isfinite(d)) and np.all(d >= 0)):
            raise PMedianError("costs must be finite and non-negative")
        if np.any(np.diag(d) != 0):
            raise PMedianError("cost matrix diagonal must be zero")
        if not 1 <= self.m <= n:
            raise PMedianError(f"need 1 <= m <= n, got m={self.m}, n={n}")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(n)))
        elif len(self.labels) != n:
            raise PMedianError("labels length does not match weights")

    @property
    def n(self) -> int:
        return len(self.weights)

    def with_m(self, m: int) -> "PMedianInstance":
        return PMedianInstance(self.weights, self.costs, m, self.labels)


@dataclass
class FacilitySolution:
    open_set: tuple[int, ...]
    assignment: np.ndarray
    objective: float
    proof: str = HEURISTIC
    gap: float = math.inf
    lower_bound: float = 0.0
    stats: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.open_set)

    def assignment_matrix(self) -> np.ndarray:
        """The 0/1 ``x_ij`` matrix of the formulation."""
        n = len(self.assignment)
        x = np.zeros((n, n), dtype=np.int8)
        x[np.arange(n), self.assignment] = 1
        return x

    def to_dict(self, labels: Sequence | None = None) -> dict:
        lab = list(labels) if labels is not None else list(range(len(self.assignment)))
        gap = self.gap if math.isfinite(self.gap) else None
        return {
            "open": [lab[j] for j in self.open_set],
            "open_index": list(self.open_set),
            "assignment": {str(lab[i]): lab[int(j)] for i, j in enumerate(self.assignment)},
            "objective": self.objective,
            "lower_bound": self.lower_bound,
            "proof": self.proof,
            "gap": gap,
        }


def _assign(costs: np.ndarray, open_idx: Sequence[int]) -> np.ndarray:
    cols = np.asarray(sorted(open_idx), dtype=int)
    # argmin returns the first minimum, i.e. the lowest facility index
    return cols[np.argmin(costs[:, cols], axis=1)]


def evaluate_fixed(inst: PMedianInstance, open_set: Iterable[int]) -> FacilitySolution:
    """Score a given facility set without optimising it."""
    idx = sorted(set(int(j) for j in open_set))
    if not idx:
        raise PMedianError("open_set must not be empty")
    if idx[0] < 0 or idx[-1] >= inst.n:
        raise PMedianError(f"open_set indices must lie in [0, {inst.n})")
    assignment = _assign(inst.costs, idx)
    objective = float(np.dot(inst.weights, inst.costs[np.arange(inst.n), assignment]))
    return FacilitySolution(tuple(idx), assignment, objective)


def _finish(inst: PMedianInstance, open_set, proof, lower_bound, stats=None) -> FacilitySolution:
    sol = evaluate_fixed(inst, open_set)
    sol.proof = proof
    sol.lower_bound = float(lower_bound)
    sol.gap = _rel_gap(sol.objective, lower_bound)
    sol.stats = stats or {}
    return sol


def _rel_gap(ub: float, lb: float) -> float:
    if ub <= 0:
        return 0.0
    return max(0.0, (ub - lb) / ub)


# --------------------------------------------------------------------------
# exhaustive oracle


def solve_exact_bruteforce(inst: PMedianInstance, budget: int = 2_000_000, chunk: int = 4096) -> FacilitySolution:
    total = math.comb(inst.n, inst.m)
    if total > budget:
        raise BudgetExceeded(
            f"C({inst.n}, {inst.m}) = {total} subsets exceeds the enumeration budget {budget}; use solve()"
        )
    d = inst.costs
    a = inst.weights
    best_obj = math.inf
    best_set = None
    combos = itertools.combinations(range(inst.n), inst.m)
    while True:
        block = list(itertools.islice(combos, chunk))
        if not block:
            break
        sets = np.array(block, dtype=int)  # (b, m)
        # (b, n): cheapest open facility per demand point
        nearest = d[:, sets].min(axis=2).T
        objs = nearest @ a
        k = int(np.argmin(objs))
        if objs[k] < best_obj:
            best_obj = float(objs[k])
            best_set = block[k]
    return _finish(inst, best_set, EXACT, best_obj, {"subsets": total})


# --------------------------------------------------------------------------
# greedy + vertex substitution


def greedy(inst: PMedianInstance) -> list[int]:
    """Open facilities one at a time, each with the best marginal saving."""
    d, a = inst.costs, inst.weights
    best = np.full(inst.n, np.inf)
    chosen: list[int] = []
    closed = np.ones(inst.n, dtype=bool)
    for _ in range(inst.m):
        objs = a @ np.minimum(best[:, None], d)
        objs[~closed] = np.inf
        j = int(np.argmin(objs))
        chosen.append(j)
        closed[j] = False
        best = np.minimum(best, d[:, j])
    return sorted(chosen)


def _two_nearest(d: np.ndarray, open_idx: np.ndarray):
    sub = d[:, open_idx]
    if len(open_idx) == 1:
        return open_idx[np.zeros(len(d), dtype=int)], sub[:, 0], np.full(len(d), np.inf)
    order = np.argsort(sub, axis=1, kind="stable")[:, :2]
    rows = np.arange(len(d))
    return open_idx[order[:, 0]], sub[rows, order[:, 0]], sub[rows, order[:, 1]]


def vertex_substitution(inst: PMedianInstance, open_set: Sequence[int], max_rounds: int = 10_000) -> list[int]:
    """Best-improvement swap local search (Teitz-Bart) to a swap-local optimum."""
    d, a = inst.costs, inst.weights
    n, m = inst.n, inst.m
    current = np.array(sorted(open_set), dtype=int)
    if m == n:
        return list(current)
    obj = float(np.dot(a, d[:, current].min(axis=1)))
    for _ in range(max_rounds):
        near, best, second = _two_nearest(d, current)
        with_best = np.minimum(d, best[:, None])
        base = a @ with_best  # objective after adding candidate j, nothing removed
        loss = a[:, None] * (np.minimum(d, second[:, None]) - with_best)
        # member[k, i] = 1 when demand i is served by current[k]
        member = (near[None, :] == current[:, None]).astype(float)
        swap = base[None, :] + member @ loss  # (m, n): remove current[k], add j
        swap[:, current] = np.inf
        k, j = np.unravel_index(int(np.argmin(swap)), swap.shape)
        new_obj = float(swap[k, j])
        if not new_obj < obj - 1e-12 * max(1.0, abs(obj)):
            break
        current[k] = j
        current.sort()
        obj = float(np.dot(a, d[:, current].min(axis=1)))
    return list(current)


def solve_heuristic(inst: PMedianInstance, seed: int = 0, restarts: int = 0) -> FacilitySolution:
    """Greedy start, vertex-substitution descent, optional random restarts."""
    best = evaluate_fixed(inst, vertex_substitution(inst, greedy(inst)))
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        start = rng.choice(inst.n, size=inst.m, replace=False)
        cand = evaluate_fixed(inst, vertex_substitution(inst, start))
        if cand.objective < best.objective or (
            cand.objective == best.objective and cand.open_set < best.open_set
        ):
            best = cand
    best.proof = HEURISTIC
    best.stats = {"restarts": restarts, "seed": seed}
    return best


# --------------------------------------------------------------------------
# Lagrangian branch-and-bound


@dataclass
class SolveOptions:
    epsilon: float = 1e-6
    node_limit: int = 200_000
    time_limit: float | None = None
    max_subgradient_iters: int = 1000
    stall_iters: int = 30
    initial_step: float = 2.0
    child_step: float = 0.5
    child_subgradient_iters: int = 300
    min_step: float = 1e-3
    heuristic_restarts: int = 0
    seed: int = 0
    trace: bool = False


@dataclass
class _Node:
    lb: float
    fixed_open: np.ndarray
    fixed_closed: np.ndarray
    multipliers: np.ndarray
    depth: int = 0


class _Bounder:
    """Lagrangian relaxation of the assignment rows for one instance."""

    def __init__(self, inst: PMedianInstance):
        self.inst = inst
        self.c = inst.weights[:, None] * inst.costs

    def relax(self, lam, fixed_open, fixed_closed):
        """Return (bound, chosen facilities, subgradient, reduced costs rho)."""
        inst = self.inst
        rc = np.minimum(self.c - lam[:, None], 0.0)
        rho = rc.sum(axis=0)
        need = inst.m - int(fixed_open.sum())
        free = ~(fixed_open | fixed_closed)
        free_idx = np.flatnonzero(free)
        order = free_idx[np.argsort(rho[free_idx], kind="stable")]
        chosen = np.concatenate([np.flatnonzero(fixed_open), order[:need]])
        bound = float(lam.sum() + rho[chosen].sum())
        covered = (rc[:, chosen] < 0).sum(axis=1)
        grad = 1.0 - covered
        return bound, np.sort(chosen), grad, rho, order, need


def solve(inst: PMedianInstance, opts: SolveOptions | None = None) -> FacilitySolution:
    """Exact p-median by Lagrangian branch-and-bound.

    Stops when the relative gap between incumbent and global lower bound is at
    most ``opts.epsilon``.  If the node or time budget runs out first the best
    solution is returned with ``proof == "heuristic-with-gap"``.
    """
    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    n, m = inst.n, inst.m
    heur = solve_heuristic(inst, seed=opts.seed, restarts=opts.heuristic_restarts)
    ub = heur.objective
    incumbents: dict[tuple, float] = {heur.open_set: ub}
    stats = {"nodes": 0, "subgradient_iters": 0, "heuristic_objective": ub, "node_trace": []}

    if ub <= 0.0 or m == n:
        return _finish(inst, heur.open_set, EXACT, ub, _public(stats, t0))

    bounder = _Bounder(inst)
    seen_sets: set[tuple] = {heur.open_set}

    def tol() -> float:
        return opts.epsilon * ub

    def try_set(open_idx) -> None:
        nonlocal ub
        key = tuple(int(j) for j in open_idx)
        if key in seen_sets:
            return
        seen_sets.add(key)
        obj = evaluate_fixed(inst, key).objective
        if obj < ub:
            improved = tuple(vertex_substitution(inst, key))
            obj2 = evaluate_fixed(inst, improved).objective
            if obj2 < obj:
                key, obj = improved, obj2
            ub = obj
            log.debug("incumbent %.6f", ub)
        incumbents[key] = min(obj, incumbents.get(key, math.inf))

    def ascend(node: _Node, step: float, iters: int):
        """Subgradient ascent at a node; returns best bound data."""
        lam = node.multipliers.copy()
        best = None
        stall = 0
        for _ in range(iters):
            bound, chosen, grad, rho, order, need = bounder.relax(lam, node.fixed_open, node.fixed_closed)
            stats["subgradient_iters"] += 1
            try_set(chosen)
            if best is None or bound > best[0] + 1e-15 * abs(bound):
                best = (bound, lam.copy(), chosen, rho, order, need)
                stall = 0
            else:
                stall += 1
                if stall >= opts.stall_iters:
                    step /= 2.0
                    stall = 0
            if best[0] >= ub - tol() or step < opts.min_step:
                break
            norm = float(grad @ grad)
            if norm == 0.0:
                # relaxed solution covers every row once: it is feasible and optimal here
                break
            lam = np.maximum(lam + step * (ub - bound) / norm * grad, 0.0)
        return best

    root = _Node(
        lb=0.0,
        fixed_open=np.zeros(n, dtype=bool),
        fixed_closed=np.zeros(n, dtype=bool),
        multipliers=_initial_multipliers(bounder.c, heur.open_set),
    )
    heap: list = [(0.0, 0, root)]
    counter = itertools.count(1)
    global_lb = 0.0
    exhausted = True

    while heap:
        node_lb, _, node = heapq.heappop(heap)
        global_lb = node_lb if not heap else min(node_lb, heap[0][0])
        if node_lb >= ub - tol():
            continue
        if stats["nodes"] >= opts.node_limit or (
            opts.time_limit is not None and time.perf_counter() - t0 > opts.time_limit
        ):
            heapq.heappush(heap, (node_lb, next(counter), node))
            exhausted = False
            break
        stats["nodes"] += 1

        first = stats["nodes"] == 1
        while True:
            if first:
                bound, lam, chosen, rho, order, need = ascend(node, opts.initial_step, opts.max_subgradient_iters)
                first = False
            else:
                bound, lam, chosen, rho, order, need = ascend(node, opts.child_step, opts.child_subgradient_iters)
            if opts.trace:
                local = evaluate_fixed(inst, chosen).objective
                stats["node_trace"].append((bound, local, ub))
            node.lb = max(node.lb, bound)
            node.multipliers = lam
            if node.lb >= ub - tol():
                break
            changed = _reduce(node, m, bound, rho, order, need, ub - tol())
            if changed is None:  # infeasible after fixing
                node.lb = math.inf
                break
            if _is_leaf(node, m):
                try_set(np.flatnonzero(node.fixed_open) if node.fixed_open.sum() == m
                        else np.flatnonzero(~node.fixed_closed))
                node.lb = math.inf
                break
            if not changed:
                break
        if node.lb >= ub - tol():
            continue

        j = _branch_variable(rho, order, need)
        for open_child in (True, False):
            fo = node.fixed_open.copy()
            fc = node.fixed_closed.copy()
            if open_child:
                fo[j] = True
            else:
                fc[j] = True
            if fo.sum() > m or (~fc).sum() < m:
                continue
            child = _Node(node.lb, fo, fc, node.multipliers.copy(), node.depth + 1)
            heapq.heappush(heap, (node.lb, next(counter), child))

    if exhausted and not heap:
        global_lb = ub
    elif heap:
        global_lb = min(global_lb, min(h[0] for h in heap))
    global_lb = min(global_lb, ub)

    best_obj = min(incumbents.values())
    # lexicographically smallest among the optimal sets discovered
    cands = sorted(k for k, v in incumbents.items() if v <= best_obj)
    gap = _rel_gap(best_obj, global_lb)
    proof = EXACT if gap <= opts.epsilon else HEURISTIC
    return _finish(inst, cands[0], proof, global_lb, _public(stats, t0))


def _public(stats: dict, t0: float) -> dict:
    stats["seconds"] = time.perf_counter() - t0
    return stats


def _initial_multipliers(c: np.ndarray, open_set) -> np.ndarray:
    # each demand point priced at its current service cost
    return c[:, list(open_set)].min(axis=1).astype(float)


def _is_leaf(node: _Node, m: int) -> bool:
    n_open = int(node.fixed_open.sum())
    n_allowed = int((~node.fixed_closed).sum())
    return n_open == m or n_allowed == m


def _reduce(node: _Node, m: int, bound, rho, order, need, cutoff) -> bool | None:
    """Fix facilities whose forced flip alone pushes the bound past ``cutoff``.

    Returns True if anything was fixed, False if nothing, None if the node
    became infeasible.
    """
    if need <= 0 or len(order) <= need:
        return False
    inside = order[:need]
    outside = order[need:]
    worst_in = rho[inside[-1]]
    best_out = rho[outside[0]]
    changed = False
    # opening an excluded facility evicts the worst included one
    close = outside[bound + rho[outside] - worst_in >= cutoff]
    # closing an included facility brings in the best excluded one
    force = inside[bound - rho[inside] + best_out >= cutoff]
    if len(close):
        node.fixed_closed[close] = True
        changed = True
    if len(force):
        node.fixed_open[force] = True
        changed = True
    if node.fixed_open.sum() > m or (~node.fixed_closed).sum() < m:
        return None
    return changed


def _branch_variable(rho, order, need) -> int:
    """Free facility whose closure would lift the bound the most."""
    inside = order[:need]
    if len(order) > need:
        best_out = rho[order[need]]
        lift = best_out - rho[inside]
        return int(inside[int(np.argmax(lift))])
    return int(inside[0])


def write_instance(inst: PMedianInstance, path) -> None:
    """Export as CSV: ``label,weight,<cost to each label>...`` one row per point."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "weight", *inst.labels])
        for lab, a, row in zip(inst.labels, inst.weights, inst.costs):
            w.writerow([lab, repr(float(a)), *(repr(float(x)) for x in row)])


def read_instance(path, m: int) -> PMedianInstance:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["label", "weight"]:
        raise PMedianError(f"{path}: not a p-median instance file")
    body = rows[1:]
    if len(rows[0]) - 2 != len(body):
        raise PMedianError(f"{path}: cost matrix is not square")
    try:
        weights = [float(r[1]) for r in body]
        costs = [[float(x) for x in r[2:]] for r in body]
    except (ValueError, IndexError) as exc:
        raise PMedianError(f"{path}: {exc}") from exc
    return PMedianInstance(weights, np.array(costs), m, tuple(r[0] for r in body))
