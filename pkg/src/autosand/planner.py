"""Hierarchical planning: collision-free joint paths and sanding-sequence search.

Single-query planning connects two configurations with a straight joint-space
segment, repairs collisions with rule-based retreat via-points away from the
belt (falling back to seeded random via-points), and time-parameterizes the
result with synchronized trapezoidal velocity profiles.  Multi-query planning
orders the sanding tasks with a permutation GA over a memoized transition-cost
matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import RobotModel, forward_kinematics, jacobian, pseudo_inverse
from .geometry import ConvexShape, RigidTransform

GJK_MAX_ITERS = 64
GJK_TOL = 1e-9


class NoPathFound(Exception):
    """Repair rules and the sampling budget were exhausted."""


class InvalidEndpoint(Exception):
    """A query endpoint is out of limits or already in collision."""


class IterationLimit(Warning):
    """GJK hit its iteration cap; the pair is treated as intersecting."""


# --- GJK ----------------------------------------------------------------------

def _support(va: np.ndarray, vb: np.ndarray, d: np.ndarray) -> np.ndarray:
    return va[np.argmax(va @ d)] - vb[np.argmax(vb @ -d)]


def _nearest_simplex(simplex: list, d: np.ndarray):
    """One simplex-refinement step toward the origin.  Returns (contains, d)."""
    if len(simplex) == 2:
        b, a = simplex
        ab = b - a
        if ab @ -a > 0.0:
            d = np.cross(np.cross(ab, -a), ab)
        else:
            simplex[:] = [a]
            d = -a
    elif len(simplex) == 3:
        c, b, a = simplex
        ab = b - a
        ac = c - a
        abc = np.cross(ab, ac)
        if np.cross(abc, ac) @ -a > 0.0:
            if ac @ -a > 0.0:
                simplex[:] = [c, a]
                d = np.cross(np.cross(ac, -a), ac)
            else:
                simplex[:] = [b, a]
                return _nearest_simplex(simplex, d)
        elif np.cross(ab, abc) @ -a > 0.0:
            simplex[:] = [b, a]
            return _nearest_simplex(simplex, d)
        else:
            if abc @ -a > 0.0:
                d = abc
            else:
                simplex[:] = [b, c, a]
                d = -abc
    else:
        d_, c, b, a = simplex
        for tri, opposite in (((b, c, a), d_), ((c, d_, a), b), ((d_, b, a), c)):
            n = np.cross(tri[1] - tri[2], tri[0] - tri[2])
            if n @ (opposite - a) > 0.0:
                n = -n
            if n @ -a > 0.0:
                simplex[:] = list(tri)
                return _nearest_simplex(simplex, n)
        return True, d
    return False, d


def gjk_intersects(a: ConvexShape, b: ConvexShape,
                   pose_a: RigidTransform | None = None,
                   pose_b: RigidTransform | None = None) -> bool:
    """True iff the posed convex shapes share a point.

    Terminates within GJK_MAX_ITERS simplex refinements; hitting the cap is
    reported and treated as intersecting (the conservative answer for a
    collision checker).
    """
    va = pose_a.apply(a.vertices) if pose_a else a.vertices
    vb = pose_b.apply(b.vertices) if pose_b else b.vertices
    d = va.mean(axis=0) - vb.mean(axis=0)
    if np.linalg.norm(d) < GJK_TOL:
        d = np.array([1.0, 0.0, 0.0])
    s = _support(va, vb, d)
    simplex = [s]
    d = -s
    for _ in range(GJK_MAX_ITERS):
        norm = np.linalg.norm(d)
        if norm < GJK_TOL:
            return True  # origin on the simplex boundary
        a_new = _support(va, vb, d)
        if a_new @ d < GJK_TOL * norm:
            return False
        simplex.append(a_new)
        contains, d = _nearest_simplex(simplex, d)
        if contains:
            return True
    warnings.warn("GJK iteration cap reached; assuming intersection", IterationLimit)
    return True


# --- paths and profiles ---------------------------------------------------------

@dataclass
class Path:
    waypoints: list
    collision_checked: bool = False

    def __post_init__(self):
        self.waypoints = [np.asarray(w, dtype=float).reshape(4) for w in self.waypoints]


@dataclass
class Trajectory:
    """Sampled time parameterization: rows of (t, q, qdot, qddot)."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class SandingTask:
    face_id: int
    approach: np.ndarray
    contact: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        self.approach = np.asarray(self.approach, dtype=float).reshape(4)
        self.contact = np.asarray(self.contact, dtype=float).reshape(4)
        self.normal = np.asarray(self.normal, dtype=float).reshape(3)


@dataclass
class GaParams:
    population_size: int = 200
    crossover_prob: float = 0.9
    mutation_prob: float = 0.1
    max_generations: int = 100
    seed: int = 0
    weights: np.ndarray = (1.0, 1.0, 0.3, 0.3)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(4)
        if self.population_size < 2:
            raise ValueError("population must hold at least 2 individuals")
        if not (0.0 <= self.crossover_prob <= 1.0 and 0.0 <= self.mutation_prob <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if (self.weights <= 0).any():
            raise ValueError("weights must be positive")


@dataclass
class PlannerContext:
    """World model for collision checking: static obstacles plus the payload
    shape rigidly attached to the end effector."""

    model: RobotModel
    payload: ConvexShape
    obstacles: list = field(default_factory=list)  # (ConvexShape, RigidTransform)
    belt_normal: np.ndarray = (1.0, 0.0, 0.0)
    task_step: float = 0.005
    retreat_step: float = 0.02
    retreat_max: float = 0.10
    max_rule_repairs: int = 4
    sample_budget: int = 200
    seed: int = 0

    def __post_init__(self):
        self.belt_normal = np.asarray(self.belt_normal, dtype=float).reshape(3)

    def payload_pose(self, q: np.ndarray) -> RigidTransform:
        x = forward_kinematics(self.model, q)
        return RigidTransform.planar(x[0], x[1], x[2])

    def in_collision(self, q: np.ndarray) -> bool:
        pose = self.payload_pose(q)
        return any(gjk_intersects(self.payload, shape, pose, shape_pose)
                   for shape, shape_pose in self.obstacles)

    def within_limits(self, q: np.ndarray) -> bool:
        lim = self.model.joint_limits
        return bool((q >= lim[:, 0]).all() and (q <= lim[:, 1]).all())

    def segment_samples(self, qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
        """Interpolation fine enough that task-space motion per step stays
        below task_step (conservative sweep bound)."""
        l1, l2 = self.model.link_lengths
        reach = float(np.abs(self.payload.vertices[:, :2]).max())
        gain = np.array([1.0, 1.0, l1 + l2 + reach, l2 + reach])
        travel = float(gain @ np.abs(qb - qa))
        n = max(2, int(np.ceil(travel / self.task_step)) + 1)
        return np.linspace(qa, qb, n)

    def segment_free(self, qa: np.ndarray, qb: np.ndarray) -> bool:
        return not any(self.in_collision(q) for q in self.segment_samples(qa, qb))


def plan_single_query(ctx: PlannerContext, q_start, q_goal) -> Path:
    """Straight-segment planner with rule-based retreat repair.

    Colliding segments are split at a via-point pushed away from the belt
    plane (the task-space retreat mapped through the pseudo-inverse); after
    max_rule_repairs recursive attempts, seeded random via-points are tried up
    to the sampling budget.
    """
    q_start = np.asarray(q_start, dtype=float).reshape(4)
    q_goal = np.asarray(q_goal, dtype=float).reshape(4)
    for name, q in (("start", q_start), ("goal", q_goal)):
        if not ctx.within_limits(q):
            raise InvalidEndpoint(f"{name} configuration violates joint limits")
        if ctx.in_collision(q):
            raise InvalidEndpoint(f"{name} configuration is in collision")

    def retreat_candidates(q):
        jac_pinv = pseudo_inverse(jacobian(ctx.model, q))
        steps = int(round(ctx.retreat_max / ctx.retreat_step))
        for k in range(1, steps + 1):
            shift = -ctx.belt_normal * (k * ctx.retreat_step)
            yield q + jac_pinv @ shift

    def connect(qa, qb, repairs_left):
        if ctx.segment_free(qa, qb):
            return [qa, qb]
        if repairs_left > 0:
            samples = ctx.segment_samples(qa, qb)
            hit = next(q for q in samples if ctx.in_collision(q))
            for via in retreat_candidates(hit):
                if not ctx.within_limits(via) or ctx.in_collision(via):
                    continue
                try:
                    left = connect(qa, via, repairs_left - 1)
                    right = connect(via, qb, repairs_left - 1)
                except NoPathFound:
                    continue
                return left[:-1] + right
        rng = np.random.default_rng(ctx.seed)
        lim = ctx.model.joint_limits
        for _ in range(ctx.sample_budget):
            via = rng.uniform(lim[:, 0], lim[:, 1])
            if ctx.in_collision(via):
                continue
            if ctx.segment_free(qa, via) and ctx.segment_free(via, qb):
                return [qa, via, qb]
        raise NoPathFound("repair rules and sampling budget exhausted")

    waypoints = connect(q_start, q_goal, ctx.max_rule_repairs)
    deduped = [waypoints[0]]
    for w in waypoints[1:]:
        if np.linalg.norm(w - deduped[-1]) > 0.0:
            deduped.append(w)
    return Path(deduped, collision_checked=True)


def trapezoid_times(length: float, v_max: float, a_max: float):
    """Closed-form single-axis profile: (blend_time, total_time, peak_velocity).

    Trapezoidal when the move is long enough to reach v_max, triangular
    otherwise.
    """
    length = abs(float(length))
    if length == 0.0:
        return 0.0, 0.0, 0.0
    if length >= v_max * v_max / a_max:
        blend = v_max / a_max
        return blend, length / v_max + blend, v_max
    blend = np.sqrt(length / a_max)
    return blend, 2.0 * blend, a_max * blend


def synchronize_profile(deltas: np.ndarray, v_max: np.ndarray, a_max: np.ndarray):
    """Common (total_time, blend_time) across joints, slowest joint dictating.

    Per-joint cruise velocity and acceleration are rescaled to fit the shared
    timing while respecting every joint's own limits.
    """
    deltas = np.abs(np.asarray(deltas, dtype=float))
    total = max(trapezoid_times(d, v, a)[1]
                for d, v, a in zip(deltas, v_max, a_max))
    if total == 0.0:
        return 0.0, 0.0
    for _ in range(32):
        # smallest blend time allowed by each joint's acceleration at this total
        blend = 0.0
        for d, a in zip(deltas, a_max):
            disc = total * total - 4.0 * d / a
            if disc < 0.0:
                blend = 0.5 * total
                break
            blend = max(blend, 0.5 * (total - np.sqrt(disc)))
        feasible = all(total - blend >= d / v - 1e-15
                       for d, v in zip(deltas, v_max) if d > 0.0)
        if feasible and blend <= 0.5 * total + 1e-15:
            return total, min(blend, 0.5 * total)
        total = max(blend + d / v for d, v in zip(deltas, v_max) if d > 0.0)
    return total, min(blend, 0.5 * total)


def lspb_parameterize(path: Path, v_max, a_max, sample_dt: float = 0.01) -> Trajectory:
    """Trapezoidal time parameterization of a waypoint path.

    Joints share each segment's duration (time-synchronized); velocity is
    continuous and zero at the via-points.  Zero-length segments emit nothing
    beyond the endpoint.
    """
    v_max = np.broadcast_to(np.asarray(v_max, dtype=float), (4,))
    a_max = np.broadcast_to(np.asarray(a_max, dtype=float), (4,))
    if (v_max <= 0).any() or (a_max <= 0).any():
        raise ValueError("velocity/acceleration limits must be positive")
    times = [0.0]
    pos = [np.asarray(path.waypoints[0], dtype=float)]
    vel = [np.zeros(4)]
    acc = [np.zeros(4)]
    t_offset = 0.0
    for qa, qb in zip(path.waypoints[:-1], path.waypoints[1:]):
        delta = qb - qa
        total, blend = synchronize_profile(delta, v_max, a_max)
        if total == 0.0:
            continue
        cruise = delta / (total - blend)
        accel = cruise / blend
        n = int(np.ceil(total / sample_dt))
        local = np.minimum(np.arange(1, n + 1) * sample_dt, total)
        for t in local:
            if t <= blend:
                q = qa + 0.5 * accel * t * t
                qd = accel * t
                qdd = accel
            elif t <= total - blend:
                q = qa + cruise * (t - 0.5 * blend)
                qd = cruise
                qdd = np.zeros(4)
            else:
                rem = total - t
                q = qb - 0.5 * accel * rem * rem
                qd = accel * rem
                qdd = -accel
            times.append(t_offset + t)
            pos.append(q)
            vel.append(qd)
            acc.append(qdd)
        t_offset += total
    return Trajectory(np.array(times), np.array(pos), np.array(vel), np.array(acc))


def path_cost(path: Path, weights) -> float:
    """Sum of weighted squared waypoint-to-waypoint displacements."""
    if len(path.waypoints) < 2:
        raise ValueError("need at least 2 waypoints")
    w = np.asarray(weights, dtype=float).reshape(4)
    steps = np.diff(np.stack(path.waypoints), axis=0)
    return float((np.linalg.norm(w * steps, axis=1) ** 2).sum())


@dataclass
class GaResult:
    order: list
    total_cost: float
    best_history: np.ndarray
    mean_history: np.ndarray
    cost_matrix: np.ndarray


def ga_optimize_sequence(tasks, params: GaParams, transition_cost) -> GaResult:
    """Permutation GA over the task visiting order.

    transition_cost(i, j) prices moving from task i to task j, with i = -1
    standing for the home configuration; all pairs are evaluated once into a
    cost matrix, so fitness is a table lookup.  Tournament selection (size 3),
    order crossover, swap mutation, one elite.
    """
    n = len(tasks)
    if n < 1:
        raise ValueError("need at least one task")
    home_cost = np.array([transition_cost(-1, j) for j in range(n)])
    matrix = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                matrix[i, j] = transition_cost(i, j)

    def fitness(perm):
        cost = home_cost[perm[0]]
        for a, b in zip(perm[:-1], perm[1:]):
            cost += matrix[a, b]
        return cost

    if n == 1:
        order = [0]
        cost = float(home_cost[0])
        return GaResult(order, cost, np.array([cost] * params.max_generations),
                        np.array([cost] * params.max_generations), matrix)

    rng = np.random.default_rng(params.seed)
    pop = [rng.permutation(n) for _ in range(params.population_size)]
    costs = np.array([fitness(p) for p in pop])
    best_hist, mean_hist = [], []

    def tournament():
        idx = rng.integers(0, len(pop), size=3)
        return pop[idx[np.argmin(costs[idx])]]

    def order_crossover(p1, p2):
        a, b = sorted(rng.integers(0, n, size=2))
        child = -np.ones(n, dtype=int)
        child[a:b + 1] = p1[a:b + 1]
        fill = [g for g in p2 if g not in set(child[a:b + 1])]
        k = 0
        for i in range(n):
            if child[i] < 0:
                child[i] = fill[k]
                k += 1
        return child

    for _ in range(params.max_generations):
        elite = pop[int(np.argmin(costs))].copy()
        new_pop = [elite]
        while len(new_pop) < params.population_size:
            p1, p2 = tournament(), tournament()
            child = order_crossover(p1, p2) if rng.uniform() < params.crossover_prob \
                else p1.copy()
            if rng.uniform() < params.mutation_prob:
                i, j = rng.integers(0, n, size=2)
                child[i], child[j] = child[j], child[i]
            new_pop.append(child)
        pop = new_pop
        costs = np.array([fitness(p) for p in pop])
        best_hist.append(costs.min())
        mean_hist.append(costs.mean())

    best = pop[int(np.argmin(costs))]
    return GaResult([int(i) for i in best], float(costs.min()),
                    np.array(best_hist), np.array(mean_hist), matrix)
