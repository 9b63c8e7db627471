"""Optimal reciprocal collision avoidance in velocity space.

Agent pairs produce one half-plane each from truncated velocity-obstacle
cones (responsibility-shared); wall segments produce hard half-planes from
the closest-point geometry with full responsibility.  The per-agent solve
is the classic sequential 2-D linear program over the speed disk with the
max-violation 3-D fallback when the feasible region is empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS = 1e-10


@dataclass
class Body:
    pos: np.ndarray
    vel: np.ndarray
    radius: float
    pref_vel: np.ndarray
    max_speed: float

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float)
        self.vel = np.asarray(self.vel, dtype=float)
        self.pref_vel = np.asarray(self.pref_vel, dtype=float)
        if self.radius <= 0 or self.max_speed <= 0:
            raise ValueError("radius and max_speed must be positive")


@dataclass(frozen=True)
class OrcaConfig:
    time_horizon: float = 4.0        # s, agent-agent cone truncation
    time_horizon_obst: float = 1.0   # s, wall constraint horizon
    neighbor_dist: float = 0.5       # m, surface-to-surface attention range
    dt: float = 0.2                  # s, control period (collision push-out)
    responsibility: float = 0.5      # avoidance share taken against agents

    def __post_init__(self):
        if min(self.time_horizon, self.time_horizon_obst, self.neighbor_dist,
               self.dt) <= 0:
            raise ValueError("all config fields must be positive")
        if not (0 < self.responsibility <= 1.0):
            raise ValueError("responsibility must be in (0, 1]")


@dataclass
class HalfPlane:
    """Feasible velocities satisfy (v - point) . normal >= 0."""

    point: np.ndarray
    normal: np.ndarray          # unit
    hard: bool = False          # stays a hard constraint in the fallback LP

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float)
        self.normal = np.asarray(self.normal, dtype=float)
        n = np.linalg.norm(self.normal)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"normal must be unit length, got {n}")

    @property
    def direction(self) -> np.ndarray:
        # feasible side lies to the left of the direction vector
        return np.array([self.normal[1], -self.normal[0]])

    def violation(self, v) -> float:
        return float(-(v - self.point) @ self.normal)


@dataclass(frozen=True)
class Segment:
    a: tuple[float, float]
    b: tuple[float, float]

    def __post_init__(self):
        if np.allclose(self.a, self.b):
            raise ValueError("segment endpoints must differ")

    def closest_point(self, p) -> np.ndarray:
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        ab = b - a
        t = float(np.clip((np.asarray(p) - a) @ ab / (ab @ ab), 0.0, 1.0))
        return a + t * ab

    def distance(self, p) -> float:
        return float(np.linalg.norm(np.asarray(p, dtype=float) - self.closest_point(p)))


def _det(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _from_direction(point, direction, hard=False) -> HalfPlane:
    normal = np.array([-direction[1], direction[0]])
    return HalfPlane(point=np.asarray(point, dtype=float), normal=normal, hard=hard)


def _agent_line(self_body: Body, other: Body, cfg: OrcaConfig) -> HalfPlane:
    rel_pos = other.pos - self_body.pos
    rel_vel = self_body.vel - other.vel
    dist_sq = float(rel_pos @ rel_pos)
    combined_r = self_body.radius + other.radius
    combined_r_sq = combined_r * combined_r

    if dist_sq > combined_r_sq:
        # no current overlap: truncated cone with cutoff disc at rel_pos / tau
        inv_tau = 1.0 / cfg.time_horizon
        w = rel_vel - inv_tau * rel_pos
        w_len_sq = float(w @ w)
        dot1 = float(w @ rel_pos)
        if dot1 < 0.0 and dot1 * dot1 > combined_r_sq * w_len_sq:
            # project on the cutoff disc
            w_len = np.sqrt(w_len_sq)
            unit_w = w / w_len
            direction = np.array([unit_w[1], -unit_w[0]])
            u = (combined_r * inv_tau - w_len) * unit_w
        else:
            # project on the nearer cone leg
            leg = np.sqrt(max(dist_sq - combined_r_sq, 0.0))
            if _det(rel_pos, w) > 0.0:
                direction = np.array([
                    rel_pos[0] * leg - rel_pos[1] * combined_r,
                    rel_pos[0] * combined_r + rel_pos[1] * leg,
                ]) / dist_sq
            else:
                direction = -np.array([
                    rel_pos[0] * leg + rel_pos[1] * combined_r,
                    -rel_pos[0] * combined_r + rel_pos[1] * leg,
                ]) / dist_sq
            u = float(rel_vel @ direction) * direction - rel_vel
    else:
        # already overlapping: push apart over one control period
        inv_dt = 1.0 / cfg.dt
        w = rel_vel - inv_dt * rel_pos
        w_len = float(np.linalg.norm(w))
        if w_len < EPS:
            unit_w = -rel_pos / max(np.sqrt(dist_sq), EPS)
        else:
            unit_w = w / w_len
        direction = np.array([unit_w[1], -unit_w[0]])
        u = (combined_r * inv_dt - w_len) * unit_w

    point = self_body.vel + cfg.responsibility * u
    return _from_direction(point, direction)


def _obstacle_line(body: Body, seg: Segment, cfg: OrcaConfig) -> HalfPlane | None:
    closest = seg.closest_point(body.pos)
    delta = body.pos - closest
    d = float(np.linalg.norm(delta))
    gap = d - body.radius
    if gap > cfg.time_horizon_obst * body.max_speed:
        return None  # unreachable within the obstacle horizon
    if d < EPS:
        # degenerate: center exactly on the segment; push along any normal
        seg_dir = np.asarray(seg.b, dtype=float) - np.asarray(seg.a, dtype=float)
        n = np.array([-seg_dir[1], seg_dir[0]])
        n = n / np.linalg.norm(n)
    else:
        n = delta / d
    if gap > 0.0:
        allowed = gap / cfg.time_horizon_obst
        point = -allowed * n
    else:
        point = (-gap / cfg.dt) * n  # penetrating: positive outward speed required
    return HalfPlane(point=point, normal=n, hard=True)


def orca_lines(self_body: Body, neighbors, obstacles, cfg: OrcaConfig) -> list[HalfPlane]:
    """Half-planes for one agent; obstacle lines first (they stay hard)."""
    lines: list[HalfPlane] = []
    for seg in obstacles:
        line = _obstacle_line(self_body, seg, cfg)
        if line is not None:
            lines.append(line)
    for other in neighbors:
        gap = float(np.linalg.norm(other.pos - self_body.pos)) \
            - self_body.radius - other.radius
        if gap > cfg.neighbor_dist:
            continue
        lines.append(_agent_line(self_body, other, cfg))
    return lines


# -- sequential linear programming over the speed disk ------------------------

def _lp1(lines, line_no, radius, opt_v, direction_opt, result):
    """Optimize along line line_no subject to previous lines and the disk."""
    line = lines[line_no]
    direction = line.direction
    point = line.point
    dot = float(point @ direction)
    discriminant = dot * dot + radius * radius - float(point @ point)
    if discriminant < 0.0:
        return None  # the disk misses this line entirely
    sqrt_d = np.sqrt(discriminant)
    t_left = -dot - sqrt_d
    t_right = -dot + sqrt_d

    for i in range(line_no):
        d_i = lines[i].direction
        p_i = lines[i].point
        denom = _det(direction, d_i)
        numer = _det(d_i, point - p_i)
        if abs(denom) <= EPS:
            if numer < 0.0:
                return None  # parallel and on the infeasible side
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None

    if direction_opt:
        if float(opt_v @ direction) > 0.0:
            return point + t_right * direction
        return point + t_left * direction
    t = float(direction @ (np.asarray(opt_v) - point))
    return point + float(np.clip(t, t_left, t_right)) * direction


def _lp2(lines, radius, opt_v, direction_opt):
    """Returns (index of first unresolvable line or len(lines), velocity)."""
    opt_v = np.asarray(opt_v, dtype=float)
    if direction_opt:
        result = opt_v * radius
    elif float(opt_v @ opt_v) > radius * radius:
        result = opt_v / np.linalg.norm(opt_v) * radius
    else:
        result = opt_v.copy()

    for i, line in enumerate(lines):
        if _det(line.direction, line.point - result) > 0.0:
            new = _lp1(lines, i, radius, opt_v, direction_opt, result)
            if new is None:
                return i, result
            result = new
    return len(lines), result


def _lp3(lines, n_hard, begin, radius, result):
    """Minimize the maximum violation of the soft lines, hard lines kept."""
    distance = 0.0
    for i in range(begin, len(lines)):
        if _det(lines[i].direction, lines[i].point - result) > distance:
            proj = list(lines[:n_hard])
            for j in range(n_hard, i):
                d_i, d_j = lines[i].direction, lines[j].direction
                p_i, p_j = lines[i].point, lines[j].point
                determinant = _det(d_i, d_j)
                if abs(determinant) <= EPS:
                    if float(d_i @ d_j) > 0.0:
                        continue  # same direction: j is redundant
                    point = 0.5 * (p_i + p_j)
                else:
                    point = p_i + (_det(d_j, p_i - p_j) / determinant) * d_i
                direction = d_j - d_i
                direction = direction / np.linalg.norm(direction)
                proj.append(_from_direction(point, direction))
            temp = result
            opt_dir = np.array([-lines[i].direction[1], lines[i].direction[0]])
            count, new = _lp2(proj, radius, opt_dir, direction_opt=True)
            result = new if count == len(proj) else temp
            distance = _det(lines[i].direction, lines[i].point - result)
    return result


def solve_velocity(lines: list[HalfPlane], pref_vel, max_speed: float) -> np.ndarray:
    """Velocity closest to pref_vel inside all half-planes and the speed disk.

    Infeasible sets fall back to minimizing the largest violation of the
    agent (soft) lines while keeping obstacle (hard) lines satisfied.  The
    result always respects the speed bound.
    """
    # keep hard lines in front so the fallback can treat a prefix as hard
    ordered = sorted(lines, key=lambda l: not l.hard)
    n_hard = sum(1 for l in ordered if l.hard)
    count, result = _lp2(ordered, max_speed, np.asarray(pref_vel, dtype=float),
                         direction_opt=False)
    if count < len(ordered):
        result = _lp3(ordered, n_hard, count, max_speed, result)
    speed = float(np.linalg.norm(result))
    if speed > max_speed:  # sqrt roundoff can land marginally outside the disk
        result = result * (max_speed / speed)
    return result


def _perturbation(seed: int, index: int) -> np.ndarray:
    angle = np.random.default_rng([seed, index]).uniform(0.0, 2.0 * np.pi)
    return 1e-4 * np.array([np.cos(angle), np.sin(angle)])


def step_all(bodies: list[Body], obstacles, cfg: OrcaConfig, seed: int = 0) -> list[np.ndarray]:
    """New velocities for every body from the shared pre-step state.

    All constraints are built before any velocity updates (simultaneous
    update).  A deterministic seeded 1e-4 perturbation of each preferred
    velocity breaks exact symmetry degeneracies.
    """
    new_vels = []
    for i, body in enumerate(bodies):
        neighbors = [b for j, b in enumerate(bodies) if j != i]
        lines = orca_lines(body, neighbors, obstacles, cfg)
        pref = body.pref_vel + _perturbation(seed, i)
        new_vels.append(solve_velocity(lines, pref, body.max_speed))
    return new_vels
