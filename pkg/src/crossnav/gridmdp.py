"""Discrete grid MDP: coordinate transforms, deterministic transitions,
soft value iteration and visitation-frequency propagation.

Conventions (fixed throughout the package):
  - grid is a north-up image: row 0 is the top (largest y), col 0 the left
    (smallest x); row grows downward, col grows rightward
  - action order is UP, DOWN, LEFT, RIGHT, STAY and is load-bearing for
    tie-breaking in greedy decoding
  - moves that would leave the grid clamp to the current cell
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache

import numpy as np

GridCell = tuple[int, int]  # (row, col)


def _logsumexp0(q: np.ndarray) -> np.ndarray:
    """logsumexp over axis 0; minimal allocations (hot path of the backup)."""
    m = q.max(axis=0)
    return m + np.log(np.exp(q - m).sum(axis=0))


class OutOfBoundsError(ValueError):
    """Position or cell outside the grid footprint."""


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    STAY = 4


# (drow, dcol) per action, indexed by Action value.
ACTION_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))
N_ACTIONS = len(Action)


@dataclass(frozen=True)
class GridSpec:
    """Door-centered square discretization of the scene footprint."""

    rows: int = 60
    cols: int = 60
    cell_size: float = 0.1
    origin: tuple[float, float] = (0.0, 0.0)  # world position of grid center

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0 or self.cell_size <= 0:
            raise ValueError("rows, cols and cell_size must be positive")

    @property
    def width(self) -> float:
        return self.cols * self.cell_size

    @property
    def height(self) -> float:
        return self.rows * self.cell_size

    @property
    def x_min(self) -> float:
        return self.origin[0] - self.width / 2.0

    @property
    def x_max(self) -> float:
        return self.origin[0] + self.width / 2.0

    @property
    def y_min(self) -> float:
        return self.origin[1] - self.height / 2.0

    @property
    def y_max(self) -> float:
        return self.origin[1] + self.height / 2.0

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def in_bounds(self, cell: GridCell) -> bool:
        r, c = cell
        return 0 <= r < self.rows and 0 <= c < self.cols

    def flat(self, cell: GridCell) -> int:
        return cell[0] * self.cols + cell[1]

    def unflat(self, idx: int) -> GridCell:
        return (idx // self.cols, idx % self.cols)


@dataclass
class GridPath:
    """Cell sequence plus the deterministic actions connecting it."""

    cells: list[GridCell]
    actions: list[Action]

    def __post_init__(self):
        n = len(self.cells)
        if len(self.actions) not in (max(n - 1, 0), n):
            raise ValueError(
                f"{len(self.actions)} actions do not fit {n} cells "
                "(need n-1, or n when Stay-padded)"
            )

    def __len__(self) -> int:
        return len(self.cells)

    def validate(self, spec: GridSpec) -> None:
        """Check every recorded action reproduces the next cell."""
        for i, (cell, act) in enumerate(zip(self.cells[:-1], self.actions)):
            nxt = step(cell, act, spec)
            if nxt != self.cells[i + 1]:
                raise ValueError(
                    f"transition {i}: {cell} --{act.name}--> {nxt}, "
                    f"path records {self.cells[i + 1]}"
                )


@dataclass
class PolicyTable:
    """Stochastic policy from a finite-horizon soft backup.

    probs[t, s, a] is the action distribution used at forward step t, i.e.
    with horizon - t steps remaining; probs[0] is the policy the agent
    follows at its current state.  value holds the full-horizon soft values.
    """

    probs: np.ndarray  # (horizon, n_cells, n_actions)
    value: np.ndarray  # (n_cells,)
    horizon: int

    def step_probs(self, t: int) -> np.ndarray:
        return self.probs[t]


@dataclass
class VisitationField:
    """Per-cell occupancy mass accumulated over a rollout horizon."""

    counts: np.ndarray  # (rows, cols), nonnegative
    horizon: int

    @property
    def total(self) -> float:
        return float(self.counts.sum())


def world_to_grid(pos, spec: GridSpec) -> GridCell:
    """Cell containing a world position.

    col = floor((x - x_min) / cell), row = floor((y_max - y) / cell); the
    far edges (x = x_max, y = y_min) belong to the last column/row.
    """
    x, y = float(pos[0]), float(pos[1])
    if not (spec.x_min <= x <= spec.x_max and spec.y_min <= y <= spec.y_max):
        raise OutOfBoundsError(
            f"position ({x:.3f}, {y:.3f}) outside footprint "
            f"[{spec.x_min}, {spec.x_max}] x [{spec.y_min}, {spec.y_max}]"
        )
    col = min(int(np.floor((x - spec.x_min) / spec.cell_size)), spec.cols - 1)
    row = min(int(np.floor((spec.y_max - y) / spec.cell_size)), spec.rows - 1)
    return (row, col)


def grid_to_world(cell: GridCell, spec: GridSpec) -> np.ndarray:
    """World coordinates of the cell center."""
    r, c = cell
    if not spec.in_bounds(cell):
        raise OutOfBoundsError(f"cell {cell} outside {spec.rows}x{spec.cols} grid")
    x = spec.x_min + (c + 0.5) * spec.cell_size
    y = spec.y_max - (r + 0.5) * spec.cell_size
    return np.array([x, y])


def step(cell: GridCell, action: Action, spec: GridSpec) -> GridCell:
    """Deterministic transition; off-grid moves clamp to the current cell."""
    dr, dc = ACTION_DELTAS[int(action)]
    r, c = cell[0] + dr, cell[1] + dc
    if not (0 <= r < spec.rows and 0 <= c < spec.cols):
        return (cell[0], cell[1])
    return (r, c)


@lru_cache(maxsize=8)
def _transitions(rows: int, cols: int) -> np.ndarray:
    """next[a, s] = flat index reached by action a from flat state s."""
    spec = GridSpec(rows=rows, cols=cols)
    nxt = np.empty((N_ACTIONS, rows * cols), dtype=np.int64)
    for a in range(N_ACTIONS):
        for s in range(rows * cols):
            nxt[a, s] = spec.flat(step(spec.unflat(s), Action(a), spec))
    return nxt


def _action_for_delta(dr: int, dc: int) -> Action:
    for a, (adr, adc) in enumerate(ACTION_DELTAS):
        if (adr, adc) == (dr, dc):
            return Action(a)
    raise ValueError(f"({dr}, {dc}) is not a unit transition")


def discretize_trajectory(times, positions, spec: GridSpec) -> GridPath:
    """Snap a timestamped world trajectory to a valid grid path.

    Repeated cells become Stay actions.  A multi-axis cell change between
    consecutive samples is decomposed into unit axis moves, the axis with
    the larger world displacement first (ties go to the horizontal axis).
    """
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    if len(times) != len(positions) or len(times) == 0:
        raise ValueError("need equally many timestamps and positions, at least one")
    if np.any(np.diff(times) <= 0):
        raise ValueError("timestamps must be strictly increasing")

    cells: list[GridCell] = []
    actions: list[Action] = []
    for i, (t, pos) in enumerate(zip(times, positions)):
        try:
            cell = world_to_grid(pos, spec)
        except OutOfBoundsError as e:
            raise OutOfBoundsError(f"sample at t={t:.3f}s: {e}") from e
        if not cells:
            cells.append(cell)
            continue
        prev = cells[-1]
        dr, dc = cell[0] - prev[0], cell[1] - prev[1]
        if dr == 0 and dc == 0:
            cells.append(cell)
            actions.append(Action.STAY)
            continue
        dx = positions[i][0] - positions[i - 1][0]
        dy = positions[i][1] - positions[i - 1][1]
        col_first = abs(dx) >= abs(dy)
        moves: list[tuple[int, int]] = []
        col_moves = [(0, int(np.sign(dc)))] * abs(dc)
        row_moves = [(int(np.sign(dr)), 0)] * abs(dr)
        moves = col_moves + row_moves if col_first else row_moves + col_moves
        for mdr, mdc in moves:
            actions.append(_action_for_delta(mdr, mdc))
            cells.append((cells[-1][0] + mdr, cells[-1][1] + mdc))
    return GridPath(cells=cells, actions=actions)


def soft_value_iteration(reward: np.ndarray, horizon: int, spec: GridSpec | None = None) -> PolicyTable:
    """Finite-horizon maximum-entropy backup over the grid.

    Backward recursion with reward on the arrived-at state:
        Q_k(s, a) = r(step(s, a)) + V_{k-1}(step(s, a)),  V_0 = 0
        V_k(s)    = logsumexp_a Q_k(s, a)
    The returned table stores the per-step policies pi_k(a|s) =
    exp(Q_k - V_k) ordered by forward time (probs[t] has k = horizon - t
    steps remaining), which makes forward occupancy propagation match the
    exact exp(sum r)/Z trajectory distribution.
    """
    reward = np.asarray(reward, dtype=float)
    if reward.ndim != 2:
        raise ValueError("reward must be a 2-D field")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not np.all(np.isfinite(reward)):
        raise ValueError("reward must be finite everywhere")
    rows, cols = reward.shape
    if spec is not None and (rows, cols) != (spec.rows, spec.cols):
        raise ValueError("reward shape does not match grid spec")

    nxt = _transitions(rows, cols)
    r_flat = reward.reshape(-1)
    n = rows * cols
    value = np.zeros(n)
    per_step = np.empty((horizon, n, N_ACTIONS))
    for k in range(1, horizon + 1):
        q = (r_flat + value)[nxt]  # (n_actions, n)
        v_new = _logsumexp0(q)
        per_step[horizon - k] = np.exp(q - v_new).T
        value = v_new
    return PolicyTable(probs=per_step, value=value, horizon=horizon)


def expected_visitations(policy: PolicyTable, start: GridCell, horizon: int,
                         spec: GridSpec | None = None) -> VisitationField:
    """Expected state occupancy over steps t = 0..horizon-1 from one start.

    d_0 = indicator(start); d_{t+1}(s') = sum_{s,a->s'} d_t(s) pi_t(a|s);
    counts = sum_t d_t, so the field carries exactly `horizon` units of mass.
    """
    if horizon != policy.horizon:
        raise ValueError(
            f"horizon {horizon} does not match policy horizon {policy.horizon}"
        )
    n = policy.probs.shape[1]
    rows, cols = _infer_shape(n, spec)
    nxt = _transitions(rows, cols)
    d = np.zeros(n)
    d[start[0] * cols + start[1]] = 1.0
    counts = np.zeros(n)
    for t in range(horizon):
        counts += d
        if t == horizon - 1:
            break
        pi = policy.probs[t]
        d_next = np.zeros(n)
        for a in range(N_ACTIONS):
            d_next += np.bincount(nxt[a], weights=d * pi[:, a], minlength=n)
        d = d_next
    return VisitationField(counts=counts.reshape(rows, cols), horizon=horizon)


def demo_visitations(path_segment: GridPath, horizon: int = 10,
                     spec: GridSpec | None = None) -> VisitationField:
    """Occurrence counts of each cell along a fixed-length reference segment."""
    if len(path_segment.cells) != horizon:
        raise ValueError(
            f"segment has {len(path_segment.cells)} cells, expected {horizon}"
        )
    rows, cols = (spec.rows, spec.cols) if spec is not None else (60, 60)
    counts = np.zeros((rows, cols))
    for r, c in path_segment.cells:
        counts[r, c] += 1.0
    return VisitationField(counts=counts, horizon=horizon)


def greedy_rollout(policy: PolicyTable, start: GridCell, horizon: int,
                   spec: GridSpec | None = None) -> GridPath:
    """Decode the argmax action sequence; ties break by Action order."""
    if horizon > policy.horizon:
        raise ValueError("rollout horizon exceeds policy horizon")
    n = policy.probs.shape[1]
    rows, cols = _infer_shape(n, spec)
    gspec = spec if spec is not None else GridSpec(rows=rows, cols=cols, cell_size=0.1)
    cells = [start]
    actions: list[Action] = []
    for t in range(horizon - 1):
        s = cells[-1][0] * cols + cells[-1][1]
        a = Action(int(np.argmax(policy.probs[t, s])))  # argmax takes first on ties
        actions.append(a)
        cells.append(step(cells[-1], a, gspec))
    return GridPath(cells=cells, actions=actions)


def sample_rollout(policy: PolicyTable, start: GridCell, horizon: int,
                   rng: np.random.Generator, spec: GridSpec | None = None) -> GridPath:
    """Sample a rollout from the per-step policies (seeded)."""
    if horizon > policy.horizon:
        raise ValueError("rollout horizon exceeds policy horizon")
    n = policy.probs.shape[1]
    rows, cols = _infer_shape(n, spec)
    gspec = spec if spec is not None else GridSpec(rows=rows, cols=cols, cell_size=0.1)
    cells = [start]
    actions: list[Action] = []
    for t in range(horizon - 1):
        s = cells[-1][0] * cols + cells[-1][1]
        a = Action(int(rng.choice(N_ACTIONS, p=policy.probs[t, s])))
        actions.append(a)
        cells.append(step(cells[-1], a, gspec))
    return GridPath(cells=cells, actions=actions)


def _infer_shape(n: int, spec: GridSpec | None) -> tuple[int, int]:
    if spec is not None:
        if spec.n_cells != n:
            raise ValueError("policy size does not match grid spec")
        return spec.rows, spec.cols
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise ValueError("cannot infer grid shape for a non-square cell count; pass spec")
    return side, side
