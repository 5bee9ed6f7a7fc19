"""Desk-scale environments: AliasedTwoState, GridMaze and OccludedBall."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .model import EnvModel, POMDPEnv

__all__ = [
    "aliased_two_state",
    "parse_maze",
    "load_maze",
    "gridmaze",
    "occluded_ball",
    "ball_obs_id",
    "make_env",
    "ENV_NAMES",
]

ENV_NAMES = ("aliased_two_state", "gridmaze", "gridmaze3", "occluded_ball")


def _kernel(next_state: np.ndarray, n_states: int) -> sp.csr_matrix:
    """Deterministic kernel from a ``(S, A)`` table of successor states."""
    rows = np.arange(next_state.size)
    data = np.ones(next_state.size)
    return sp.csr_matrix(
        (data, (rows, next_state.ravel())), shape=(next_state.size, n_states)
    )


def aliased_two_state(discount: float = 0.9, horizon: int | None = 100) -> EnvModel:
    """Two hidden states behind one observation.

    Action 0 leads to state A, action 1 to state B; switching state pays +1.
    Every deterministic memoryless policy ends up earning nothing per step,
    while the uniform policy earns 0.5.
    """
    next_state = np.array([[0, 1], [0, 1]])
    reward = np.array([[0.0, 1.0], [1.0, 0.0]])
    return EnvModel(
        transition=_kernel(next_state, 2),
        reward=reward,
        obs_map=np.zeros(2, dtype=int),
        initial_dist=np.full(2, 0.5),
        terminal=np.zeros(2, dtype=bool),
        discount=discount,
        horizon=horizon,
        n_obs=1,
        name="aliased_two_state",
    )


# action order: up, down, left, right
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


def parse_maze(text: str) -> list[str]:
    """Validate an ASCII maze (``#`` wall, ``.`` open, ``G`` goal, ``S`` start)."""
    rows = [line.rstrip("\r") for line in text.strip("\n").split("\n")]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("maze rows must be non-empty and of equal width")
    allowed = set("#.GS")
    for i, row in enumerate(rows):
        extra = set(row) - allowed
        if extra:
            raise ValueError(f"maze row {i} has unknown characters {sorted(extra)}")
    text_all = "".join(rows)
    if text_all.count("G") != 1:
        raise ValueError("maze needs exactly one goal 'G'")
    if text_all.count("S") > 1:
        raise ValueError("maze allows at most one start 'S'")
    return rows


def load_maze(name_or_path: str | Path) -> list[str]:
    path = Path(name_or_path)
    if path.exists():
        return parse_maze(path.read_text(encoding="utf-8"))
    ref = resources.files("armlearn.pomdp") / "mazes" / f"{name_or_path}.txt"
    return parse_maze(ref.read_text(encoding="utf-8"))


def wall_pattern(rows: list[str], r: int, c: int) -> int:
    """4-bit adjacent-wall code: bit i set when move i is blocked."""
    code = 0
    for bit, (dr, dc) in enumerate(_MOVES):
        rr, cc = r + dr, c + dc
        if not (0 <= rr < len(rows) and 0 <= cc < len(rows[0])) or rows[rr][cc] == "#":
            code |= 1 << bit
    return code


def gridmaze(
    maze: str | Path | list[str] = "gridmaze9",
    discount: float = 0.99,
    horizon: int | None = 100,
) -> EnvModel:
    rows = load_maze(maze) if not isinstance(maze, list) else parse_maze("\n".join(maze))
    cells = [
        (r, c) for r, row in enumerate(rows) for c, ch in enumerate(row) if ch != "#"
    ]
    index = {cell: i for i, cell in enumerate(cells)}
    n = len(cells)
    next_state = np.empty((n, 4), dtype=int)
    reward = np.zeros((n, 4))
    terminal = np.zeros(n, dtype=bool)
    start = None
    for i, (r, c) in enumerate(cells):
        ch = rows[r][c]
        terminal[i] = ch == "G"
        if ch == "S":
            start = i
        for a, (dr, dc) in enumerate(_MOVES):
            j = index.get((r + dr, c + dc), i)
            next_state[i, a] = j
            reward[i, a] = 1.0 if rows[cells[j][0]][cells[j][1]] == "G" and j != i else 0.0
    goal = int(np.flatnonzero(terminal)[0])
    # the goal is absorbing and never acts
    next_state[goal] = goal
    reward[goal] = 0.0
    init = np.zeros(n)
    if start is not None:
        init[start] = 1.0
    else:
        init[~terminal] = 1.0 / (n - 1)
    obs_map = np.array([wall_pattern(rows, r, c) for r, c in cells])
    return EnvModel(
        transition=_kernel(next_state, n),
        reward=reward,
        obs_map=obs_map,
        initial_dist=init,
        terminal=terminal,
        discount=discount,
        horizon=horizon,
        n_obs=16,
        name="gridmaze",
    )


BALL_ROWS, BALL_COLS = 12, 9
OCCLUDED_ROWS = range(4, 8)
_HIDDEN_ROW, _HIDDEN_COL = BALL_ROWS, BALL_COLS
_N_ROW_CODES, _N_COL_CODES = BALL_ROWS + 1, BALL_COLS + 1


def ball_obs_id(row_code: int, col_code: int, paddle: int) -> int:
    return (row_code * _N_COL_CODES + col_code) * BALL_COLS + paddle


def _ball_features() -> np.ndarray:
    """Factored one-hot (ball row, ball column, paddle) per observation id."""
    n_obs = _N_ROW_CODES * _N_COL_CODES * BALL_COLS
    table = np.zeros((n_obs, _N_ROW_CODES + _N_COL_CODES + BALL_COLS))
    for rc in range(_N_ROW_CODES):
        for cc in range(_N_COL_CODES):
            for p in range(BALL_COLS):
                i = ball_obs_id(rc, cc, p)
                table[i, rc] = 1.0
                table[i, _N_ROW_CODES + cc] = 1.0
                table[i, _N_ROW_CODES + _N_COL_CODES + p] = 1.0
    return table


def occluded_ball(
    occluded: bool = False, discount: float = 0.99, horizon: int | None = 100
) -> EnvModel:
    """Catch a falling ball with a one-cell paddle on the bottom row.

    Hidden state is (ball row, ball column, drift, paddle column). The ball
    moves one row down and ``drift`` columns sideways per step, flipping its
    drift when it would leave the grid. Landing on the paddle pays +1, missing
    pays -1; both end the episode. With ``occluded`` the ball is reported as
    hidden while it crosses rows 4-7.
    """
    drifts = (-1, 0, 1)
    acting_rows = BALL_ROWS - 1
    n_acting = acting_rows * BALL_COLS * 3 * BALL_COLS
    term = n_acting
    n = n_acting + 1

    def sid(row, col, d_idx, paddle):
        return ((row * BALL_COLS + col) * 3 + d_idx) * BALL_COLS + paddle

    next_state = np.full((n, 3), term, dtype=int)
    reward = np.zeros((n, 3))
    obs_map = np.empty(n, dtype=int)
    for row in range(acting_rows):
        hidden = occluded and row in OCCLUDED_ROWS
        for col in range(BALL_COLS):
            for d_idx, d in enumerate(drifts):
                nc, nd = col + d, d
                if not 0 <= nc < BALL_COLS:
                    nd = -d
                    nc = col + nd
                for paddle in range(BALL_COLS):
                    s = sid(row, col, d_idx, paddle)
                    obs_map[s] = ball_obs_id(
                        _HIDDEN_ROW if hidden else row,
                        _HIDDEN_COL if hidden else col,
                        paddle,
                    )
                    for a in range(3):
                        np_ = min(max(paddle + a - 1, 0), BALL_COLS - 1)
                        if row + 1 == acting_rows:
                            reward[s, a] = 1.0 if nc == np_ else -1.0
                        else:
                            next_state[s, a] = sid(row + 1, nc, drifts.index(nd), np_)
    obs_map[term] = ball_obs_id(acting_rows, _HIDDEN_COL, 0)
    terminal = np.zeros(n, dtype=bool)
    terminal[term] = True
    init = np.zeros(n)
    for col in range(BALL_COLS):
        for d_idx in range(3):
            init[sid(0, col, d_idx, BALL_COLS // 2)] = 1.0 / (3 * BALL_COLS)
    return EnvModel(
        transition=_kernel(next_state, n),
        reward=reward,
        obs_map=obs_map,
        initial_dist=init,
        terminal=terminal,
        discount=discount,
        horizon=horizon,
        n_obs=_N_ROW_CODES * _N_COL_CODES * BALL_COLS,
        name="occluded_ball_occluded" if occluded else "occluded_ball",
    )


def build_model(name: str, **options) -> EnvModel:
    options = {k: v for k, v in options.items() if v is not None}
    if name == "aliased_two_state":
        return aliased_two_state(**options)
    if name == "gridmaze":
        return gridmaze(**options)
    if name == "gridmaze3":
        return gridmaze(maze="gridmaze3", **options)
    if name == "occluded_ball":
        return occluded_ball(**options)
    raise KeyError(f"unknown environment {name!r}; expected one of {ENV_NAMES}")


def make_env(
    name: str,
    occluded: bool | None = None,
    frame_history: int = 1,
    maze: str | None = None,
    discount: float | None = None,
    horizon: int | None = None,
):
    """Build a runnable environment, frame-stacked when ``frame_history > 1``."""
    from .frames import FrameStack

    options = {"discount": discount, "horizon": horizon}
    if occluded is not None:
        if name != "occluded_ball":
            raise ValueError(f"option 'occluded' does not apply to {name!r}")
        options["occluded"] = occluded
    if maze is not None:
        if name != "gridmaze":
            raise ValueError(f"option 'maze' does not apply to {name!r}")
        options["maze"] = maze
    model = build_model(name, **options)
    features = _ball_features() if name == "occluded_ball" else None
    env = POMDPEnv(model, feature_table=features)
    if frame_history > 1:
        return FrameStack(env, frame_history)
    if frame_history < 1:
        raise ValueError("frame_history must be >= 1")
    return env
