"""
AugRL Bench - Environments
Tiny pixel-observation reaching tasks with a tabular oracle, plus the
transition containers and the replay buffer.

Positions live in [0, 1]²; x is the column axis and y the row axis of the
rendered frame. Pixels are rendered in 8-bit space (agent 255, goal 128), so
observations are exact multiples of 1/255 and round-trip through uint8.
"""

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config.settings import (
    AGENT_INTENSITY,
    FRAME_STACK,
    GOAL_INTENSITY,
    NUISANCE_WIDTH,
    ORACLE_ATOMS,
    ORACLE_GRID,
    REACHER_HORIZON,
    REACHER_MARGIN,
    REACHER_SIZE,
    REACHER_STEP,
)
from core.errors import EmptyBufferError, InvalidInputError
from utils.helpers import export_dataframe, frames_to_image, to_uint8, write_pgm
from utils.logger import get_logger

logger = get_logger(__name__)

SQRT2 = float(np.sqrt(2.0))
SPRITE_HALF = 1


# ==================== TRANSITIONS ====================

@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool = False
    # (px, py, gx, gy, steps_to_go) at s; lets oracle-based statistics find Q*
    state: Optional[np.ndarray] = None


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    states: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.reward)

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], dtype=np.float64) -> "Batch":
        if not transitions:
            raise InvalidInputError("cannot build a batch from zero transitions")
        states = None
        if all(t.state is not None for t in transitions):
            states = np.stack([np.asarray(t.state, dtype=np.float64) for t in transitions])
        return cls(
            obs=np.stack([_as_float(t.obs, dtype) for t in transitions]),
            action=np.stack([np.asarray(t.action, dtype=dtype) for t in transitions]),
            reward=np.asarray([t.reward for t in transitions], dtype=dtype),
            next_obs=np.stack([_as_float(t.next_obs, dtype) for t in transitions]),
            done=np.asarray([float(t.done) for t in transitions], dtype=dtype),
            states=states,
        )

    def subset(self, indices) -> "Batch":
        indices = np.asarray(indices)
        return Batch(
            obs=self.obs[indices],
            action=self.action[indices],
            reward=self.reward[indices],
            next_obs=self.next_obs[indices],
            done=self.done[indices],
            states=None if self.states is None else self.states[indices],
        )


def _as_float(obs: np.ndarray, dtype) -> np.ndarray:
    obs = np.asarray(obs)
    if obs.dtype == np.uint8:
        return obs.astype(dtype) / 255.0
    return obs.astype(dtype, copy=False)


# ==================== SPRITE REACHER ====================

class SpriteReacherEnv:
    """
    Move a 3×3 agent sprite onto a 3×3 goal sprite.

    p' = clip(p + step_size·a, 0, 1), r = 1 − ‖p' − g‖₂/√2, episodes end
    after `horizon` steps. Sprite centers map to pixels
    margin + 1 + round(p·(size − 2·margin − 3)), so sprites never enter the
    blank margin.
    """

    name = "sprite_reacher"
    action_dim = 2

    def __init__(
        self,
        size: int = REACHER_SIZE,
        frame_stack: int = FRAME_STACK,
        horizon: int = REACHER_HORIZON,
        step_size: float = REACHER_STEP,
        margin: int = REACHER_MARGIN,
    ):
        if size - 2 * margin < 2 * SPRITE_HALF + 2:
            raise InvalidInputError(f"frame size {size} too small for margin {margin}")
        self.size = size
        self.frame_stack = frame_stack
        self.horizon = horizon
        self.step_size = step_size
        self.margin = margin
        self.position = np.zeros(2)
        self.goal = np.zeros(2)
        self.t = 0
        self.done = True
        self._frames: deque = deque(maxlen=frame_stack)
        self._trace: List[Dict[str, float]] = []
        self._rng: Optional[np.random.Generator] = None

    @property
    def width(self) -> int:
        return self.size

    @property
    def obs_shape(self) -> Tuple[int, int, int]:
        return (self.frame_stack, self.size, self.width)

    @property
    def steps_to_go(self) -> int:
        return self.horizon - self.t

    def pixel(self, coord: float) -> int:
        span = self.size - 2 * self.margin - 2 * SPRITE_HALF - 1
        return self.margin + SPRITE_HALF + int(round(float(coord) * span))

    def _draw(self, frame: np.ndarray, point: np.ndarray, value: int) -> None:
        col, row = self.pixel(point[0]), self.pixel(point[1])
        frame[row - SPRITE_HALF:row + SPRITE_HALF + 1, col - SPRITE_HALF:col + SPRITE_HALF + 1] = value

    def render_frame(self, position: np.ndarray = None, goal: np.ndarray = None) -> np.ndarray:
        """One (size, width) uint8 frame; the agent is drawn over the goal"""
        position = self.position if position is None else np.asarray(position)
        goal = self.goal if goal is None else np.asarray(goal)
        frame = np.zeros((self.size, self.width), dtype=np.uint8)
        self._draw(frame, goal, GOAL_INTENSITY)
        self._draw(frame, position, AGENT_INTENSITY)
        return frame

    def observation(self) -> np.ndarray:
        """Current frame stack, float32 in [0, 1], oldest frame first"""
        return np.stack(list(self._frames)).astype(np.float32) / 255.0

    def state_vector(self) -> np.ndarray:
        return np.array([*self.position, *self.goal, self.steps_to_go], dtype=np.float64)

    def reward(self, position: np.ndarray) -> float:
        return float(1.0 - np.linalg.norm(np.asarray(position) - self.goal) / SQRT2)

    def reset(self, rng: np.random.Generator, position=None, goal=None) -> np.ndarray:
        self._rng = rng
        self.position = rng.random(2) if position is None else np.clip(np.asarray(position, dtype=np.float64), 0, 1)
        self.goal = rng.random(2) if goal is None else np.clip(np.asarray(goal, dtype=np.float64), 0, 1)
        self.t = 0
        self.done = False
        self._trace = []
        frame = self.render_frame()
        for _ in range(self.frame_stack):
            self._frames.append(frame)
        return self.observation()

    def step(self, action) -> Tuple[np.ndarray, float, bool]:
        if self.done:
            raise InvalidInputError("step() called on a finished episode; call reset() first")
        action = np.asarray(action, dtype=np.float64).reshape(self.action_dim)
        if np.any(np.abs(action) > 1.0):
            logger.warning(f"Action {action.tolist()} outside [-1, 1]^2, clamping")
            action = np.clip(action, -1.0, 1.0)

        self.position = np.clip(self.position + self.step_size * action, 0.0, 1.0)
        reward = self.reward(self.position)
        self.t += 1
        self.done = self.t >= self.horizon
        self._frames.append(self.render_frame())
        self._trace.append({
            "t": self.t - 1,
            "px": float(self.position[0]),
            "py": float(self.position[1]),
            "ax": float(action[0]),
            "ay": float(action[1]),
            "r": reward,
        })
        return self.observation(), reward, self.done

    def trace(self) -> pd.DataFrame:
        """Episode trace (t, p, a, r); p is the position after the action"""
        return pd.DataFrame(self._trace, columns=["t", "px", "py", "ax", "ay", "r"])

    def export_trace(self, path: Union[str, Path]) -> bytes:
        return export_dataframe(self.trace(), path)

    def save_frames(self, path: Union[str, Path]) -> Path:
        """Write the current frame stack, tiled left to right, as PGM"""
        return write_pgm(path, frames_to_image(self.observation()))


class NuisanceChannelEnv(SpriteReacherEnv):
    """
    SpriteReacher with a strip of random pixels appended on the right.
    Reward and dynamics depend only on the payload (left size×size block).
    """

    name = "nuisance_channel"

    def __init__(self, nuisance_width: int = NUISANCE_WIDTH, **kwargs):
        super().__init__(**kwargs)
        self.nuisance_width = nuisance_width

    @property
    def width(self) -> int:
        return self.size + self.nuisance_width

    @property
    def nuisance_region(self) -> Tuple[int, int, int, int]:
        return (0, self.size, self.size, self.width)

    @property
    def payload_region(self) -> Tuple[int, int, int, int]:
        return (0, self.size, 0, self.size)

    def render_frame(self, position: np.ndarray = None, goal: np.ndarray = None) -> np.ndarray:
        frame = super().render_frame(position, goal)
        if self._rng is not None:
            frame[:, self.size:] = self._rng.integers(
                0, 256, size=(self.size, self.nuisance_width), dtype=np.uint8
            )
        return frame


def make_env(name: str, **kwargs) -> SpriteReacherEnv:
    if name == "sprite_reacher":
        kwargs.pop("nuisance_width", None)
        return SpriteReacherEnv(**kwargs)
    if name == "nuisance_channel":
        return NuisanceChannelEnv(**kwargs)
    raise InvalidInputError(f"unknown environment {name!r}")


# ==================== ORACLE ====================

@dataclass
class OracleQ:
    """
    Finite-horizon Q* on a (grid × grid) lattice of agent positions for one
    snapped goal. q[h − 1] holds the values with h steps to go.
    """
    q: np.ndarray
    values: np.ndarray
    gamma: float
    goal: np.ndarray
    atoms: np.ndarray
    temperature: Optional[float] = None
    cells_per_step: int = 0

    @property
    def grid(self) -> int:
        return self.q.shape[1]

    @property
    def horizon(self) -> int:
        return self.q.shape[0]

    def index(self, position) -> Tuple[int, int]:
        cells = np.rint(np.clip(np.asarray(position, dtype=np.float64), 0, 1) * (self.grid - 1)).astype(int)
        return int(cells[0]), int(cells[1])

    def _level(self, steps_to_go: int) -> int:
        if not 1 <= steps_to_go <= self.horizon:
            raise InvalidInputError(f"steps_to_go must lie in [1, {self.horizon}], got {steps_to_go}")
        return steps_to_go - 1

    def q_at(self, position, steps_to_go: int) -> np.ndarray:
        i, j = self.index(position)
        return self.q[self._level(steps_to_go), i, j]

    def value(self, position, steps_to_go: int) -> float:
        if steps_to_go == 0:
            return 0.0
        i, j = self.index(position)
        return float(self.values[steps_to_go, i, j])

    def policy(self, steps_to_go: int) -> np.ndarray:
        """π(a|s) over the atoms for every lattice state, shape (grid, grid, n_atoms)"""
        return _action_probs(self.q[self._level(steps_to_go)], self.temperature)

    def policy_table(self) -> np.ndarray:
        """π(a|s) for every level and lattice state, shaped like q"""
        return _action_probs(self.q, self.temperature)

    def next_index(self, i, j, atom) -> Tuple[np.ndarray, np.ndarray]:
        """Lattice successor of cell (i, j) under atom index `atom`; vectorized"""
        step = np.rint(self.atoms[atom] * self.cells_per_step).astype(int)
        last = self.grid - 1
        return np.clip(i + step[..., 0], 0, last), np.clip(j + step[..., 1], 0, last)

    def greedy_action(self, position, steps_to_go: int) -> np.ndarray:
        return self.atoms[int(np.argmax(self.q_at(position, steps_to_go)))]


def _action_probs(q: np.ndarray, temperature: Optional[float]) -> np.ndarray:
    if temperature is None or temperature <= 0:
        probs = np.zeros_like(q)
        np.put_along_axis(probs, np.argmax(q, axis=-1)[..., None], 1.0, axis=-1)
        return probs
    logits = (q - q.max(axis=-1, keepdims=True)) / temperature
    weights = np.exp(logits)
    return weights / weights.sum(axis=-1, keepdims=True)


def oracle_q(
    env: SpriteReacherEnv,
    gamma: float,
    grid: int = ORACLE_GRID,
    atoms: Sequence[float] = ORACLE_ATOMS,
    horizon: Optional[int] = None,
    temperature: Optional[float] = None,
) -> OracleQ:
    """
    Backward dynamic programming over positions × action atoms for the env's
    current goal (snapped to the lattice).

    Without a temperature V_h = max_a Q_h (Q*). With one, V_h is the
    expectation under the Boltzmann policy ∝ exp(Q_h / temperature), i.e.
    the table evaluates that fixed policy.
    """
    horizon = env.horizon if horizon is None else horizon
    if not 0.0 <= gamma < 1.0:
        raise InvalidInputError(f"gamma must lie in [0, 1), got {gamma}")
    cells_per_step = env.step_size * (grid - 1)
    if abs(cells_per_step - round(cells_per_step)) > 1e-9:
        raise InvalidInputError(
            f"step size {env.step_size} is not a whole number of lattice cells for grid {grid}"
        )
    cells_per_step = int(round(cells_per_step))

    atom_values = np.asarray(atoms, dtype=np.float64)
    atom_grid = np.array([(ax, ay) for ax in atom_values for ay in atom_values])
    coords = np.linspace(0.0, 1.0, grid)
    goal = np.rint(env.goal * (grid - 1)) / (grid - 1)

    index = np.arange(grid)
    # next lattice index per (index, atom component)
    next_x = np.clip(index[:, None] + np.rint(atom_grid[:, 0] * cells_per_step).astype(int)[None, :], 0, grid - 1)
    next_y = np.clip(index[:, None] + np.rint(atom_grid[:, 1] * cells_per_step).astype(int)[None, :], 0, grid - 1)
    nx = np.broadcast_to(next_x[:, None, :], (grid, grid, len(atom_grid)))
    ny = np.broadcast_to(next_y[None, :, :], (grid, grid, len(atom_grid)))
    reward = 1.0 - np.hypot(coords[nx] - goal[0], coords[ny] - goal[1]) / SQRT2

    q = np.zeros((horizon, grid, grid, len(atom_grid)))
    values = np.zeros((horizon + 1, grid, grid))
    for h in range(1, horizon + 1):
        q_h = reward + gamma * values[h - 1][nx, ny]
        q[h - 1] = q_h
        values[h] = (q_h * _action_probs(q_h, temperature)).sum(axis=-1)

    logger.debug(f"Oracle Q: horizon {horizon}, grid {grid}, goal {goal.tolist()}, gamma {gamma}")
    return OracleQ(q=q, values=values, gamma=gamma, goal=goal, atoms=atom_grid,
                   temperature=temperature, cells_per_step=cells_per_step)


def oracle_rollout(env: SpriteReacherEnv, oracle: OracleQ) -> float:
    """Discounted return of the greedy oracle policy from the env's current state"""
    total, discount = 0.0, 1.0
    while not env.done:
        action = oracle.greedy_action(env.position, env.steps_to_go)
        _, reward, _ = env.step(action)
        total += discount * reward
        discount *= oracle.gamma
    return total


def oracle_return(env: SpriteReacherEnv, rng: np.random.Generator, gamma: float) -> float:
    """Undiscounted episode return of the oracle policy from a fresh reset"""
    env.reset(rng)
    oracle = oracle_q(env, gamma)
    total = 0.0
    while not env.done:
        _, reward, _ = env.step(oracle.greedy_action(env.position, env.steps_to_go))
        total += reward
    return total


# ==================== REPLAY BUFFER ====================

class ReplayBuffer:
    """Ring buffer of transitions; observations stored as uint8"""

    def __init__(self, capacity: int, obs_shape: Tuple[int, ...], action_dim: int):
        if capacity < 1:
            raise InvalidInputError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.obs = np.zeros((capacity, *obs_shape), dtype=np.uint8)
        self.next_obs = np.zeros((capacity, *obs_shape), dtype=np.uint8)
        self.action = np.zeros((capacity, action_dim), dtype=np.float32)
        self.reward = np.zeros(capacity, dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self.states = np.zeros((capacity, 5), dtype=np.float64)
        self._has_states = True
        self.pos = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, transition: Transition) -> None:
        i = self.pos
        self.obs[i] = to_uint8(transition.obs)
        self.next_obs[i] = to_uint8(transition.next_obs)
        self.action[i] = transition.action
        self.reward[i] = transition.reward
        self.done[i] = float(transition.done)
        if transition.state is None:
            self._has_states = False
        else:
            self.states[i] = transition.state
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator, dtype=np.float32) -> Batch:
        """n transitions uniformly with replacement from the filled slots"""
        if self.size == 0:
            raise EmptyBufferError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.size, size=n)
        return Batch(
            obs=self.obs[idx].astype(dtype) / 255.0,
            action=self.action[idx].astype(dtype),
            reward=self.reward[idx].astype(dtype),
            next_obs=self.next_obs[idx].astype(dtype) / 255.0,
            done=self.done[idx].astype(dtype),
            states=self.states[idx].copy() if self._has_states else None,
        )


def buffer_push(buffer: ReplayBuffer, transition: Transition) -> ReplayBuffer:
    buffer.push(transition)
    return buffer


def buffer_sample(buffer: ReplayBuffer, n: int, rng: np.random.Generator) -> Batch:
    return buffer.sample(n, rng)
