"""Deterministic kinematic manipulation simulator.

A desk-scale stand-in for a tabletop robot cell: a point gripper with a
4-dimensional action (dx, dy, dz, grip) moves inside a 60x60x30 cm workspace
at 2.5 cm per control tick, grasps free objects within 3 cm, and operates a
few articulated elements (drawer, door, button). Physics is kinematic on
purpose: releases settle instantly onto the table, there is no friction or
contact resolution beyond the workspace clamp and one static obstacle box.
Every transition is a pure function of (task, state, action), so episodes
replay bit-identically from (task, seed, action list).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError

# Workspace geometry (meters). The table surface is the z = 0 plane.
WORKSPACE_LO = np.array([-0.30, -0.30, 0.00])
WORKSPACE_HI = np.array([0.30, 0.30, 0.30])
MAX_STEP = 0.025          # end-effector travel per control tick (20 Hz analog)
GRASP_RADIUS = 0.03
SUCCESS_RADIUS = 0.05
HORIZON = 50
MAX_OBJECTS = 8
GRIPPER_HOME = np.array([0.0, 0.0, 0.10])
SPAWN_LO = np.array([-0.12, -0.12, 0.0])
SPAWN_HI = np.array([0.12, 0.12, 0.0])

# Static obstacle for pick_place_obstacle: a low wall across the middle.
OBSTACLE_LO = np.array([-0.06, 0.04, 0.00])
OBSTACLE_HI = np.array([0.06, 0.10, 0.12])

# Articulated elements. The drawer handle slides along -y as it opens; the
# door handle swings on a horizontal arc around a hinge; the button latches
# once the gripper enters a small sphere around it.
DRAWER_HANDLE_REST = np.array([0.15, 0.20, 0.05])
DRAWER_AXIS = np.array([0.0, -1.0, 0.0])
DRAWER_RANGE = (0.0, 0.18)
DOOR_HINGE = np.array([-0.20, 0.20, 0.08])
DOOR_RADIUS = 0.15
DOOR_RANGE = (0.0, math.pi / 2)
BUTTON_POS = np.array([0.10, 0.15, 0.04])
BUTTON_RADIUS = 0.03

ACTION_DIM = 4
ROBOT_BLOCK_DIM = 7   # gripper pos (3) + vel (3) + aperture (1)
OBJECT_BLOCK_DIM = 6  # pos (3) + vel (3)


class TaskId(str, Enum):
    PICK_PLACE = "pick_place"
    PICK_PLACE_OBSTACLE = "pick_place_obstacle"
    PUSH = "push"
    DRAWER_OPEN = "drawer_open"
    DRAWER_CLOSE = "drawer_close"
    DOOR_OPEN = "door_open"
    DOOR_CLOSE = "door_close"
    BUTTON_PRESS = "button_press"


ARTICULATED_TASKS = (
    TaskId.DRAWER_OPEN,
    TaskId.DRAWER_CLOSE,
    TaskId.DOOR_OPEN,
    TaskId.DOOR_CLOSE,
    TaskId.BUTTON_PRESS,
)

# goal-space boxes per task: (lo, hi, success radius). Object tasks live in
# 3-D position space; articulated tasks in 1-D joint space.
_GOAL_SPACES = {
    TaskId.PICK_PLACE: (np.array([-0.20, -0.20, 0.00]), np.array([0.20, 0.20, 0.20]), SUCCESS_RADIUS),
    TaskId.PICK_PLACE_OBSTACLE: (np.array([-0.20, -0.20, 0.00]), np.array([0.20, 0.20, 0.20]), SUCCESS_RADIUS),
    TaskId.PUSH: (np.array([-0.20, -0.20, 0.00]), np.array([0.20, 0.20, 0.00]), SUCCESS_RADIUS),
    TaskId.DRAWER_OPEN: (np.array([0.10]), np.array([0.18]), 0.03),
    TaskId.DRAWER_CLOSE: (np.array([0.00]), np.array([0.04]), 0.03),
    TaskId.DOOR_OPEN: (np.array([0.90]), np.array([1.50]), 0.15),
    TaskId.DOOR_CLOSE: (np.array([0.00]), np.array([0.30]), 0.15),
    TaskId.BUTTON_PRESS: (np.array([1.0]), np.array([1.0]), 0.5),
}

# initial joint values
_ARTICULATION_START = {
    TaskId.DRAWER_OPEN: 0.0,
    TaskId.DRAWER_CLOSE: 0.15,
    TaskId.DOOR_OPEN: 0.0,
    TaskId.DOOR_CLOSE: 1.2,
    TaskId.BUTTON_PRESS: 0.0,
}


@dataclass(frozen=True)
class TaskSpec:
    """Static description of one task variant."""

    task_id: TaskId
    n_objects: int = 1
    max_objects: int = MAX_OBJECTS
    goal_lo: np.ndarray = None
    goal_hi: np.ndarray = None
    success_radius: float = None
    horizon: int = HORIZON

    def __post_init__(self):
        task_id = TaskId(self.task_id)
        object.__setattr__(self, "task_id", task_id)
        if not 1 <= self.n_objects <= self.max_objects:
            raise ConfigError(
                f"n_objects={self.n_objects} outside 1..{self.max_objects}"
            )
        if task_id in ARTICULATED_TASKS and self.n_objects != 1:
            raise ConfigError(f"{task_id.value} supports a single element only")
        lo, hi, radius = _GOAL_SPACES[task_id]
        if self.goal_lo is None:
            object.__setattr__(self, "goal_lo", lo.copy())
        if self.goal_hi is None:
            object.__setattr__(self, "goal_hi", hi.copy())
        if self.success_radius is None:
            object.__setattr__(self, "success_radius", radius)
        if self.success_radius <= 0:
            raise ConfigError("success_radius must be positive")

    @property
    def articulated(self) -> bool:
        return self.task_id in ARTICULATED_TASKS

    @property
    def goal_dim(self) -> int:
        return len(self.goal_lo)


@dataclass
class ObjectState:
    pos: np.ndarray
    vel: np.ndarray
    held: bool = False


@dataclass
class WorldState:
    """Full simulator state. Mutating a copy never affects the original."""

    gripper_pos: np.ndarray
    gripper_vel: np.ndarray
    aperture: float
    objects: list
    articulations: dict = field(default_factory=dict)
    handle_attached: bool = False
    step_count: int = 0

    def copy(self) -> "WorldState":
        return WorldState(
            gripper_pos=self.gripper_pos.copy(),
            gripper_vel=self.gripper_vel.copy(),
            aperture=self.aperture,
            objects=[ObjectState(o.pos.copy(), o.vel.copy(), o.held) for o in self.objects],
            articulations=dict(self.articulations),
            handle_attached=self.handle_attached,
            step_count=self.step_count,
        )


@dataclass
class Observation:
    """Flat observation blocks with a layout manifest.

    robot_block: (7,) gripper pos, vel, aperture
    object_blocks: (n_objects, 6) per-object pos, vel
    indicator_blocks: (n_objects, max_objects) one-hot object identity
    """

    robot_block: np.ndarray
    object_blocks: np.ndarray
    indicator_blocks: np.ndarray
    layout_manifest: dict

    def flat(self) -> np.ndarray:
        """Robot block followed by the object blocks, without indicators."""
        return np.concatenate([self.robot_block, self.object_blocks.reshape(-1)])


def _handle_pos(task: TaskSpec, articulations: dict) -> np.ndarray:
    task_id = task.task_id
    if task_id in (TaskId.DRAWER_OPEN, TaskId.DRAWER_CLOSE):
        return DRAWER_HANDLE_REST + articulations["drawer"] * DRAWER_AXIS
    if task_id in (TaskId.DOOR_OPEN, TaskId.DOOR_CLOSE):
        theta = articulations["door"]
        return DOOR_HINGE + DOOR_RADIUS * np.array([math.cos(theta), -math.sin(theta), 0.0])
    if task_id is TaskId.BUTTON_PRESS:
        return BUTTON_POS.copy()
    raise ValueError(f"{task_id} has no handle")


def _inside_box(p: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> bool:
    return bool(np.all(p >= lo) and np.all(p <= hi))


def _project_out_of_obstacle(p: np.ndarray) -> np.ndarray:
    """Push a point out of the obstacle through its nearest face."""
    if not _inside_box(p, OBSTACLE_LO, OBSTACLE_HI):
        return p
    out = p.copy()
    gaps = np.concatenate([p - OBSTACLE_LO, OBSTACLE_HI - p])
    k = int(np.argmin(gaps))
    if k < 3:
        out[k] = OBSTACLE_LO[k]
    else:
        out[k - 3] = OBSTACLE_HI[k - 3]
    return out


def observe(task: TaskSpec, state: WorldState) -> Observation:
    robot = np.concatenate([state.gripper_pos, state.gripper_vel, [state.aperture]])
    if task.articulated:
        handle = _handle_pos(task, state.articulations)
        vel = state.articulations.get("_handle_vel", np.zeros(3))
        blocks = np.concatenate([handle, vel])[None, :]
    else:
        blocks = np.stack([np.concatenate([o.pos, o.vel]) for o in state.objects])
    n = blocks.shape[0]
    indicators = np.eye(task.max_objects, dtype=np.float64)[:n]
    manifest = {
        "robot_block": (0, ROBOT_BLOCK_DIM),
        "object_block_dim": OBJECT_BLOCK_DIM,
        "indicator_dim": task.max_objects,
        "n_objects": n,
    }
    return Observation(robot, blocks, indicators, manifest)


def reset(task: TaskSpec, seed: int) -> tuple[WorldState, Observation]:
    """Start an episode: gripper at home, objects spawned from the seed stream."""
    rng = np.random.default_rng(seed)
    objects = []
    if not task.articulated:
        for _ in range(task.n_objects):
            pos = rng.uniform(SPAWN_LO, SPAWN_HI)
            if task.task_id is TaskId.PICK_PLACE_OBSTACLE:
                while _inside_box(pos, OBSTACLE_LO, OBSTACLE_HI):
                    pos = rng.uniform(SPAWN_LO, SPAWN_HI)
            objects.append(ObjectState(pos=pos, vel=np.zeros(3)))
    articulations = {}
    if task.articulated:
        key = "button" if task.task_id is TaskId.BUTTON_PRESS else (
            "drawer" if task.task_id in (TaskId.DRAWER_OPEN, TaskId.DRAWER_CLOSE) else "door"
        )
        articulations[key] = _ARTICULATION_START[task.task_id]
        articulations["_handle_vel"] = np.zeros(3)
    state = WorldState(
        gripper_pos=GRIPPER_HOME.copy(),
        gripper_vel=np.zeros(3),
        aperture=1.0,
        objects=objects,
        articulations=articulations,
    )
    return state, observe(task, state)


def _move_gripper(task: TaskSpec, pos: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Per-axis move with workspace clamp; the obstacle rejects axis moves."""
    new = pos.copy()
    for axis in range(3):
        candidate = new.copy()
        candidate[axis] = np.clip(new[axis] + delta[axis], WORKSPACE_LO[axis], WORKSPACE_HI[axis])
        if task.task_id is TaskId.PICK_PLACE_OBSTACLE and _inside_box(candidate, OBSTACLE_LO, OBSTACLE_HI):
            continue
        new = candidate
    return new


def step(task: TaskSpec, state: WorldState, action: np.ndarray) -> tuple[WorldState, Observation]:
    """Advance one control tick. Pure: the input state is never mutated."""
    action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    if action.shape != (ACTION_DIM,):
        raise ValueError(f"action must have shape ({ACTION_DIM},), got {action.shape}")
    grip = action[3]
    if task.task_id is TaskId.PUSH:
        grip = -1.0  # gripper stays closed, grasping disabled

    nxt = state.copy()
    old_pos = state.gripper_pos
    nxt.gripper_pos = _move_gripper(task, old_pos, action[:3] * MAX_STEP)
    nxt.gripper_vel = nxt.gripper_pos - old_pos
    if grip < 0:
        nxt.aperture = 0.0
    elif grip > 0:
        nxt.aperture = 1.0

    for obj in nxt.objects:
        obj.vel = np.zeros(3)

    # release before grasp so one tick cannot both drop and re-grab
    if grip > 0:
        for obj in nxt.objects:
            if obj.held:
                obj.held = False
                settled = obj.pos.copy()
                settled[2] = 0.0
                if task.task_id is TaskId.PICK_PLACE_OBSTACLE:
                    settled = _project_out_of_obstacle(settled)
                obj.vel = settled - obj.pos
                obj.pos = settled
        nxt.handle_attached = False

    if grip < 0 and task.task_id is not TaskId.PUSH:
        if task.articulated:
            if not nxt.handle_attached and task.task_id is not TaskId.BUTTON_PRESS:
                handle = _handle_pos(task, nxt.articulations)
                if np.linalg.norm(nxt.gripper_pos - handle) <= GRASP_RADIUS:
                    nxt.handle_attached = True
        elif not any(o.held for o in nxt.objects):
            dists = [np.linalg.norm(nxt.gripper_pos - o.pos) for o in nxt.objects]
            i = int(np.argmin(dists))
            if dists[i] <= GRASP_RADIUS:
                nxt.objects[i].held = True

    for obj in nxt.objects:
        if obj.held:
            obj.vel = nxt.gripper_pos - obj.pos
            obj.pos = nxt.gripper_pos.copy()

    # sticky push contact: a closed gripper drags nearby objects across the table
    if task.task_id is TaskId.PUSH:
        for obj in nxt.objects:
            if np.linalg.norm(nxt.gripper_pos - obj.pos) <= GRASP_RADIUS:
                moved = obj.pos.copy()
                moved[:2] = np.clip(obj.pos[:2] + nxt.gripper_vel[:2], WORKSPACE_LO[:2], WORKSPACE_HI[:2])
                obj.vel = moved - obj.pos
                obj.pos = moved

    if task.articulated:
        old_handle = _handle_pos(task, state.articulations)
        if nxt.handle_attached:
            delta = nxt.gripper_vel
            if task.task_id in (TaskId.DRAWER_OPEN, TaskId.DRAWER_CLOSE):
                ext = nxt.articulations["drawer"] + float(delta @ DRAWER_AXIS)
                nxt.articulations["drawer"] = float(np.clip(ext, *DRAWER_RANGE))
            else:
                theta = nxt.articulations["door"]
                tangent = np.array([-math.sin(theta), -math.cos(theta), 0.0])
                theta += float(delta @ tangent) / DOOR_RADIUS
                nxt.articulations["door"] = float(np.clip(theta, *DOOR_RANGE))
        if task.task_id is TaskId.BUTTON_PRESS:
            if np.linalg.norm(nxt.gripper_pos - BUTTON_POS) <= BUTTON_RADIUS:
                nxt.articulations["button"] = 1.0  # latches
        nxt.articulations["_handle_vel"] = _handle_pos(task, nxt.articulations) - old_handle

    nxt.step_count = state.step_count + 1
    return nxt, observe(task, nxt)


def achieved_goal(task: TaskSpec, state: WorldState, w: np.ndarray | None = None) -> np.ndarray:
    """Goal-space projection of the intended element.

    Object tasks return the w-indexed object position (w ignored with a
    single object); articulated tasks return the joint value.
    """
    if task.articulated:
        key = "button" if task.task_id is TaskId.BUTTON_PRESS else (
            "drawer" if task.task_id in (TaskId.DRAWER_OPEN, TaskId.DRAWER_CLOSE) else "door"
        )
        return np.array([state.articulations[key]])
    idx = 0
    if task.n_objects > 1:
        if w is None:
            raise IndexError("multi-object task requires an intention vector")
        idx = int(np.argmax(w))
        if idx >= task.n_objects:
            raise IndexError(f"intention index {idx} >= n_objects {task.n_objects}")
    return state.objects[idx].pos.copy()


def sparse_reward(achieved: np.ndarray, desired: np.ndarray, radius: float) -> float:
    """1.0 iff the achieved point is within the radius of the desired one."""
    achieved = np.asarray(achieved, dtype=np.float64)
    desired = np.asarray(desired, dtype=np.float64)
    if achieved.shape != desired.shape:
        raise ValueError(f"goal shape mismatch: {achieved.shape} vs {desired.shape}")
    return 1.0 if np.linalg.norm(achieved - desired) <= radius else 0.0


def sample_goal(task: TaskSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(task.goal_lo, task.goal_hi)


def intended_index(task: TaskSpec, w: np.ndarray | None) -> int:
    if task.n_objects > 1 and w is not None:
        return int(np.argmax(w))
    return 0


class ManipEnv:
    """Stateful convenience wrapper over the pure transition functions."""

    def __init__(self, task: TaskSpec):
        self.task = task
        self.state: WorldState | None = None

    def reset(self, seed: int) -> Observation:
        self.state, obs = reset(self.task, seed)
        return obs

    def step(self, action: np.ndarray) -> Observation:
        self.state, obs = step(self.task, self.state, action)
        return obs

    def achieved(self, w: np.ndarray | None = None) -> np.ndarray:
        return achieved_goal(self.task, self.state, w)

    @property
    def done(self) -> bool:
        return self.state.step_count >= self.task.horizon
