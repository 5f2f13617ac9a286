"""A small crafting grid world with the ObtainDiamond milestone chain.

Resources sit on a square grid; the agent walks and tries one crafting or
gathering act per step. Every milestone needs the previous one in the chain,
the four gathering acts also need the agent to stand on the matching tile,
and each milestone pays its reward once per episode. Collecting the final
milestone (diamond) ends the episode.

Actions are ``(move, act)`` pairs; observations are 28 reals: 16 local
features in ``[-1, 1]`` followed by 12 inventory counts clamped to
``[0, 8]``. A :class:`DomainRandomization` permutes act indices and
inventory slots and rotates the feature vector without touching dynamics.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EpisodeFinished, FormatError, InvalidPoint, TrajectoryFormatError, UnsupportedVersion
from .spaces import MixedSpace, SpacePoint

CONFIG_FORMAT_VERSION = 1

CANONICAL_MILESTONES = (
    ("log", 1),
    ("planks", 2),
    ("stick", 4),
    ("crafting_table", 4),
    ("wooden_pickaxe", 8),
    ("stone", 16),
    ("furnace", 32),
    ("stone_pickaxe", 32),
    ("iron_ore", 64),
    ("iron_ingot", 128),
    ("iron_pickaxe", 256),
    ("diamond", 1024),
)

MOVES = ("stay", "north", "south", "east", "west")
_MOVE_DELTA = ((0, 0), (-1, 0), (1, 0), (0, 1), (0, -1))

ACTS = (
    "noop",
    "gather_log",
    "craft_planks",
    "craft_stick",
    "craft_table",
    "craft_wooden_pickaxe",
    "mine_stone",
    "craft_furnace",
    "craft_stone_pickaxe",
    "mine_iron",
    "smelt_iron",
    "craft_iron_pickaxe",
    "mine_diamond",
)

EMPTY, WOOD, STONE, IRON, DIAMOND, WALL = range(6)
TILE_NAMES = ("empty", "wood", "stone", "iron", "diamond")
# act index -> tile the agent must stand on
RESOURCE_ACTS = {1: WOOD, 6: STONE, 9: IRON, 12: DIAMOND}

N_FEATURES = 16
N_ITEMS = 12
INVENTORY_CAP = 8

OBSERVATION_SPACE = MixedSpace(continuous=((-1.0, 1.0),) * N_FEATURES + ((0.0, float(INVENTORY_CAP)),) * N_ITEMS)
ACTION_SPACE = MixedSpace(discrete=(len(MOVES), len(ACTS)))


@dataclass(frozen=True)
class MilestoneTable:
    names: tuple[str, ...]
    rewards: tuple[float, ...]
    prerequisites: tuple[int | None, ...]

    def __post_init__(self):
        if not (len(self.names) == len(self.rewards) == len(self.prerequisites)) or not self.names:
            raise ValueError("milestone table columns must be non-empty and of equal length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("milestone names must be unique")
        for i, (r, pre) in enumerate(zip(self.rewards, self.prerequisites)):
            if not r > 0:
                raise ValueError(f"milestone {self.names[i]!r} has non-positive reward {r}")
            if pre is not None and not 0 <= pre < i:
                raise ValueError(f"milestone {self.names[i]!r} has prerequisite {pre} that does not precede it")

    @classmethod
    def canonical(cls) -> "MilestoneTable":
        names = tuple(n for n, _ in CANONICAL_MILESTONES)
        rewards = tuple(r for _, r in CANONICAL_MILESTONES)
        return cls(names, rewards, (None,) + tuple(range(len(names) - 1)))

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def total(self) -> float:
        return sum(self.rewards)


@dataclass(frozen=True, eq=False)
class DomainRandomization:
    """Seeded relabelling of acts, inventory slots and feature axes.

    ``act_permutation[i]`` is the true act performed when index ``i`` is
    submitted. Observed inventory slot ``j`` shows true item
    ``inventory_permutation[j]``. Observed features are ``remap @ features``.
    Seed 0 is reserved for the identity.
    """

    seed: int = 0
    act_permutation: tuple[int, ...] = tuple(range(len(ACTS)))
    inventory_permutation: tuple[int, ...] = tuple(range(N_ITEMS))
    remap: np.ndarray = field(default_factory=lambda: np.eye(N_FEATURES))

    @classmethod
    def from_seed(cls, seed: int) -> "DomainRandomization":
        if seed == 0:
            return cls()
        rng = np.random.default_rng([seed, 2])
        acts = tuple(int(i) for i in rng.permutation(len(ACTS)))
        items = tuple(int(i) for i in rng.permutation(N_ITEMS))
        q, r = np.linalg.qr(rng.standard_normal((N_FEATURES, N_FEATURES)))
        q = q * np.sign(np.diag(r))
        return cls(seed, acts, items, q)

    @property
    def is_identity(self) -> bool:
        return self.seed == 0

    def submitted_act(self, true_act: int) -> int:
        """Index to submit so the environment performs ``true_act``."""
        return self.act_permutation.index(true_act)

    def __eq__(self, other):
        return isinstance(other, DomainRandomization) and self.seed == other.seed

    def __hash__(self):
        return hash(self.seed)


@dataclass(frozen=True)
class WorldConfig:
    grid_size: int = 8
    placement_seed: int = 0
    max_episode_steps: int = 500
    table: MilestoneTable = field(default_factory=MilestoneTable.canonical)
    randomization: DomainRandomization = field(default_factory=DomainRandomization)
    # wood, stone, iron, diamond tiles
    resource_counts: tuple[int, int, int, int] = (4, 4, 2, 1)

    def __post_init__(self):
        if self.grid_size < 4:
            raise ValueError("grid_size must be >= 4")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")
        if len(self.table) != len(ACTS) - 1:
            raise ValueError(f"milestone table must have {len(ACTS) - 1} rows, one per act")
        if len(self.resource_counts) != 4 or sum(self.resource_counts) > self.grid_size ** 2:
            raise ValueError("resource counts do not fit on the grid")

    def to_document(self) -> dict:
        return {
            "version": CONFIG_FORMAT_VERSION,
            "grid_size": self.grid_size,
            "placement_seed": self.placement_seed,
            "max_episode_steps": self.max_episode_steps,
            "round2_seed": self.randomization.seed,
            "resource_counts": list(self.resource_counts),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "WorldConfig":
        if not isinstance(doc, dict) or "version" not in doc:
            raise FormatError("config document lacks a version tag")
        if doc["version"] != CONFIG_FORMAT_VERSION:
            raise UnsupportedVersion(f"config document version {doc['version']!r}")
        try:
            return cls(
                grid_size=int(doc["grid_size"]),
                placement_seed=int(doc["placement_seed"]),
                max_episode_steps=int(doc["max_episode_steps"]),
                randomization=DomainRandomization.from_seed(int(doc.get("round2_seed", 0))),
                resource_counts=tuple(int(c) for c in doc.get("resource_counts", (4, 4, 2, 1))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed config document: {exc}") from exc


def save_config(config: WorldConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_document(), indent=1) + "\n")


def load_config(path) -> WorldConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return WorldConfig.from_document(doc)


def randomize_domain(config: WorldConfig, round2_seed: int) -> WorldConfig:
    return replace(config, randomization=DomainRandomization.from_seed(round2_seed))


@dataclass(frozen=True)
class RawAction:
    move: int = 0
    act: int = 0

    def __post_init__(self):
        if not 0 <= self.move < len(MOVES) or not 0 <= self.act < len(ACTS):
            raise InvalidPoint(f"invalid raw action ({self.move}, {self.act})")

    def to_point(self) -> SpacePoint:
        return SpacePoint((), (self.move, self.act))

    @classmethod
    def coerce(cls, action) -> "RawAction":
        if isinstance(action, RawAction):
            return action
        if isinstance(action, SpacePoint):
            return cls(*action.discrete)
        move, act = np.asarray(action).reshape(-1)
        return cls(int(move), int(act))


@dataclass
class EnvState:
    position: tuple[int, int]
    inventory: np.ndarray
    step: int
    awarded: frozenset
    done: bool = False

    def copy(self) -> "EnvState":
        return EnvState(self.position, self.inventory.copy(), self.step, self.awarded, self.done)


# -- board and observations -------------------------------------------------

def _seed_from_text(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


# fixed projection from one-hot 3x3 neighbourhood (9 cells x 6 tile kinds) to 14 features
_NEIGHBOURHOOD_PROJECTION = np.random.default_rng(_seed_from_text("chainworld/features/v1")).standard_normal(
    (N_FEATURES - 2, 9 * 6)
) / 3.0


_board_cache: dict = {}


def make_board(config: WorldConfig) -> np.ndarray:
    """Tile grid for ``config``; a pure function of placement seed, size and counts."""
    key = (config.grid_size, config.placement_seed, config.resource_counts)
    if key not in _board_cache:
        g = config.grid_size
        rng = np.random.default_rng([config.placement_seed, 1])
        cells = rng.permutation(g * g)
        board = np.zeros(g * g, dtype=int)
        start = 0
        for tile, count in zip((WOOD, STONE, IRON, DIAMOND), config.resource_counts):
            board[cells[start : start + count]] = tile
            start += count
        board = board.reshape(g, g)
        board.flags.writeable = False
        _board_cache[key] = board
    return _board_cache[key]


def base_features(board: np.ndarray, position: tuple[int, int]) -> np.ndarray:
    """Un-randomized 16-feature view with Euclidean norm at most 1.

    The norm bound keeps every coordinate inside ``[-1, 1]`` after any
    orthogonal remap.
    """
    g = board.shape[0]
    r, c = position
    onehot = np.zeros((9, 6))
    k = 0
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            rr, cc = r + dr, c + dc
            onehot[k, board[rr, cc] if 0 <= rr < g and 0 <= cc < g else WALL] = 1.0
            k += 1
    raw = np.empty(N_FEATURES)
    raw[:-2] = np.tanh(_NEIGHBOURHOOD_PROJECTION @ onehot.reshape(-1))
    raw[-2] = 2.0 * r / (g - 1) - 1.0
    raw[-1] = 2.0 * c / (g - 1) - 1.0
    return raw / np.sqrt(N_FEATURES)


def observe(config: WorldConfig, state: EnvState) -> np.ndarray:
    dr = config.randomization
    feats = dr.remap @ base_features(make_board(config), state.position)
    inv = np.minimum(state.inventory, INVENTORY_CAP).astype(float)[list(dr.inventory_permutation)]
    return np.clip(np.concatenate([feats, inv]), OBSERVATION_SPACE.lower, OBSERVATION_SPACE.upper)


# -- dynamics ---------------------------------------------------------------

def env_reset(config: WorldConfig, episode_seed: int):
    g = config.grid_size
    cell = int(np.random.default_rng([episode_seed, 3]).integers(g * g))
    state = EnvState((cell // g, cell % g), np.zeros(N_ITEMS, dtype=int), 0, frozenset())
    return state, observe(config, state)


def env_step(config: WorldConfig, state: EnvState, action):
    """Advance one step. Returns ``(new_state, observation, reward, done, milestone)``.

    ``milestone`` names the milestone awarded on this step, or is ``None``.
    """
    if state.done:
        raise EpisodeFinished("episode is over; call env_reset")
    action = RawAction.coerce(action)
    board = make_board(config)
    table = config.table
    g = config.grid_size
    dr_, dc_ = _MOVE_DELTA[action.move]
    r = min(max(state.position[0] + dr_, 0), g - 1)
    c = min(max(state.position[1] + dc_, 0), g - 1)
    new = EnvState((r, c), state.inventory.copy(), state.step + 1, state.awarded)

    reward, milestone = 0.0, None
    act = config.randomization.act_permutation[action.act]
    if act:
        m = act - 1
        pre = table.prerequisites[m]
        ok = pre is None or new.inventory[pre] >= 1
        if act in RESOURCE_ACTS:
            ok = ok and board[r, c] == RESOURCE_ACTS[act]
        if ok:
            new.inventory[m] += 1
            if m not in new.awarded:
                new.awarded = new.awarded | {m}
                reward, milestone = float(table.rewards[m]), table.names[m]
    new.done = (len(table) - 1) in new.awarded or new.step >= config.max_episode_steps
    return new, observe(config, new), reward, new.done, milestone


class ChainWorld:
    """Stateful gym-style facade over :func:`env_reset` / :func:`env_step`."""

    observation_space = OBSERVATION_SPACE
    action_space = ACTION_SPACE

    def __init__(self, config: WorldConfig | None = None):
        self.config = config or WorldConfig()
        self.state: EnvState | None = None

    def reset(self, seed: int) -> np.ndarray:
        self.state, obs = env_reset(self.config, seed)
        return obs

    def step(self, action):
        if self.state is None:
            raise EpisodeFinished("call reset before step")
        self.state, obs, reward, done, milestone = env_step(self.config, self.state, action)
        return obs, reward, done, {"milestone": milestone}


# -- scripted expert --------------------------------------------------------

def _nearest_tile(board: np.ndarray, position, tile: int):
    cells = np.argwhere(board == tile)
    if len(cells) == 0:
        return None
    dist = np.abs(cells - np.asarray(position)).sum(axis=1)
    # argmin keeps row-major order on ties
    return tuple(int(v) for v in cells[int(np.argmin(dist))])


def scripted_expert(state: EnvState, config: WorldConfig) -> RawAction:
    """Greedy expert in true (un-randomized) act semantics.

    Walks to the nearest tile the next milestone needs (rows first, then
    columns) and performs its act once there. Each action either moves or
    acts, never both. Idles when the next milestone has no reachable tile.
    """
    table = config.table
    pending = [m for m in range(len(table)) if m not in state.awarded]
    if not pending:
        return RawAction(0, 0)
    act = pending[0] + 1
    if act not in RESOURCE_ACTS:
        return RawAction(0, act)
    target = _nearest_tile(make_board(config), state.position, RESOURCE_ACTS[act])
    if target is None:
        return RawAction(0, 0)
    (r, c), (tr, tc) = state.position, target
    if (r, c) == (tr, tc):
        return RawAction(0, act)
    if r != tr:
        return RawAction(1 if tr < r else 2, 0)
    return RawAction(3 if tc > c else 4, 0)


def submitted_expert(state: EnvState, config: WorldConfig) -> RawAction:
    """Expert composed with the inverse act permutation of ``config``."""
    a = scripted_expert(state, config)
    return RawAction(a.move, config.randomization.submitted_act(a.act))


# -- trajectory files -------------------------------------------------------

@dataclass
class Episode:
    episode_id: int
    seed: int
    score: float
    observations: np.ndarray  # (T, 28), observation the action was taken from
    moves: np.ndarray
    acts: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.moves)


def run_expert_episode(config: WorldConfig, seed: int, expert=submitted_expert, episode_id: int = 0) -> Episode:
    state, obs = env_reset(config, seed)
    rows = []
    done = False
    while not done:
        a = expert(state, config)
        prev = obs
        state, obs, reward, done, _ = env_step(config, state, a)
        rows.append((prev, a.move, a.act, reward, done))
    return Episode(
        episode_id,
        seed,
        float(sum(r[3] for r in rows)),
        np.array([r[0] for r in rows]),
        np.array([r[1] for r in rows], dtype=int),
        np.array([r[2] for r in rows], dtype=int),
        np.array([r[3] for r in rows]),
        np.array([r[4] for r in rows], dtype=bool),
    )


def format_episode(ep: Episode) -> list[str]:
    lines = [f"E {ep.episode_id} {ep.seed} {ep.score!r}"]
    for t in range(len(ep)):
        obs = " ".join(repr(float(v)) for v in ep.observations[t])
        lines.append(f"T {t} {obs} {ep.moves[t]} {ep.acts[t]} {float(ep.rewards[t])!r} {int(ep.dones[t])}")
    return lines


def record_demonstrations(
    config: WorldConfig,
    expert: Callable = submitted_expert,
    n_episodes: int = 50,
    out_path=None,
    seeds: Sequence[int] | None = None,
) -> list[Episode]:
    """Roll out ``expert`` and write a trajectory file if ``out_path`` is given.

    Episode ``i`` uses ``seeds[i]`` (default ``i``).
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    seeds = list(range(n_episodes)) if seeds is None else list(seeds)
    if len(seeds) != n_episodes:
        raise ValueError("need one seed per episode")
    episodes = [run_expert_episode(config, s, expert, i) for i, s in enumerate(seeds)]
    if out_path is not None:
        write_trajectories(episodes, out_path)
    return episodes


def write_trajectories(episodes: Iterable[Episode], path) -> None:
    lines = []
    for ep in episodes:
        lines += format_episode(ep)
    # OSError propagates for unwritable paths
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectories(path) -> list[Episode]:
    n_obs = N_FEATURES + N_ITEMS
    episodes: list[Episode] = []
    head, rows = None, []

    def close():
        if head is None:
            return
        obs = np.array([r[0] for r in rows]).reshape(len(rows), n_obs)
        episodes.append(Episode(
            head[0], head[1], head[2], obs,
            np.array([r[1] for r in rows], dtype=int),
            np.array([r[2] for r in rows], dtype=int),
            np.array([r[3] for r in rows], dtype=float),
            np.array([r[4] for r in rows], dtype=bool),
        ))

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise TrajectoryFormatError(f"{path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "E" and len(parts) == 4:
                close()
                head, rows = (int(parts[1]), int(parts[2]), float(parts[3])), []
            elif parts[0] == "T" and len(parts) == 2 + n_obs + 4 and head is not None:
                if int(parts[1]) != len(rows):
                    raise ValueError("transition step index out of order")
                obs = [float(v) for v in parts[2 : 2 + n_obs]]
                move, act = int(parts[2 + n_obs]), int(parts[3 + n_obs])
                done = parts[5 + n_obs]
                if done not in ("0", "1"):
                    raise ValueError("done flag must be 0 or 1")
                RawAction(move, act)
                rows.append((obs, move, act, float(parts[4 + n_obs]), done == "1"))
            else:
                raise ValueError(f"unrecognised record {parts[0]!r} with {len(parts)} fields")
        except (ValueError, InvalidPoint) as exc:
            raise TrajectoryFormatError(f"{path}:{lineno}: {exc}") from exc
    close()
    if not episodes:
        raise TrajectoryFormatError(f"{path}: no episodes")
    return episodes
