"""Grid mazes for route-instruction following.

Orientation is in degrees, clockwise from +y: 0 faces +y, 90 faces +x,
180 faces -y, 270 faces -x.  RIGHT adds 90, LEFT subtracts 90, FORWARD
moves one cell through a passable edge.

File formats (whitespace separated, ``-`` marks an absent tag)::

    width height
    x y floor object                  # one per cell
    x1 y1 x2 y2 passable walltype     # one per edge, passable in {0, 1}

Optional ``#floors``, ``#objects`` and ``#walls`` lines list the tag
vocabularies so that feature layouts survive a round trip.  A path record
is ``x0 y0 o0 | ACTION ... STOP | x1 y1 o1``.
"""
import re
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ContractError, ParseError, Seq4Error

ORIENTATIONS = (0, 90, 180, 270)
STEP = {0: (0, 1), 90: (1, 0), 180: (0, -1), 270: (-1, 0)}
FORWARD, LEFT, RIGHT, STOP = "FORWARD", "LEFT", "RIGHT", "STOP"
ACTIONS = (FORWARD, LEFT, RIGHT, STOP)

DEFAULT_OBJECTS = ("barstool", "chair", "easel", "hatrack", "lamp", "sofa")
DEFAULT_FLOORS = ("blue", "brick", "concrete", "flower", "grass", "gravel", "wood", "yellow")
DEFAULT_WALLS = ("butterfly", "fish", "tower")


class AgentState(NamedTuple):
    x: int
    y: int
    orientation: int

    def __str__(self):
        return f"{self.x} {self.y} {self.orientation}"


class BlockedMove(Seq4Error):
    def __init__(self, step, state):
        super().__init__(f"FORWARD blocked at action {step} from {tuple(state)}")
        self.step = step
        self.state = state


def _edge_key(a, b):
    return (a, b) if a <= b else (b, a)


@dataclass
class Maze:
    width: int
    height: int
    floors: dict = field(default_factory=dict)     # (x, y) -> tag
    objects: dict = field(default_factory=dict)    # (x, y) -> tag
    passable: set = field(default_factory=set)     # canonical edge keys
    walls: dict = field(default_factory=dict)      # canonical edge key -> tag
    floor_types: tuple = DEFAULT_FLOORS
    object_types: tuple = DEFAULT_OBJECTS
    wall_types: tuple = DEFAULT_WALLS

    def in_bounds(self, x, y):
        return 0 <= x < self.width and 0 <= y < self.height

    def cells(self):
        return [(x, y) for y in range(self.height) for x in range(self.width)]

    def all_edges(self):
        out = []
        for x, y in self.cells():
            if x + 1 < self.width:
                out.append(((x, y), (x + 1, y)))
            if y + 1 < self.height:
                out.append(((x, y), (x, y + 1)))
        return out

    def is_passable(self, a, b):
        return _edge_key(tuple(a), tuple(b)) in self.passable

    def open(self, a, b):
        if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
            raise ContractError(f"{a} and {b} are not orthogonal neighbours")
        if not (self.in_bounds(*a) and self.in_bounds(*b)):
            raise ContractError(f"edge {a}-{b} leaves the grid")
        self.passable.add(_edge_key(tuple(a), tuple(b)))

    def neighbours(self, cell):
        x, y = cell
        for o in ORIENTATIONS:
            dx, dy = STEP[o]
            n = (x + dx, y + dy)
            if self.in_bounds(*n) and self.is_passable(cell, n):
                yield n

    def walkable(self):
        if self.width * self.height == 1:
            return [(0, 0)]
        touched = {c for e in self.passable for c in e}
        return sorted(touched, key=lambda c: (c[1], c[0]))

    def is_connected(self):
        nodes = self.walkable()
        if not nodes:
            return False
        seen = {nodes[0]}
        queue = deque([nodes[0]])
        while queue:
            for n in self.neighbours(queue.popleft()):
                if n not in seen:
                    seen.add(n)
                    queue.append(n)
        return len(seen) == len(nodes)


# ---------------------------------------------------------------- execution

def turn(orientation, action):
    if action == LEFT:
        return (orientation - 90) % 360
    if action == RIGHT:
        return (orientation + 90) % 360
    return orientation


def check_state(maze, s):
    if s.orientation not in ORIENTATIONS:
        raise ContractError(f"orientation {s.orientation} not in {ORIENTATIONS}")
    if not maze.in_bounds(s.x, s.y):
        raise ContractError(f"position ({s.x}, {s.y}) outside the maze")


def check_actions(actions):
    actions = list(actions)
    if not actions or actions[-1] != STOP or actions.count(STOP) != 1:
        raise ContractError("action sequence must end with its only STOP")
    bad = [a for a in actions if a not in ACTIONS]
    if bad:
        raise ContractError(f"unknown actions {bad}")
    return actions


def step(maze, s, action, index=0):
    if action == FORWARD:
        dx, dy = STEP[s.orientation]
        nxt = (s.x + dx, s.y + dy)
        if not maze.in_bounds(*nxt) or not maze.is_passable((s.x, s.y), nxt):
            raise BlockedMove(index, s)
        return AgentState(nxt[0], nxt[1], s.orientation)
    return AgentState(s.x, s.y, turn(s.orientation, action))


def execute(maze, start, actions):
    """Final state after ``actions``; raises :class:`BlockedMove` on a bad FORWARD."""
    start = AgentState(*start)
    check_state(maze, start)
    s = start
    for i, a in enumerate(check_actions(actions)):
        if a == STOP:
            break
        s = step(maze, s, a, i)
    return s


def try_execute(maze, start, actions):
    """Like :func:`execute` but returns ``None`` for blocked or malformed runs."""
    try:
        return execute(maze, start, actions)
    except (BlockedMove, ContractError):
        return None


def eval_final_state(predicted, gold):
    return predicted is not None and tuple(predicted) == tuple(gold)


# ---------------------------------------------------------------- features

def feature_layout(maze):
    nf, no, nw = len(maze.floor_types), len(maze.object_types), len(maze.wall_types)
    return [("floor", nf), ("object_here", no), ("object_ahead", no),
            ("walls_n_e_s_w", 4 * nw), ("passable_front_right_back_left", 4)]


def feature_size(maze):
    return sum(n for _, n in feature_layout(maze))


def state_features(maze, s):
    """Bag-of-features vector for agent state ``s`` (see :func:`feature_layout`).

    Floor and object blocks are one-hot; wall blocks are indexed by absolute
    direction (N, E, S, W = 0, 90, 180, 270); passability bits are relative
    to the agent's heading.  The object ahead is only visible through a
    passable edge.
    """
    nf, no, nw = len(maze.floor_types), len(maze.object_types), len(maze.wall_types)
    v = np.zeros(feature_size(maze))
    here = (s.x, s.y)
    floor = maze.floors.get(here)
    if floor is not None:
        v[maze.floor_types.index(floor)] = 1.0
    off = nf
    obj = maze.objects.get(here)
    if obj is not None:
        v[off + maze.object_types.index(obj)] = 1.0
    off += no
    dx, dy = STEP[s.orientation]
    ahead = (s.x + dx, s.y + dy)
    if maze.in_bounds(*ahead) and maze.is_passable(here, ahead):
        obj = maze.objects.get(ahead)
        if obj is not None:
            v[off + maze.object_types.index(obj)] = 1.0
    off += no
    for k, o in enumerate(ORIENTATIONS):
        ex, ey = STEP[o]
        n = (s.x + ex, s.y + ey)
        if maze.in_bounds(*n):
            wall = maze.walls.get(_edge_key(here, n))
            if wall is not None:
                v[off + k * nw + maze.wall_types.index(wall)] = 1.0
    off += 4 * nw
    for k, rel in enumerate((0, 90, 180, 270)):
        ex, ey = STEP[(s.orientation + rel) % 360]
        n = (s.x + ex, s.y + ey)
        if maze.in_bounds(*n) and maze.is_passable(here, n):
            v[off + k] = 1.0
    return v


def path_features(maze, start, actions):
    """One feature row per action plus one for the final state."""
    s = AgentState(*start)
    rows = [state_features(maze, s)]
    for i, a in enumerate(actions):
        if a == STOP:
            rows.append(state_features(maze, s))
            continue
        s = step(maze, s, a, i)
        rows.append(state_features(maze, s))
    return np.array(rows[:len(actions) + 1])


class StateTracker:
    """Follows decoded action ids so each decoder step sees the current state."""

    def __init__(self, maze, start, id_to_action):
        self.maze = maze
        self.state = AgentState(*start)
        self.id_to_action = id_to_action
        self.blocked = False

    def features(self):
        return state_features(self.maze, self.state)

    def advance(self, token_id):
        action = self.id_to_action.get(token_id)
        if action not in (LEFT, RIGHT, FORWARD):
            return
        try:
            self.state = step(self.maze, self.state, action)
        except BlockedMove:
            self.blocked = True


@dataclass
class SailWorld:
    """Maze context of one navigation example, for decoding and scoring."""

    maze: Maze
    start: AgentState
    end: AgentState
    id_to_action: dict

    def tracker(self):
        return StateTracker(self.maze, self.start, self.id_to_action)

    def correct(self, token_ids):
        actions = [self.id_to_action.get(i, "?") for i in token_ids]
        return eval_final_state(try_execute(self.maze, self.start, actions), self.end)


# ---------------------------------------------------------------- generation

@dataclass
class MazeStats:
    """Targets for :func:`generate_maze`.

    Object and floor frequencies are fractions of cells, wall frequencies
    fractions of edges; each group must sum to at most 1.  The maximum
    corridor length counts cells in a straight passable run.
    """

    width: int = 21
    height: int = 21
    max_corridor: int = 7
    object_freq: dict = field(default_factory=lambda: {k: 0.02 for k in DEFAULT_OBJECTS})
    floor_freq: dict = field(default_factory=lambda: {k: 1 / 8 for k in DEFAULT_FLOORS})
    wall_freq: dict = field(default_factory=lambda: {k: 0.1 for k in DEFAULT_WALLS})
    loop_fraction: float = 0.05

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise ContractError("maze dimensions must be positive")
        if self.max_corridor < 2:
            raise ContractError("max_corridor below 2 cannot connect a grid")
        for name in ("object_freq", "floor_freq", "wall_freq"):
            freq = getattr(self, name)
            if any(v < 0 for v in freq.values()) or sum(freq.values()) > 1 + 1e-9:
                raise ContractError(f"{name} must be non-negative and sum to at most 1")


def _quota(freq, n):
    """Largest-remainder integer counts for ``freq`` over ``n`` slots."""
    names = list(freq)
    raw = np.array([freq[k] * n for k in names])
    counts = np.floor(raw).astype(int)
    short = int(np.floor(sum(freq.values()) * n + 0.5)) - counts.sum()
    for i in np.argsort(-(raw - counts), kind="stable")[:max(short, 0)]:
        counts[i] += 1
    return dict(zip(names, counts))


def _assign(rng, slots, freq):
    order = rng.permutation(len(slots))
    out, pos = {}, 0
    for name, k in _quota(freq, len(slots)).items():
        for i in order[pos:pos + k]:
            out[slots[i]] = name
        pos += k
    return out


def _run(maze, cell, axis, sign):
    n = 0
    cur = cell
    while True:
        nxt = (cur[0] + sign * (axis == 0), cur[1] + sign * (axis == 1))
        if not maze.in_bounds(*nxt) or not maze.is_passable(cur, nxt):
            return n
        n += 1
        cur = nxt


def _run_after_open(maze, a, b):
    axis = 0 if a[1] == b[1] else 1
    lo, hi = (a, b) if a <= b else (b, a)
    return _run(maze, lo, axis, -1) + _run(maze, hi, axis, 1) + 2


def max_corridor_length(maze):
    best = 1 if maze.walkable() else 0
    for (x, y) in maze.cells():
        for axis in (0, 1):
            prev = (x - (axis == 0), y - (axis == 1))
            if maze.in_bounds(*prev) and maze.is_passable(prev, (x, y)):
                continue
            best = max(best, _run(maze, (x, y), axis, 1) + 1)
    return best


def generate_maze(stats=None, seed=0, max_attempts=50):
    """Random connected maze matching ``stats``; deterministic in ``seed``."""
    stats = stats or MazeStats()
    stats.validate()
    rng = np.random.default_rng(seed)
    types = dict(floor_types=tuple(stats.floor_freq), object_types=tuple(stats.object_freq),
                 wall_types=tuple(stats.wall_freq))
    for _ in range(max_attempts):
        maze = Maze(stats.width, stats.height, **types)
        edges = maze.all_edges()
        parent = {c: c for c in maze.cells()}

        def find(c):
            while parent[c] != c:
                parent[c] = parent[parent[c]]
                c = parent[c]
            return c

        components = len(parent)
        closed = []
        for i in rng.permutation(len(edges)):
            a, b = edges[i]
            ra, rb = find(a), find(b)
            if ra != rb and _run_after_open(maze, a, b) <= stats.max_corridor:
                maze.open(a, b)
                parent[ra] = rb
                components -= 1
            else:
                closed.append((a, b))
        if components != 1:
            continue
        for a, b in closed:
            if (not maze.is_passable(a, b) and rng.random() < stats.loop_fraction
                    and _run_after_open(maze, a, b) <= stats.max_corridor):
                maze.open(a, b)
        cells = maze.cells()
        maze.floors = _assign(rng, cells, stats.floor_freq)
        maze.objects = _assign(rng, cells, stats.object_freq)
        maze.walls = _assign(rng, [_edge_key(a, b) for a, b in edges], stats.wall_freq)
        return maze
    raise ContractError(f"could not satisfy maze statistics in {max_attempts} attempts")


def shortest_actions(maze, start, goal):
    """Breadth-first shortest action walk from state ``start`` to cell ``goal``."""
    start = AgentState(*start)
    prev = {start: None}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        if (s.x, s.y) == tuple(goal):
            actions = [STOP]
            while prev[s] is not None:
                s, a = prev[s]
                actions.append(a)
            return actions[::-1]
        for a in (FORWARD, LEFT, RIGHT):
            try:
                n = step(maze, s, a)
            except BlockedMove:
                continue
            if n not in prev:
                prev[n] = (s, a)
                queue.append(n)
    return None


def sample_path(maze, rng):
    """Random start/end cells (distinct) and a shortest action walk between them."""
    nodes = maze.walkable()
    if len(nodes) < 2:
        raise ContractError("need at least two walkable cells")
    while True:
        a = nodes[rng.integers(len(nodes))]
        b = nodes[rng.integers(len(nodes))]
        o = ORIENTATIONS[rng.integers(4)]
        if a == b:
            continue
        start = AgentState(a[0], a[1], o)
        actions = shortest_actions(maze, start, b)
        if actions is None:
            raise ContractError("maze is not connected")
        return start, actions, execute(maze, start, actions)


# ---------------------------------------------------------------- file IO

def _tag(s):
    return None if s == "-" else s


def write_maze(maze, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{maze.width} {maze.height}\n")
        fh.write("#floors " + " ".join(maze.floor_types) + "\n")
        fh.write("#objects " + " ".join(maze.object_types) + "\n")
        fh.write("#walls " + " ".join(maze.wall_types) + "\n")
        for x, y in maze.cells():
            fh.write(f"{x} {y} {maze.floors.get((x, y), '-')} {maze.objects.get((x, y), '-')}\n")
        for a, b in maze.all_edges():
            key = _edge_key(a, b)
            if key in maze.passable or key in maze.walls:
                fh.write(f"{a[0]} {a[1]} {b[0]} {b[1]} {int(key in maze.passable)} "
                         f"{maze.walls.get(key, '-')}\n")


def read_maze(path):
    with open(path, encoding="utf-8") as fh:
        lines = [(i, ln.split()) for i, ln in enumerate(fh, 1) if ln.strip()]
    if not lines or len(lines[0][1]) != 2:
        raise ParseError("first line must be 'width height'", path, 1)
    try:
        maze = Maze(int(lines[0][1][0]), int(lines[0][1][1]))
    except ValueError:
        raise ParseError("bad maze header", path, 1) from None
    vocab = {}
    for lineno, f in lines[1:]:
        try:
            if f[0].startswith("#"):
                vocab[f[0][1:]] = tuple(f[1:])
            elif len(f) == 4:
                c = (int(f[0]), int(f[1]))
                if not maze.in_bounds(*c):
                    raise ValueError(f"cell {c} outside the maze")
                if _tag(f[2]):
                    maze.floors[c] = f[2]
                if _tag(f[3]):
                    maze.objects[c] = f[3]
            elif len(f) == 6:
                a, b = (int(f[0]), int(f[1])), (int(f[2]), int(f[3]))
                if f[4] not in ("0", "1"):
                    raise ValueError("passable flag must be 0 or 1")
                if f[4] == "1":
                    maze.open(a, b)
                if _tag(f[5]):
                    maze.walls[_edge_key(a, b)] = f[5]
            else:
                raise ValueError(f"record with {len(f)} fields")
        except (ValueError, ContractError) as exc:
            raise ParseError(str(exc), path, lineno) from None
    maze.floor_types = vocab.get("floors") or tuple(sorted(set(maze.floors.values())))
    maze.object_types = vocab.get("objects") or tuple(sorted(set(maze.objects.values())))
    maze.wall_types = vocab.get("walls") or tuple(sorted(set(maze.walls.values())))
    return maze


_TABLE_FORM = re.compile(r"^\s*\((-?\d+),(-?\d+),(\d+)\)\s*(.*?)\s*\((-?\d+),(-?\d+),(\d+)\)\s*$")


def parse_path(text):
    """Parse ``x0 y0 o0 | actions | x1 y1 o1`` or ``(x,y,o) A - B - STOP (x,y,o)``.

    ``GO`` is read as FORWARD.  Raises ``ValueError`` on malformed input.
    """
    m = _TABLE_FORM.match(text)
    if m:
        start = AgentState(*map(int, m.group(1, 2, 3)))
        end = AgentState(*map(int, m.group(5, 6, 7)))
        actions = [a for a in m.group(4).replace("-", " ").split()]
    else:
        parts = text.split("|")
        if len(parts) != 3:
            raise ValueError("path record needs 'start | actions | end'")
        try:
            start = AgentState(*map(int, parts[0].split()))
            end = AgentState(*map(int, parts[2].split()))
        except (TypeError, ValueError):
            raise ValueError("path states need three integers") from None
        actions = parts[1].split()
    actions = [FORWARD if a == "GO" else a for a in actions]
    try:
        check_actions(actions)
    except ContractError as exc:
        raise ValueError(str(exc)) from None
    for s in (start, end):
        if s.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation {s.orientation} not in {ORIENTATIONS}")
    return start, actions, end


def format_path(start, actions, end):
    return f"{start} | {' '.join(actions)} | {end}"
