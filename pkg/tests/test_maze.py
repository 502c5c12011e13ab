import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seq4 import maze as mz
from seq4.errors import ContractError, ParseError
from seq4.maze import (FORWARD, LEFT, RIGHT, STOP, AgentState, BlockedMove, Maze, MazeStats,
                       execute, generate_maze, state_features)


def corridor(width=5, height=8, row=6):
    m = Maze(width, height)
    for x in range(width - 1):
        m.open((x, row), (x + 1, row))
    return m


def open_grid(n=3, **kw):
    m = Maze(n, n, **kw)
    for a, b in m.all_edges():
        m.open(a, b)
    return m


# ---------------------------------------------------------------- execution

def test_table_one_anchor():
    assert execute(corridor(), (1, 6, 90), [FORWARD, FORWARD, RIGHT, STOP]) == (3, 6, 180)


def test_turn_left_wraps():
    assert execute(open_grid(), (1, 1, 0), [LEFT, STOP]) == (1, 1, 270)


def test_forward_into_wall_is_blocked_at_its_index():
    with pytest.raises(BlockedMove) as info:
        execute(corridor(), (1, 6, 0), [FORWARD, STOP])
    assert info.value.step == 0
    with pytest.raises(BlockedMove) as info:
        execute(corridor(), (4, 6, 90), [LEFT, RIGHT, FORWARD, STOP])
    assert info.value.step == 2 and info.value.state == (4, 6, 90)


def test_orientation_axes():
    g = open_grid()
    assert [execute(g, (1, 1, o), [FORWARD, STOP])[:2] for o in (0, 90, 180, 270)] == \
        [(1, 2), (2, 1), (1, 0), (0, 1)]


def test_malformed_inputs_rejected():
    g = open_grid()
    for acts in ([FORWARD], [STOP, STOP], [STOP, FORWARD], ["JUMP", STOP], []):
        with pytest.raises(ContractError):
            execute(g, (0, 0, 0), acts)
    with pytest.raises(ContractError):
        execute(g, (0, 0, 45), [STOP])
    with pytest.raises(ContractError):
        execute(g, (5, 0, 0), [STOP])
    assert mz.try_execute(g, (0, 0, 180), [FORWARD, STOP]) is None


def test_eval_final_state():
    assert mz.eval_final_state(AgentState(1, 2, 90), (1, 2, 90))
    assert not mz.eval_final_state(AgentState(1, 2, 90), (1, 2, 180))
    assert not mz.eval_final_state(None, (1, 2, 90))


states = st.builds(AgentState, st.integers(0, 2), st.integers(0, 2),
                   st.sampled_from(mz.ORIENTATIONS))


@given(states)
def test_left_right_and_four_lefts_are_identity(s):
    g = open_grid()
    assert execute(g, s, [LEFT, RIGHT, STOP]) == s
    assert execute(g, s, [RIGHT, LEFT, STOP]) == s
    assert execute(g, s, [LEFT] * 4 + [STOP]) == s


# ---------------------------------------------------------------- features

def test_empty_open_cell_sets_only_passability_bits():
    g = open_grid()
    v = state_features(g, AgentState(1, 1, 0))
    assert v[:-4].sum() == 0 and v[-4:].tolist() == [1, 1, 1, 1]


def test_rotation_rotates_relative_bits_only():
    m = Maze(3, 3)
    m.open((1, 1), (1, 2))      # north
    m.open((1, 1), (2, 1))      # east
    m.floors[(1, 1)] = "wood"
    rows = [state_features(m, AgentState(1, 1, o)) for o in mz.ORIENTATIONS]
    for a, b in zip(rows, rows[1:]):
        assert np.array_equal(a[:-4], b[:-4])
        assert np.array_equal(b[-4:], np.roll(a[-4:], -1))
    assert rows[0][-4:].tolist() == [1, 1, 0, 0]    # front, right, back, left


def test_feature_blocks():
    m = open_grid()
    m.objects[(1, 1)] = "lamp"
    m.objects[(1, 2)] = "sofa"
    m.walls[((1, 1), (2, 1))] = "fish"
    v = state_features(m, AgentState(1, 1, 0))
    nf, no, nw = len(m.floor_types), len(m.object_types), len(m.wall_types)
    assert v[nf + m.object_types.index("lamp")] == 1
    assert v[nf + no + m.object_types.index("sofa")] == 1
    assert v[nf + 2 * no + 1 * nw + m.wall_types.index("fish")] == 1
    assert v.sum() == 3 + 4
    m.passable.discard(((1, 1), (1, 2)))
    assert state_features(m, AgentState(1, 1, 0))[nf + no:nf + 2 * no].sum() == 0


def test_feature_length_is_constant_over_exhaustive_sweep():
    m = generate_maze(MazeStats(width=3, height=3, max_corridor=3), seed=2)
    size = mz.feature_size(m)
    assert size == len(m.floor_types) + 2 * len(m.object_types) + 4 * len(m.wall_types) + 4
    lengths = {len(state_features(m, AgentState(x, y, o)))
               for x, y in m.cells() for o in mz.ORIENTATIONS}
    assert lengths == {size}


def test_path_features_rows():
    acts = [FORWARD, FORWARD, RIGHT, STOP]
    f = mz.path_features(corridor(), (1, 6, 90), acts)
    assert f.shape == (len(acts) + 1, mz.feature_size(corridor()))
    assert np.array_equal(f[0], state_features(corridor(), AgentState(1, 6, 90)))
    assert np.array_equal(f[-1], state_features(corridor(), AgentState(3, 6, 180)))


def test_state_tracker_and_world_scoring():
    ids = {4: FORWARD, 5: LEFT, 6: RIGHT, 7: STOP}
    world = mz.SailWorld(corridor(), AgentState(1, 6, 90), AgentState(3, 6, 180), ids)
    assert world.correct([4, 4, 6, 7])
    assert not world.correct([4, 6, 7])
    assert not world.correct([5, 4, 7])        # blocked move counts as wrong
    t = world.tracker()
    for i in (4, 4, 6):
        t.advance(i)
    assert t.state == (3, 6, 180) and not t.blocked
    t.advance(4)
    assert t.blocked and t.state == (3, 6, 180)


# ---------------------------------------------------------------- generation

def test_degenerate_stats():
    s = MazeStats(width=6, height=5, object_freq={}, floor_freq={"wood": 1.0}, wall_freq={})
    m = generate_maze(s, seed=0)
    assert m.objects == {} and set(m.floors.values()) == {"wood"} and len(m.floors) == 30


def test_generation_is_deterministic():
    a, b = generate_maze(seed=7), generate_maze(seed=7)
    assert a == b
    assert a != generate_maze(seed=8)


def flood_fill(m):
    start = m.walkable()[0]
    seen, stack = {start}, [start]
    while stack:
        x, y = stack.pop()
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (x + dx, y + dy)
            if n not in seen and m.in_bounds(*n) and m.is_passable((x, y), n):
                seen.add(n)
                stack.append(n)
    return seen


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_default_maze_statistics(seed):
    stats = MazeStats()
    m = generate_maze(stats, seed)
    assert (m.width, m.height) == (21, 21)
    assert len(flood_fill(m)) == 21 * 21 == len(m.walkable())
    assert m.is_connected()
    assert mz.max_corridor_length(m) <= stats.max_corridor
    cells, edges = 21 * 21, len(m.all_edges())
    for freq, tags, n in ((stats.object_freq, m.objects, cells),
                          (stats.floor_freq, m.floors, cells),
                          (stats.wall_freq, m.walls, edges)):
        for name, target in freq.items():
            got = sum(1 for t in tags.values() if t == name) / n
            assert abs(got - target) <= 0.2 * target, name


def test_tight_corridor_limit():
    m = generate_maze(MazeStats(width=9, height=9, max_corridor=3), seed=4)
    assert m.is_connected() and mz.max_corridor_length(m) <= 3


def test_max_corridor_length_oracle():
    assert mz.max_corridor_length(corridor()) == 5
    assert mz.max_corridor_length(open_grid(4)) == 4


@pytest.mark.parametrize("bad", [
    dict(object_freq={"a": 0.7, "b": 0.5}),
    dict(floor_freq={"x": 1.2}),
    dict(wall_freq={"w": -0.1}),
    dict(max_corridor=1),
])
def test_infeasible_stats_rejected(bad):
    with pytest.raises(ContractError):
        generate_maze(MazeStats(**bad), seed=0)


def test_adjacent_shortest_walk():
    assert mz.shortest_actions(corridor(), (1, 6, 90), (2, 6)) == [FORWARD, STOP]
    assert mz.shortest_actions(corridor(), (1, 6, 270), (2, 6)) in \
        ([LEFT, LEFT, FORWARD, STOP], [RIGHT, RIGHT, FORWARD, STOP])


def test_sample_path_on_two_cells():
    m = corridor(width=2, height=1, row=0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        start, acts, end = mz.sample_path(m, rng)
        assert (start.x, start.y) != (end.x, end.y)
        assert acts[-1] == STOP and acts.count(FORWARD) == 1


def test_sampled_paths_round_trip():
    m = generate_maze(seed=11)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        start, acts, end = mz.sample_path(m, rng)
        assert (start.x, start.y) != (end.x, end.y)
        assert execute(m, start, acts) == end


def test_sample_path_needs_two_cells():
    with pytest.raises(ContractError):
        mz.sample_path(Maze(1, 1), np.random.default_rng(0))


# ---------------------------------------------------------------- files

def test_maze_file_round_trip(tmp_path):
    m = generate_maze(MazeStats(width=7, height=5, max_corridor=4), seed=3)
    p = tmp_path / "m.txt"
    mz.write_maze(m, p)
    back = mz.read_maze(p)
    assert back == m
    assert mz.feature_size(back) == mz.feature_size(m)


def test_maze_file_without_vocab_lines(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("2 1\n0 0 wood -\n1 0 - lamp\n0 0 1 0 1 fish\n", encoding="utf-8")
    m = mz.read_maze(p)
    assert m.is_passable((0, 0), (1, 0))
    assert (m.floor_types, m.object_types, m.wall_types) == (("wood",), ("lamp",), ("fish",))


@pytest.mark.parametrize("text, line", [
    ("2\n", 1),
    ("2 1\n0 0 wood -\n5 5 wood -\n", 3),
    ("2 1\n0 0 1 0 2 -\n", 2),
    ("2 1\n0 0 1 1 1 -\n", 2),
    ("2 1\n0 0 wood\n", 2),
])
def test_maze_file_errors_name_the_line(tmp_path, text, line):
    p = tmp_path / "bad.txt"
    p.write_text(text, encoding="utf-8")
    with pytest.raises(ParseError, match=f":{line}:"):
        mz.read_maze(p)


def test_parse_path_forms():
    table = mz.parse_path("(1,6,90) FORWARD - FORWARD - RIGHT - STOP (3,6,180)")
    assert table == ((1, 6, 90), [FORWARD, FORWARD, RIGHT, STOP], (3, 6, 180))
    piped = mz.parse_path("1 6 90 | GO GO RIGHT STOP | 3 6 180")
    assert piped == table
    assert mz.parse_path(mz.format_path(*table)) == table


@pytest.mark.parametrize("text", [
    "1 6 90 | FORWARD STOP",
    "1 6 | STOP | 3 6 180",
    "1 6 45 | STOP | 1 6 45",
    "1 6 90 | FORWARD | 2 6 90",
    "1 6 90 | FLY STOP | 2 6 90",
])
def test_parse_path_rejects_malformed(text):
    with pytest.raises(ValueError):
        mz.parse_path(text)
