from __future__ import annotations

import numpy as np
import pytest

from skilloop.world import (
    ACTIONS,
    Action,
    COLORS,
    GRID_XY,
    GRID_Z,
    SceneDescription,
    WorldState,
    describe,
    render,
    reset,
    step,
    validate,
)


def make_state(objects, tcp=(4, 4, 2), aperture=1.0, held=None):
    return WorldState(
        objects=objects,
        tcp=tcp,
        aperture=aperture,
        grasp_sensor=held is not None,
        held=held,
    )


class TestReset:
    def test_objects_on_distinct_floor_cells(self):
        s = reset(7)
        cells = list(s.objects.values())
        assert len(set(cells)) == 3
        assert all(c[2] == 0 for c in cells)
        assert s.aperture == 1.0
        assert s.held is None and not s.grasp_sensor
        validate(s)

    def test_same_seed_same_state(self):
        assert reset(123) == reset(123)

    def test_different_seeds_differ_somewhere(self):
        states = [reset(i) for i in range(20)]
        assert len({tuple(sorted(s.objects.items())) for s in states}) > 1


class TestStep:
    def test_move_translates_tcp_one_cell(self):
        s = make_state({"red": (0, 0, 0), "green": (1, 0, 0), "blue": (2, 0, 0)}, tcp=(4, 4, 2))
        assert step(s, Action.MOVE_PX).tcp == (5, 4, 2)
        assert step(s, Action.MOVE_NX).tcp == (3, 4, 2)
        assert step(s, Action.MOVE_PY).tcp == (4, 5, 2)
        assert step(s, Action.MOVE_NY).tcp == (4, 3, 2)
        assert step(s, Action.MOVE_PZ).tcp == (4, 4, 3)
        assert step(s, Action.MOVE_NZ).tcp == (4, 4, 1)

    def test_bounds_clamp_is_noop(self):
        s = make_state({"red": (0, 0, 0), "green": (1, 0, 0), "blue": (2, 0, 0)},
                       tcp=(GRID_XY - 1, 0, GRID_Z - 1))
        assert step(s, Action.MOVE_PX) == s
        assert step(s, Action.MOVE_NY) == s
        assert step(s, Action.MOVE_PZ) == s
        assert describe(step(s, Action.MOVE_PX)) == describe(s)

    def test_close_twice_grasps_colocated_object(self):
        s = make_state({"red": (3, 3, 0), "green": (0, 0, 0), "blue": (7, 7, 0)},
                       tcp=(3, 3, 0), aperture=1.0)
        s1 = step(s, Action.CLOSE)
        assert s1.aperture == 0.5 and s1.grasp_sensor and s1.held == "red"
        s2 = step(s1, Action.CLOSE)
        assert s2.aperture == 0.0 and s2.grasp_sensor and s2.held == "red"
        validate(s2)

    def test_close_away_from_objects_grasps_nothing(self):
        s = make_state({"red": (3, 3, 0), "green": (0, 0, 0), "blue": (7, 7, 0)},
                       tcp=(5, 5, 0))
        s2 = step(step(s, Action.CLOSE), Action.CLOSE)
        assert s2.aperture == 0.0 and not s2.grasp_sensor and s2.held is None

    def test_held_object_tracks_tcp(self):
        s = make_state({"red": (3, 3, 0), "green": (0, 0, 0), "blue": (7, 7, 0)},
                       tcp=(3, 3, 0), aperture=0.5, held="red")
        up = step(s, Action.MOVE_PZ)
        assert up.tcp == (3, 3, 1) and up.objects["red"] == (3, 3, 1)
        validate(up)

    def test_release_drops_onto_support(self):
        # held red over green (green on the floor): open, open -> red rests on green
        s = make_state({"red": (2, 2, 2), "green": (2, 2, 0), "blue": (7, 7, 0)},
                       tcp=(2, 2, 2), aperture=0.0, held="red")
        s1 = step(s, Action.OPEN)
        assert s1.aperture == 0.5 and s1.held == "red"  # still below release point
        s2 = step(s1, Action.OPEN)
        assert s2.aperture == 1.0 and s2.held is None and not s2.grasp_sensor
        assert s2.objects["red"] == (2, 2, 1)
        validate(s2)

    def test_release_over_empty_column_drops_to_floor(self):
        s = make_state({"red": (2, 2, 3), "green": (0, 0, 0), "blue": (7, 7, 0)},
                       tcp=(2, 2, 3), aperture=0.5, held="red")
        s1 = step(s, Action.OPEN)
        assert s1.objects["red"] == (2, 2, 0)
        validate(s1)

    def test_release_on_two_stack_builds_tower(self):
        s = make_state({"red": (2, 2, 4), "green": (2, 2, 0), "blue": (2, 2, 1)},
                       tcp=(2, 2, 4), aperture=0.5, held="red")
        s1 = step(s, Action.OPEN)
        assert s1.objects["red"] == (2, 2, 2)
        validate(s1)

    def test_held_object_cannot_pass_through_resting_one(self):
        s = make_state({"red": (2, 2, 0), "green": (3, 2, 0), "blue": (7, 7, 0)},
                       tcp=(2, 2, 0), aperture=0.5, held="red")
        assert step(s, Action.MOVE_PX) == s  # green sits at (3, 2, 0)
        over = step(step(s, Action.MOVE_PZ), Action.MOVE_PX)
        assert over.objects["red"] == (3, 2, 1)
        validate(over)

    def test_step_does_not_mutate_input(self):
        s = make_state({"red": (3, 3, 0), "green": (0, 0, 0), "blue": (7, 7, 0)},
                       tcp=(3, 3, 0))
        frozen = (dict(s.objects), s.tcp, s.aperture, s.grasp_sensor, s.held)
        for a in ACTIONS:
            step(s, a)
        assert (dict(s.objects), s.tcp, s.aperture, s.grasp_sensor, s.held) == frozen

    def test_step_deterministic(self):
        s = reset(5)
        for a in ACTIONS:
            assert step(s, a) == step(s, a)


class TestInvariantsUnderRandomWalk:
    def test_ten_thousand_step_walk_keeps_invariants(self):
        rng = np.random.default_rng(2024)
        s = reset(int(rng.integers(1 << 30)))
        for _ in range(10_000):
            s = step(s, ACTIONS[int(rng.integers(len(ACTIONS)))])
            validate(s)


class TestSceneDescription:
    def test_round_trip(self):
        s = make_state({"red": (2, 2, 1), "green": (2, 2, 0), "blue": (5, 1, 0)},
                       tcp=(4, 4, 2))
        d = describe(s)
        assert ("red", "green") in d.supports
        assert SceneDescription.from_text(d.to_text()) == d

    def test_round_trip_with_held(self):
        s = make_state({"red": (4, 4, 2), "green": (2, 2, 0), "blue": (5, 1, 0)},
                       tcp=(4, 4, 2), aperture=0.5, held="red")
        d = describe(s)
        assert d.held == "red"
        assert not d.supports
        assert SceneDescription.from_text(d.to_text()) == d

    def test_random_walk_round_trips(self):
        rng = np.random.default_rng(99)
        s = reset(3)
        for _ in range(500):
            s = step(s, ACTIONS[int(rng.integers(len(ACTIONS)))])
            d = describe(s)
            assert SceneDescription.from_text(d.to_text()) == d

    def test_held_not_reported_as_support(self):
        # held red directly above green looks stacked but is in the gripper
        s = make_state({"red": (2, 2, 1), "green": (2, 2, 0), "blue": (5, 1, 0)},
                       tcp=(2, 2, 1), aperture=0.5, held="red")
        assert describe(s).supports == ()


class TestRender:
    def test_deterministic_bytes(self, tmp_path):
        s = reset(11)
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        render(s, str(p1))
        render(s, str(p2))
        b1 = p1.read_bytes()
        assert b1 == p2.read_bytes()
        assert b1[:8] == b"\x89PNG\r\n\x1a\n"
