"""Interval and projection utilities."""
import pytest

from incentive_design.boxes import Boxes, ClampLog, Interval, project


class TestInterval:
    def test_width_and_contains(self):
        box = Interval(2.0, 5.0)
        assert box.width == 3.0
        assert box.contains(2.0) and box.contains(5.0) and box.contains(3.3)
        assert not box.contains(1.999) and not box.contains(5.001)
        assert box.contains(5.0005, tol=1e-3)

    def test_clamp(self):
        box = Interval(-1.0, 1.0)
        assert box.clamp(-3.0) == -1.0
        assert box.clamp(0.25) == 0.25
        assert box.clamp(9.0) == 1.0

    def test_degenerate_allowed_empty_rejected(self):
        assert Interval(2.0, 2.0).width == 0.0
        with pytest.raises(ValueError):
            Interval(3.0, 2.0)


class TestProject:
    def test_logs_only_actual_clamps(self):
        log = ClampLog()
        box = Interval(0.0, 10.0)
        assert project(5.0, box, "x", log) == 5.0
        assert project(-2.0, box, "x", log) == 0.0
        assert project(12.0, box, "y", log) == 10.0
        assert log.counts == {"x": 1, "y": 1}
        assert log.total == 2

    def test_no_log_is_fine(self):
        assert project(-1.0, Interval(0.0, 1.0), "x") == 0.0


class TestBoxes:
    def test_defaults(self):
        boxes = Boxes()
        assert (boxes.W.lo, boxes.W.hi) == (90.0, 400.0)
        assert (boxes.F.lo, boxes.F.hi) == (800.0, 4000.0)
        assert (boxes.R.lo, boxes.R.hi) == (0.0, 30.0)
        assert boxes.eps == 0.05

    def test_probability_box_from_eps(self):
        boxes = Boxes(eps=0.1)
        assert boxes.P.lo == 0.1 and boxes.P.hi == pytest.approx(0.9)

    def test_invalid_eps_rejected(self):
        with pytest.raises(ValueError):
            Boxes(eps=0.0)
        with pytest.raises(ValueError):
            Boxes(eps=0.5)

    def test_negative_bounds_rejected(self):
        with pytest.raises(ValueError):
            Boxes(R=Interval(-1.0, 30.0))
        with pytest.raises(ValueError):
            Boxes(K=Interval(-0.5, 5.0))
