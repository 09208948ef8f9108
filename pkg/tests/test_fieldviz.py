"""Propagational-field computation and rendering."""

import csv

import numpy as np
import pytest

from paka.fieldviz import FieldQuery, field_to_csv, propagational_field, render_field
from paka.ops import ConvSpec
from paka.serialize import load_ppm
from paka.tensor import Rng


def _record(m, dilation=1, kernel_size=3):
    return {"m": m, "dilation": dilation, "offsets": ConvSpec(kernel_size, dilation=dilation).offsets()}


class TestFieldVectors:
    def test_zero_modulation_gives_zero_vector(self):
        # with m = 0 every offset weight is 1 and the offsets cancel
        fr = propagational_field([_record(np.zeros((1, 9, 5, 5)))], FieldQuery(2, 2))
        assert fr.vectors == [(0.0, 0.0)]

    def test_single_hot_tap_points_at_its_offset(self):
        m = np.full((1, 9, 5, 5), -40.0)  # all taps off (weight ~ 0)
        m[0, 2] = 40.0  # tap (-1, +1) saturated on (weight ~ 2)
        fr = propagational_field([_record(m)], FieldQuery(2, 2))
        vy, vx = fr.vectors[0]
        assert vy == pytest.approx(-2.0, abs=1e-12)
        assert vx == pytest.approx(2.0, abs=1e-12)

    def test_dilation_scales_vector(self):
        m = np.zeros((1, 9, 7, 7))
        m[0, 8] = 40.0  # tap (+1, +1)
        v1 = propagational_field([_record(m, dilation=1)], FieldQuery(3, 3)).vectors[0]
        v3 = propagational_field([_record(m, dilation=3)], FieldQuery(3, 3)).vectors[0]
        assert v3[0] == pytest.approx(3 * v1[0])
        assert v3[1] == pytest.approx(3 * v1[1])

    def test_one_vector_per_layer(self):
        trace = [_record(Rng(i).normal((1, 9, 5, 5))) for i in range(3)]
        fr = propagational_field(trace, FieldQuery(2, 2))
        assert len(fr.vectors) == 3

    def test_validation(self):
        with pytest.raises(ValueError):
            propagational_field([], FieldQuery(0, 0))
        with pytest.raises(IndexError):
            propagational_field([_record(np.zeros((1, 9, 4, 4)))], FieldQuery(4, 0))


class TestFootprint:
    def test_uniform_attention_footprint(self):
        # one 3x3 layer with A = 1 everywhere: nine offsets, weight 1 each
        fr = propagational_field([_record(np.zeros((1, 9, 5, 5)))], FieldQuery(2, 2, depth=1))
        assert len(fr.footprint) == 9
        assert all(w == pytest.approx(1.0) for w in fr.footprint.values())

    def test_two_layer_footprint_convolves(self):
        # two uniform layers: weights follow the 3x3 self-convolution
        trace = [_record(np.zeros((1, 9, 9, 9))) for _ in range(2)]
        fr = propagational_field(trace, FieldQuery(4, 4, depth=2))
        assert len(fr.footprint) == 25
        assert fr.footprint[(0, 0)] == pytest.approx(9.0)
        assert fr.footprint[(2, 2)] == pytest.approx(1.0)
        assert fr.footprint[(0, 2)] == pytest.approx(3.0)

    def test_depth_limits_expansion(self):
        trace = [_record(np.zeros((1, 9, 9, 9))) for _ in range(3)]
        fr = propagational_field(trace, FieldQuery(4, 4, depth=1))
        assert len(fr.footprint) == 9

    def test_dilated_layer_spreads_footprint(self):
        fr = propagational_field(
            [_record(np.zeros((1, 9, 9, 9)), dilation=2)], FieldQuery(4, 4, depth=1)
        )
        assert (2, 2) in fr.footprint and (1, 1) not in fr.footprint


class TestOutput:
    def test_csv_structure(self, tmp_path):
        trace = [_record(Rng(0).normal((1, 9, 5, 5)))]
        fr = propagational_field(trace, FieldQuery(2, 2, depth=1))
        path = tmp_path / "field.csv"
        field_to_csv(fr, path)
        with open(path) as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["layer", "dy", "dx", "weight"]
        kinds = {r[0] for r in rows[1:]}
        assert "vector_0" in kinds and "footprint" in kinds
        assert sum(r[0] == "footprint" for r in rows) == len(fr.footprint)

    def test_render_writes_valid_ppm(self, tmp_path):
        trace = [_record(Rng(1).normal((1, 9, 8, 8)))]
        fr = propagational_field(trace, FieldQuery(4, 4, depth=1))
        base = Rng(2).uniform((8, 8))
        path = tmp_path / "field.ppm"
        img = render_field(fr, base, path)
        loaded = load_ppm(path)
        assert loaded.shape == (8, 8, 3)
        # query pixel is painted pure green
        np.testing.assert_array_equal(loaded[4, 4], [0.0, 255.0, 0.0])
        np.testing.assert_array_equal(loaded, np.clip(np.rint(img), 0, 255))

    def test_render_deterministic(self, tmp_path):
        trace = [_record(Rng(3).normal((1, 9, 8, 8)))]
        fr = propagational_field(trace, FieldQuery(3, 5, depth=1))
        base = Rng(4).uniform((8, 8))
        a = render_field(fr, base, tmp_path / "a.ppm")
        b = render_field(fr, base, tmp_path / "b.ppm")
        np.testing.assert_array_equal(a, b)
        assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
