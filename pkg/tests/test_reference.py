import math

import numpy as np
import pytest

from vspinn.reference import (
    ReferenceFormatError,
    ReferenceGrid,
    allen_cahn_reference,
    load_reference,
    save_reference,
)


@pytest.fixture(scope="module")
def oracle():
    return allen_cahn_reference(512, 10000)


def test_resolution_floor():
    with pytest.raises(ValueError):
        allen_cahn_reference(128, 10000)
    with pytest.raises(ValueError):
        allen_cahn_reference(512, 500)


def test_initial_slice_is_exact(oracle):
    x = oracle.axes[0]
    assert np.array_equal(oracle.values[:, 0, 0], x**2 * np.cos(math.pi * x))


def test_grid_covers_domain(oracle):
    x, t = oracle.axes
    assert x[0] == -1.0 and x[-1] == 1.0 and len(x) == 513
    assert t[0] == 0.0 and t[-1] == 1.0


def test_bounded_by_one(oracle):
    assert np.max(np.abs(oracle.values)) <= 1.0 + 1e-6


def test_periodic_node_is_shared(oracle):
    assert np.array_equal(oracle.values[0], oracle.values[-1])


def test_plateaus_at_final_time(oracle):
    assert np.mean(np.abs(oracle.values[:, -1, 0]) > 0.9) >= 0.8


def test_step_size_converged(oracle):
    finer = allen_cahn_reference(512, 20000)
    assert np.max(np.abs(finer.values - oracle.values)) < 1e-3


def test_self_convergence(oracle):
    fine = allen_cahn_reference(1024, 20000)
    assert np.max(np.abs(fine.values[::2] - oracle.values)) < 1e-3


def test_points_are_row_major():
    g = ReferenceGrid((np.array([0.0, 1.0]), np.array([0.0, 0.5, 1.0])), np.arange(6.0).reshape(2, 3, 1))
    assert g.points().tolist() == [[0, 0], [0, 0.5], [0, 1], [1, 0], [1, 0.5], [1, 1]]
    assert g.flat_values()[:, 0].tolist() == list(range(6))


def test_grid_validation():
    with pytest.raises(ReferenceFormatError):
        ReferenceGrid((np.array([0.0, 0.0]),), np.zeros((2, 1)))
    with pytest.raises(ReferenceFormatError):
        ReferenceGrid((np.array([0.0, 1.0]),), np.zeros((3, 1)))


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    g = ReferenceGrid((np.linspace(-1, 1, 4), np.array([0.0, 0.3, 1.0])), rng.normal(size=(4, 3, 2)), ("u", "v"))
    path = tmp_path / "ref.csv"
    save_reference(g, path)
    h = load_reference(path)
    assert h.fields == ("u", "v")
    assert all(np.array_equal(a, b) for a, b in zip(g.axes, h.axes))
    assert np.array_equal(g.values, h.values)


def test_load_rejects_non_monotone_axis(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("3\n0.0,2.0,1.0\nu\n1\n2\n3\n")
    with pytest.raises(ReferenceFormatError, match="increasing"):
        load_reference(path)


def test_load_rejects_missing_field_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("2\n0.0,1.0\nu,v\n1,2\n3\n")
    with pytest.raises(ReferenceFormatError, match="columns"):
        load_reference(path)


def test_load_rejects_wrong_axis_length(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("3\n0.0,1.0\nu\n1\n2\n3\n")
    with pytest.raises(ReferenceFormatError, match="axis 0"):
        load_reference(path)


def test_load_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n")
    with pytest.raises(ReferenceFormatError):
        load_reference(path)
