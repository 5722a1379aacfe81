import numpy as np
import pytest

from glassbo.space import Design, Observation, ParamSpace, design_from_arrays


def test_bounds_must_be_ordered():
    with pytest.raises(ValueError):
        ParamSpace([0.0, 1.0], [1.0, 1.0])


def test_contains_and_clip():
    sp = ParamSpace([-1.0, 0.0], [1.0, 2.0])
    assert sp.contains(np.array([0.0, 1.0]))
    assert not sp.contains(np.array([2.0, 1.0]))
    assert np.allclose(sp.clip(np.array([5.0, -5.0])), [1.0, 0.0])


def test_sample_uniform_in_bounds_and_deterministic():
    sp = ParamSpace([-3.0, 2.0], [4.0, 9.0])
    a = sp.sample_uniform(100, np.random.default_rng(7))
    b = sp.sample_uniform(100, np.random.default_rng(7))
    assert a.shape == (100, 2)
    assert np.all(a >= sp.lower) and np.all(a <= sp.upper)
    assert np.array_equal(a, b)


def test_subbox_keeps_width_and_stays_inside():
    sp = ParamSpace([0.0, 0.0], [10.0, 10.0])
    sub = sp.subbox(np.array([9.5, 5.0]), 0.4)
    assert np.allclose(sub.upper - sub.lower, 4.0)
    assert np.all(sub.lower >= sp.lower) and np.all(sub.upper <= sp.upper)


def test_design_replicate_groups():
    t0 = np.array([1.0, 2.0])
    d = Design(
        [
            Observation(t0, 1.0),
            Observation(np.array([3.0, 4.0]), 2.0),
            Observation(t0, 3.0),
        ]
    )
    groups = d.replicate_groups()
    assert len(groups) == 1
    theta, vals = groups[0]
    assert np.array_equal(theta, t0)
    assert sorted(vals) == [1.0, 3.0]


def test_design_dimension_mismatch_rejected():
    d = Design([Observation(np.array([1.0, 2.0]), 0.0)])
    with pytest.raises(ValueError):
        d.append(Observation(np.array([1.0]), 0.0))


def test_design_csv_roundtrip(tmp_path):
    d = design_from_arrays([[0.5, -1.25], [2.0, 3.5]], [7.0, -0.125])
    path = tmp_path / "design.csv"
    d.to_csv(path)
    back = Design.from_csv(path)
    assert np.array_equal(back.thetas(), d.thetas())
    assert np.array_equal(back.psis(), d.psis())
    header = path.read_text().splitlines()[0]
    assert header == "theta_1,theta_2,psi"


def test_design_json_roundtrip(tmp_path):
    d = design_from_arrays([[0.5], [2.0]], [7.0, -0.125])
    path = tmp_path / "design.json"
    d.to_json(path)
    back = Design.from_json(path)
    assert np.array_equal(back.thetas(), d.thetas())
    assert np.array_equal(back.psis(), d.psis())


def test_best_is_min_psi():
    d = design_from_arrays([[0.0], [1.0], [2.0]], [5.0, -1.0, 3.0])
    assert d.best().psi == -1.0
