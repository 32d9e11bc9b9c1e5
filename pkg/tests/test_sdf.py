import numpy as np
import pytest

from groundmesh.geometry import Aabb
from groundmesh.metrics import chamfer
from groundmesh.mc import marching_cubes
from groundmesh.sdf import (
    Constant,
    HierarchicalConfig,
    dense_decode,
    hierarchical_decode,
    make_box,
    make_sphere,
    make_torus,
    make_union,
)

CUBE = Aabb([-1, -1, -1], [1, 1, 1])


def test_oracle_examples():
    assert make_sphere((0, 0, 0), 1.0)([[0, 0, 0]])[0] == -1.0
    assert make_box((0, 0, 0), (1, 1, 1))([[2, 0, 0]])[0] == 1.0
    assert make_torus((0, 0, 0), 0.5, 0.1)([[0.5, 0, 0]])[0] == pytest.approx(-0.1)
    with pytest.raises(ValueError):
        make_sphere((0, 0, 0), 0.0)
    with pytest.raises(ValueError):
        make_box((0, 0, 0), (1, -1, 1))
    with pytest.raises(ValueError):
        make_torus((0, 0, 0), 0.5, 0.0)


def test_box_exterior_exact():
    b = make_box((0, 0, 0), (1, 1, 1))
    assert b([[2, 2, 0]])[0] == pytest.approx(np.sqrt(2))
    assert b([[0.5, 0, 0]])[0] == pytest.approx(-0.5)


def test_union_is_min():
    rng = np.random.default_rng(0)
    a, b = make_sphere((0.2, 0, 0), 0.4), make_box((-0.3, 0, 0), (0.2, 0.3, 0.1))
    u = make_union(a, b)
    p = rng.uniform(-1, 1, size=(100, 3))
    assert np.array_equal(u(p), np.minimum(a(p), b(p)))
    assert u.query_count == 100 and a.query_count == 100 and b.query_count == 100


def test_query_count_per_batch():
    s = make_sphere((0, 0, 0), 0.5)
    s(np.zeros((7, 3)))
    s(np.zeros((3, 3)))
    assert s.query_count == 10


def test_dense_counts_and_values():
    s = make_sphere((0, 0, 0), 0.5)
    grid, stats = dense_decode(s, 2, CUBE)
    assert stats.queries_issued == 27 == s.query_count
    assert stats.reduction == 0.0
    assert grid.values[1, 1, 1] == pytest.approx(-0.5, abs=1e-12)
    assert grid.values[0, 0, 0] == pytest.approx(np.sqrt(3) - 0.5, abs=1e-12)


def test_hierarchical_matches_dense_where_evaluated():
    t = make_torus((0, 0, 0), 0.5, 0.15)
    dense, _ = dense_decode(make_torus((0, 0, 0), 0.5, 0.15), 64, CUBE)
    grid, stats = hierarchical_decode(t, 64, CUBE)
    k = grid.keys
    r1 = 65
    ijk = np.stack([k // (r1 * r1), (k // r1) % r1, k % r1], axis=1)
    assert np.array_equal(grid.samples, dense.values[ijk[:, 0], ijk[:, 1], ijk[:, 2]])
    assert stats.queries_issued == t.query_count
    assert 0 < stats.reduction < 1
    assert grid.evaluated_mask(ijk).all()


def test_no_surface_found():
    c = Constant(0.7)
    grid, stats = hierarchical_decode(c, 64, CUBE)
    assert not grid.surface_found and not stats.surface_found
    assert stats.queries_issued == 9 ** 3
    assert marching_cubes(grid).is_empty


def test_config_validation():
    with pytest.raises(ValueError):
        HierarchicalConfig(coarse_resolution=48).coarse_for(128)
    with pytest.raises(ValueError):
        HierarchicalConfig(coarse_resolution=24).coarse_for(128)
    assert HierarchicalConfig().coarse_for(384) == 48
    assert HierarchicalConfig(coarse_resolution=96).coarse_for(384) == 96


@pytest.mark.parametrize("shape", ["sphere", "box", "torus"])
def test_hierarchical_mesh_close_to_dense_at_128(shape):
    make = {
        "sphere": lambda: make_sphere((0.03, -0.02, 0.01), 0.6),
        "box": lambda: make_box((0.01, 0.02, -0.03), (0.5, 0.35, 0.25)),
        "torus": lambda: make_torus((0, 0, 0), 0.5, 0.15),
    }[shape]
    d, _ = dense_decode(make(), 128, CUBE)
    h, stats = hierarchical_decode(make(), 128, CUBE)
    md, mh = marching_cubes(d), marching_cubes(h)
    assert chamfer(md.vertices, mh.vertices) < 0.5 * (2.0 / 128)
    assert stats.reduction > 0.7


def test_value_at_inherits_interpolation():
    s = make_sphere((0, 0, 0), 0.5)
    grid, _ = hierarchical_decode(s, 64, CUBE)
    # far corner is never refined, so it comes from the coarse level
    far = np.array([[1, 1, 1]])
    assert not grid.evaluated_mask(far)[0]
    coarse_val = grid.levels[0].dense_values[0, 0, 0]
    assert grid.value_at(np.array([[0, 0, 0]]))[0] == coarse_val
    assert np.isfinite(grid.value_at(far)[0])
