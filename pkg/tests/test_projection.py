import numpy as np
import pytest

from curator.projection import ProjectionSpec, project, project_many


class TestProjectBasics:
    def test_zero_vector_maps_to_zero(self):
        spec = ProjectionSpec(input_dim=128, output_dim=32, seed=1)
        assert np.all(project(np.zeros(128), spec) == 0.0)

    def test_same_seed_is_bit_identical(self):
        spec = ProjectionSpec(input_dim=256, output_dim=64, seed=9)
        v = np.random.default_rng(0).normal(size=256)
        assert np.array_equal(project(v, spec), project(v, spec))

    def test_different_seeds_differ(self):
        v = np.random.default_rng(0).normal(size=256)
        a = project(v, ProjectionSpec(input_dim=256, output_dim=64, seed=1))
        b = project(v, ProjectionSpec(input_dim=256, output_dim=64, seed=2))
        assert not np.allclose(a, b)

    def test_block_size_does_not_change_result(self):
        spec = ProjectionSpec(input_dim=300, output_dim=50, seed=4)
        v = np.random.default_rng(1).normal(size=(3, 300))
        a = project_many(v, spec, block_rows=7)
        b = project_many(v, spec, block_rows=1024)
        # blocking changes float accumulation order, not the projection
        assert np.allclose(a, b, rtol=1e-5, atol=1e-6)

    def test_dimension_mismatch_raises(self):
        spec = ProjectionSpec(input_dim=128, output_dim=32)
        with pytest.raises(ValueError, match="dim"):
            project(np.zeros(100), spec)

    def test_non_finite_input_raises(self):
        spec = ProjectionSpec(input_dim=8, output_dim=4)
        v = np.zeros(8)
        v[3] = np.nan
        with pytest.raises(ValueError, match="finite"):
            project(v, spec)

    def test_output_dim_larger_than_input_rejected(self):
        with pytest.raises(ValueError):
            ProjectionSpec(input_dim=16, output_dim=32)


class TestLinearity:
    def test_linear_combination(self):
        spec = ProjectionSpec(input_dim=512, output_dim=128, seed=3)
        rng = np.random.default_rng(7)
        for _ in range(5):
            x, y = rng.normal(size=512), rng.normal(size=512)
            a, b = rng.uniform(-3, 3, size=2)
            lhs = project(a * x + b * y, spec)
            rhs = a * project(x, spec) + b * project(y, spec)
            scale = np.max(np.abs(lhs)) or 1.0
            assert np.max(np.abs(lhs - rhs)) / scale < 1e-4


class TestDistancePreservation:
    def test_pairwise_distances_within_15_percent(self):
        # oracle: exact L2 distances on the unprojected vectors
        rng = np.random.default_rng(123)
        n, d_in, d_out = 100, 65536, 1024
        spec = ProjectionSpec(input_dim=d_in, output_dim=d_out, seed=17)
        a = rng.normal(size=(n, d_in)).astype(np.float32)
        b = rng.normal(size=(n, d_in)).astype(np.float32)
        exact = np.linalg.norm(a.astype(np.float64) - b.astype(np.float64), axis=1)
        pa = project_many(a, spec, block_rows=4096)
        pb = project_many(b, spec, block_rows=4096)
        projected = np.linalg.norm(pa - pb, axis=1)
        rel = np.abs(projected - exact) / exact
        assert np.mean(rel <= 0.15) >= 0.95
