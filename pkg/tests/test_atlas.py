import numpy as np
import pytest

from craniotk.atlas import (Atlas, build_atlas, load_atlas, prior_channel,
                            save_atlas)
from craniotk.errors import AtlasBuildError, GeometryMismatchError
from craniotk.grid import GridGeometry, VoxelGrid, component_count, threshold
from craniotk.metrics import dice
from craniotk.phantom import (PopulationVariability, fit_geometry,
                              generate_phantom, sample_population)
from craniotk.transforms import common_grid

GRID = common_grid(dims=(88, 88, 72), spacing=(2.0, 2.0, 2.0))


@pytest.fixture(scope="module")
def small_population():
    specs = sample_population(4, 21, PopulationVariability().scaled(0.3))
    geom = fit_geometry(specs, 2.0, margin_mm=20)
    return [generate_phantom(s, geom) for s in specs]


@pytest.fixture(scope="module")
def built(small_population):
    return build_atlas(small_population, grid=GRID, workers=2)


class TestBuild:
    def test_identical_inputs_binary_average(self, small_population):
        fulls = [small_population[0]] * 3
        atlas = build_atlas(fulls, grid=GRID, iterations=1)
        # averaging identical aligned inputs: occupancy is (almost) {0, 1}
        frac_binary = np.mean((atlas.average.data == 0)
                              | (atlas.average.data == 1))
        assert frac_binary > 0.99
        assert dice(atlas.binary, atlas.binary) == 1.0
        # atlas reproduces the input up to resampling
        aligned_dice = atlas.mean_dice_history[-1]
        assert aligned_dice >= 0.98

    def test_two_skull_majority_vote(self, small_population):
        atlas = build_atlas(small_population[:2], t=0.5, grid=GRID,
                            iterations=1)
        # with two inputs, mean >= 0.5 iff both set (up to the 0.5 boundary)
        both = threshold(atlas.average, 1.0 - 1e-9)
        assert atlas.binary.count >= both.count
        at_least_one = threshold(atlas.average, 1e-9)
        assert atlas.binary.count <= at_least_one.count

    def test_refinement_improves_mean_dice(self):
        specs = sample_population(6, 13, PopulationVariability().scaled(0.5))
        geom = fit_geometry(specs, 2.0, margin_mm=20)
        fulls = [generate_phantom(s, geom) for s in specs]
        atlas = build_atlas(fulls, grid=GRID, iterations=2, workers=2)
        assert len(atlas.mean_dice_history) == 2
        assert atlas.mean_dice_history[1] > atlas.mean_dice_history[0]

    def test_needs_two_inputs(self, small_population):
        with pytest.raises(AtlasBuildError):
            build_atlas(small_population[:1], grid=GRID)

    def test_empty_input_rejected(self, small_population):
        empty = VoxelGrid.empty(small_population[0].geom)
        with pytest.raises(AtlasBuildError):
            build_atlas([small_population[0], empty], grid=GRID)

    def test_binary_is_threshold_of_average(self, built):
        built.validate()

    def test_single_connected_component(self, built):
        assert component_count(built.binary, 6) == 1

    def test_threshold_monotone(self, small_population):
        a4 = build_atlas(small_population, t=0.4, grid=GRID, iterations=1)
        a6 = build_atlas(small_population, t=0.6, grid=GRID, iterations=1)
        assert (a4.binary.data >= a6.binary.data).all()

    def test_deterministic(self, small_population, built):
        again = build_atlas(small_population, grid=GRID, workers=2)
        assert again.binary.equals(built.binary)
        assert np.array_equal(again.average.data, built.average.data)


class TestPriorChannel:
    def test_pair_contract(self, built):
        defected = VoxelGrid.empty(built.grid)
        ch1, ch2 = prior_channel(defected, built)
        assert ch1.is_empty
        assert ch2.equals(built.binary)
        assert ch1.same_geometry(ch2)

    def test_geometry_mismatch(self, built):
        other = VoxelGrid.empty(GridGeometry((10, 10, 10)))
        with pytest.raises(GeometryMismatchError):
            prior_channel(other, built)


class TestPersistence:
    def test_roundtrip(self, built, tmp_path):
        save_atlas(built, tmp_path / "atlas")
        back = load_atlas(tmp_path / "atlas")
        assert back.binary.equals(built.binary)
        assert np.allclose(back.average.data, built.average.data, atol=1e-7)
        assert back.threshold == built.threshold
        assert back.provenance == built.provenance
        assert back.mean_dice_history == pytest.approx(
            built.mean_dice_history, abs=1e-6)

    def test_validate_catches_corruption(self, built):
        bad = Atlas(average=built.average,
                    binary=VoxelGrid.empty(built.grid),
                    threshold=built.threshold)
        with pytest.raises(ValueError):
            bad.validate()
