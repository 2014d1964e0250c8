import itertools

import numpy as np
import pytest

from calibcube.errors import InvalidSpec, NoMatch
from calibcube.target import (
    FACES,
    TargetSpec,
    build_geometry,
    corner_for_frequency,
    load_target,
    match_tolerance,
    validate_tolerances,
)


def test_unit_cube_corners():
    geo = build_geometry(TargetSpec(edge_length=1.0, marker_side=0.25))
    expected = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0], [0, 1, 1], [1, 0, 1]]
    assert np.array_equal(geo.corners, expected)


def test_sixty_marker_corners_each_on_one_face():
    spec = TargetSpec()
    geo = build_geometry(spec)
    assert geo.aruco_corners.shape == (60, 3)
    zeros = np.sum(np.abs(geo.aruco_corners) < 1e-15, axis=1)
    assert np.all(zeros == 1)
    # the zero coordinate identifies the face
    for i, face in enumerate(geo.aruco_face):
        axis = {"top": 2, "right": 0, "left": 1}[FACES[face]]
        assert geo.aruco_corners[i, axis] == 0.0


def test_pairwise_corner_distances():
    L = 0.5
    geo = build_geometry(TargetSpec(edge_length=L))
    allowed = np.array([L, L * np.sqrt(2), L * np.sqrt(3)])
    for a, b in itertools.combinations(geo.corners, 2):
        assert np.min(np.abs(np.linalg.norm(a - b) - allowed)) < 1e-9


def test_geometry_deterministic():
    a, b = build_geometry(TargetSpec()), build_geometry(TargetSpec())
    assert a.corners.tobytes() == b.corners.tobytes()
    assert a.aruco_corners.tobytes() == b.aruco_corners.tobytes()


def test_marker_corners_inside_faces_with_margin():
    spec = TargetSpec()
    geo = build_geometry(spec)
    assert np.all(geo.aruco_corners >= 0) and np.all(geo.aruco_corners <= spec.edge_length)
    with pytest.raises(InvalidSpec):
        build_geometry(TargetSpec(marker_side=0.2))


def test_face_permutation_moves_ids_not_points():
    ids = TargetSpec().marker_ids
    swapped = {"top": ids["left"], "right": ids["right"], "left": ids["top"]}
    a, b = build_geometry(TargetSpec()), build_geometry(TargetSpec(marker_ids=swapped))
    assert np.array_equal(a.aruco_corners, b.aruco_corners)
    assert TargetSpec(marker_ids=swapped).corner_indices(ids["top"][0]) == [40, 41, 42, 43]


@pytest.mark.parametrize("freqs", [
    (25, 50, 75, 100, 125, 150),
    (25, 25, 75, 100, 125, 150, 175),
    (5, 50, 75, 100, 125, 150, 175),
    (25, 50, 75, 100, 125, 150, 250),
])
def test_invalid_frequencies(freqs):
    with pytest.raises(InvalidSpec):
        TargetSpec(led_frequencies=freqs)


def test_corner_for_frequency():
    spec = TargetSpec()
    assert corner_for_frequency(spec, 75.0, 2.0) == 2
    assert corner_for_frequency(spec, 75.0 + 1.0, 2.0) == 2
    with pytest.raises(NoMatch):
        corner_for_frequency(spec, 87.5, 2.0)
    with pytest.raises(ValueError):
        corner_for_frequency(spec, 75.0, 12.5)


def test_default_tolerances_valid():
    validate_tolerances(TargetSpec())
    assert match_tolerance(25.0) == 2.0
    assert match_tolerance(175.0) == pytest.approx(8.75)
    with pytest.raises(InvalidSpec):
        validate_tolerances(TargetSpec(led_frequencies=(20, 23, 75, 100, 125, 150, 175)))


def test_toml_round_trip(tmp_path):
    from calibcube.config import write_toml

    spec = TargetSpec(edge_length=0.6, marker_side=0.14)
    f = tmp_path / "target.toml"
    write_toml(f, spec.to_dict())
    assert load_target(f) == spec
