import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagot import (AffineND, BaseMeasure, FeatureExpansion, InadmissibleParameter, LocationScale1D,
                   Rotation2D, Translation, draw, make_family, pushforward_consistency)
from lagot.pushforward import BumpFeature, PolyFeature, shear_features


def families():
    bump = BumpFeature((0.5, -0.5), 0.8, (1.0, 2.0))
    return [
        (Translation(2), lambda r: r.normal(size=2)),
        (LocationScale1D(), lambda r: np.array([r.normal(), r.uniform(0.3, 3)])),
        (AffineND(2), lambda r: AffineND(2).pack(r.normal(size=2),
                                                 np.tril(r.normal(size=(2, 2)), -1) + np.diag(r.uniform(0.3, 2, 2)))),
        (Rotation2D(), lambda r: np.array([r.uniform(0.05, 3.0)])),
        (FeatureExpansion(2, shear_features() + (bump,)), lambda r: r.uniform(-0.5, 0.5, 3)),
    ]


def test_forward_examples():
    assert np.allclose(Translation(2).forward([1, 2], [0, 0]), [1, 2])
    assert LocationScale1D().forward([0, 1], [0.7]) == pytest.approx([0.7])
    assert np.allclose(Rotation2D().forward([math.pi / 2], [1, 0]), [0, 1], atol=1e-15)


def test_jacobian_examples():
    assert np.array_equal(Translation(2).jacobian_theta([0.3, -1], [2.0, 5.0]), np.eye(2))
    assert np.allclose(LocationScale1D().jacobian_theta([0.4, 2.0], [0.7]), [[1.0], [0.7]])


def test_map_velocity_examples():
    z = np.random.default_rng(0).normal(size=(5, 2))
    assert np.allclose(Translation(2).map_velocity([1, 1], [1, 0], z), [[1, 0]] * 5)
    assert LocationScale1D().map_velocity([0, 1], [0, 1], [0.7]) == pytest.approx([0.7])
    assert np.allclose(Rotation2D().map_velocity([0], [1], [1, 0]), [0, 1])
    with pytest.raises(ValueError):
        Translation(2).map_velocity([0, 0], [1, 0, 0], [0, 0])


@pytest.mark.parametrize("idx", range(5))
def test_jacobian_matches_finite_differences(idx):
    fam, sample_theta = families()[idx]
    rng = np.random.default_rng(idx)
    h = 1e-5
    for _ in range(10):
        theta = sample_theta(rng)
        z = rng.normal(size=fam.n1)
        J = fam.jacobian_theta(theta, z)
        assert J.shape == (fam.d, fam.n)
        fd = np.stack([(fam.forward(theta + h * e, z) - fam.forward(theta - h * e, z)) / (2 * h)
                       for e in np.eye(fam.d)])
        assert np.max(np.abs(fd - J)) <= 1e-6 * max(1.0, np.max(np.abs(J)))


@pytest.mark.parametrize("idx", range(5))
def test_chain_rule_identity(idx):
    fam, sample_theta = families()[idx]
    rng = np.random.default_rng(100 + idx)
    h = 1e-5
    for _ in range(10):
        theta = sample_theta(rng)
        thetadot = rng.normal(size=fam.d)
        z = rng.normal(size=(4, fam.n1))
        v = fam.map_velocity(theta, thetadot, z)
        assert np.allclose(v, np.einsum("mkn,k->mn", fam.jacobian_theta(theta, z), thetadot))
        fd = (fam.forward(theta + h * thetadot, z) - fam.forward(theta - h * thetadot, z)) / (2 * h)
        assert np.max(np.abs(fd - v)) <= 1e-6 * max(1.0, np.max(np.abs(v)))


def test_stacked_and_single_points_agree():
    fam = AffineND(2)
    theta = fam.pack([0.5, -1], [[1.2, 0], [0.4, 0.7]])
    z = np.random.default_rng(1).normal(size=(6, 2))
    stacked = fam.forward(theta, z)
    assert np.allclose(stacked, [fam.forward(theta, zi) for zi in z])
    assert np.allclose(fam.jacobian_theta(theta, z), [fam.jacobian_theta(theta, zi) for zi in z])


@pytest.mark.parametrize("fam,theta,fragment", [
    (LocationScale1D(), [0.0, 0.0], "s > 0"),
    (LocationScale1D(), [0.0, -1.0], "s > 0"),
    (Rotation2D(), [math.pi], "theta < pi"),
    (AffineND(2), [0, 0, 1, 0, -1], "diag"),
    (FeatureExpansion(2, shear_features()), [0.6, 0.0], "0.5"),
])
def test_inadmissible_parameters_are_rejected(fam, theta, fragment):
    with pytest.raises(InadmissibleParameter, match="admissible") as info:
        fam.forward(theta, np.zeros(fam.n1))
    assert fragment in str(info.value)
    assert not fam.is_admissible(theta)


def test_non_finite_parameters_are_rejected():
    with pytest.raises(InadmissibleParameter):
        Translation(1).forward([np.nan], [0.0])


def test_consistency_examples(normal1_1e5):
    lhs, rhs = pushforward_consistency(LocationScale1D(), [0, 1], normal1_1e5, lambda x: x[:, 0] ** 2)
    assert rhs == pytest.approx(1.0, abs=1e-12)
    assert abs(lhs - 1.0) <= 5 * math.sqrt(2) / math.sqrt(normal1_1e5.count)
    lhs, rhs = pushforward_consistency(Translation(1), [3.0], normal1_1e5, lambda x: x[:, 0])
    assert rhs == pytest.approx(3.0, abs=1e-12)
    assert abs(lhs - 3.0) <= 5 / math.sqrt(normal1_1e5.count)


@pytest.mark.parametrize("idx", range(5))
def test_consistency_normalization_is_exact(idx, normal2_2e4, normal1_2e4):
    fam, sample_theta = families()[idx]
    batch = normal1_2e4 if fam.n1 == 1 else normal2_2e4
    theta = sample_theta(np.random.default_rng(idx))
    ref = None if fam.gaussian_law(theta, batch.measure) is not None else batch
    assert pushforward_consistency(fam, theta, batch, lambda x: np.ones(len(x)), ref) == (1.0, 1.0)


def test_consistency_needs_reference_without_closed_form(normal2_2e4):
    fam = FeatureExpansion(2, shear_features())
    with pytest.raises(ValueError, match="reference"):
        pushforward_consistency(fam, [0.1, 0.2], normal2_2e4, lambda x: x[:, 0])
    ref = draw(BaseMeasure.standard_normal(2), 99, 200_000)
    lhs, rhs = pushforward_consistency(fam, [0.1, 0.2], normal2_2e4, lambda x: x[:, 0] ** 2, ref)
    assert abs(lhs - rhs) < 0.1


def test_affine_consistency_against_gaussian_law(normal2_1e5):
    fam = AffineND(2)
    theta = fam.pack([1.0, -2.0], [[1.5, 0.0], [0.5, 0.8]])
    f = lambda x: np.cos(x[:, 0]) + x[:, 0] * x[:, 1]
    lhs, rhs = pushforward_consistency(fam, theta, normal2_1e5, f)
    assert abs(lhs - rhs) < 5 * 2.5 / math.sqrt(normal2_1e5.count)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, math.pi, exclude_max=True))
def test_rotation_leaves_law_unchanged(theta):
    batch = draw(BaseMeasure.standard_normal(2), 3, 20_000)
    x = Rotation2D().forward([theta], batch.points)
    N = batch.count
    assert np.linalg.norm(x.mean(axis=0)) <= 5 / math.sqrt(N)
    assert np.max(np.abs(np.cov(x.T) - np.eye(2))) <= 10 / math.sqrt(N)


def test_make_family_builds_features():
    fam = make_family("feature-expansion", n=2, radius=0.3, features=[
        {"type": "poly", "terms": [[0, 1.0, [0, 1]]]},
        {"type": "bump", "center": [0, 0], "width": 1.0, "direction": [1, 0]},
    ])
    assert fam.d == 2 and fam.radius == 0.3
    assert isinstance(fam.features[0], PolyFeature)
    with pytest.raises(ValueError):
        make_family("spline")
