import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crmsfem.geometry import (CAVITY_DOMAIN, CHANNEL_DOMAIN, BCKind, DomainSpec, ObstacleSet,
                              PackingFailure, PenalizedCoefficients, cavity_lid, channel_parabolic,
                              coefficient_fields, coefficients_at, custom_dirichlet, generate_obstacles,
                              is_inside_obstacle)


def test_domain_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        DomainSpec(1.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        DomainSpec(0.0, 1.0, 0.0, 0.0)


def test_cavity49_packing():
    obs = generate_obstacles(49, 0.0285, CAVITY_DOMAIN, 0.05, 7)
    assert len(obs) == 49
    assert all(s == 0.0285 for _, _, s in obs)
    obs.check_inside(CAVITY_DOMAIN, margin=0.05)


def test_empty_count():
    obs = generate_obstacles(0, 0.3, CHANNEL_DOMAIN, 0.0, 123)
    assert len(obs) == 0
    assert not obs.contains(0.5, 0.5)


def test_seeded_determinism():
    a = generate_obstacles(16, 0.02, CHANNEL_DOMAIN, 0.1, 42)
    b = generate_obstacles(16, 0.02, CHANNEL_DOMAIN, 0.1, 42)
    assert a.squares == b.squares
    assert a.digest() == b.digest()
    assert generate_obstacles(16, 0.02, CHANNEL_DOMAIN, 0.1, 43).squares != a.squares


def test_packing_failure():
    with pytest.raises(PackingFailure):
        generate_obstacles(50, 0.4, DomainSpec(0, 1, 0, 1), 0.0, 0)


def _closed_overlap(a, b):
    # interval arithmetic on the closed squares
    ax0, ax1 = a[0] - a[2] / 2, a[0] + a[2] / 2
    ay0, ay1 = a[1] - a[2] / 2, a[1] + a[2] / 2
    bx0, bx1 = b[0] - b[2] / 2, b[0] + b[2] / 2
    by0, by1 = b[1] - b[2] / 2, b[1] + b[2] / 2
    return max(ax0, bx0) <= min(ax1, bx1) and max(ay0, by0) <= min(ay1, by1)


@settings(max_examples=30, deadline=None)
@given(count=st.integers(0, 25), eps=st.floats(0.01, 0.1), margin=st.floats(0.0, 0.2),
       seed=st.integers(0, 2**31), channel=st.booleans())
def test_generated_sets_are_disjoint_and_inside(count, eps, margin, seed, channel):
    domain = CHANNEL_DOMAIN if channel else CAVITY_DOMAIN
    obs = generate_obstacles(count, eps, domain, margin, seed)
    assert len(obs) == count
    for a, b in itertools.combinations(obs.squares, 2):
        assert not _closed_overlap(a, b)
    for cx, cy, s in obs:
        gap = min(cx - s / 2 - domain.x_min, domain.x_max - cx - s / 2,
                  cy - s / 2 - domain.y_min, domain.y_max - cy - s / 2)
        assert gap >= margin - 1e-12
    assert generate_obstacles(count, eps, domain, margin, seed) == obs


def test_obstacle_set_validation():
    with pytest.raises(ValueError):
        ObstacleSet(((0.0, 0.0, 0.2), (0.2, 0.0, 0.2)), 0.2)  # touching edges count as overlap
    with pytest.raises(ValueError):
        ObstacleSet(((0.0, 0.0, 0.2),), 0.1)


@pytest.mark.parametrize("point, expected", [
    ((0.05, 0.05), True),
    ((0.1, 0.0), True),
    ((0.11, 0.0), False),
])
def test_is_inside_obstacle(point, expected):
    obs = ObstacleSet(((0.0, 0.0, 0.2),), 0.2)
    assert is_inside_obstacle(obs, point) is expected


def test_json_round_trip():
    obs = generate_obstacles(10, 0.05, CAVITY_DOMAIN, 0.05, 3)
    back = ObstacleSet.from_json(obs.to_json())
    assert back == obs
    assert ObstacleSet.from_json("[]") == ObstacleSet()


@pytest.mark.parametrize("h, inside, expected", [
    (0.01, True, (100.0, 1e6)),
    (0.01, False, (1.0, 0.0)),
    (0.5, True, (2.0, 8.0)),
])
def test_coefficients_at(h, inside, expected):
    obs = ObstacleSet(((0.0, 0.0, 0.2),), 0.2)
    point = (0.0, 0.0) if inside else (0.5, 0.5)
    nu, sigma, f = coefficients_at(PenalizedCoefficients(h), obs, point, lambda x, y: (x * 0, y * 0))
    assert nu == pytest.approx(expected[0], rel=1e-15)
    assert sigma == pytest.approx(expected[1], rel=1e-15)
    assert tuple(f) == (0.0, 0.0)


def test_obstacle_force_is_zeroed():
    obs = ObstacleSet(((0.0, 0.0, 0.2),), 0.2)
    force = lambda x, y: (np.ones_like(x) * 3.0, np.ones_like(y) * -1.0)
    _, _, f_in = coefficients_at(PenalizedCoefficients(0.1), obs, (0.0, 0.0), force)
    _, _, f_out = coefficients_at(PenalizedCoefficients(0.1), obs, (0.5, 0.0), force)
    assert tuple(f_in) == (0.0, 0.0)
    assert tuple(f_out) == (3.0, -1.0)


@given(h=st.floats(1e-4, 1.0))
def test_penalty_scaling_exact(h):
    c = PenalizedCoefficients(h)
    assert math.isclose(c.nu_obstacle * h, 1.0, rel_tol=1e-15)
    assert math.isclose(c.sigma_obstacle * h**3, 1.0, rel_tol=1e-14)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000))
def test_coefficient_dichotomy(seed):
    obs = generate_obstacles(5, 0.1, CAVITY_DOMAIN, 0.0, seed)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, 500)
    y = rng.uniform(0, 1, 500)
    c = PenalizedCoefficients(0.05)
    _, sigma, _, inside = coefficient_fields(c, obs, x, y, None)
    assert np.all((sigma == 0) ^ (sigma == c.sigma_obstacle))
    assert np.array_equal(sigma > 0, inside)


def test_cavity_lid_values():
    bc = cavity_lid()
    assert bc.kind is BCKind.CAVITY_LID and bc.enclosed
    w = bc.velocity(np.array([0.0, -1.0, 1.0, 0.0, -1.0]), np.array([1.0, 1.0, 1.0, 0.0, 0.5]))
    np.testing.assert_array_equal(w, [[1, 0], [0, 0], [0, 0], [0, 0], [0, 0]])


def test_channel_values():
    bc = channel_parabolic()
    assert not bc.enclosed
    assert bc.dirichlet_sides() == ["bottom", "top", "left"]
    y = np.linspace(-1, 1, 5)
    w = bc.velocity(np.zeros(5), y)
    np.testing.assert_allclose(w[:, 0], 1 - y**2)
    np.testing.assert_array_equal(w[:, 1], 0.0)


def test_custom_preset_side_flags():
    with pytest.raises(ValueError):
        custom_dirichlet(lambda x, y: (x, y), {"bottom": "dirichlet"})
    bc = custom_dirichlet(lambda x, y: (x, -y))
    assert bc.enclosed
    np.testing.assert_array_equal(bc.velocity(2.0, 3.0), [2.0, -3.0])
