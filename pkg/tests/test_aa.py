import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radialvp import aa
from radialvp.structfn import DomainError, eval_G

G2 = 2.2955871493926382


def test_periapsis_maps_to_zero_angle():
    assert aa.to_aa(1.0, 0.0, 1.0) == (0.0, 1.0)
    assert aa.from_aa(0.0, 1.0, 1.0) == (1.0, 0.0)


def test_reference_points():
    theta, a = aa.to_aa(2.0, np.sqrt(0.5), 1.0)
    assert theta == pytest.approx(G2, rel=1e-14)
    assert a == pytest.approx(1.0, rel=1e-15)
    r, v = aa.from_aa(G2, 1.0, 1.0)
    assert r == pytest.approx(2.0, rel=1e-14)
    assert v == pytest.approx(np.sqrt(0.5), rel=1e-14)
    r, v = aa.from_aa(-G2, 1.0, 1.0)
    assert r == pytest.approx(2.0, rel=1e-14)
    assert v == pytest.approx(-np.sqrt(0.5), rel=1e-14)


def test_domain_errors():
    with pytest.raises(DomainError):
        aa.to_aa(0.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        aa.from_aa(1.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        aa.to_aa(1.0, 1.0, -1.0)
    with pytest.raises(DomainError):
        aa.jacobian_to_aa(1.0, 0.0, 1.0)


@pytest.mark.parametrize("r,v,q", [(1.0, 0.5, 1.0), (3.0, -2.0, 1.0), (10.0, 0.1, 2.0)])
def test_jacobian_reference_points(r, v, q):
    assert abs(aa.jacobian_to_aa(r, v, q) - 1.0) <= 1e-8


@pytest.mark.parametrize("q", [0.5, 1.0, 2.0])
def test_transform_suite_passes(q):
    report = aa.check_transform(q, n=60)
    assert report["passed"], report


def test_transform_suite_catches_perturbed_map():
    def bad(r, v, q):
        theta, a = aa.to_aa(r, v, q)
        return theta * (1 + 1e-6), a

    report = aa.check_transform(1.0, n=20, forward=bad)
    assert not report["passed"]
    assert report["checks"]["roundtrip_phys"]["offenders"]


def test_R_tilde_examples():
    assert aa.R_tilde(0.0, 1.0, 0.0, 1.0) == 1.0
    assert aa.R_tilde(0.0, 1.0, G2, 1.0) == pytest.approx(2.0, rel=1e-14)
    t = np.logspace(2, 8, 20)
    ratio = aa.R_tilde(0.5, 1.3, t, 1.0) / (t * 1.3)
    assert np.all(np.diff(np.abs(ratio - 1.0)) < 0)
    assert abs(ratio[-1] - 1.0) < 1e-6


def test_dR_at_periapsis():
    d_theta, d_a = aa.dR(0.0, 1.0, 1.0)
    assert d_theta == 0.0
    assert d_a == pytest.approx(-2.0, rel=1e-15)
    d_theta, d_a = aa.dR(0.0, 2.0, 3.0)
    assert d_a == pytest.approx(-2 * 3.0 / 8.0, rel=1e-15)


def test_dR_theta_tends_to_one():
    theta = np.logspace(1, 6, 20)
    d_theta, _ = aa.dR(theta, 1.0, 1.0)
    assert np.all(np.diff(d_theta) > 0)
    assert 1 - d_theta[-1] < 1e-5
    lower = 1 - 1.0 / aa.R(theta, 1.0, 1.0)
    assert np.all(d_theta >= lower)


def _grid_points():
    rng = np.random.default_rng(7)
    theta = rng.uniform(-30, 30, 400)
    a = np.exp(rng.uniform(np.log(0.2), np.log(5), 400))
    return theta, a


@pytest.mark.parametrize("t", [0.0, 0.7, 12.0])
def test_dR_tilde_matches_finite_differences(t):
    theta, a = _grid_points()
    q = 1.3
    d_theta, d_a = aa.dR_tilde(theta, a, t, q)
    h = 1e-5 * np.maximum(np.abs(theta + t * a), 1.0) / np.maximum(1.0, t)
    fd_t = (aa.R_tilde(theta + h, a, t, q) - aa.R_tilde(theta - h, a, t, q)) / (2 * h)
    ha = 1e-6 * a
    fd_a = (aa.R_tilde(theta, a + ha, t, q) - aa.R_tilde(theta, a - ha, t, q)) / (2 * ha)
    scale_t = np.maximum(np.abs(d_theta), 1e-3)
    scale_a = np.maximum(np.abs(d_a), 1e-3 * (t + 2 * q / a**3))
    assert np.all(np.abs(fd_t - d_theta) <= 1e-6 * scale_t)
    assert np.all(np.abs(fd_a - d_a) <= 1e-6 * scale_a)


@pytest.mark.parametrize("t", [0.0, 3.0])
def test_second_derivatives_match_finite_differences(t):
    theta, a = _grid_points()
    q = 0.8
    tt, ta, aa_ = aa.d2R_tilde(theta, a, t, q)
    h = 1e-4
    d1p = aa.dR_tilde(theta + h, a, t, q)
    d1m = aa.dR_tilde(theta - h, a, t, q)
    assert np.allclose((d1p[0] - d1m[0]) / (2 * h), tt, rtol=1e-5, atol=1e-8)
    assert np.allclose((d1p[1] - d1m[1]) / (2 * h), ta, rtol=1e-5, atol=1e-8)
    ha = 1e-5 * a
    d2p = aa.dR_tilde(theta, a + ha, t, q)
    d2m = aa.dR_tilde(theta, a - ha, t, q)
    assert np.allclose((d2p[1] - d2m[1]) / (2 * ha), aa_, rtol=1e-5, atol=1e-6)


def test_kinematics_agrees_with_separate_calls():
    theta, a = _grid_points()
    k = aa.kinematics(theta, a, 4.0, 1.0)
    assert np.array_equal(k.R, aa.R_tilde(theta, a, 4.0, 1.0))
    d_theta, d_a = aa.dR_tilde(theta, a, 4.0, 1.0)
    assert np.allclose(k.dR_dtheta, d_theta, rtol=1e-15, atol=0)
    assert np.allclose(k.dR_da, d_a, rtol=1e-14, atol=0)


def test_bulk_estimates():
    # asymptotic statements: they need t a^3 / q large, and R~ ~ t a / 2 sits
    # exactly on the edge |theta| = t a / 2 up to a logarithmic correction
    rng = np.random.default_rng(11)
    for t in [10.0, 1e3, 1e5]:
        a = np.exp(rng.uniform(np.log(t**-0.25), np.log(10), 4000))
        theta = rng.uniform(-0.5, 0.5, 4000) * t * a
        assert np.all(aa.in_bulk(theta, a, t))
        for q in [0.1, 1.0]:
            far = t * a**3 / q >= 20
            R = aa.R_tilde(theta, a, t, q)
            _, d_a = aa.dR_tilde(theta, a, t, q)
            assert np.all(d_a[far] >= 0.75 * t)
            inner = (t * a**3 / q >= 100) & (np.abs(theta) <= 0.45 * t * a)
            assert np.all((R[inner] >= t * a[inner] / 2) & (R[inner] <= 2 * t * a[inner]))
            log_corr = (q / a**2) * (0.5 * np.log(t * a**3 / q) + 1)
            assert np.all(R[far] >= t * a[far] / 2 - log_corr[far])


def test_bulk_masks():
    assert not aa.in_bulk(0.0, 1.0, 0.0)
    assert aa.in_bulk(0.0, 1.0, 16.0)
    assert not aa.in_bulk(0.0, 0.4, 16.0)
    assert not aa.in_bulk(9.0, 1.0, 16.0)
    assert aa.in_bulk_star(1.9, 1.5, 16.0)
    assert not aa.in_bulk_star(2.1, 1.5, 16.0)
    assert not aa.in_bulk_star(0.0, 2.1, 16.0)


def test_invert_R_outer_branches():
    r, t, q = 7.0, 2.5, 1.0
    grid = [0.3, 0.5, 1.0, 2.0]
    found = aa.invert_R(r, t, q, a_grid=grid)
    # a = 0.3 has a^2 r < q: no root
    assert {b.state.a for b in found} == {0.5, 1.0, 2.0}
    for b in found:
        assert abs(aa.R_tilde(*b.state, t, q) - r) <= 1e-10 * r
    b2 = [b for b in found if b.state.a == 2.0 and b.kind == "R2"][0]
    expected = -t * 2.0 + (q / 4.0) * eval_G(4.0 * r / q)
    assert b2.state.theta == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize(
    "theta0,a0,t",
    [(0.3, 1.2, 5.0), (-4.0, 1.0, 3.0), (-10.0, 0.5, 20.0), (2.0, 0.1, 1.0), (-3.0, 1.0, 3.0)],
)
def test_invert_R_round_trip(theta0, a0, t):
    q = 1.0
    r = aa.R_tilde(theta0, a0, t, q)
    found = aa.invert_R(r, t, q, a_grid=[a0], theta_grid=[theta0])
    hit = [
        b for b in found if abs(b.state.theta - theta0) <= 1e-9 * max(1, abs(theta0))
        and abs(b.state.a - a0) <= 1e-9 * a0
    ]
    assert hit


def test_invert_R_inner_root_bounds():
    q, t = 1.0, 4.0
    for r in [0.5, 1.0, 3.0, 10.0]:
        astar = np.sqrt(q / r)
        for theta in np.linspace(-4 * t * astar, 0.0, 9):
            for b in aa.invert_R(r, t, q, theta_grid=[theta]):
                assert astar <= b.state.a <= 2 * astar
                assert abs(aa.R_tilde(*b.state, t, q) - r) <= 1e-10 * r


def test_invert_R_empty_when_no_root():
    assert aa.invert_R(1.0, 1.0, 1.0, a_grid=[0.5, 0.9]) == []


positive = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)
velocity = st.floats(min_value=-1e2, max_value=1e2, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(positive, velocity, st.sampled_from([0.5, 1.0, 2.0]))
def test_property_round_trip_phys(r, v, q):
    theta, a = aa.to_aa(r, v, q)
    r2, v2 = aa.from_aa(theta, a, q)
    assert r2 == pytest.approx(r, rel=1e-10)
    assert v2 == pytest.approx(v, rel=1e-10, abs=1e-300)
    # a^2 R >= q everywhere
    assert a * a * r2 >= q * (1 - 1e-15)


@settings(max_examples=300, deadline=None)
@given(positive, velocity)
def test_property_odd_symmetry(r, v):
    theta, a = aa.to_aa(r, v, 1.0)
    theta_m, a_m = aa.to_aa(r, -v, 1.0)
    assert theta_m == -theta and a_m == a
    if theta != 0:
        assert aa.V(-theta, a, 1.0) == -aa.V(theta, a, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-1e4, max_value=1e4), positive, st.floats(min_value=0, max_value=1e4))
def test_property_dtheta_bounded(theta, a, t):
    d_theta, _ = aa.dR_tilde(theta, a, t, 1.0)
    assert abs(d_theta) <= 1.0
