import numpy as np
import pytest

from rgfwave import forward
from rgfwave.expr import eta, eta_prime
from rgfwave.grid import build_grid
from rgfwave.oracles import radial_boundary_field
from rgfwave.scenario import eval_source, velocity
from rgfwave.verify import bisection_retarded_time

from conftest import small_scenario


def point(px="0", py="0", pz="0", q="1"):
    return {"kind": "point", "px": px, "py": py, "pz": pz, "q": q}


def spec_of(src, T=12.0, R=2.0):
    return small_scenario([src], T=T).sources[0]


def test_retarded_time_stationary():
    s = forward.retarded_time(spec_of(point()), 5.0, np.array([2.0, 0, 0]), 1.0)
    assert s == pytest.approx(3.0, abs=1e-14)


def test_retarded_time_before_zero_is_the_real_root():
    s = forward.retarded_time(spec_of(point()), 1.0, np.array([2.0, 0, 0]), 1.0)
    assert s == pytest.approx(-1.0, abs=1e-14)


def test_retarded_time_moving_source_vs_bisection(scenarios):
    spec = scenarios["point3"].sources[1]
    r = np.array([0.0, 0.0, 2.0])
    s = forward.retarded_time(spec, 10.0, r, 1.0)
    assert float(s) == pytest.approx(bisection_retarded_time(spec, 10.0, r, 1.0), abs=1e-12)


def test_retarded_time_broadcasts(scenarios):
    spec = scenarios["point3"].sources[0]
    g = build_grid(2.0, 3, 4)
    s = forward.retarded_time(spec, np.array([10.0, 20.0])[:, None], g.points[None], 1.0)
    assert s.shape == (2, g.n_nodes)
    p, _ = eval_source(spec, s)
    np.testing.assert_allclose(np.array([10.0, 20.0])[:, None] - s, np.linalg.norm(g.points - p, axis=-1), atol=1e-12)


def test_free_field_of_stationary_unit_source():
    spec = spec_of(point(q="eta(t)"))
    u = forward.free_field_point([spec], 10.0, np.array([2.0, 0, 0]), 1.0)
    assert u == pytest.approx(1 / (8 * np.pi), rel=1e-13)


def test_free_field_without_sources():
    r = np.zeros((3, 3)) + [2.0, 0, 0]
    assert np.all(forward.free_field_point([], 1.0, r, 1.0) == 0)
    assert np.all(forward.free_field_dipole([], 1.0, r, 1.0) == 0)


def test_free_field_point_vs_direct_formula(scenarios):
    spec = scenarios["point3"].sources[0]
    t, r, c = 20.0, np.array([2.0, 0.0, 0.0]), 1.0
    s = bisection_retarded_time(spec, t, r, c)
    p, q = eval_source(spec, s)
    d = np.linalg.norm(r - p)
    h = 1 - velocity(spec, s) @ (r - p) / (c * d)
    ref = q / (4 * np.pi * d * h)
    assert float(forward.free_field_point([spec], t, r, c)) == pytest.approx(float(ref), rel=1e-9)


def test_static_dipole_far_field():
    spec = small_scenario([{"kind": "dipole", "px": "0", "py": "0", "pz": "0", "mx": "1", "my": "0"}]).sources[0]
    d = 1.5
    u = forward.free_field_dipole([spec], 8.0, np.array([d, 0.0, 0.0]), 1.0)
    assert float(u) == pytest.approx(1 / (4 * np.pi * d**2), rel=1e-9)


def test_zero_dipole_moment():
    spec = small_scenario([{"kind": "dipole", "px": "0.1*sin(t)", "py": "0", "pz": "0", "mx": "0", "my": "0"}]).sources[0]
    assert forward.free_field_dipole([spec], 5.0, np.array([0, 2.0, 0]), 1.0) == 0


def test_dipole_time_step_halving(scenarios):
    spec = scenarios["dipole3"].sources[0]
    r = np.array([0.0, 2.0, 0.0])
    a = forward.free_field_dipole([spec], 25.0, r, 1.0, h_t=1e-3)
    b = forward.free_field_dipole([spec], 25.0, r, 1.0, h_t=5e-4)
    assert abs(a - b) < 1e-6 * max(1.0, abs(b))


def test_normal_derivative_of_radial_field():
    spec = spec_of(point(q="eta(t/2)"))
    g = build_grid(2.0, 3, 4)
    t = 5.3
    du = forward.normal_derivative_free_field([spec], "point", t, g.points, g.normals, 1.0)
    q, dq = eta((t - 2) / 2), eta_prime((t - 2) / 2) / 2
    np.testing.assert_allclose(du, -q / (16 * np.pi) - dq / (8 * np.pi), rtol=1e-8)


def test_normal_derivative_second_order():
    spec = spec_of(point(q="eta(t/2)"))
    r, nu, t = np.array([[2.0, 0, 0]]), np.array([[1.0, 0, 0]]), 5.3
    exact = -eta((t - 2) / 2) / (16 * np.pi) - eta_prime((t - 2) / 2) / 2 / (8 * np.pi)
    e1 = abs(forward.normal_derivative_free_field([spec], "point", t, r, nu, 1.0, h_s=0.02)[0] - exact)
    e2 = abs(forward.normal_derivative_free_field([spec], "point", t, r, nu, 1.0, h_s=0.01)[0] - exact)
    assert e1 / e2 == pytest.approx(4.0, rel=0.05)


def test_normal_derivative_no_sources():
    g = build_grid(2.0, 2, 3)
    assert np.all(forward.normal_derivative_free_field([], "point", 1.0, g.points, g.normals, 1.0) == 0)


def test_sphere_kernel_identity(rng):
    R = 2.0
    a, b = rng.normal(size=(2, 50, 3))
    r = R * a / np.linalg.norm(a, axis=1)[:, None]
    rho = R * b / np.linalg.norm(b, axis=1)[:, None]
    d = np.linalg.norm(r - rho, axis=1)
    nu = r / R
    np.testing.assert_allclose(np.sum(nu * (r - rho), axis=1) / d**2, 1 / (2 * R), rtol=1e-12)


def test_harmonic_basis_orthonormal():
    g = build_grid(2.0, 8, 16)
    B, deg = forward.sh_basis(g)
    G = B.T @ (g.weights[:, None] * B)
    np.testing.assert_allclose(G, np.eye(B.shape[1]), atol=1e-12)
    assert deg.max() == 7


def test_lagrange_weights_reproduce_cubics():
    dt = 0.1
    base, w, dw = forward.lagrange_weights(np.array([0.03, 0.17, 0.42]), dt)
    t_now = 1.0
    f = lambda t: 1 + 2 * t - t**2 + 0.5 * t**3
    df = lambda t: 2 - 2 * t + 1.5 * t**2
    lags = base[:, None] + np.arange(4)
    vals = f(t_now - dt * lags)
    np.testing.assert_allclose(np.sum(w * vals, axis=1), f(t_now - np.array([0.03, 0.17, 0.42])), atol=1e-13)
    np.testing.assert_allclose(np.sum(dw * vals, axis=1), df(t_now - np.array([0.03, 0.17, 0.42])), atol=1e-11)
    assert np.all(lags >= 0)


def test_zero_magnitudes_give_zero_field():
    scn = small_scenario([point(px="0.3*sin(t)", q="0")])
    f = forward.march_boundary_field(scn)
    assert np.all(f.phi == 0)


@pytest.mark.parametrize("backend", ["cython", "python"])
def test_radial_oracle(backend):
    scn = small_scenario([point(q="eta((t-1)/4)")], T=16.0)
    f = forward.march_boundary_field(scn, backend=backend)
    exact = radial_boundary_field(lambda s: eta_prime((s - 1) / 4) / 4, f.times, 2.0)
    assert np.all(f.phi[0] == 0)
    assert np.max(np.std(f.phi, axis=1)) < 1e-12  # spherical symmetry
    err = np.linalg.norm(f.phi - exact[:, None]) / np.linalg.norm(exact[:, None] * np.ones_like(f.phi))
    assert err < 1e-2


def test_causality():
    # magnitude vanishes until t*=3; nearest boundary point is 2 - 0.5 away
    scn = small_scenario([point(px="0.5", q="eta((t-3)/2)")])
    f = forward.march_boundary_field(scn)
    quiet = f.times < 3 + 1.5 - 1e-9
    assert np.max(np.abs(f.phi[quiet])) <= 1e-12 * np.max(np.abs(f.phi))
    assert np.max(np.abs(f.phi[~quiet])) > 0


def test_dt_refinement_point3(scenarios):
    scn = scenarios["point3"]
    grid = build_grid(2.0, 8, 16)
    fields = {dt: forward.march_boundary_field(scn.with_overrides(dt=dt, T=30.0), grid) for dt in (0.2, 0.1, 0.05)}
    t_common = np.arange(0, 151) * 0.2

    def on_common(f):
        return f.phi[np.rint(t_common / f.dt).astype(int)]

    d1 = np.linalg.norm(on_common(fields[0.2]) - on_common(fields[0.1]))
    d2 = np.linalg.norm(on_common(fields[0.1]) - on_common(fields[0.05]))
    assert d2 < d1 / 2 ** 0.9


def test_point3_amplitude(point3_field):
    assert point3_field.phi.shape == (701, 648)
    assert 0.01 < np.max(np.abs(point3_field.phi)) < 1.0


def test_add_noise_levels(point3_field):
    g = point3_field.grid
    same = forward.add_noise(point3_field, 0.0, 3)
    assert np.array_equal(same.phi, point3_field.phi)
    noisy = forward.add_noise(point3_field, 0.005, 3)
    ratio = forward.noise_ratio(g, noisy.phi, point3_field.phi)
    nonzero = forward.l2_norms(g, point3_field.phi) > 0
    np.testing.assert_allclose(ratio[nonzero], 0.005, rtol=1e-12)
    assert np.all(noisy.phi[~nonzero] == point3_field.phi[~nonzero])
    again = forward.add_noise(point3_field, 0.005, 3)
    assert np.array_equal(again.phi, noisy.phi)
    other = forward.add_noise(point3_field, 0.005, 4)
    assert not np.array_equal(other.phi, noisy.phi)
    with pytest.raises(ValueError):
        forward.add_noise(point3_field, -0.1, 0)


def test_field_csv_round_trip(tmp_path):
    scn = small_scenario([point(px="0.2", q="eta((t-1)/3)")], T=9.0)
    f = forward.add_noise(forward.march_boundary_field(scn), 0.01, 7)
    path = tmp_path / "field.csv"
    forward.save_field(f, path)
    g = forward.load_field(path)
    assert np.array_equal(g.phi, f.phi)
    assert (g.dt, g.c, g.noise_level, g.seed, g.scenario_hash) == (f.dt, f.c, f.noise_level, f.seed, f.scenario_hash)
    assert g.grid.n_nodes == f.grid.n_nodes


@pytest.mark.parametrize(
    "mutate",
    [
        lambda lines: lines[1:],
        lambda lines: [lines[0].replace("dt=", "xx=")] + lines[1:],
        lambda lines: [lines[0], "a,b,c\n"] + lines[2:],
        lambda lines: lines[:-3],
    ],
)
def test_malformed_field_files(tmp_path, mutate):
    scn = small_scenario([point()], T=9.0)
    f = forward.march_boundary_field(scn)
    path = tmp_path / "field.csv"
    forward.save_field(f, path)
    lines = path.read_text().splitlines(keepends=True)
    path.write_text("".join(mutate(lines)))
    with pytest.raises(ValueError):
        forward.load_field(path)
