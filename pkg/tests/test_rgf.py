from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rgfwave import forward, rgf
from rgfwave.grid import build_grid
from rgfwave.scenario import eval_source, retarded_emission_time, velocity

from conftest import small_scenario

N_MAX = 6
DTAU = 0.1


def field_of(phi, dt=0.1, J=6, K=12):
    return forward.BoundaryField(build_grid(2.0, J, K), dt, phi)


def finite(a):
    return a[np.isfinite(a)]


def test_zero_field_gives_zero_moments():
    f = field_of(np.zeros((101, 72)))
    table = rgf.rgf_table(f, [3.0, 5.0], N_MAX, DTAU)
    for key in ("Rf", "Rg", "Rh", "Ri", "Rj"):
        assert np.all(finite(table[key]) == 0)


def test_constant_field():
    c0 = 0.37
    f = field_of(np.full((101, 72), c0))
    s = rgf.rgf_slice(f, 5.0, N_MAX, DTAU)
    assert s.Rf[0] == pytest.approx(-16 * np.pi * c0, rel=1e-12)
    np.testing.assert_allclose(s.Rf[1:], 0, atol=1e-12)
    np.testing.assert_allclose(s.Rg, 0, atol=1e-11)
    np.testing.assert_allclose(s.Ri, 0, atol=1e-9)
    assert np.isnan(s.Rh[0]) and np.isnan(s.Rj[0])


def test_interp_weights_partition_of_unity_and_cubic_exactness(rng):
    times = rng.uniform(0, 9.9, size=50)
    idx, w = rgf.interp_weights(times, 0.1, 100)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-13)
    f = lambda t: 2 - t + 0.3 * t**2 - 0.05 * t**3
    np.testing.assert_allclose(np.sum(w * f(0.1 * idx), axis=-1), f(times), atol=1e-11)
    assert np.all(idx <= 100)


def test_interp_beyond_record():
    with pytest.raises(rgf.InsufficientDataError):
        rgf.interp_weights(np.array([10.5]), 0.1, 100)


def test_past_is_quiescent():
    f = field_of(np.ones((101, 72)))
    f = replace(f, phi=np.vstack([np.zeros((1, 72)), f.phi[1:]]))
    # sampling at negative times reads zeros
    vals = rgf.sample_field(f, np.full((72,), -0.5))
    assert np.all(vals == 0)


def test_stationary_centred_source():
    # the retarded trace is not polynomial in z, so the latitude rule must be fine
    scn = small_scenario([{"kind": "point", "px": "0", "py": "0", "pz": "0", "q": "eta((t-1)/3)"}], T=16.0, J=18, K=8)
    f = forward.march_boundary_field(scn)
    s = rgf.rgf_slice(f, 10.0, N_MAX, DTAU)
    assert s.Rf[0] == pytest.approx(1.0, abs=5e-3)
    np.testing.assert_allclose(s.Rf[1:], 0, atol=1e-10)
    assert abs(s.Rg[0]) < 5e-3


def test_derivative_sequences_are_central_differences(point3_field):
    taus = np.array([20.0 - DTAU, 20.0, 20.0 + DTAU])
    t = rgf.rgf_table(point3_field, taus, N_MAX, DTAU)
    np.testing.assert_allclose(t["Rg"][1], (t["Rf"][2] - t["Rf"][0]) / (2 * DTAU), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(t["Ri"][1], (t["Rf"][2] - 2 * t["Rf"][1] + t["Rf"][0]) / DTAU**2, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(finite(t["Rj"][1]), finite((t["Rh"][2] - t["Rh"][0]) / (2 * DTAU)), rtol=1e-10, atol=1e-12)


def test_table_matches_single_slices(point3_field):
    taus = [12.0, 25.3]
    t = rgf.rgf_table(point3_field, taus, N_MAX, DTAU)
    for i, tau in enumerate(taus):
        s = rgf.rgf_slice(point3_field, tau, N_MAX, DTAU)
        np.testing.assert_allclose(t["Rf"][i], s.Rf, rtol=1e-13)
        sl = rgf.table_slice(t, i, 3)
        assert sl.n_max == 3 and sl.Rf.shape == (4,)


def test_trace_matches_table(point3_field):
    f, _, _ = rgf.trace_weights(point3_field.grid, 2)
    tr = rgf.retarded_trace(point3_field, 30.0, f[2])
    assert tr == pytest.approx(rgf.rgf_slice(point3_field, 30.0, 2, DTAU).Rf[2], rel=1e-12)


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    p1, p2 = rng.normal(size=(2, 61, 72))
    f1, f2, f12 = field_of(p1), field_of(p2), field_of(a * p1 + b * p2)
    t1, t2, t12 = (rgf.rgf_table(f, [2.5, 3.5], 4, DTAU) for f in (f1, f2, f12))
    for key in ("Rf", "Rg", "Rh", "Ri", "Rj"):
        np.testing.assert_allclose(finite(t12[key]), finite(a * t1[key] + b * t2[key]), atol=1e-9)


def test_point3_moments_match_source_states(scenarios, point3_field):
    scn = scenarios["point3"]
    tau = 30.0
    expect = np.zeros(N_MAX + 1, complex)
    for spec in scn.sources:
        t = float(retarded_emission_time(spec, np.array([tau]), scn.c)[0])
        p, q = eval_source(spec, t)
        xi = 1.0 / (1.0 + velocity(spec, t)[2] / scn.c)
        expect += q * xi * (p[0] + 1j * p[1]) ** np.arange(N_MAX + 1)
    got = rgf.rgf_slice(point3_field, tau, N_MAX, DTAU).Rf
    assert np.max(np.abs(got - expect)) < 1e-2 * np.max(np.abs(expect))


def test_admissible_range(point3_field):
    top = rgf.admissible_range(point3_field, DTAU)
    assert top == pytest.approx(70.0 - 0.2 - 2.0 * np.max(-point3_field.grid.z) / 2.0, abs=1e-9)
    rgf.rgf_table(point3_field, [top], 2, DTAU)
    with pytest.raises(rgf.InsufficientDataError):
        rgf.rgf_table(point3_field, [top + 0.05], 2, DTAU)
