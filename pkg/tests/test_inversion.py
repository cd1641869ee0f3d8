import numpy as np
import pytest
from hypothesis import given, strategies as st

from rgfwave import inversion as inv
from rgfwave.oracles import (
    SyntheticSource,
    Wave,
    _jmul,
    _jpow,
    moments,
    random_nodes,
    random_sources,
    source_jets,
    synthetic_slice,
)

RANK = inv.InversionConfig(counter="rank")


def match(fr, truth):
    p = truth["position"]
    return int(np.argmin(np.abs(fr.pxy - (p[0] + 1j * p[1]))))


# hankel


def test_hankel_rank_one():
    p = 0.4 - 0.7j
    H = inv.hankel(p ** np.arange(4), 2)
    np.testing.assert_array_equal(H, [[1, p], [p, p**2]])
    assert abs(np.linalg.det(H)) < 1e-15


def test_hankel_two_sources():
    m = moments([1, 2], [0.3, -0.5j], 6)
    assert abs(np.linalg.det(inv.hankel(m, 2))) > 1e-3
    assert abs(np.linalg.det(inv.hankel(m, 3))) < 1e-12


def test_hankel_shapes_and_errors():
    m = np.arange(7.0)
    assert inv.hankel(m, 1).tolist() == [[0.0]]
    H = inv.hankel(m, 3, mu=1)
    assert H[0, 2] == H[1, 1] == H[2, 0] == 3.0
    with pytest.raises(ValueError):
        inv.hankel(m, 4, mu=1)


# counting


def test_count_zero_step():
    assert inv.count_sources([1e-6, 1e-9, 1e-12], 1e-4, 2.5e-2) == 0


def test_count_three_exact_sources():
    m = moments([1.0, -0.7, 0.4j], [0.5, -0.4 + 0.6j, -0.3 - 0.8j], 12)
    dets, zero = inv.hankel_dets(m, 5)
    assert inv.count_sources(dets, 1e-4, 2.5e-2, 4, zero) == 3
    assert inv.count_sources_rank(zero, 4) == 3


def test_count_is_capped():
    assert inv.count_sources([1.0, 1.0, 1.0, 1.0], 1e-4, 2.5e-2, K_M=2) == 2


def test_count_ignores_numerical_zeros():
    dets = np.array([1.0, 0.5, 1e-20, 1e-30])
    zero = np.array([False, False, True, True])
    assert inv.count_sources(dets, 1e-4, 2.5e-2, 3, zero) == 2


@given(K=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_hankel_rank_collapse(K, seed):
    P, w = random_nodes(np.random.default_rng(seed), K)
    m = moments(w, P, 2 * K + 2)
    H = inv.hankel(m, K + 1)
    scale = np.prod(np.linalg.norm(H, axis=1))
    assert abs(np.linalg.det(H)) <= 1e-10 * scale
    assert abs(np.linalg.det(inv.hankel(m, K))) > 0
    dets, zero = inv.hankel_dets(m, K + 1)
    assert inv.count_sources_rank(zero, 5) == K


# eigen-recovery and Vandermonde solves


def test_xy_single_node():
    np.testing.assert_allclose(inv.xy_locations([[2.0]], [[2.0 * (0.3 + 0.1j)]]), [0.3 + 0.1j])


def test_xy_two_nodes():
    nodes = np.array([0.8 - 0.3j, 0.3 + 0.7j])
    m = moments([1.0, -0.5], nodes, 4)
    got = inv.xy_locations(inv.hankel(m, 2), inv.hankel(m, 2, 1))
    np.testing.assert_allclose(np.sort_complex(got), np.sort_complex(nodes), atol=1e-10)


def test_xy_three_nodes(rng):
    for _ in range(20):
        P, w = random_nodes(rng, 3, min_sep=0.3)
        m = moments(w, P, 6)
        got = inv.xy_locations(inv.hankel(m, 3), inv.hankel(m, 3, 1))
        np.testing.assert_allclose(np.sort_complex(got), np.sort_complex(P), atol=1e-8)


def test_xy_singular_pencil():
    m = moments([1.0], [0.5], 4)
    with pytest.raises(inv.InversionError):
        inv.xy_locations(inv.hankel(m, 2), inv.hankel(m, 2, 1))


def test_nodes_system():
    assert inv.solve_nodes_system([0.7j], [1.5]) == pytest.approx(1.5)
    nodes, w = np.array([0.2 + 0.1j, -0.6j]), np.array([1.3, -0.4 + 0.2j])
    np.testing.assert_allclose(inv.solve_nodes_system(nodes, moments(w, nodes, 1)), w, atol=1e-12)
    with pytest.raises(inv.InversionError):
        inv.solve_nodes_system([0.3, 0.3 + 1e-14], [1.0, 0.5])


def test_confluent_vandermonde_small_cases():
    p = 0.4 + 0.2j
    np.testing.assert_array_equal(inv.confluent_vandermonde([p]), [[1, 0], [p, 1]])
    assert inv.det_formula([p]) == 1
    p1, p2 = 0.3 - 0.1j, -0.5 + 0.6j
    assert np.linalg.det(inv.confluent_vandermonde([p1, p2])) == pytest.approx(-((p2 - p1) ** 4), rel=1e-12)
    assert inv.det_formula([p1, p2]) == pytest.approx(-((p2 - p1) ** 4), rel=1e-14)


@given(K=st.integers(1, 5), seed=st.integers(0, 10_000))
def test_determinant_identity(K, seed):
    P, _ = random_nodes(np.random.default_rng(seed), K, radius=1.0, min_sep=0.3)
    ref = inv.det_formula(P)
    assert abs(np.linalg.det(inv.confluent_vandermonde(P)) - ref) <= 1e-10 * abs(ref)


def test_derivative_system_round_trip(rng):
    p = 0.3 - 0.2j
    a, b = inv.solve_derivative_system([p], [0.7, p * 0.7 + 0.2])
    assert a[0] == pytest.approx(0.7) and b[0] == pytest.approx(0.2)
    P, _ = random_nodes(rng, 2)
    a0, b0 = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    rhs = inv.confluent_vandermonde(P) @ np.concatenate([a0, b0])
    a, b = inv.solve_derivative_system(P, rhs)
    np.testing.assert_allclose(a, a0, atol=1e-10)
    np.testing.assert_allclose(b, b0, atol=1e-10)


# correction terms


def _state(srcs, tau):
    jets = [source_jets(s, tau, 1.0) for s in srcs]
    P = np.array([j[0] for j in jets])
    Z = np.array([j[1] for j in jets])
    W = np.array([j[2] for j in jets])
    state = {"P": P[:, 0], "dP": P[:, 1], "d2P": P[:, 2], "w": W[:, 0], "dw": W[:, 1], "d2w": W[:, 2], "Z": Z[:, 0].real}
    return state, P, Z, W


def test_rhat_vanishes_for_stationary_centre():
    state = {k: np.zeros(1, complex) for k in ("P", "dP", "d2P", "dw", "d2w", "Z")}
    state["w"] = np.ones(1, complex)
    for kind in ("point", "dipole"):
        for n in range(1, 6):
            assert inv.rhat_terms(kind, "h", state, n) == 0


def test_rhat_missing_state():
    with pytest.raises(KeyError):
        inv.rhat_terms("point", "j", {"P": [0.1], "w": [1], "dw": [0], "dP": [0]}, 2)


def _moving_source(kind):
    mags = (Wave(1.1, 0.0, 0.2, 0.7, 0.3),) if kind == "point" else (Wave(0.9, 0, 0.2, 0.5, 1.0), Wave(-0.4, 0, 0.1, 0.9, 0.2))
    return SyntheticSource(Wave(0.3, 0.05, 0.2, 0.8, 0.1), Wave(-0.2, -0.04, 0.15, 1.1, 0.5), Wave(0.1, 0.1, 0.2, 0.6, 1.3), mags)


@pytest.mark.parametrize("kind", ["point", "dipole"])
def test_rhat_against_independent_split(kind):
    # each sequence = unknown part + correction; the unknown parts are simple jets
    tau, n_max = 5.0, 6
    srcs = [_moving_source(kind)]
    slc, _ = synthetic_slice(srcs, kind, tau, n_max)
    state, P, Z, W = _state(srcs, tau)
    P, Z, W = P[0], Z[0], W[0]
    for n in range(2, n_max + 1):
        if kind == "point":
            h_unknown = 2 * n * W[0] * Z[0] * P[0] ** (n - 1)
            i_unknown = W[2] * P[0] ** n + n * W[0] * P[2] * P[0] ** (n - 1)
            j_unknown = 2 * n * W[0] * Z[1] * P[0] ** (n - 1)
        else:
            h_unknown = 2 * n * (n - 1) * W[0] * Z[0] * P[0] ** (n - 2)
            i_unknown = n * (W[2] * P[0] ** (n - 1) + (n - 1) * W[0] * P[2] * P[0] ** (n - 2))
            j_unknown = 2 * n * (n - 1) * W[0] * Z[1] * P[0] ** (n - 2)
        assert inv.rhat_terms(kind, "h", state, n) == pytest.approx(slc.Rh[n] - h_unknown, rel=1e-12, abs=1e-12)
        assert inv.rhat_terms(kind, "i", state, n) == pytest.approx(slc.Ri[n] - i_unknown, rel=1e-12, abs=1e-12)
        assert inv.rhat_terms(kind, "j", state, n) == pytest.approx(slc.Rj[n] - j_unknown, rel=1e-12, abs=1e-12)


# full frame


def test_stationary_unit_source_frame():
    src = SyntheticSource(Wave(0.5), Wave(-0.2), Wave(0.3), (Wave(1.0),))
    slc, _ = synthetic_slice([src], "point", 7.0, 9)
    fr = inv.reconstruct_frame(slc, "point")
    assert fr.K_hat == 1 and fr.stage == "complete"
    assert fr.pxy[0] == pytest.approx(0.5 - 0.2j, abs=1e-13)
    assert fr.pz[0] == pytest.approx(0.3, abs=1e-13)
    assert fr.dz[0] == pytest.approx(0.0, abs=1e-13)
    assert fr.xi[0] == pytest.approx(1.0, abs=1e-13)
    assert fr.strength[0] == pytest.approx(1.0, abs=1e-13)
    assert fr.t_emit[0] == pytest.approx(7.0 - 0.3, abs=1e-13)
    assert fr.flags == [[]]


@pytest.mark.parametrize("kind", ["point", "dipole"])
def test_two_moving_sources(kind, rng):
    srcs = random_sources(rng, 2, kind)
    slc, truth = synthetic_slice(srcs, kind, 5.0, 9)
    fr = inv.reconstruct_frame(slc, kind, RANK)
    assert fr.K_hat == 2 and fr.stage == "complete"
    for tr in truth:
        j = match(fr, tr)
        np.testing.assert_allclose(fr.positions[j], tr["position"], atol=1e-8)
        assert abs(fr.strength[j] - tr["strength"]) < 1e-8
        assert abs(fr.dz[j] - tr["dz"]) < 1e-8


@given(K=st.integers(1, 3), kind=st.sampled_from(["point", "dipole"]), seed=st.integers(0, 10_000))
def test_exactness_on_synthetic_slices(K, kind, seed):
    rng = np.random.default_rng(seed)
    srcs = random_sources(rng, K, kind, xi_range=(0.5, 2.0))
    slc, truth = synthetic_slice(srcs, kind, 5.0, 9)
    fr = inv.reconstruct_frame(slc, kind, RANK)
    assert fr.K_hat == K and fr.stage == "complete"
    for tr in truth:
        j = match(fr, tr)
        np.testing.assert_allclose(fr.positions[j], tr["position"], atol=1e-8)
        assert abs(fr.strength[j] - tr["strength"]) < 1e-8
        # xi is tied to dz by construction, t_emit to the depth
        assert fr.xi[j] == 1 - fr.dz[j]
        assert fr.t_emit[j] == 5.0 - fr.pz[j]


@given(scale=st.floats(0.01, 100.0), seed=st.integers(0, 1000))
def test_locations_scale_invariant(scale, seed):
    rng = np.random.default_rng(seed)
    srcs = random_sources(rng, 2, "point")
    slc, _ = synthetic_slice(srcs, "point", 5.0, 9)
    scaled = type(slc)(slc.tau, slc.n_max, *(scale * getattr(slc, k) for k in ("Rf", "Rg", "Rh", "Ri", "Rj")))
    a = inv.reconstruct_frame(slc, "point", RANK)
    b = inv.reconstruct_frame(scaled, "point", RANK)
    np.testing.assert_allclose(b.positions, a.positions, atol=1e-10)
    np.testing.assert_allclose(b.strength, scale * a.strength, rtol=1e-9)


def test_doppler_factor_matches_time_derivative():
    # xi from the frame equals (1 + z'(t)/c)^-1 at the emission time
    src = _moving_source("point")
    slc, truth = synthetic_slice([src], "point", 5.0, 9)
    fr = inv.reconstruct_frame(slc, "point", RANK)
    t = truth[0]["t_emit"]
    assert fr.xi[0] == pytest.approx(1 / (1 + src.z.derivs(t)[1]), abs=1e-9)
    assert fr.t_emit[0] == pytest.approx(t, abs=1e-9)


def test_frame_prerequisites():
    slc, _ = synthetic_slice([_moving_source("point")], "point", 5.0, 6)
    with pytest.raises(ValueError):
        inv.reconstruct_frame(slc, "point")
    with pytest.raises(ValueError):
        inv.reconstruct_frame(slc, "quadrupole", inv.InversionConfig(K_M=2))


def test_empty_slice_gives_zero_count():
    slc, _ = synthetic_slice([], "point", 5.0, 9)
    fr = inv.reconstruct_frame(slc, "point")
    assert fr.K_hat == 0 and fr.stage == "complete"


def test_ghost_node_flagged():
    # a weight below the floor cannot be a source
    srcs = [
        SyntheticSource(Wave(0.5), Wave(0.0), Wave(0.1), (Wave(1.0),)),
        SyntheticSource(Wave(-0.5), Wave(0.3), Wave(0.0), (Wave(1e-9),)),
    ]
    slc, _ = synthetic_slice(srcs, "point", 5.0, 9)
    fr = inv.reconstruct_frame(slc, "point", RANK)
    assert fr.K_hat == 2
    ghosts = [k for k in range(2) if "ghost" in fr.flags[k]]
    assert len(ghosts) == 1
    k = 1 - ghosts[0]
    assert fr.strength[k] == pytest.approx(1.0, abs=1e-6)


def test_weak_source_flagged_ghost():
    srcs = [
        SyntheticSource(Wave(0.5), Wave(0.0), Wave(0.1), (Wave(1.0),)),
        SyntheticSource(Wave(-0.5), Wave(0.3), Wave(0.0), (Wave(0.005),)),
    ]
    slc, _ = synthetic_slice(srcs, "point", 5.0, 9)
    fr = inv.reconstruct_frame(slc, "point", RANK)
    weak = int(np.argmin(np.abs(fr.strength)))
    assert "ghost" in fr.flags[weak] and fr.flags[1 - weak] == []


def test_failure_degrades_frame():
    slc, _ = synthetic_slice([_moving_source("point")], "point", 5.0, 9)
    bad = type(slc)(slc.tau, slc.n_max, slc.Rf, slc.Rg, slc.Rh * np.nan, slc.Ri, slc.Rj)
    fr = inv.reconstruct_frame(bad, "point", RANK)
    assert fr.K_hat == 1
    assert fr.stage == "step3"
    assert np.isfinite(fr.pxy[0]) and np.isnan(fr.strength[0])


# finite-difference depth velocity


def _pending(srcs, tau):
    slc, truth = synthetic_slice(srcs, "point", tau, 9)
    return inv.reconstruct_frame(slc, "point", inv.InversionConfig(counter="rank", step4_mode="fd")), truth


def test_fd_stationary_source():
    src = SyntheticSource(Wave(0.5), Wave(-0.2), Wave(0.3), (Wave(1.0),))
    fr, _ = _pending([src], 5.0)
    assert fr.stage == "step4_pending" and np.isnan(fr.strength[0])
    dz = inv.step4_finite_difference(fr, [0.3], [0.3], [0.1], [0.1], "point")
    assert dz[0] == 0.0
    assert fr.stage == "complete" and fr.strength[0] == pytest.approx(1.0, abs=1e-12)


def test_fd_affine_depth():
    a, b, dtau = 0.1, -0.03, 0.1
    z = lambda tau: a + b * tau
    src = SyntheticSource(Wave(0.5), Wave(-0.2), Wave(0.3), (Wave(1.0),))
    fr, _ = _pending([src], 5.0)
    dz = inv.step4_finite_difference(fr, [z(5.0 - dtau)], [z(5.0 + dtau)], [dtau], [dtau], "point")
    assert dz[0] == pytest.approx(b, abs=1e-14)
    assert fr.xi[0] == pytest.approx(1 - b, abs=1e-14)


def test_fd_one_sided_and_missing():
    srcs = [SyntheticSource(Wave(0.5), Wave(0.0), Wave(0.3), (Wave(1.0),)), SyntheticSource(Wave(-0.5), Wave(0.2), Wave(0.0), (Wave(1.0),))]
    fr, _ = _pending(srcs, 5.0)
    order = np.argsort(fr.pxy.real)  # 0: x=-0.5, 1: x=0.5
    zp, zn, hp, hn = np.full(2, np.nan), np.full(2, np.nan), np.zeros(2), np.zeros(2)
    k_one, k_none = order[1], order[0]
    zp[k_one], zn[k_one], hp[k_one], hn[k_one] = 0.3, 0.32, 0.0, 0.1
    dz = inv.step4_finite_difference(fr, zp, zn, hp, hn, "point")
    assert dz[k_one] == pytest.approx(0.2)
    assert np.isnan(dz[k_none]) and "no_stencil" in fr.flags[k_none]
    assert np.isnan(fr.strength[k_none]) and np.isfinite(fr.strength[k_one])


def test_fd_requires_pending_frame():
    slc, _ = synthetic_slice([_moving_source("point")], "point", 5.0, 9)
    fr = inv.reconstruct_frame(slc, "point", RANK)
    with pytest.raises(ValueError):
        inv.step4_finite_difference(fr, [0], [0], [0.1], [0.1], "point")


def test_fd_supersonic_velocity_withheld():
    src = SyntheticSource(Wave(0.5), Wave(-0.2), Wave(0.3), (Wave(1.0),))
    fr, _ = _pending([src], 5.0)
    inv.step4_finite_difference(fr, [0.0], [0.25], [0.1], [0.1], "point")
    assert "doppler_inconsistent" in fr.flags[0] and np.isnan(fr.strength[0])


def test_fd_matches_algebraic_on_smooth_track():
    src = _moving_source("point")
    dtau = 1e-3
    (prev, _), (mid, truth), (nxt, _) = (_pending([src], t) for t in (5.0 - dtau, 5.0, 5.0 + dtau))
    inv.step4_finite_difference(mid, prev.pz, nxt.pz, [dtau], [dtau], "point")
    assert mid.dz[0] == pytest.approx(truth[0]["dz"], abs=1e-5)
    assert mid.strength[0] == pytest.approx(truth[0]["strength"], abs=1e-5)
