import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iccs import conic
from iccs.conic import ConeBuilder, encode_cube_bound, encode_hyperbolic, solve


def test_active_bound():
    b = ConeBuilder()
    x = b.var(1)[0]
    b.objective(x, 1.0)
    b.geq(b.row([(x, 1.0)], -3.0))
    sol = solve(b.build())
    assert sol.status == "optimal"
    assert sol.x[x] == pytest.approx(3.0, abs=1e-7)


def test_norm_of_constant_vector():
    b = ConeBuilder()
    t = b.var(1)[0]
    b.objective(t, 1.0)
    b.add("soc", np.array([[1.0], [0.0], [0.0]]), np.array([0.0, 1.0, 1.0]))
    sol = solve(b.build())
    assert sol.x[t] == pytest.approx(np.sqrt(2), abs=1e-7)


def test_hyperbolic_corner():
    b = ConeBuilder()
    t, f = b.var(2)
    b.objective(t, 1.0)
    encode_hyperbolic(b, b.row([(t, 1.0)]), b.row([(f, 1.0)]), b.row([], 2.0))
    b.geq(b.row([(f, -1.0)], 2.0))
    b.geq(b.row([(f, 1.0)]))
    sol = solve(b.build())
    assert sol.status == "optimal"
    assert sol.x[t] == pytest.approx(2.0, abs=1e-6)
    assert sol.x[f] == pytest.approx(2.0, abs=1e-6)


def _max_w(u, v):
    b = ConeBuilder()
    w = b.var(1)[0]
    b.objective(w, -1.0)
    encode_hyperbolic(b, b.row([], u), b.row([], v), b.row([(w, 1.0)]))
    return solve(b.build()).x[w]


def test_hyperbolic_feasible_region():
    assert _max_w(1.0, 1.0) == pytest.approx(1.0, abs=1e-6)
    assert _max_w(4.0, 1.0) == pytest.approx(2.0, abs=1e-6)
    # w = 0 is feasible for any nonnegative u, v
    b = ConeBuilder()
    x = b.var(1)[0]
    b.objective(x, 1.0)
    b.geq(b.row([(x, 1.0)]))
    encode_hyperbolic(b, b.row([], 0.0), b.row([], 5.0), b.row([], 0.0))
    assert solve(b.build()).status == "optimal"


@pytest.mark.parametrize("f0, s_min", [(2.0, 8.0), (1.0, 1.0), (0.0, 0.0)])
def test_cube_bound_tight(f0, s_min):
    b = ConeBuilder()
    f, s = b.var(2)
    b.objective(s, 1.0)
    b.eq(b.row([(f, 1.0)], -f0))
    encode_cube_bound(b, b.row([(f, 1.0)]), b.row([(s, 1.0)]))
    sol = solve(b.build())
    assert sol.status == "optimal"
    assert sol.x[s] == pytest.approx(s_min, abs=1e-6)


def test_infeasible_detected():
    b = ConeBuilder()
    x = b.var(1)[0]
    b.objective(x, 1.0)
    b.geq(b.row([(x, 1.0)], -2.0))
    b.geq(b.row([(x, -1.0)], 1.0))
    assert solve(b.build()).status == "infeasible"


def test_unknown_cone_kind():
    with pytest.raises(conic.InvalidProblemError):
        ConeBuilder().add("psd", np.zeros((1, 0)), [0.0])


def test_recording_collects_statuses():
    b = ConeBuilder()
    x = b.var(1)[0]
    b.objective(x, 1.0)
    b.geq(b.row([(x, 1.0)], -1.0))
    p = b.build()
    with conic.recording() as rec:
        solve(p)
        solve(p)
    assert [s for s, _ in rec] == ["optimal", "optimal"]
    assert all(max(r.values()) < 1e-7 for _, r in rec)


def test_recording_nests():
    b = ConeBuilder()
    x = b.var(1)[0]
    b.objective(x, 1.0)
    b.geq(b.row([(x, 1.0)], -1.0))
    p = b.build()
    with conic.recording() as outer:
        with conic.recording() as inner:
            solve(p)
        solve(p)
    assert len(inner) == 1 and len(outer) == 2
    assert conic._recorders == []


def test_dump_roundtrip(tmp_path):
    b = ConeBuilder()
    x, y = b.var(2)
    b.objective([x, y], [1.0, 2.0])
    encode_hyperbolic(b, b.row([(x, 1.0)]), b.row([(y, 1.0)]), b.row([], 1.0))
    p = b.build()
    path = tmp_path / "p.npz"
    p.dump(path)
    q = conic.load_dump(path)
    assert solve(q).objective == pytest.approx(solve(p).objective, rel=1e-9)


# random 2-variable programs against a dense grid

def _grid_min(c, feasible, lo=-3.0, hi=3.0, n=3001, levels=3):
    # dense grid, then zoom windows around the best point; thin corners of the
    # feasible set can hide the optimum from a single uniform grid
    cx = cy = (lo + hi) / 2
    half = (hi - lo) / 2
    best = np.inf
    for _ in range(levels):
        gx = np.linspace(cx - half, cx + half, n)
        gy = np.linspace(cy - half, cy + half, n)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        Z = c[0] * X + c[1] * Y
        Z[~feasible(X, Y)] = np.inf
        i = np.unravel_index(np.argmin(Z), Z.shape)
        if not np.isfinite(Z[i]):
            break
        best = min(best, Z[i])
        cx, cy = X[i], Y[i]
        half = 50 * (gx[1] - gx[0])
        n = 1001
    return best


@given(st.integers(0, 10_000))
@settings(max_examples=10, deadline=None)
def test_random_lp_matches_grid(seed):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1, 1, 2)
    A = rng.standard_normal((4, 2))
    h = rng.uniform(0.5, 2.0, 4)  # origin strictly feasible
    b = ConeBuilder()
    x = b.var(2)
    b.objective(x, c)
    for i in range(4):
        b.geq(b.row([(x, -A[i])], h[i]))
    for i in range(2):  # box keeps it bounded
        b.geq(b.row([(x[i], 1.0)], 2.5))
        b.geq(b.row([(x[i], -1.0)], 2.5))
    sol = solve(b.build())
    assert sol.status == "optimal"
    grid = _grid_min(c, lambda X, Y: np.all([A[i, 0] * X + A[i, 1] * Y <= h[i] for i in range(4)], axis=0)
                     & (np.abs(X) <= 2.5) & (np.abs(Y) <= 2.5))
    assert abs(sol.objective - grid) < 2e-3
    assert sol.objective <= grid + 1e-7


@given(st.integers(0, 10_000))
@settings(max_examples=10, deadline=None)
def test_random_socp_matches_grid(seed):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1, 1, 2)
    center = rng.uniform(-1, 1, 2)
    r = rng.uniform(0.5, 1.5)
    b = ConeBuilder()
    x = b.var(2)
    b.objective(x, c)
    # ||x - center|| <= r
    G = np.zeros((3, 2))
    G[1:, :] = np.eye(2)
    b.add("soc", G, np.array([r, -center[0], -center[1]]))
    sol = solve(b.build())
    assert sol.status == "optimal"
    exact = c @ center - r * np.linalg.norm(c)
    assert sol.objective == pytest.approx(exact, abs=1e-6)
    grid = _grid_min(c, lambda X, Y: (X - center[0]) ** 2 + (Y - center[1]) ** 2 <= r * r)
    assert abs(sol.objective - grid) < 2e-3


@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(-5, 5))
def test_rsoc_membership_matches_definition(u, v, w):
    inside = u * v >= w * w
    viol = conic.cone_violation([conic.Cone("rsoc", 3)], np.array([u, v, w]))
    if inside:
        assert viol <= 1e-12
    else:
        assert viol > 0
