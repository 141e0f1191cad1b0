"""Grid solver: Coriolis, inflow, boundaries, projection, probing, stability."""

import numpy as np
import pytest

from paleowind import windsim as ws
from paleowind.terrain import ObstacleField
from conftest import make_block_obstacles


def div_tolerance(params: ws.SimParams) -> float:
    return 1e-3 * params.inflow_internal  # cell size is 1 in internal units


class TestCoriolisParam:
    def test_eastward_wind_deflects_south(self, grid):
        p = ws.SimParams(f0=1.0, beta=0.0, coriolis_strength=1.0)
        ax, ay = ws.coriolis_accel(1.0, 0.0, 54, grid, p)
        assert ax == 0.0 and ay == -1.0

    def test_northward_wind_deflects_east(self, grid):
        p = ws.SimParams(f0=1.0, beta=0.0, coriolis_strength=1.0)
        ax, ay = ws.coriolis_accel(0.0, 1.0, 54, grid, p)
        assert ax == 1.0 and ay == 0.0

    def test_f_increases_northward_and_matches_formula(self, grid):
        p = ws.SimParams()
        assert p.beta > 0
        f_vals = [p.coriolis_param_si(y + 0.5, grid) for y in range(0, grid.ny, grid.ny // 10)]
        assert f_vals[-1] > f_vals[0]
        # direct formula at sampled rows
        for y in range(0, grid.ny, grid.ny // 10):
            y_m = (y + 0.5) * grid.cell_m
            expected = (p.f0 + p.beta * (y_m - 0.5 * grid.ny * grid.cell_m)) \
                * p.coriolis_strength
            assert p.coriolis_param_si(y + 0.5, grid) == pytest.approx(expected, rel=1e-12)

    def test_inertial_probe_turns_clockwise_in_nh(self, grid):
        p = ws.SimParams(coriolis_strength=1.0)
        _, headings = ws.inertial_probe_trajectory(
            grid, p, start=(60.0, 70.0), v0=(p.inflow_internal, 0.0), steps=50)
        assert np.all(np.diff(headings) < 0)

    def test_higher_latitude_turns_faster(self, grid):
        p = ws.SimParams(coriolis_strength=1.0)
        _, h_north = ws.inertial_probe_trajectory(grid, p, (60.0, 90.0), (1.0, 0.0), 10)
        _, h_south = ws.inertial_probe_trajectory(grid, p, (60.0, 20.0), (1.0, 0.0), 10)
        assert h_north[-1] < h_south[-1] < 0  # both turn right, north turns more


class TestStepBasics:
    def test_uniform_westerly_is_fixed_point(self, grid, empty_obs):
        params = ws.SimParams(jet_boost=0.0, coriolis_strength=0.0)
        state = ws.FlowState.inflow_equilibrium(grid, params, empty_obs)
        u0, v0 = state.u.copy(), state.v.copy()
        for _ in range(3):
            ws.step(state, empty_obs, grid, params)
        assert np.array_equal(state.u, u0)
        assert np.array_equal(state.v, v0)

    def test_coriolis_strength_zero_bit_identical_to_coriolis_free(self, grid, empty_obs):
        base = ws.SimParams(coriolis_strength=0.0)
        off = ws.SimParams(f0=0.0, beta=0.0, coriolis_strength=1.0)
        s1 = ws.FlowState.inflow_equilibrium(grid, base, empty_obs)
        s2 = s1.copy()
        for _ in range(5):
            ws.step(s1, empty_obs, grid, base)
            ws.step(s2, empty_obs, grid, off)
        assert np.array_equal(s1.u, s2.u)
        assert np.array_equal(s1.v, s2.v)

    def test_wake_forms_and_solid_faces_stay_sealed(self, grid):
        obs = make_block_obstacles(grid, 60, 75, 44, 64)
        params = ws.SimParams(coriolis_strength=0.0)
        state = ws.FlowState.inflow_equilibrium(grid, params, obs)
        # independent face audit: recompute the face sets from the blockage
        solid = obs.solid
        u_faces = np.zeros_like(state.u, dtype=bool)
        u_faces[:, 1:-1] = solid[:, :-1] | solid[:, 1:]
        u_faces[:, 0] = solid[:, 0]
        u_faces[:, -1] = solid[:, -1]
        v_faces = np.zeros_like(state.v, dtype=bool)
        v_faces[1:-1, :] = solid[:-1, :] | solid[1:, :]
        for k in range(500):
            ws.step(state, obs, grid, params)
            assert np.all(state.u[u_faces] == 0.0), f"face leak at step {k}"
            assert np.all(state.v[v_faces] == 0.0), f"face leak at step {k}"
        # wake: slower flow directly downstream of the block than in free stream
        wake_u = state.u[54, 80]
        free_u = state.u[10, 80]
        assert wake_u < 0.6 * free_u

    def test_divergence_bounded_with_random_obstacles(self, grid):
        rng = np.random.default_rng(0)
        blockage = np.zeros((grid.ny, grid.nx))
        for _ in range(8):
            x0 = int(rng.integers(5, grid.nx - 25))
            y0 = int(rng.integers(5, grid.ny - 25))
            blockage[y0:y0 + int(rng.integers(5, 20)), x0:x0 + int(rng.integers(5, 20))] = 1.0
        obs = ObstacleField(blockage, np.zeros_like(blockage))
        params = ws.SimParams()
        state = ws.FlowState.inflow_equilibrium(grid, params, obs)
        tol = div_tolerance(params)
        for _ in range(200):
            ws.step(state, obs, grid, params)
            assert ws.max_divergence(state, obs) <= tol

    def test_sealed_west_pocket_stays_consistent(self, grid):
        # A wall spanning the full height: the west region cannot drain east,
        # so its inflow must be sealed rather than pumping an impossible flow.
        obs = make_block_obstacles(grid, 90, 96, 0, grid.ny)
        params = ws.SimParams()
        state = ws.FlowState.inflow_equilibrium(grid, params, obs)
        tol = div_tolerance(params)
        for _ in range(100):
            ws.step(state, obs, grid, params)
        assert state.is_finite()
        assert ws.max_divergence(state, obs) <= tol

    def test_nan_reset_recovers_and_reports(self, grid, empty_obs):
        params = ws.SimParams()
        state = ws.FlowState.inflow_equilibrium(grid, params, empty_obs)
        state.u[10, 10] = np.nan
        events = []
        ws.step(state, empty_obs, grid, params, on_event=events.append)
        assert state.is_finite()
        assert [e["type"] for e in events] == ["nan_reset"]
        eq = ws.FlowState.inflow_equilibrium(grid, params, empty_obs)
        assert np.array_equal(state.u, eq.u)

    def test_dim_mismatch_rejected(self, grid):
        obs = ObstacleField.empty(10, 10)
        params = ws.SimParams()
        state = ws.FlowState.at_rest(grid)
        with pytest.raises(ws.ConfigError):
            ws.step(state, obs, grid, params)


class TestInflow:
    def test_jet_boost_zero_uniform_target(self, grid):
        params = ws.SimParams(jet_boost=0.0)
        target = params.inflow_target(grid)
        assert np.allclose(target, params.inflow_internal)

    def test_jet_boost_doubles_at_bump_center(self, grid):
        params = ws.SimParams(jet_boost=1.0)
        target = params.inflow_target(grid)
        yc = params.jet_center_frac * grid.ny
        assert target[int(yc)] == pytest.approx(2.0 * params.inflow_internal, rel=1e-3)
        assert target.max() <= 2.0 * params.inflow_internal + 1e-12

    def test_relaxation_matches_geometric_decay(self, grid):
        # The west column approaches its target like (1 - r*dt)^k.
        params = ws.SimParams(jet_boost=0.0, inflow_relax=0.8)
        state = ws.FlowState.at_rest(grid)
        target = params.inflow_internal
        r = params.inflow_relax * params.dt
        for k in range(1, 30):
            ws.apply_inflow(state, grid, params)
            expected = target * (1.0 - (1.0 - r) ** k)
            np.testing.assert_allclose(state.u[:, 0], expected, rtol=1e-12)


def brute_force_bilinear_u(u, x, y):
    """Direct weight computation for the u face grid (faces at (i, j+0.5))."""
    ny, nxp1 = u.shape
    gx = min(max(x, 0.0), nxp1 - 1.0)
    gy = min(max(y - 0.5, 0.0), ny - 1.0)
    i0 = min(int(gx), nxp1 - 2)
    j0 = min(int(gy), ny - 2)
    fx, fy = gx - i0, gy - j0
    return ((1 - fx) * (1 - fy) * u[j0, i0] + fx * (1 - fy) * u[j0, i0 + 1]
            + (1 - fx) * fy * u[j0 + 1, i0] + fx * fy * u[j0 + 1, i0 + 1])


class TestProbe:
    def test_uniform_field_same_everywhere(self, grid, empty_obs):
        state = ws.FlowState.at_rest(grid)
        state.u[:, :] = 3.0
        state.v[:, :] = -1.0
        for (x, y) in [(0.3, 0.7), (50.0, 50.0), (191.2, 107.1)]:
            u, v = ws.probe(state, x, y, empty_obs)
            assert u == pytest.approx(3.0) and v == pytest.approx(-1.0)

    def test_face_sample_equals_stored_value(self, grid, empty_obs):
        rng = np.random.default_rng(4)
        state = ws.FlowState.at_rest(grid)
        state.u = rng.standard_normal(state.u.shape)
        state.v = rng.standard_normal(state.v.shape)
        u, _ = ws.probe(state, 10.0, 20.5, empty_obs)  # exactly at a u face
        assert u == pytest.approx(state.u[20, 10], rel=1e-12)
        _, v = ws.probe(state, 30.5, 40.0, empty_obs)  # exactly at a v face
        assert v == pytest.approx(state.v[40, 30], rel=1e-12)

    def test_random_points_match_manual_weights(self, grid, empty_obs):
        rng = np.random.default_rng(9)
        state = ws.FlowState.at_rest(grid)
        state.u = rng.standard_normal(state.u.shape)
        for _ in range(100):
            x = float(rng.uniform(0, grid.nx))
            y = float(rng.uniform(0, grid.ny))
            u, _ = ws.probe(state, x, y, empty_obs)
            assert u == pytest.approx(brute_force_bilinear_u(state.u, x, y), rel=1e-12, abs=1e-12)

    def test_solid_cell_reads_zero(self, grid):
        obs = make_block_obstacles(grid, 50, 60, 40, 50)
        state = ws.FlowState.at_rest(grid)
        state.u[:, :] = 5.0
        assert ws.probe(state, 55.0, 45.0, obs) == (0.0, 0.0)

    def test_out_of_domain_clamps(self, grid, empty_obs):
        state = ws.FlowState.at_rest(grid)
        state.u[:, :] = 2.0
        u, v = ws.probe(state, -5.0, 300.0, empty_obs)
        assert u == pytest.approx(2.0) and v == pytest.approx(0.0)


class TestProjectionOracle:
    def _dense_gauss_seidel_projection(self, state, obs, iters=None, tol=1e-10):
        """Independent oracle: assemble and sweep the pressure system densely.

        Plain lexicographic Gauss-Seidel on the same discrete operator the
        solver defines: interior fluid-fluid faces couple cells, the open
        east boundary contributes a zero-pressure ghost, everything else is
        velocity-prescribed.
        """
        ny, nx = obs.shape
        solid = obs.solid
        fluid = ~solid
        div = (state.u[:, 1:] - state.u[:, :-1]) + (state.v[1:, :] - state.v[:-1, :])
        rhs = -div
        deg = np.zeros((ny, nx))
        for j in range(ny):
            for i in range(nx):
                if not fluid[j, i]:
                    continue
                for dj, di in ((0, -1), (0, 1), (-1, 0), (1, 0)):
                    jj, ii = j + dj, i + di
                    if 0 <= ii < nx and 0 <= jj < ny:
                        if fluid[jj, ii]:
                            deg[j, i] += 1
                    elif di == 1 and ii == nx:
                        deg[j, i] += 1  # open east ghost
        p = np.zeros((ny, nx))
        for sweep in range(100000):
            max_res = 0.0
            for j in range(ny):
                for i in range(nx):
                    if not fluid[j, i] or deg[j, i] == 0:
                        continue
                    nb = 0.0
                    for dj, di in ((0, -1), (0, 1), (-1, 0), (1, 0)):
                        jj, ii = j + dj, i + di
                        if 0 <= ii < nx and 0 <= jj < ny and fluid[jj, ii]:
                            nb += p[jj, ii]
                    new = (nb + rhs[j, i]) / deg[j, i]
                    max_res = max(max_res, abs(new - p[j, i]))
                    p[j, i] = new
            if max_res < tol:
                break
        u = state.u.copy()
        v = state.v.copy()
        for j in range(ny):
            for i in range(1, nx):
                if fluid[j, i - 1] and fluid[j, i]:
                    u[j, i] -= p[j, i] - p[j, i - 1]
        for j in range(ny):
            if fluid[j, nx - 1]:
                u[j, nx] -= 0.0 - p[j, nx - 1]
        for j in range(1, ny):
            for i in range(nx):
                if fluid[j - 1, i] and fluid[j, i]:
                    v[j, i] -= p[j, i] - p[j - 1, i]
        return u, v

    def test_relaxation_projection_matches_dense_oracle_16x9(self):
        grid = ws.GridSpec(nx=16, ny=9)
        rng = np.random.default_rng(12)
        blockage = np.zeros((9, 16))
        blockage[3:6, 7:10] = 1.0
        obs = ObstacleField(blockage, np.zeros_like(blockage))
        params = ws.SimParams(projection_solver="relax", projection_iters=500)
        state = ws.FlowState.at_rest(grid)
        state.u = rng.standard_normal(state.u.shape)
        state.v = rng.standard_normal(state.v.shape)
        masks = ws.face_masks(obs)
        ws.enforce_boundaries(state, masks)
        u_exp, v_exp = self._dense_gauss_seidel_projection(state.copy(), obs)
        solver = ws.PressureSolver(obs)
        solver.project(state, params)
        assert np.abs(state.u - u_exp).max() <= 1e-6
        assert np.abs(state.v - v_exp).max() <= 1e-6

    def test_exact_solver_matches_relaxation_limit(self):
        grid = ws.GridSpec(nx=16, ny=9)
        rng = np.random.default_rng(3)
        obs = ObstacleField.empty(16, 9)
        s1 = ws.FlowState.at_rest(grid)
        s1.u = rng.standard_normal(s1.u.shape)
        s1.v = rng.standard_normal(s1.v.shape)
        ws.enforce_boundaries(s1, ws.face_masks(obs))
        s2 = s1.copy()
        ws.PressureSolver(obs).project(s1, ws.SimParams(projection_solver="exact"))
        ws.PressureSolver(obs).project(
            s2, ws.SimParams(projection_solver="relax", projection_iters=800))
        assert np.abs(s1.u - s2.u).max() <= 1e-8


class TestStability:
    def test_long_run_bounded(self, grid):
        # Reference-style scenario: random blocks, full physics.
        rng = np.random.default_rng(42)
        blockage = np.zeros((grid.ny, grid.nx))
        for _ in range(6):
            x0 = int(rng.integers(10, grid.nx - 30))
            y0 = int(rng.integers(10, grid.ny - 30))
            blockage[y0:y0 + 14, x0:x0 + 14] = 1.0
        obs = ObstacleField(blockage, np.zeros_like(blockage))
        params = ws.SimParams()
        state = ws.FlowState.inflow_equilibrium(grid, params, obs)
        cap = 5.0 * 2.0 * params.inflow_internal  # jet peak is 2x inflow
        for k in range(10_000):
            ws.step(state, obs, grid, params)
            if k % 500 == 0:
                assert state.is_finite(), f"NaN at step {k}"
                speed = max(np.abs(state.u).max(), np.abs(state.v).max())
                assert speed <= cap, f"runaway speed {speed:.2f} at step {k}"
        assert state.is_finite()
