"""Real-time incompressible 2D wind solver on a staggered (MAC) grid.

Operator-split scheme per frame: forces (Coriolis rotation, west-edge inflow
relaxation, low-mountain drag), explicit diffusion, semi-Lagrangian
self-advection, obstacle boundary enforcement, pressure projection, boundary
re-enforcement. Semi-Lagrangian transport plus projection keeps the step
unconditionally stable at exhibit frame rates.

Units: velocities are stored internally in cells per model-second. The
physical inflow speed (m/s) and cell size (km) define the mapping back to
SI; Coriolis parameters given in 1/s are converted through the implied
time scale, so a faster wind turns less per cell traveled, as it should.

Velocity components live on faces: u has shape (ny, nx+1) on vertical faces,
v has shape (ny+1, nx) on horizontal faces; pressure sits at cell centers.
Row y=0 is the south edge.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .terrain import ObstacleField

log = logging.getLogger(__name__)

EARTH_OMEGA = 7.2921e-5  # rad/s
EARTH_RADIUS_M = 6.371e6


def coriolis_f0(lat_deg: float = 45.0) -> float:
    """Coriolis parameter 2*Omega*sin(lat) in 1/s."""
    return 2.0 * EARTH_OMEGA * math.sin(math.radians(lat_deg))


def coriolis_beta(lat_deg: float = 45.0) -> float:
    """Meridional Coriolis gradient 2*Omega*cos(lat)/R in 1/(s*m)."""
    return 2.0 * EARTH_OMEGA * math.cos(math.radians(lat_deg)) / EARTH_RADIUS_M


class ConfigError(ValueError):
    """Invalid grid or simulation parameters."""


@dataclass(frozen=True)
class GridSpec:
    """Domain geometry: a flat beta-plane channel mapped linearly to latitude."""

    nx: int = 192
    ny: int = 108
    cell_km: float = 35.0
    lat_south: float = 22.0
    lat_north: float = 56.0

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ConfigError(f"grid must be at least 8x8, got {self.nx}x{self.ny}")
        if self.cell_km <= 0:
            raise ConfigError(f"cell_km must be positive, got {self.cell_km}")
        if self.lat_south >= self.lat_north:
            raise ConfigError(
                f"lat_south must be < lat_north, got {self.lat_south} >= {self.lat_north}")

    @property
    def cell_m(self) -> float:
        return self.cell_km * 1000.0

    def lat_of_y(self, y):
        """Latitude (degrees) of a continuous map y coordinate in [0, ny]."""
        return self.lat_south + (np.asarray(y) / self.ny) * (self.lat_north - self.lat_south)


@dataclass(frozen=True)
class SimParams:
    """Solver tuning knobs.

    dt is in model seconds; inflow_speed in m/s; f0 in 1/s and beta in
    1/(s*m) are real-Earth values scaled by coriolis_strength, the exhibit's
    master balance knob. cfl_target fixes the internal velocity scale: the
    base westerly travels cfl_target cells per step.
    """

    dt: float = 0.25
    inflow_speed: float = 10.0
    jet_boost: float = 1.0
    f0: float = coriolis_f0(45.0)
    beta: float = coriolis_beta(45.0)
    viscosity: float = 0.0
    drag_low: float = 0.8
    projection_iters: int = 40
    coriolis_strength: float = 0.25
    inflow_relax: float = 0.8
    cfl_target: float = 0.8
    projection_solver: str = "exact"  # "exact" (sparse LU) or "relax" (red-black GS)
    jet_center_frac: float = 0.75
    jet_width_frac: float = 0.10

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.projection_iters < 1:
            raise ConfigError(f"projection_iters must be >= 1, got {self.projection_iters}")
        if self.viscosity < 0:
            raise ConfigError(f"viscosity must be >= 0, got {self.viscosity}")
        if self.jet_boost < 0:
            raise ConfigError(f"jet_boost must be >= 0, got {self.jet_boost}")
        if self.inflow_speed <= 0:
            raise ConfigError(f"inflow_speed must be positive, got {self.inflow_speed}")
        if self.projection_solver not in ("exact", "relax"):
            raise ConfigError(f"unknown projection solver {self.projection_solver!r}")

    @property
    def inflow_internal(self) -> float:
        """Base westerly speed in cells per model-second."""
        return self.cfl_target / self.dt

    @property
    def velocity_scale(self) -> float:
        """Meters per second represented by one internal velocity unit."""
        return self.inflow_speed / self.inflow_internal

    def time_scale_s(self, grid: GridSpec) -> float:
        """Real seconds per model second."""
        return grid.cell_m / self.velocity_scale

    def coriolis_param_si(self, y, grid: GridSpec):
        """f(y) in 1/s at continuous map coordinate y (beta-plane, strength-scaled)."""
        y_m = np.asarray(y, dtype=np.float64) * grid.cell_m
        y_mid_m = 0.5 * grid.ny * grid.cell_m
        return (self.f0 + self.beta * (y_m - y_mid_m)) * self.coriolis_strength

    def coriolis_param_internal(self, y, grid: GridSpec):
        """f(y) in 1/model-second for the solver's internal velocity units."""
        return self.coriolis_param_si(y, grid) * self.time_scale_s(grid)

    def jet_profile(self, y, grid: GridSpec):
        """Smooth inflow bump N(y) in [0, 1], centered in the northern third."""
        yc = self.jet_center_frac * grid.ny
        sigma = self.jet_width_frac * grid.ny
        return np.exp(-0.5 * ((np.asarray(y, dtype=np.float64) - yc) / sigma) ** 2)

    def inflow_target(self, grid: GridSpec) -> np.ndarray:
        """Per-row west-edge target u (internal units) including the jet boost."""
        rows = np.arange(grid.ny) + 0.5
        return self.inflow_internal * (1.0 + self.jet_boost * self.jet_profile(rows, grid))


def coriolis_accel(u: float, v: float, y: float, grid: GridSpec, p: SimParams):
    """Coriolis acceleration (f*v, -f*u) in SI units at cell row y.

    With f > 0 an eastward wind accelerates southward: the northern-
    hemisphere rightward bend.
    """
    f = p.coriolis_param_si(np.asarray(y, dtype=np.float64) + 0.5, grid)
    return f * v, -f * u


@dataclass
class FlowState:
    """Mutable solver state: staggered velocities, pressure scratch, step count."""

    u: np.ndarray  # (ny, nx+1)
    v: np.ndarray  # (ny+1, nx)
    pressure: np.ndarray  # (ny, nx)
    step_count: int = 0

    @classmethod
    def at_rest(cls, grid: GridSpec) -> "FlowState":
        return cls(
            u=np.zeros((grid.ny, grid.nx + 1)),
            v=np.zeros((grid.ny + 1, grid.nx)),
            pressure=np.zeros((grid.ny, grid.nx)),
        )

    @classmethod
    def inflow_equilibrium(cls, grid: GridSpec, params: SimParams,
                           obs: ObstacleField | None = None) -> "FlowState":
        """Uniform westerly at the per-row inflow target, zeroed on solid faces."""
        state = cls.at_rest(grid)
        state.u[:, :] = params.inflow_target(grid)[:, None]
        if obs is not None:
            masks = face_masks(obs)
            state.u[masks.u_solid] = 0.0
            state.v[masks.v_solid] = 0.0
        return state

    def copy(self) -> "FlowState":
        return FlowState(self.u.copy(), self.v.copy(), self.pressure.copy(), self.step_count)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.u).all() and np.isfinite(self.v).all())

    def cell_velocity(self) -> tuple[np.ndarray, np.ndarray]:
        """Velocity averaged to cell centers, shape (ny, nx) each."""
        uc = 0.5 * (self.u[:, :-1] + self.u[:, 1:])
        vc = 0.5 * (self.v[:-1, :] + self.v[1:, :])
        return uc, vc


@dataclass(frozen=True)
class FaceMasks:
    """Which faces are walls/solids (prescribed zero) for a given obstacle field."""

    u_solid: np.ndarray  # (ny, nx+1) bool
    v_solid: np.ndarray  # (ny+1, nx) bool
    solid: np.ndarray  # (ny, nx) bool cell mask


def face_masks(obs: ObstacleField) -> FaceMasks:
    solid = obs.solid
    ny, nx = solid.shape
    u_solid = np.zeros((ny, nx + 1), dtype=bool)
    u_solid[:, 1:nx] = solid[:, :-1] | solid[:, 1:]
    u_solid[:, 0] = solid[:, 0]
    u_solid[:, nx] = solid[:, -1]
    v_solid = np.zeros((ny + 1, nx), dtype=bool)
    v_solid[1:ny, :] = solid[:-1, :] | solid[1:, :]
    # North/south boundary faces are free-slip walls: normal velocity zero.
    v_solid[0, :] = True
    v_solid[ny, :] = True
    # Inflow may only feed fluid regions that can drain through the open east
    # edge; a walled-off west pocket would make incompressibility unsatisfiable,
    # so its inflow faces are sealed instead.
    if solid.any():
        from scipy import ndimage

        labels, _ = ndimage.label(~solid)
        draining = np.unique(labels[:, -1])
        sealed_west = ~np.isin(labels[:, 0], draining) & ~solid[:, 0]
        u_solid[:, 0] |= sealed_west
    return FaceMasks(u_solid=u_solid, v_solid=v_solid, solid=solid)


def divergence(state: FlowState) -> np.ndarray:
    """Per-cell velocity divergence (cell size 1 in internal units)."""
    return (state.u[:, 1:] - state.u[:, :-1]) + (state.v[1:, :] - state.v[:-1, :])


def max_divergence(state: FlowState, obs: ObstacleField) -> float:
    div = np.abs(divergence(state))
    fluid = ~obs.solid
    return float(div[fluid].max()) if fluid.any() else 0.0


class PressureSolver:
    """Poisson solve for the projection on a fixed obstacle layout.

    The discrete system couples fluid cells through faces the projection is
    allowed to correct: interior fluid-fluid faces plus the open east
    boundary faces (ghost pressure 0). Solid faces, the free-slip walls, and
    the velocity-prescribed west inflow column are never corrected, which
    keeps impermeability and the inflow condition exact. Two backends:
    "exact" prefactorizes the sparse matrix (one LU per layout,
    machine-precision divergence every step), "relax" runs red-black
    Gauss-Seidel sweeps.
    """

    def __init__(self, obs: ObstacleField):
        solid = obs.solid
        ny, nx = solid.shape
        self.shape = (ny, nx)
        fluid = ~solid
        self.fluid = fluid
        self.masks = face_masks(obs)

        # Per-direction coupling masks: fluid neighbor across a correctable face.
        self.cpl_w = np.zeros_like(fluid)
        self.cpl_e = np.zeros_like(fluid)
        self.cpl_s = np.zeros_like(fluid)
        self.cpl_n = np.zeros_like(fluid)
        self.cpl_w[:, 1:] = fluid[:, 1:] & fluid[:, :-1]
        self.cpl_e[:, :-1] = fluid[:, :-1] & fluid[:, 1:]
        self.cpl_s[1:, :] = fluid[1:, :] & fluid[:-1, :]
        self.cpl_n[:-1, :] = fluid[:-1, :] & fluid[1:, :]

        # Open east boundary faces (ghost pressure 0) add to the diagonal only.
        open_e = np.zeros_like(fluid)
        open_e[:, -1] = fluid[:, -1]
        self.open_e = open_e

        self.degree = (
            self.cpl_w.astype(np.float64) + self.cpl_e + self.cpl_s + self.cpl_n
            + open_e
        )
        self.active = fluid & (self.degree > 0)

        # Red-black checkerboard over active cells.
        yy, xx = np.mgrid[0:ny, 0:nx]
        parity = (xx + yy) % 2 == 0
        self.red = self.active & parity
        self.black = self.active & ~parity

        # Near-optimal SOR factor. Three sides are Neumann (walls and the
        # prescribed inflow), which doubles the effective wavelength of the
        # slowest mode; plain Gauss-Seidel would need thousands of sweeps.
        self.omega = 2.0 / (1.0 + math.sin(math.pi / (2.0 * max(nx, ny))))

        self._lu = None

    def _build_lu(self):
        ny, nx = self.shape
        idx = -np.ones(self.shape, dtype=np.int64)
        cells = np.argwhere(self.active)
        idx[self.active] = np.arange(len(cells))
        rows, cols, vals = [], [], []
        for k, (j, i) in enumerate(cells):
            rows.append(k)
            cols.append(k)
            vals.append(self.degree[j, i])
            for mask, (dj, di) in ((self.cpl_w, (0, -1)), (self.cpl_e, (0, 1)),
                                   (self.cpl_s, (-1, 0)), (self.cpl_n, (1, 0))):
                if mask[j, i]:
                    rows.append(k)
                    cols.append(idx[j + dj, i + di])
                    vals.append(-1.0)
        n = len(cells)
        a = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
        # Tiny diagonal shift keeps enclosed all-Neumann pockets nonsingular;
        # their RHS is compatible so the perturbation is negligible.
        a = a + sp.eye(n, format="csc") * 1e-12
        self._lu = spla.factorized(a)
        self._idx = idx

    def solve_exact(self, rhs: np.ndarray) -> np.ndarray:
        if self._lu is None:
            self._build_lu()
        p = np.zeros(self.shape)
        p[self.active] = self._lu(rhs[self.active])
        return p

    def relax(self, rhs: np.ndarray, p0: np.ndarray, iters: int) -> np.ndarray:
        """Red-black SOR sweeps on degree*p - sum(p_nbr) = rhs."""
        p = np.where(self.active, p0, 0.0)
        deg = np.where(self.active, self.degree, 1.0)
        w = self.omega
        for _ in range(iters):
            for mask in (self.red, self.black):
                nbr = np.zeros(self.shape)
                nbr[:, 1:] += np.where(self.cpl_w[:, 1:], p[:, :-1], 0.0)
                nbr[:, :-1] += np.where(self.cpl_e[:, :-1], p[:, 1:], 0.0)
                nbr[1:, :] += np.where(self.cpl_s[1:, :], p[:-1, :], 0.0)
                nbr[:-1, :] += np.where(self.cpl_n[:-1, :], p[1:, :], 0.0)
                p[mask] = (1.0 - w) * p[mask] + w * (nbr[mask] + rhs[mask]) / deg[mask]
        return p

    def project(self, state: FlowState, params: SimParams) -> None:
        """Make the velocity field divergence-free on fluid cells (in place)."""
        rhs = -divergence(state)
        rhs[~self.active] = 0.0
        if params.projection_solver == "exact":
            p = self.solve_exact(rhs)
        else:
            p = self.relax(rhs, state.pressure, params.projection_iters)
        state.pressure = p
        ny, nx = self.shape
        # Interior fluid-fluid faces.
        du = np.where(self.cpl_e[:, :-1], p[:, 1:] - p[:, :-1], 0.0)
        state.u[:, 1:nx] -= du
        dv = np.where(self.cpl_n[:-1, :], p[1:, :] - p[:-1, :], 0.0)
        state.v[1:ny, :] -= dv
        # Open east boundary faces against ghost pressure 0.
        state.u[:, nx] -= np.where(self.open_e[:, -1], 0.0 - p[:, -1], 0.0)


_solver_cache: dict[tuple, PressureSolver] = {}


def solver_for(obs: ObstacleField) -> PressureSolver:
    """Fetch or build the pressure solver for an obstacle layout (small LRU)."""
    key = (obs.digest(), obs.shape)
    solver = _solver_cache.get(key)
    if solver is None:
        solver = PressureSolver(obs)
        if len(_solver_cache) >= 8:
            _solver_cache.pop(next(iter(_solver_cache)))
        _solver_cache[key] = solver
    return solver


def _bilinear(arr: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Bilinear gather in index space; gx, gy must already be clipped >= 0.

    Non-finite coordinates (a poisoned state mid-reset) produce non-finite
    samples instead of crashing, so the NaN policy can catch them.
    """
    h, w = arr.shape
    with np.errstate(invalid="ignore"):
        x0 = np.clip(gx.astype(np.int64), 0, w - 2)
        y0 = np.clip(gy.astype(np.int64), 0, h - 2)
    fx = gx - x0
    fy = gy - y0
    flat = arr.ravel()
    idx = y0 * w + x0
    a = flat.take(idx)
    b = flat.take(idx + 1)
    c = flat.take(idx + w)
    d = flat.take(idx + w + 1)
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    return top + fy * (bot - top)


def _sample_u(u: np.ndarray, x, y) -> np.ndarray:
    """Bilinear sample of the u component at map coords; u faces sit at (i, j+0.5)."""
    ny, nxp1 = u.shape
    gx = np.clip(x, 0.0, nxp1 - 1.0)
    gy = np.clip(np.asarray(y, dtype=np.float64) - 0.5, 0.0, ny - 1.0)
    return _bilinear(u, np.asarray(gx, dtype=np.float64), gy)


def _sample_v(v: np.ndarray, x, y) -> np.ndarray:
    """Bilinear sample of the v component; v faces sit at (i+0.5, j)."""
    nyp1, nx = v.shape
    gx = np.clip(np.asarray(x, dtype=np.float64) - 0.5, 0.0, nx - 1.0)
    gy = np.clip(y, 0.0, nyp1 - 1.0)
    return _bilinear(v, gx, np.asarray(gy, dtype=np.float64))


def probe(state: FlowState, x, y, obs: ObstacleField | None = None):
    """Velocity (internal units) at continuous map coords, bilinear.

    Points inside solid cells read (0, 0). Out-of-domain coordinates are
    clamped to the nearest boundary sample. Accepts scalars or arrays.
    """
    ny, nx = state.pressure.shape
    xq = np.clip(np.asarray(x, dtype=np.float64), 0.0, nx)
    yq = np.clip(np.asarray(y, dtype=np.float64), 0.0, ny)
    uu = _sample_u(state.u, xq, yq)
    vv = _sample_v(state.v, xq, yq)
    if obs is not None:
        ci = np.clip(np.floor(xq).astype(np.int64), 0, nx - 1)
        cj = np.clip(np.floor(yq).astype(np.int64), 0, ny - 1)
        in_solid = obs.solid[cj, ci]
        uu = np.where(in_solid, 0.0, uu)
        vv = np.where(in_solid, 0.0, vv)
    if np.ndim(x) == 0 and np.ndim(y) == 0:
        return float(uu), float(vv)
    return uu, vv


def rotate_velocity(u, v, theta):
    """Exact clockwise-for-positive-f rotation: the semi-implicit Coriolis kick.

    Integrates du/dt = f*v, dv/dt = -f*u over one step with theta = f*dt;
    preserves speed exactly, so no spurious energy growth.
    """
    c, s = np.cos(theta), np.sin(theta)
    return u * c + v * s, -u * s + v * c


def apply_coriolis(state: FlowState, grid: GridSpec, params: SimParams) -> None:
    """Rotate face velocities by f(y)*dt; interior faces only.

    The rotation acts on the deviation from the prevailing westerly profile:
    the background jet is taken as geostrophically balanced (its Coriolis
    force is a pure pressure gradient and would be absorbed by the
    projection anyway, except near the open east edge where the pressure
    anchor would bend the whole mean flow south). Wakes, diverted flow and
    eddies feel the full rotation. The other velocity component is averaged
    from the four surrounding faces of the staggered grid.
    """
    if params.coriolis_strength == 0.0:
        return
    ny, nx = grid.ny, grid.nx
    u, v = state.u, state.v
    u_ref = params.inflow_target(grid)  # per cell row, y = j+0.5
    # u faces at rows y=j+0.5, interior columns 1..nx-1.
    theta_u = params.coriolis_param_internal(np.arange(ny) + 0.5, grid)[:, None] * params.dt
    v_at_u = 0.25 * (v[:-1, :-1] + v[:-1, 1:] + v[1:, :-1] + v[1:, 1:])  # (ny, nx-1)
    du_new, _ = rotate_velocity(u[:, 1:nx] - u_ref[:, None], v_at_u, theta_u)
    # v faces at rows y=j, interior rows 1..ny-1.
    theta_v = params.coriolis_param_internal(np.arange(1, ny), grid)[:, None] * params.dt
    u_at_v = 0.25 * (u[:-1, :-1] + u[:-1, 1:] + u[1:, :-1] + u[1:, 1:])  # (ny-1, nx)
    u_ref_at_v = 0.5 * (u_ref[:-1] + u_ref[1:])
    _, v_new = rotate_velocity(u_at_v - u_ref_at_v[:, None], v[1:ny, :], theta_v)
    u[:, 1:nx] = u_ref[:, None] + du_new
    v[1:ny, :] = v_new


def inertial_probe_trajectory(grid: GridSpec, params: SimParams, start: tuple[float, float],
                              v0: tuple[float, float], steps: int):
    """Reference parcel under the solver's Coriolis operator alone.

    A diagnostic for direction and latitude dependence: the parcel's velocity
    gets the same per-step rotation step() applies, then moves ballistically.
    In the projected channel flow uniform-f Coriolis is curl-free and is
    absorbed by pressure, so this unconstrained trajectory is where the
    rightward/leftward bend is observable and testable.

    Returns (positions, headings) arrays of shape (steps+1, 2) and (steps+1,).
    """
    x, y = float(start[0]), float(start[1])
    u, v = float(v0[0]), float(v0[1])
    positions = [(x, y)]
    headings = [math.atan2(v, u)]
    for _ in range(steps):
        theta = params.coriolis_param_internal(y, grid) * params.dt
        u, v = rotate_velocity(u, v, float(theta))
        x += u * params.dt
        y += v * params.dt
        positions.append((x, y))
        headings.append(math.atan2(v, u))
    return np.array(positions), np.unwrap(np.array(headings))


def apply_inflow(state: FlowState, grid: GridSpec, params: SimParams) -> FlowState:
    """Relax the west edge toward the jet-boosted westerly target.

    West-column u tends to inflow*(1 + jet_boost*N(y)); west-column v tends
    to zero. The east edge stays open (zero-gradient outflow predictor) and
    the north/south edges are free-slip walls.
    """
    r = min(1.0, params.inflow_relax * params.dt)
    target = params.inflow_target(grid)
    state.u[:, 0] += r * (target - state.u[:, 0])
    state.v[:, 0] += r * (0.0 - state.v[:, 0])
    state.u[:, -1] = state.u[:, -2]
    state.v[0, :] = 0.0
    state.v[-1, :] = 0.0
    return state


def apply_drag(state: FlowState, obs: ObstacleField, params: SimParams) -> None:
    """Porous low-mountain drag: u <- u * max(0, 1 - drag*dt) on touched faces."""
    if not np.any(obs.drag > 0):
        return
    drag = obs.drag
    ny, nx = drag.shape
    fu = np.zeros((ny, nx + 1))
    fu[:, 1:nx] = np.maximum(drag[:, :-1], drag[:, 1:])
    fu[:, 0] = drag[:, 0]
    fu[:, nx] = drag[:, -1]
    fv = np.zeros((ny + 1, nx))
    fv[1:ny, :] = np.maximum(drag[:-1, :], drag[1:, :])
    fv[0, :] = drag[0, :]
    fv[ny, :] = drag[-1, :]
    state.u *= np.maximum(0.0, 1.0 - fu * params.dt)
    state.v *= np.maximum(0.0, 1.0 - fv * params.dt)


def _laplacian(a: np.ndarray) -> np.ndarray:
    """5-point Laplacian with replicated edges (zero normal gradient)."""
    padded = np.pad(a, 1, mode="edge")
    return (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2]
            + padded[1:-1, 2:] - 4.0 * a)


def apply_diffusion(state: FlowState, grid: GridSpec, params: SimParams) -> None:
    """Explicit viscous diffusion; a no-op at the default viscosity of zero."""
    if params.viscosity <= 0:
        return
    nu = params.viscosity * params.time_scale_s(grid) / grid.cell_m**2  # cells^2 per model-s
    k = nu * params.dt
    if k > 0.24:
        # Explicit stability bound; clamp rather than blow up.
        log.warning("viscosity clamped for explicit stability (nu*dt %.3f -> 0.24)", k)
        k = 0.24
    state.u += k * _laplacian(state.u)
    state.v += k * _laplacian(state.v)


_face_coord_cache: dict[tuple[int, int], tuple] = {}


def _face_coords(ny: int, nx: int):
    key = (ny, nx)
    if key not in _face_coord_cache:
        ux, uy = np.meshgrid(np.arange(nx + 1, dtype=np.float64),
                             np.arange(ny, dtype=np.float64) + 0.5)
        vx, vy = np.meshgrid(np.arange(nx, dtype=np.float64) + 0.5,
                             np.arange(ny + 1, dtype=np.float64))
        if len(_face_coord_cache) > 8:
            _face_coord_cache.clear()
        _face_coord_cache[key] = (ux, uy, vx, vy)
    return _face_coord_cache[key]


def advect_velocity(state: FlowState, params: SimParams) -> None:
    """Semi-Lagrangian self-advection with a midpoint backtrace.

    At a face's own position its stored component needs no interpolation,
    only the cross component does, which saves two samplings per step.
    """
    ny, nx = state.pressure.shape
    dt = params.dt
    u, v = state.u, state.v
    ux, uy, vx, vy = _face_coords(ny, nx)

    # u faces: k1 = (u itself, sampled v)
    mx = ux - 0.5 * dt * u
    my = uy - 0.5 * dt * _sample_v(v, ux, uy)
    bux = ux - dt * _sample_u(u, mx, my)
    buy = uy - dt * _sample_v(v, mx, my)
    # v faces: k1 = (sampled u, v itself)
    mx2 = vx - 0.5 * dt * _sample_u(u, vx, vy)
    my2 = vy - 0.5 * dt * v
    bvx = vx - dt * _sample_u(u, mx2, my2)
    bvy = vy - dt * _sample_v(v, mx2, my2)

    state.u = _sample_u(u, bux, buy)
    state.v = _sample_v(v, bvx, bvy)


def enforce_boundaries(state: FlowState, masks: FaceMasks,
                       pre_projection: bool = False) -> None:
    """Zero normal velocity on solid faces and walls; free-slip tangentially.

    Before projection the east column also takes the zero-gradient outflow
    predictor; after projection the corrected east faces are left alone so
    the divergence-free result survives.
    """
    if pre_projection:
        state.u[:, -1] = np.where(masks.u_solid[:, -1], 0.0, state.u[:, -2])
    state.u[masks.u_solid] = 0.0
    state.v[masks.v_solid] = 0.0


def step(state: FlowState, obs: ObstacleField, grid: GridSpec, params: SimParams,
         solver: PressureSolver | None = None, on_event=None) -> FlowState:
    """Advance the flow one frame (in place; returns the same state).

    Order: forces (Coriolis, inflow, drag) -> diffusion -> self-advection ->
    boundary enforcement -> pressure projection -> boundary re-enforcement.
    A non-finite result resets to the inflow equilibrium instead of
    propagating NaNs; the exhibit must never lock up.
    """
    if obs.shape != (grid.ny, grid.nx):
        raise ConfigError(
            f"obstacle field {obs.shape} does not match grid {(grid.ny, grid.nx)}")
    if solver is None:
        solver = solver_for(obs)
    masks = solver.masks

    apply_coriolis(state, grid, params)
    apply_inflow(state, grid, params)
    apply_drag(state, obs, params)
    enforce_boundaries(state, masks)
    apply_diffusion(state, grid, params)
    advect_velocity(state, params)
    enforce_boundaries(state, masks, pre_projection=True)
    solver.project(state, params)
    enforce_boundaries(state, masks)

    if not state.is_finite():
        log.error("non-finite velocity at step %d; resetting to inflow equilibrium",
                  state.step_count)
        eq = FlowState.inflow_equilibrium(grid, params, obs)
        state.u, state.v, state.pressure = eq.u, eq.v, eq.pressure
        if on_event is not None:
            on_event({"type": "nan_reset", "step": state.step_count})
    state.step_count += 1
    return state
