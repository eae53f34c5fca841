"""Nested macro-meso driver and the fine-scale comparison harness.

Every macro element carries one integration point bound to a transient
periodic cell problem. A macro Crank-Nicolson step iterates Newton on
the macro unknowns; each iteration sends the current element values and
gradients to the scheduler pool, which advances every cell from its
committed state and returns averaged fluxes, storage rates and storage
moments. The macro residual uses

  * effective capacities (from the cell tangents) times nodal rates,
  * the Crank-Nicolson average of the cell flux averages against
    gradient test functions,
  * optionally the moment storage term: gradient test functions dotted
    with the cell storage moment rates (the finite-cell-size coupling).

Cell tangents are refreshed on the first Newton iteration of each step
and reused within it; they only precondition the iteration and set the
effective capacities. Cell states commit when the macro step is
accepted, so a rejected or retried step never pollutes the meso memory.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .constitutive import ConstitutiveError
from .fem import FieldState
from .homogenization import (CellProblem, EffectiveResponse, MacroLoading,
                             initial_response)
from .mesh import Mesh
from .scheduler import (SchedulerError, make_pool, partition_points,
                        slice_registry)
from .solver import (History, SolverConfig, SolverError, newton_solve,
                     transient_solve, _dirichlet_for)

log = logging.getLogger(__name__)


class FE2Error(RuntimeError):
    pass


@dataclass
class PointEntry:
    """Master-side bookkeeping for one macro integration point."""

    region: str
    response: EffectiveResponse       # accepted response at t_n
    tangent: object = None            # TangentBlocks, refreshed per step


class MacroPointRegistry:
    """One meso problem per macro element (single integration point).

    Maps element ids to their region's cell problem and tracks the last
    accepted response and tangent blocks. The meso states themselves
    live with the scheduler workers; this registry only holds what the
    macro assembly needs.
    """

    def __init__(self, mesh: Mesh, cells):
        self.mesh = mesh
        regions = [mesh.phase_names[k] for k in mesh.phases]
        missing = sorted(set(regions) - set(cells))
        if missing:
            raise FE2Error(f"regions without a cell problem: {missing}")
        self.regions = regions
        self.cells = {e: cells[r] for e, r in enumerate(regions)}
        self.entries = {}

    @property
    def point_ids(self):
        return range(self.mesh.n_triangles)

    def initialize(self, initial: FieldState, dt):
        """Zero-rate responses and worker registry for the start state."""
        loadings = element_loadings(self.mesh, initial.vector(), dt)
        registry = {}
        for e in self.point_ids:
            state, resp = initial_response(self.cells[e], loadings[e])
            registry[e] = (self.cells[e], state)
            self.entries[e] = PointEntry(self.regions[e], resp)
        return registry


def element_loadings(mesh: Mesh, u, dt):
    """Per-element MacroLoading from the field-major macro vector."""
    ws = fem.workspace(mesh)
    n = mesh.n_nodes
    tm, pm = ws.element_mean(u[:n]), ws.element_mean(u[n:])
    tg, pg = ws.element_gradient(u[:n]), ws.element_gradient(u[n:])
    return {e: MacroLoading(tm[e], pm[e], tg[e], pg[e], dt=dt)
            for e in range(mesh.n_triangles)}


def _tensor_stiffness(ws, tensors):
    """csr matrix with entries sum_e A_e grad N_i . (T_e grad N_j)."""
    data = np.einsum("mid,mde,mje,m->mij", ws.grads, tensors, ws.grads,
                     ws.areas).ravel()
    return ws.csr_scatter(data)


def _value_coupling(ws, vecs):
    """csr matrix with entries sum_e A_e (grad N_i . v_e) / 3.

    Jacobian of flux terms driven by the element mean value; the column
    weight 1/3 is the derivative of the mean with respect to each nodal
    value.
    """
    m = len(ws.areas)
    row_vals = np.einsum("mid,md,m->mi", ws.grads, vecs, ws.areas) / 3.0
    data = np.broadcast_to(row_vals[:, :, None], (m, 3, 3)).ravel()
    return ws.csr_scatter(data)


def _lumped(ws, vals):
    d = np.zeros(ws.mesh.n_nodes)
    np.add.at(d, ws.mesh.triangles.ravel(),
              np.repeat(vals * ws.areas / 3.0, 3))
    return d


@dataclass
class FE2Result:
    history: History
    partition: object
    rounds: list = field(default_factory=list)   # scheduler RoundRecords


class FE2Driver:
    """Owns the macro mesh, the point registry and the worker pool."""

    def __init__(self, mesh: Mesh, cells, initial: FieldState,
                 config: SolverConfig = None, n_workers=1,
                 policy="region-aware", cprime=True, init_dt=3600.0):
        self.mesh = mesh
        self.ws = fem.workspace(mesh)
        self.config = config or SolverConfig()
        self.cprime = bool(cprime)
        self.registry = MacroPointRegistry(mesh, cells)
        worker_registry = self.registry.initialize(initial, init_dt)
        self.partition = partition_points(
            list(self.registry.point_ids), self.registry.regions,
            n_workers, policy)
        self.pool = make_pool(slice_registry(self.partition,
                                             worker_registry))

    def close(self):
        self.pool.stop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    # ------------------------------------------------------------ stepping

    def step(self, u_n, t_n, dt, cmap):
        """One macro CN step from u_n; commits meso states on success.

        Returns (u_new, newton_iterations). Raises SolverError on macro
        breakdown and ConstitutiveError-wrapped SchedulerError when the
        meso increments refuse an iterate (both retryable by halving).
        """
        mesh, ws, entries = self.mesh, self.ws, self.registry.entries
        n = mesh.n_nodes
        pids = list(self.registry.point_ids)
        q_old_t = np.stack([entries[e].response.q_heat for e in pids])
        q_old_f = np.stack([entries[e].response.q_moist for e in pids])
        cache = {}
        last = {}

        def refresh_tangents(responses):
            for e in pids:
                entries[e].tangent = responses[e].tangent
            tan = [entries[e].tangent for e in pids]
            kb = {name: np.stack([getattr(t, name) for t in tan])
                  for name in ("k_tt", "k_tf", "k_ft", "k_ff")}
            c_t = np.array([t.c_t for t in tan])
            c_f = np.array([t.c_f for t in tan])
            C = np.concatenate([_lumped(ws, c_t), _lumped(ws, c_f)])
            blocks = [[_tensor_stiffness(ws, kb["k_tt"]),
                       _tensor_stiffness(ws, kb["k_tf"])],
                      [_tensor_stiffness(ws, kb["k_ft"]),
                       _tensor_stiffness(ws, kb["k_ff"])]]
            # mean-flux sensitivity to the macro values; without it the
            # saturation-pressure coupling degrades Newton to a slow
            # linear rate
            bt = np.stack([t.b_t for t in tan])
            bf = np.stack([t.b_f for t in tan])
            vblocks = [[_value_coupling(ws, bt[:, :, 0]),
                        _value_coupling(ws, bt[:, :, 1])],
                       [_value_coupling(ws, bf[:, :, 0]),
                        _value_coupling(ws, bf[:, :, 1])]]
            J = (sp.diags(C / dt) + 0.5 * sp.bmat(blocks, format="csr")
                 - 0.5 * sp.bmat(vblocks, format="csr"))
            if self.cprime:
                # storage moments respond mostly to gradient rates, at
                # capacity <x~ x~> / dt scale; these blocks dominate the
                # conductive ones for hour-long steps
                mgb = {name: np.stack([getattr(t, name) for t in tan])
                       for name in ("mg_tt", "mg_tf", "mg_ft", "mg_ff")}
                mvt = np.stack([t.mv_t for t in tan])
                mvf = np.stack([t.mv_f for t in tan])
                mblocks = [
                    [_tensor_stiffness(ws, mgb["mg_tt"])
                     + _value_coupling(ws, mvt[:, :, 0]),
                     _tensor_stiffness(ws, mgb["mg_tf"])
                     + _value_coupling(ws, mvt[:, :, 1])],
                    [_tensor_stiffness(ws, mgb["mg_ft"])
                     + _value_coupling(ws, mvf[:, :, 0]),
                     _tensor_stiffness(ws, mgb["mg_ff"])
                     + _value_coupling(ws, mvf[:, :, 1])]]
                J = J + sp.bmat(mblocks, format="csr")
            cache["C"], cache["J"] = C, J

        def residual_jacobian(z):
            u = cmap.expand(z)
            loadings = element_loadings(mesh, u, dt)
            try:
                responses = self.pool.run_round(
                    loadings, want_tangents=not cache)
            except SchedulerError as exc:
                if exc.failures:
                    raise ConstitutiveError(
                        "meso increments refused the macro iterate "
                        f"(points {[p for p, _ in exc.failures]})") from exc
                raise
            if not cache:
                refresh_tangents(responses)
            last.clear()
            last.update(responses)
            C = cache["C"]
            q_t = np.stack([responses[e].q_heat for e in pids])
            q_f = np.stack([responses[e].q_moist for e in pids])
            R = C * (u - u_n) / dt
            R[:n] += ws.scatter_gradient_pairing(-0.5 * (q_t + q_old_t))
            R[n:] += ws.scatter_gradient_pairing(-0.5 * (q_f + q_old_f))
            if self.cprime:
                m_t = np.stack([responses[e].m_t for e in pids])
                m_f = np.stack([responses[e].m_f for e in pids])
                R[:n] += ws.scatter_gradient_pairing(m_t)
                R[n:] += ws.scatter_gradient_pairing(m_f)
            w = 1.0 / np.maximum(C[cmap.free_index], 1e-300)
            return (w * cmap.reduce_vector(R),
                    sp.diags(w) @ cmap.reduce_matrix(cache["J"]))

        z0 = cmap.initial_reduced(u_n)
        z, trace = newton_solve(residual_jacobian, z0, self.config)
        u_new = cmap.expand(z)
        for e in pids:
            entries[e].response = last[e]
        self.pool.commit()
        return u_new, len(trace) - 1

    def step_with_retry(self, u_n, t_n, dt, cmap_for):
        try:
            u, iters = self.step(u_n, t_n, dt, cmap_for(t_n + dt))
            return u, iters
        except (SolverError, SchedulerError) as exc:
            if not self.config.retry_halving:
                raise
            log.warning("macro step at t=%.0f s failed (%s); retrying "
                        "with dt/2", t_n, exc)
        half = 0.5 * dt
        u, it1 = self.step(u_n, t_n, half, cmap_for(t_n + half))
        u, it2 = self.step(u, t_n + half, half, cmap_for(t_n + dt))
        return u, it1 + it2

    def solve(self, schedule, initial: FieldState, dt_hours,
              t_end_hours) -> History:
        dt = float(dt_hours) * 3600.0
        t_end = float(t_end_hours) * 3600.0
        n_steps = int(round(t_end / dt))
        if n_steps < 1 or abs(n_steps * dt - t_end) > 1e-9 * max(t_end, dt):
            raise SolverError("t_end must be a positive whole number of steps")
        cmap_for = lambda t: _dirichlet_for(self.mesh, schedule, t)
        u = initial.vector()
        history = History()
        history.append(FieldState.from_vector(u, 0.0))
        for k in range(1, n_steps + 1):
            tic = _time.perf_counter()
            u, iters = self.step_with_retry(u, (k - 1) * dt, dt, cmap_for)
            wall = _time.perf_counter() - tic
            history.append(FieldState.from_vector(u, k * dt), iters, wall)
            log.info("step=%d t_hours=%.3f iterations=%d wall=%.3f",
                     k, k * dt / 3600.0, iters, wall)
        return history


def fe2_step(driver: FE2Driver, u_n, t_n, dt, cmap):
    """Single committed macro step on an existing driver."""
    return driver.step(u_n, t_n, dt, cmap)


def fe2_solve(mesh: Mesh, cells, schedule, initial: FieldState, dt_hours,
              t_end_hours, config: SolverConfig = None, n_workers=1,
              policy="region-aware", cprime=True) -> FE2Result:
    """Nested two-scale transient solution.

    cells maps macro region names to CellProblem instances; schedule
    supplies Dirichlet data as in transient_solve. Returns the macro
    history together with the partition and per-round scheduler
    timings.
    """
    with FE2Driver(mesh, cells, initial, config, n_workers, policy,
                   cprime, init_dt=float(dt_hours) * 3600.0) as driver:
        history = driver.solve(schedule, initial, dt_hours, t_end_hours)
        rounds = list(driver.pool.timings)
        return FE2Result(history, driver.partition, rounds)


def fine_scale_reference_solve(mesh: Mesh, materials, schedule,
                               initial: FieldState, dt_hours, t_end_hours,
                               config: SolverConfig = None) -> History:
    """Single-scale solution on a mesh resolving every brick and joint."""
    return transient_solve(mesh, materials, schedule, initial, dt_hours,
                           t_end_hours, config)


# ------------------------------------------------------------- comparison


@dataclass(frozen=True)
class ComparisonReport:
    """Cell-averaged field discrepancies between two histories."""

    rel_theta: float     # mean |dT|/|T_ref| over cells and steps [%]
    abs_theta: float     # mean |dT| [deg C]
    rel_phi: float       # [%]
    abs_phi: float       # [-]
    n_cells: int
    n_times: int
    descriptor: str = "per-cell averages, all steps after the initial"


def build_grid_cell_map(fine_mesh: Mesh, coarse_mesh: Mesh, nx, ny):
    """Node groups per cell of a regular nx x ny grid over the domain.

    Returns a list of (fine node ids, coarse node ids); nodes on shared
    cell borders belong to every adjacent cell.
    """
    ext = fine_mesh.extent()
    if not np.allclose(ext, coarse_mesh.extent()):
        raise FE2Error("fine and coarse meshes cover different domains")
    xlo, xhi, ylo, yhi = ext
    dx = (xhi - xlo) / nx
    dy = (yhi - ylo) / ny
    eps = 1e-9 * max(xhi - xlo, yhi - ylo)

    def members(nodes, i, j):
        x0, y0 = xlo + i * dx, ylo + j * dy
        inside = ((nodes[:, 0] >= x0 - eps) & (nodes[:, 0] <= x0 + dx + eps)
                  & (nodes[:, 1] >= y0 - eps) & (nodes[:, 1] <= y0 + dy + eps))
        return np.nonzero(inside)[0]

    cells = []
    for j in range(ny):
        for i in range(nx):
            fine = members(fine_mesh.nodes, i, j)
            coarse = members(coarse_mesh.nodes, i, j)
            if fine.size and coarse.size:
                cells.append((fine, coarse))
    return cells


def compare_fields(fine: History, coarse: History, cell_map) -> ComparisonReport:
    """Table-style error report: coarse history against cell-averaged fine.

    Both histories must share the coarse time grid; the fine one may be
    denser and is subsampled. The initial state is excluded (identical
    by construction).
    """
    fine_times = np.asarray(fine.times)
    idx = []
    for t in coarse.times[1:]:
        hits = np.nonzero(np.abs(fine_times - t) <= 1e-6 * max(1.0, t))[0]
        if hits.size != 1:
            raise FE2Error(f"histories do not share time {t} s")
        idx.append(hits[0])
    if not idx:
        raise FE2Error("no common steps to compare")

    out = {}
    for name, get_f, get_c in (
            ("theta", fine.theta_array, coarse.theta_array),
            ("phi", fine.phi_array, coarse.phi_array)):
        ref = get_f()[:, idx]
        test = get_c()[:, 1:]
        ref_avg = np.stack([ref[f].mean(axis=0) for f, _ in cell_map])
        test_avg = np.stack([test[c].mean(axis=0) for _, c in cell_map])
        diff = np.abs(test_avg - ref_avg)
        out["abs_" + name] = float(diff.mean())
        out["rel_" + name] = float(
            100.0 * (diff / np.maximum(np.abs(ref_avg), 1e-12)).mean())
    return ComparisonReport(n_cells=len(cell_map), n_times=len(idx), **out)
