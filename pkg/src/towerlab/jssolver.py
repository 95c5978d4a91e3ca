"""Capped solves of the minimal graph equation and the cap-continuation loop.

The discrete problem minimizes the area functional

    E(u) = sum_T |T| sqrt(1 + |grad u|_T^2)

over piecewise-linear u with Dirichlet data +M / -M on edges marked +1 / -1
(0 at polygon vertices).  The integrand is strictly convex in the gradient,
so Newton with an Armijo backtracking line search converges to the unique
minimizer from any start; we start from the harmonic extension.  Driving M
through an increasing cap schedule and watching core nodes gives the
Jenkins-Serrin approximation, or a drift trace when no graph exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from .formats import write_json, write_obj
from .meshing import TriMesh, locate, locate_many
from .polygon import boundary_distance

DEFAULT_TOL = 1e-9
DEFAULT_CAPS = (2.0, 3.0, 4.0, 5.0, 6.0)
DEFAULT_CAUCHY_TOL = 1e-3
DEFAULT_CORE_MARGIN = 0.15
ARMIJO_C1 = 1e-4
MAX_NEWTON = 80
MAX_BACKTRACK = 60


class LinearSolveFailure(RuntimeError):
    pass


class NoDescent(RuntimeError):
    pass


class NoStabilization(RuntimeError):
    """Cap continuation failed to meet the Cauchy criterion.

    Carries the per-cap core drift trace; on special domains the trace is
    the observable form of Jenkins-Serrin nonexistence.
    """

    def __init__(self, message, caps, drift):
        super().__init__(message)
        self.caps = tuple(caps)
        self.drift = tuple(drift)


def _lock(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    energy: float
    energy_trace: tuple
    cap_trace: tuple = ()
    stabilized_cap: float | None = None
    core_drift: tuple = ()


@dataclass(frozen=True)
class GraphSolution:
    mesh: TriMesh
    u: np.ndarray
    cap: float
    grad: np.ndarray
    W: np.ndarray
    report: SolveReport


# --- P1 assembly ----------------------------------------------------------

def _geometry(mesh):
    """Per-triangle areas and shape-function gradients, cached on the mesh."""
    tris = mesh.triangles
    a = mesh.nodes[tris[:, 0]]
    b = mesh.nodes[tris[:, 1]]
    c = mesh.nodes[tris[:, 2]]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    area = 0.5 * det
    # grad phi_v = rot90(opposite edge) / (2 area), rot90(x, y) = (-y, x)
    gp = np.empty((len(tris), 3, 2))
    for k, (p, q) in enumerate(((b, c), (c, a), (a, b))):
        e = q - p
        gp[:, k, 0] = -e[:, 1]
        gp[:, k, 1] = e[:, 0]
    gp /= det[:, None, None]
    return area, gp


def _grad_of(u, tris, gp):
    return np.einsum("tk,tkd->td", u[tris], gp)


def energy(mesh, u, geom=None):
    area, gp = geom if geom is not None else _geometry(mesh)
    g = _grad_of(u, mesh.triangles, gp)
    W = np.sqrt(1.0 + (g * g).sum(axis=1))
    return float((area * W).sum())


def _energy_gradient(mesh, u, geom):
    area, gp = geom
    tris = mesh.triangles
    g = _grad_of(u, tris, gp)
    W = np.sqrt(1.0 + (g * g).sum(axis=1))
    coef = (area / W)[:, None] * np.einsum("td,tkd->tk", g, gp)
    out = np.zeros(len(u))
    np.add.at(out, tris, coef)
    return out, g, W


def _hessian(mesh, g, W, geom):
    area, gp = geom
    tris = mesh.triangles
    dots = np.einsum("tkd,tld->tkl", gp, gp)
    gphi = np.einsum("td,tkd->tk", g, gp)
    block = (area / W)[:, None, None] * dots \
        - (area / W ** 3)[:, None, None] * gphi[:, :, None] * gphi[:, None, :]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    n = len(mesh.nodes)
    return sparse.coo_matrix((block.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def boundary_values(mesh, M):
    """Dirichlet data: +/-M inside marked edges, 0 at polygon vertices.

    Entry i belongs to node ``mesh.boundary_nodes()[i]``, the start of
    boundary segment i, which lies on the same polygon edge.
    """
    vals = M * mesh.bnd_marking.astype(float)
    vals[np.isin(mesh.boundary_nodes(), mesh.vertex_nodes)] = 0.0
    return vals


def _harmonic_extension(mesh, bvals, geom):
    area, gp = geom
    tris = mesh.triangles
    dots = np.einsum("tkd,tld->tkl", gp, gp) * area[:, None, None]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    n = len(mesh.nodes)
    K = sparse.coo_matrix((dots.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    bidx = mesh.boundary_nodes()
    free = np.flatnonzero(mesh.interior_mask())
    u = np.zeros(n)
    u[bidx] = bvals
    if len(free) == 0:
        return u
    rhs = -K[free][:, bidx] @ bvals
    A = K[free][:, free]
    x, info = cg(A, rhs, rtol=1e-12, atol=0.0, maxiter=20 * n)
    if info != 0:
        raise LinearSolveFailure(f"harmonic extension CG returned info={info}")
    u[free] = x
    return u


def solve_capped(mesh, M, tol=DEFAULT_TOL, u0=None):
    """Minimize the discrete area energy at cap M.

    Newton iteration with exact Hessian, Jacobi-preconditioned CG inner
    solves, Armijo backtracking on the energy.  Stops when the Euclidean
    norm of the free energy gradient drops below tol, then takes one more
    Newton step so two different starts land on the same minimizer well
    below tol.
    """
    if M < 0:
        raise ValueError("cap M must be nonnegative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    geom = _geometry(mesh)
    bvals = boundary_values(mesh, M)
    n = len(mesh.nodes)
    free = np.flatnonzero(mesh.interior_mask())
    if u0 is None:
        u = _harmonic_extension(mesh, bvals, geom)
    else:
        u = np.asarray(u0, dtype=float).copy()
        if len(u) != n:
            raise ValueError("u0 length mismatch")
        u[mesh.boundary_nodes()] = bvals
    E = energy(mesh, u, geom)
    trace = [E]
    iterations = 0
    polish = False
    res = math.inf
    while True:
        grad_full, g, W = _energy_gradient(mesh, u, geom)
        res = float(np.linalg.norm(grad_full[free]))
        if res <= tol:
            if polish or res == 0.0:
                break
            polish = True
        if iterations >= MAX_NEWTON:
            raise NoDescent(f"no convergence in {MAX_NEWTON} Newton steps, "
                            f"residual {res:.3e}")
        H = _hessian(mesh, g, W, geom)
        A = H[free][:, free]
        rhs = -grad_full[free]
        diag = A.diagonal()
        precond = sparse.diags(1.0 / np.where(diag > 0, diag, 1.0))
        step, info = cg(A, rhs, rtol=1e-10, atol=0.0, maxiter=20 * n, M=precond)
        if info != 0:
            raise LinearSolveFailure(f"Newton CG returned info={info}")
        slope = float(rhs @ step)
        if slope <= 0:
            # H is positive definite, so a zero slope means we are done
            break
        alpha = 1.0
        ok = False
        for _ in range(MAX_BACKTRACK):
            u_try = u.copy()
            u_try[free] += alpha * step
            E_try = energy(mesh, u_try, geom)
            if E_try <= E - ARMIJO_C1 * alpha * slope:
                ok = True
                break
            alpha *= 0.5
        if not ok:
            raise NoDescent(f"line search stalled at residual {res:.3e}")
        u = u_try
        E = E_try
        trace.append(E)
        iterations += 1

    grad_full, g, W = _energy_gradient(mesh, u, geom)
    res = float(np.linalg.norm(grad_full[free]))
    report = SolveReport(iterations=iterations, residual=res, energy=E,
                         energy_trace=tuple(trace))
    return GraphSolution(mesh=mesh, u=_lock(u), cap=float(M),
                         grad=_lock(g), W=_lock(W), report=report)


def core_mask(mesh, margin=DEFAULT_CORE_MARGIN):
    """Nodes at least margin away from the polygon boundary."""
    d = np.array([boundary_distance(mesh.polygon, q) for q in mesh.nodes])
    return d >= margin


def solve_js(mesh, caps=DEFAULT_CAPS, tol=DEFAULT_TOL,
             cauchy_tol=DEFAULT_CAUCHY_TOL, core_margin=DEFAULT_CORE_MARGIN):
    """Cap continuation toward the Jenkins-Serrin solution.

    Solves the capped problem for each cap in turn (warm starts), watching
    the max change at core nodes.  Returns the first solution whose change
    from the previous cap is below cauchy_tol; raises NoStabilization with
    the full drift trace when the schedule ends without stabilizing.
    """
    caps = [float(c) for c in caps]
    if len(caps) < 2:
        raise ValueError("need at least two caps")
    if any(b <= a for a, b in zip(caps, caps[1:])):
        raise ValueError("caps must be strictly increasing")
    core = core_mask(mesh, core_margin)
    if not core.any():
        raise ValueError("no core nodes at this margin; mesh too coarse")
    prev = None
    sol = None
    drift = []
    used = []
    for M in caps:
        sol = solve_capped(mesh, M, tol=tol, u0=prev)
        used.append(M)
        if prev is not None:
            diff = float(np.max(np.abs(sol.u[core] - prev[core])))
            drift.append(diff)
            if diff <= cauchy_tol:
                report = SolveReport(iterations=sol.report.iterations,
                                     residual=sol.report.residual,
                                     energy=sol.report.energy,
                                     energy_trace=sol.report.energy_trace,
                                     cap_trace=tuple(used),
                                     stabilized_cap=M,
                                     core_drift=tuple(drift))
                return GraphSolution(mesh=sol.mesh, u=sol.u, cap=sol.cap,
                                     grad=sol.grad, W=sol.W, report=report)
        prev = np.asarray(sol.u)
    raise NoStabilization(
        f"core drift {drift[-1]:.3e} above {cauchy_tol:g} at final cap {caps[-1]:g}",
        caps=used, drift=drift)


def last_capped(mesh, caps=DEFAULT_CAPS, tol=DEFAULT_TOL):
    """All capped solves of a schedule without the stabilization gate.

    Used by sequence experiments that must keep going on domains where
    solve_js would raise; the caller owns the interpretation.
    """
    caps = [float(c) for c in caps]
    prev = None
    out = []
    for M in caps:
        sol = solve_capped(mesh, M, tol=tol, u0=prev)
        out.append(sol)
        prev = np.asarray(sol.u)
    return out


def u_at(sol, q):
    """Piecewise-linear interpolant value at a point."""
    t, bary = locate(sol.mesh, q)
    return float(bary @ sol.u[sol.mesh.triangles[t]])


def gradient_at(sol, q):
    """Constant per-triangle gradient at a point (lowest-index tie rule)."""
    t, _ = locate(sol.mesh, q)
    return np.asarray(sol.grad[t])


def gradient_at_many(sol, pts):
    idx, _ = locate_many(sol.mesh, pts)
    return np.asarray(sol.grad[idx])


def zero_data_energy(mesh, M):
    """Energy of the boundary data extended by zero; upper bound witness."""
    u = np.zeros(len(mesh.nodes))
    u[mesh.boundary_nodes()] = boundary_values(mesh, M)
    return energy(mesh, u)


def graph_to_obj(sol, path, comment=None):
    """Export the graph surface (x1, x2, u) as OBJ, u clamped to the cap."""
    z = np.clip(sol.u, -sol.cap, sol.cap)
    verts = np.column_stack([sol.mesh.nodes, z])
    write_obj(path, verts, sol.mesh.triangles, comment=comment)


def report_to_json(sol, path):
    rep = sol.report
    payload = {
        "cap": sol.cap,
        "iterations": rep.iterations,
        "residual": rep.residual,
        "energy": rep.energy,
        "energy_trace": list(rep.energy_trace),
        "cap_trace": list(rep.cap_trace),
        "stabilized_cap": rep.stabilized_cap,
        "core_drift": list(rep.core_drift),
        "nodes": len(sol.mesh.nodes),
        "triangles": len(sol.mesh.triangles),
    }
    write_json(path, payload)
