"""Obstacle problem  L(u, v-u) >= <F, v-u>  over  {v >= psi, v - phi zero-trace}.

The boundary-value reduction is literal: solve for w = u - phi in the
shifted convex set {w >= psi - phi, w zero-trace} with the right-hand
side <F, hat> = int f hat + g.grad hat - L(phi, hat), then add phi back.

The sweep is projected Gauss-Seidel on the assembled nonsymmetric system,
vectorized by graph coloring: nodes of one color share no matrix entry,
so updating a whole color at once IS a Gauss-Seidel step.  Nothing
guarantees convergence for a nonsymmetric system, so stalling of the
complementarity violation over a 50-sweep window is detected and
reported with the violation history.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mesh import FeFunction, Mesh
from .solver import CoefficientSet, assemble, load_vector

COMPLEMENTARITY_TOL = 1e-8
MAX_SWEEPS = 50_000
STALL_WINDOW = 50


class ObstacleDivergenceError(RuntimeError):
    """Sweeps stalled or ran out; complementarity history attached."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class ObstacleProblem:
    mesh: Mesh
    coeffs: CoefficientSet
    psi: FeFunction
    phi: FeFunction
    f: object = None
    g: object = None

    def __post_init__(self):
        if self.psi.mesh is not self.mesh or self.phi.mesh is not self.mesh:
            raise ValueError("psi and phi must live on the problem mesh")
        gap = (self.phi.values - self.psi.values)[self.mesh.boundary_nodes]
        if gap.size and gap.min() < 0:
            raise ValueError(
                f"boundary values fall below the obstacle (worst gap {gap.min():.3e})"
            )

    def rhs(self, matrix=None) -> np.ndarray:
        """<F, hat_i> on all nodes: data pairing minus the phi shift."""
        M = assemble(self.mesh, self.coeffs) if matrix is None else matrix
        return load_vector(self.mesh, self.f, self.g) - M @ self.phi.values


def _color_nodes(M_csr, count: int) -> list:
    """Greedy coloring of the interior adjacency graph; same-color nodes
    never couple through the matrix, making colored sweeps exact GS."""
    indptr, indices = M_csr.indptr, M_csr.indices
    color = np.full(count, -1, dtype=int)
    for i in range(count):
        neigh = color[indices[indptr[i]:indptr[i + 1]]]
        used = set(neigh[neigh >= 0].tolist())
        c = 0
        while c in used:
            c += 1
        color[i] = c
    return [np.flatnonzero(color == c) for c in range(int(color.max()) + 1)]


def _complementarity_parts(w, obs, rho):
    """(feasibility deficit, multiplier deficit, slackness) maxima."""
    feas = float(np.max(obs - w)) if len(w) else 0.0
    mult = float(np.max(-rho)) if len(rho) else 0.0
    slack = float(np.max(np.minimum(w - obs, rho))) if len(w) else 0.0
    return max(feas, 0.0), max(mult, 0.0), max(slack, 0.0)


def solve_obstacle(problem: ObstacleProblem, tol: float = COMPLEMENTARITY_TOL,
                   max_sweeps: int = MAX_SWEEPS, ordering: str = "forward") -> FeFunction:
    """Projected Gauss-Seidel to complementarity tolerance.

    ordering 'forward' or 'reverse' fixes the color sweep order; two
    orderings converging to the same fixed point is the uniqueness check.
    """
    if problem.coeffs.negativity_mode == "none":
        raise ValueError("obstacle solve needs negativity_mode 'bd' or 'cd'")
    if ordering not in ("forward", "reverse"):
        raise ValueError("ordering must be 'forward' or 'reverse'")
    mesh = problem.mesh
    M = assemble(mesh, problem.coeffs)
    I = mesh.interior_nodes
    M_II = M[I][:, I].tocsr()
    rhs = problem.rhs(matrix=M)[I]
    obs = (problem.psi.values - problem.phi.values)[I]

    diag = M_II.diagonal()
    if diag.min() <= 0:
        raise ValueError("system diagonal not positive; the sweep is undefined")
    colors = _color_nodes(M_II, len(I))
    if ordering == "reverse":
        colors = colors[::-1]
    rows = [M_II[idx] for idx in colors]
    inv_diag = [1.0 / diag[idx] for idx in colors]
    obs_c = [obs[idx] for idx in colors]

    w = np.maximum(obs, 0.0)
    history = []
    for sweep in range(1, max_sweeps + 1):
        for idx, Mc, dinv, oc in zip(colors, rows, inv_diag, obs_c):
            r = rhs[idx] - Mc @ w
            w[idx] = np.maximum(oc, w[idx] + r * dinv)
        rho = M_II @ w - rhs
        viol = max(_complementarity_parts(w, obs, rho))
        history.append(viol)
        if viol <= tol:
            break
        if sweep >= STALL_WINDOW and history[-1] >= history[-STALL_WINDOW]:
            raise ObstacleDivergenceError(
                f"complementarity stalled at {viol:.3e} after {sweep} sweeps",
                history,
            )
    else:
        raise ObstacleDivergenceError(
            f"no convergence in {max_sweeps} sweeps (violation {history[-1]:.3e})",
            history,
        )

    values = problem.phi.values.copy()
    values[I] += w
    zero_trace = bool(np.all(values[mesh.boundary_nodes] == 0.0))
    return FeFunction(mesh, values, zero_trace=zero_trace)


def check_complementarity(u: FeFunction, problem: ObstacleProblem,
                          tol: float = COMPLEMENTARITY_TOL):
    """Max complementarity violation and the discrete coincidence set.

    Violation = max over interior hats of (psi - u, -(Lu - F) pairing,
    min(u - psi, residual)); the coincidence set is where u sits on the
    obstacle within tol * scale.
    """
    mesh = problem.mesh
    M = assemble(mesh, problem.coeffs)
    I = mesh.interior_nodes
    rho = (M @ u.values - load_vector(mesh, problem.f, problem.g))[I]
    gap = (u.values - problem.psi.values)[I]
    feas, mult, slack = _complementarity_parts(gap, 0.0 * gap, rho)
    viol = max(feas, mult, slack)
    scale = max(float(np.abs(problem.psi.values).max()),
                float(np.abs(u.values).max()), 1.0)
    active = I[gap <= tol * scale]
    return viol, active


def min_supersolution_check(u: FeFunction, v: FeFunction,
                            problem: ObstacleProblem) -> float:
    """Most negative hat-residual of L(min(u,v)) - F.

    Pre: u and v are discrete supersolutions of the same data.  The nodal
    min is only an O(h)-accurate supersolution across crossing layers for
    nonsymmetric operators, so callers assert >= -C h under refinement.
    """
    mesh = problem.mesh
    M = assemble(mesh, problem.coeffs)
    F = load_vector(mesh, problem.f, problem.g)
    I = mesh.interior_nodes
    slack = 1e-8 * (float((np.abs(M) @ np.abs(u.values) + np.abs(F)).max()) + 1e-300)
    for name, fn in (("u", u), ("v", v)):
        r = (M @ fn.values - F)[I]
        if r.size and r.min() < -slack:
            raise ValueError(
                f"{name} is not a discrete supersolution (worst residual {r.min():.3e})"
            )
    m = np.minimum(u.values, v.values)
    r = (M @ m - F)[I]
    return float(r.min()) if r.size else 0.0


def radial_contact_radius(u: FeFunction, psi: FeFunction, tol: float = 1e-6) -> float:
    """Largest |x| of a node in contact, for radially symmetric problems."""
    scale = max(float(np.abs(psi.values).max()), 1.0)
    gap = u.values - psi.values
    mask = np.zeros(len(gap), dtype=bool)
    mask[u.mesh.interior_nodes] = True
    touch = mask & (gap <= tol * scale)
    if not touch.any():
        return 0.0
    return float(np.linalg.norm(u.mesh.nodes[touch], axis=1).max())
