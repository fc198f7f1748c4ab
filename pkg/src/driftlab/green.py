"""Green-function approximation from normalized indicator loads.

G_rho(., y) solves the zero-trace problem with data f_rho, the volume
normalized indicator of B_rho(y); discretely the indicator selects the
elements whose barycenter falls in the ball, so its mass is exactly one.
Probe values are Richardson-extrapolated from the final rho pair assuming
first order; the order observed over the last three rhos is reported, not
assumed.  For the Laplacian the ball average of G(x, .) equals G(x, y)
exactly once |x - y| >= rho, so coarser rhos only feed the order estimate.

Geometry rules: every rho needs rho >= 2h, the pole needs d_y >= 2 max(rho),
and probes need |x - y| >= 2 min(rho).

Constructing the adjoint Green function G^t is the same call with an
adjoint-assembled operator passed in; G^t(x, y) = G(y, x) is then a
measurable statement, checked by check_symmetry_and_representation.
"""

from dataclasses import dataclass
import json
import math

import numpy as np

from .mesh import FeFunction, Mesh, ResolutionError, _complete_homogeneous
from .solver import CoefficientSet, DirichletOperator, load_vector

NONNEG_TOL = 1e-8
DEFAULT_RHO_OVER_H = (8.0, 4.0, 2.0)

_AXES = np.vstack([np.eye(3), -np.eye(3)])


def boundary_distance(mesh: Mesh, pts) -> np.ndarray:
    """Geometric distance to the domain boundary (box faces and removal
    regions) for points inside; negative beyond the box faces."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    lo, hi = mesh.box
    dist = np.minimum((pts - lo).min(axis=1), (hi - pts).min(axis=1))
    for region in mesh.excluded:
        dist = np.minimum(dist, region.boundary_distance(pts))
    return dist


def ball_indicator(mesh: Mesh, y, rho: float) -> np.ndarray:
    """Element field of the normalized indicator of B_rho(y); mass exactly 1."""
    y = np.asarray(y, dtype=float)
    sel = np.linalg.norm(mesh.barycenters - y, axis=1) <= rho
    if not sel.any():
        raise ResolutionError(f"no element barycenter within rho={rho:g} of the pole")
    vol = float(mesh.volumes[sel].sum())
    return np.where(sel, 1.0 / vol, 0.0)


@dataclass(frozen=True)
class GreenSample:
    """Per-rho Green fields for one pole with probe extrapolation."""

    pole: tuple
    rho_sequence: np.ndarray
    fields: tuple
    coeffs: CoefficientSet
    probes: np.ndarray
    probe_table: np.ndarray
    extrapolated: np.ndarray
    measured_order: np.ndarray
    d_y: float

    @property
    def mesh(self) -> Mesh:
        return self.fields[0].mesh

    def to_json(self) -> str:
        return json.dumps(
            {
                "pole": list(self.pole),
                "rho_sequence": [float(r) for r in self.rho_sequence],
                "probes": self.probes.tolist(),
                "probe_table": self.probe_table.tolist(),
                "extrapolated": self.extrapolated.tolist(),
                "measured_order": self.measured_order.tolist(),
                "d_y": self.d_y,
            }
        )


def _default_probes(y, rho_min: float, d_y: float) -> np.ndarray:
    radii = [2.0 * rho_min]
    if 3.0 * rho_min < 0.9 * d_y:
        radii.append(3.0 * rho_min)
    return np.concatenate([y + r * _AXES for r in radii])


def build_green(mesh: Mesh, coeffs: CoefficientSet, y, rho_sequence=None,
                probes=None, operator: DirichletOperator | None = None) -> GreenSample:
    """Solve L G_rho = f_rho for each rho and extrapolate at probe points.

    Passing `operator` reuses its factorization across poles (and selects
    the adjoint problem when the operator was assembled with adjoint=True).
    """
    if coeffs.negativity_mode != "cd":
        raise ValueError("the construction needs negativity_mode 'cd'")
    y = np.asarray(y, dtype=float).reshape(3)
    d_y = float(boundary_distance(mesh, y)[0])

    if rho_sequence is None:
        rho_sequence = [k * mesh.h for k in DEFAULT_RHO_OVER_H
                        if 2.0 * k * mesh.h <= d_y * (1.0 + 1e-12)]
    rho = np.sort(np.unique(np.asarray(rho_sequence, dtype=float)))[::-1]
    if len(rho) < 2 or rho[-1] <= 0:
        raise ValueError("need at least two positive rho values")
    if rho[-1] < 2.0 * mesh.h * (1.0 - 1e-9):
        raise ResolutionError(f"rho={rho[-1]:g} below 2h={2*mesh.h:g}")
    if d_y < 2.0 * rho[0] * (1.0 - 1e-12):
        raise ValueError(f"pole distance {d_y:g} below 2*max(rho)={2*rho[0]:g}")

    if probes is None:
        probes = _default_probes(y, rho[-1], d_y)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    dist = np.linalg.norm(probes - y, axis=1)
    if np.any(dist < 2.0 * rho[-1] * (1.0 - 1e-9)):
        raise ValueError(f"probe at distance {dist.min():g} inside 2*min(rho)"
                         f"={2*rho[-1]:g}")

    op = operator if operator is not None else DirichletOperator(mesh, coeffs)
    if op.mesh is not mesh:
        raise ValueError("operator assembled on a different mesh")

    fields = []
    table = np.empty((len(rho), len(probes)))
    for i, r in enumerate(rho):
        G = op.solve(f=ball_indicator(mesh, y, r)).solution
        top = max(float(G.values.max()), 1e-300)
        if float(G.values.min()) < -NONNEG_TOL * top:
            raise RuntimeError(
                f"G_rho dips to {G.values.min():.3e} at rho={r:g}; "
                "nonnegativity lost beyond tolerance"
            )
        vals = G.evaluate(probes)
        if np.any(~np.isfinite(vals)):
            raise ValueError("probe outside the mesh")
        fields.append(G)
        table[i] = vals

    q = rho[-2] / rho[-1]
    extrapolated = table[-1] + (table[-1] - table[-2]) / (q - 1.0)
    order = np.full(len(probes), np.nan)
    if len(rho) >= 3:
        d1 = table[-3] - table[-2]
        d2 = table[-2] - table[-1]
        ok = (d1 * d2 > 0) & (np.abs(d2) > 0)
        qq = rho[-3] / rho[-2]
        order[ok] = np.log(np.abs(d1[ok] / d2[ok])) / np.log(qq)

    return GreenSample(
        pole=tuple(float(v) for v in y),
        rho_sequence=rho,
        fields=tuple(fields),
        coeffs=coeffs,
        probes=probes,
        probe_table=table,
        extrapolated=extrapolated,
        measured_order=order,
        d_y=d_y,
    )


def _masked_power(mesh: Mesh, values: np.ndarray, m: int, emask: np.ndarray) -> float:
    ev = values[mesh.elements[emask]]
    hm = _complete_homogeneous(ev, m)
    coeff = 6.0 * math.factorial(m) / math.factorial(m + 3)
    return float(np.sum(mesh.volumes[emask] * coeff * hm))


@dataclass(frozen=True)
class GreenBoundsReport:
    """Measured implied constants of the quantitative Green bounds."""

    radii: np.ndarray
    y12_tail: np.ndarray
    lp_ball_p1: np.ndarray
    lp_ball_p2: np.ndarray
    tgrid: np.ndarray
    level_set: np.ndarray
    probe_dist: np.ndarray
    pointwise: np.ndarray

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k).tolist() for k in (
            "radii", "y12_tail", "lp_ball_p1", "lp_ball_p2",
            "tgrid", "level_set", "probe_dist", "pointwise")})


def check_green_bounds(sample: GreenSample, radii=None) -> GreenBoundsReport:
    """Constants of the tail, ball-L^p, level-set and pointwise bounds.

    Each entry is LHS divided by the bound's r- or t-power; the caller
    asserts stability (<= x2 drift) across the grid and across mesh levels.
    """
    G = sample.fields[-1]
    mesh = sample.mesh
    y = np.asarray(sample.pole)
    rho_min = sample.rho_sequence[-1]

    if radii is None:
        radii = []
        r = sample.d_y / 2.0
        while r >= max(2.0 * rho_min, 4.0 * mesh.h) * (1.0 - 1e-9):
            radii.append(r)
            r /= 2.0
    radii = np.asarray(sorted(radii))

    bdist = np.linalg.norm(mesh.barycenters - y, axis=1)
    grad2 = np.einsum("md,md->m", G.gradient(), G.gradient()) * mesh.volumes

    y12_tail, lp1, lp2 = [], [], []
    for r in radii:
        outside = bdist > r
        tail = np.sqrt(float(grad2[outside].sum()))
        tail += _masked_power(mesh, G.values, 6, outside) ** (1.0 / 6.0)
        y12_tail.append(tail / r ** (-0.5))
        inside = ~outside
        lp1.append(_masked_power(mesh, G.values, 1, inside) / r**2)
        lp2.append(np.sqrt(_masked_power(mesh, G.values, 2, inside)) / r**0.5)

    # level sets probed where the pointwise scaling predicts them
    c_pt = float(np.max(sample.extrapolated * np.linalg.norm(sample.probes - y, axis=1)))
    tgrid = np.sort(c_pt / radii)
    means = G.element_means()
    level = [t**3 * float(mesh.volumes[means > t].sum()) for t in tgrid]

    dist = np.linalg.norm(sample.probes - y, axis=1)
    return GreenBoundsReport(
        radii=radii,
        y12_tail=np.asarray(y12_tail),
        lp_ball_p1=np.asarray(lp1),
        lp_ball_p2=np.asarray(lp2),
        tgrid=tgrid,
        level_set=np.asarray(level),
        probe_dist=dist,
        pointwise=sample.extrapolated * dist,
    )


def _weak_lorentz_elementwise(values: np.ndarray, volumes: np.ndarray, p: float) -> float:
    order = np.argsort(values)[::-1]
    v = values[order]
    cum = np.cumsum(volumes[order])
    return float(np.max(v * cum ** (1.0 / p)))


def gradient_weak_bound(sample: GreenSample, laplace_operator=None) -> dict:
    """Weak-L^{3/2} size of grad G, with the harmonic lift w (solving
    -Lap w = f_rho) split off the way the gradient bound is proved."""
    mesh = sample.mesh
    if laplace_operator is None:
        laplace_operator = DirichletOperator(
            mesh, CoefficientSet.from_fields(mesh, negativity_mode="cd"))
    rho = sample.rho_sequence[-1]
    w = laplace_operator.solve(f=ball_indicator(mesh, sample.pole, rho)).solution

    G = sample.fields[-1]
    gmag = np.linalg.norm(G.gradient(), axis=1)
    dmag = np.linalg.norm(G.gradient() - w.gradient(), axis=1)
    return {
        "grad_weak_G": _weak_lorentz_elementwise(gmag, mesh.volumes, 1.5),
        "grad_weak_G_minus_w": _weak_lorentz_elementwise(dmag, mesh.volumes, 1.5),
    }


def check_symmetry_and_representation(mesh: Mesh, coeffs: CoefficientSet,
                                      pole_pairs, f=None, rho_sequence=None,
                                      operator=None, adjoint_operator=None) -> dict:
    """G^t(x, y) vs G(y, x) at pole pairs, and the reproducing identity.

    The representation side evaluates int G(y, x) f(y) dy as the exact P1
    pairing of the pole-x field with f, extrapolated in rho, against the
    adjoint Dirichlet solve at x.
    """
    op = operator if operator is not None else DirichletOperator(mesh, coeffs)
    adj = adjoint_operator if adjoint_operator is not None else DirichletOperator(
        mesh, coeffs, adjoint=True)

    sym_direct, sym_adjoint = [], []
    samples_x = []
    for x, ypt in pole_pairs:
        sx = build_green(mesh, coeffs, x, rho_sequence, probes=[ypt], operator=op)
        sy = build_green(mesh, coeffs, ypt, rho_sequence, probes=[x], operator=adj)
        samples_x.append(sx)
        sym_direct.append(float(sx.extrapolated[0]))   # G(y, x)
        sym_adjoint.append(float(sy.extrapolated[0]))  # G^t(x, y)
    sym_direct = np.asarray(sym_direct)
    sym_adjoint = np.asarray(sym_adjoint)
    sym_rel = np.abs(sym_adjoint - sym_direct) / np.maximum(np.abs(sym_direct), 1e-300)

    out = {"sym_direct": sym_direct, "sym_adjoint": sym_adjoint, "symmetry_rel": sym_rel}
    if f is not None:
        F = load_vector(mesh, f)
        v = adj.solve(f=f).solution
        lhs, rhs = [], []
        for (x, _), sx in zip(pole_pairs, samples_x):
            inner = np.array([float(F @ g.values) for g in sx.fields])
            q = sx.rho_sequence[-2] / sx.rho_sequence[-1]
            lhs.append(inner[-1] + (inner[-1] - inner[-2]) / (q - 1.0))
            rhs.append(float(v.evaluate(np.asarray(x)[None, :])[0]))
        lhs = np.asarray(lhs)
        rhs = np.asarray(rhs)
        scale = np.maximum(np.maximum(np.abs(rhs), np.abs(lhs)), 1e-300)
        rel = np.abs(lhs - rhs) / scale
        rel[np.maximum(np.abs(lhs), np.abs(rhs)) < 1e-14] = 0.0
        out.update({"repr_lhs": lhs, "repr_rhs": rhs, "repr_rel": rel})
    return out


def check_lower_bound(sample: GreenSample, select=None) -> float:
    """min over probes of G(x,y)|x-y| for the drift-only operator class.

    Requires c = d = 0 and well-separated probes: 2|x-y| must stay below
    the distance of both x and y to the boundary.
    """
    co = sample.coeffs
    if np.any(np.asarray(co.c) != 0.0) or np.any(np.asarray(co.d) != 0.0):
        raise ValueError("the lower bound holds for the class with c = d = 0")
    probes = sample.probes if select is None else sample.probes[select]
    ext = sample.extrapolated if select is None else sample.extrapolated[select]
    y = np.asarray(sample.pole)
    dist = np.linalg.norm(probes - y, axis=1)
    margin = np.minimum(boundary_distance(sample.mesh, probes), sample.d_y)
    bad = 2.0 * dist >= margin
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(f"probe {i} at distance {dist[i]:g} violates "
                         "2|x-y| < dist to the boundary")
    return float(np.min(ext * dist))


def mollified(fn, delta: float):
    """Positive-weight ball-average proxy: 0.4 f(x) + 0.6 mean of f at the
    six axis offsets of size delta; reproduces the B_delta average through
    second order and has support radius delta, like a true mollification."""

    def avg(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        acc = 0.4 * np.asarray(fn(x), dtype=float)
        for e in _AXES:
            acc = acc + 0.1 * np.asarray(fn(x + delta * e), dtype=float)
        return acc

    return avg
