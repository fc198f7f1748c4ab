"""Measured-constant harness for interior and boundary energy estimates.

Every check follows one pattern: gate the input field through the shared
discrete hat-residual test (is it a solution, subsolution, or supersolution
at every tested interior hat?), evaluate both sides of the target inequality
with element-level quadrature, and report the LHS/RHS ratio together with
scans over ball radii and mesh levels.  Ratios are measured constants, never
asserted sharp: a passing report says the bound held with a stable constant
at the tested scales, not that an optimal constant was found.

Quadrature policy: P1 gradients are exact per element; scalar weights built
from nodal fields (cutoff powers, shifted parts) enter through 4-vertex
averages.  Ball restrictions are discrete: elements are selected by
barycenter, sups and infs are nodal.  Averaged norms are volume-normalized
over the selected elements, so the constant-function baseline comes out
exactly 1.

Two singular-drift showcases live here as composite reports: an outward
drift whose squared length has a vanishing Riesz modulus but fails the Dini
refinement (solution grows like a power of the log), and a nonnegative
zero-order term violating both sign conditions (solution is the log itself,
verified through the residual gate).  Both are stated on the unit ball; the
classical domain of radius 1/e maps onto it by pure scaling, carrying the
coefficients and the solution along.

Scans are embarrassingly parallel over their (radius, position) cells but
are evaluated in a fixed order, so reports are bit-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import math

import numpy as np

from .capacity import wiener_integral
from .mesh import ResolutionError
from .function_spaces import (
    DIVERGENCE_EXTENSIONS,
    DIVERGENCE_GROWTH,
    KatoProfile,
    SampledFunction,
    kato_modulus,
    lorentz_norm,
)
from .mesh import FeFunction, Mesh, ball_mesh, interpolate
from .solver import (
    CoefficientSet,
    DirichletOperator,
    assemble,
    load_vector,
    negativity_functional,
)

__all__ = [
    "CHI",
    "HAT_RESIDUAL_TOL",
    "DataModuli",
    "EstimateReport",
    "PreconditionError",
    "boundary_oscillation_check",
    "caccioppoli_check",
    "coefficient_conditions",
    "cutoff",
    "ex_c1_fields",
    "ex_c1_report",
    "ex_d_fields",
    "ex_d_report",
    "hat_residuals",
    "holder_decay_check",
    "local_boundedness_check",
    "refined_caccioppoli_check",
    "require_kind",
    "weak_harnack_check",
]

HAT_RESIDUAL_TOL = 1e-8  # shared (sub/super)solution gate, relative to the worst hat scale
SIGN_TOL = 1e-10  # sign-functional slack, relative per hat
KATO_DECAY_FRACTION = 0.5  # theta(r_min) <= frac * theta(r_max) marks decay to zero
CHI = 3.0  # supremum of admissible averaging exponents in three dimensions
_TINY = 1e-300


class PreconditionError(ValueError):
    """An input field fails a structural precondition of a check."""


# ---------------------------------------------------------------------------
# shared plumbing


def _scalar_elements(mesh: Mesh, f):
    if f is None:
        return None
    if isinstance(f, SampledFunction):
        if f.mesh is not mesh:
            raise ValueError("scalar data sampled on a different mesh")
        return f.values
    if callable(f):
        return np.asarray(f(mesh.barycenters), dtype=float)
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(mesh.n_elements, float(arr))
    if arr.shape != (mesh.n_elements,):
        raise ValueError("scalar data must be one value per element")
    return arr


def _vector_elements(mesh: Mesh, g):
    if g is None:
        return None
    if callable(g):
        arr = np.asarray(g(mesh.barycenters), dtype=float)
    else:
        arr = np.asarray(g, dtype=float)
        if arr.ndim == 1 and arr.shape == (3,):
            arr = np.broadcast_to(arr, (mesh.n_elements, 3)).copy()
    if arr.shape != (mesh.n_elements, 3):
        raise ValueError("vector data must be one 3-vector per element")
    return arr


def hat_residuals(u: FeFunction, coeffs: CoefficientSet, f=None, g=None,
                  matrix=None):
    """Residual of the variational identity at every interior hat.

    Returns (residuals, scales) over mesh.interior_nodes; the scale is the
    triangle-inequality magnitude of the terms feeding each hat, so residual
    over scale is a dimensionless per-hat defect.
    """
    mesh = u.mesh
    K = assemble(mesh, coeffs) if matrix is None else matrix
    F = load_vector(mesh,
                    _scalar_elements(mesh, f) if callable(f) else f,
                    _vector_elements(mesh, g) if callable(g) else g)
    res = (K @ u.values) - F
    scale = np.abs(K) @ np.abs(u.values) + np.abs(F)
    idx = mesh.interior_nodes
    return res[idx], scale[idx] + _TINY


def require_kind(u: FeFunction, coeffs: CoefficientSet, kind: str, f=None,
                 g=None, node_mask=None, matrix=None,
                 tol: float = HAT_RESIDUAL_TOL, label: str = ""):
    """Shared hat-residual gate for every check in this module.

    kind 'solution' demands |residual| within the slack, 'subsolution' a
    one-sided bound from above, 'supersolution' from below.  The slack is
    tol times the worst per-hat scale, one number for the whole field.
    node_mask (over mesh.interior_nodes) restricts the tested hats to the
    region where the estimate is claimed.
    """
    if kind not in ("solution", "subsolution", "supersolution"):
        raise ValueError(f"unknown kind {kind!r}")
    res, scale = hat_residuals(u, coeffs, f=f, g=g, matrix=matrix)
    if node_mask is not None:
        mask = np.asarray(node_mask, dtype=bool)
        if not mask.any():
            raise PreconditionError(f"{label or kind}: no interior hats in the test region")
        res = res[mask]
        scale = scale[mask]
    slack = tol * float(scale.max())
    if kind == "solution":
        worst = float(np.abs(res).max())
    elif kind == "subsolution":
        worst = float(res.max())
    else:
        worst = float((-res).max())
    if worst > slack:
        raise PreconditionError(
            f"{label or 'field'} is not a discrete {kind}: "
            f"hat residual {worst:.3e} exceeds the slack {slack:.3e}"
        )
    return worst, slack


def _interior_ball_mask(mesh: Mesh, center, radius: float) -> np.ndarray:
    pts = mesh.nodes[mesh.interior_nodes]
    return np.linalg.norm(pts - np.asarray(center, float), axis=1) <= radius + 1e-12


def _node_ball_mask(mesh: Mesh, center, radius: float) -> np.ndarray:
    return np.linalg.norm(mesh.nodes - np.asarray(center, float), axis=1) <= radius * (1 + 1e-12)


def _element_ball_mask(mesh: Mesh, center, radius: float) -> np.ndarray:
    return np.linalg.norm(mesh.barycenters - np.asarray(center, float), axis=1) <= radius * (1 + 1e-12)


def _boundary_clearance(mesh: Mesh, center) -> float:
    bpts = mesh.nodes[mesh.boundary_nodes]
    return float(np.linalg.norm(bpts - np.asarray(center, float), axis=1).min())


def cutoff(mesh: Mesh, center, r_inner: float, r_outer: float) -> FeFunction:
    """P1 cutoff: 1 on the inner ball, 0 outside the outer one, radial ramp."""
    if not 0.0 < r_inner < r_outer:
        raise ValueError("need 0 < r_inner < r_outer")
    dist = np.linalg.norm(mesh.nodes - np.asarray(center, float), axis=1)
    vals = np.clip((r_outer - dist) / (r_outer - r_inner), 0.0, 1.0)
    return FeFunction(mesh, vals)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


# ---------------------------------------------------------------------------
# report and data moduli


@dataclass(frozen=True)
class EstimateReport:
    """Outcome of one measured-constant check.

    measured_constant is the headline ratio (worst over the scan unless the
    check documents otherwise), scale_scan pairs (scale, ratio) across ball
    radii, refinement_scan pairs (h, ratio) across mesh levels.  extras holds
    check-specific diagnostics (fit exponents, flags, tables); it is the one
    field exempt from the finiteness contract, and non-finite floats survive
    serialization as strings.
    """

    name: str
    measured_constant: float
    scale_scan: tuple
    refinement_scan: tuple
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        scale = tuple((float(a), float(b)) for a, b in self.scale_scan)
        refine = tuple((float(a), float(b)) for a, b in self.refinement_scan)
        if not scale or not refine:
            raise ValueError("scans must be non-empty")
        entries = [float(self.measured_constant)]
        entries.extend(v for pair in scale for v in pair)
        entries.extend(v for pair in refine for v in pair)
        if not all(math.isfinite(v) for v in entries):
            raise ValueError("non-finite entry in a report scan")
        object.__setattr__(self, "measured_constant", float(self.measured_constant))
        object.__setattr__(self, "scale_scan", scale)
        object.__setattr__(self, "refinement_scan", refine)

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "measured_constant": self.measured_constant,
                "scale_scan": [list(p) for p in self.scale_scan],
                "refinement_scan": [list(p) for p in self.refinement_scan],
                "extras": _jsonable(self.extras),
            },
            sort_keys=True,
        )


def _field_profile(mesh: Mesh, values, evaluator=None, singular_points=(),
                   radii=None, centers: str = "coarse", base_degree: int = 2,
                   graded_depth: int = 8):
    """Kato profile of a per-element field; None when the field vanishes."""
    if values is None:
        return None
    values = np.asarray(values, dtype=float)
    if values.max(initial=0.0) <= 0.0 and evaluator is None:
        return None
    if radii is None:
        extent = float(np.max(mesh.box[1] - mesh.box[0]))
        radii = np.geomspace(2.0 * mesh.h, 0.5 * extent, 8)
    sf = SampledFunction(mesh, values, evaluator,
                         np.asarray(singular_points, float).reshape(-1, 3))
    return kato_modulus(sf, radii, centers=centers, base_degree=base_degree,
                        graded_depth=graded_depth)


@dataclass(frozen=True)
class DataModuli:
    """Scale moduli of the data and coefficients entering right-hand sides.

    Each profile is the sampled Riesz-smallness modulus of the named field;
    a missing profile means the field vanishes and contributes zero.  sup_u
    scales the coefficient contributions by the local solution size, as the
    combined moduli require.  v_theta is the summed field used only for the
    logged embedding scale.
    """

    sup_u: float = 0.0
    f_theta: KatoProfile | None = None
    g2_theta: KatoProfile | None = None
    b2_theta: KatoProfile | None = None
    d_theta: KatoProfile | None = None
    v_theta: KatoProfile | None = None

    @staticmethod
    def _at(profile, r: float) -> float:
        return float(profile.theta_at(r)) if profile is not None else 0.0

    def k(self, r: float) -> float:
        return self._at(self.f_theta, r) + math.sqrt(self._at(self.g2_theta, r))

    def k1(self, r: float) -> float:
        return self._at(self.f_theta, r) + self.sup_u * self._at(self.d_theta, r)

    def k2(self, r: float) -> float:
        return math.sqrt(self._at(self.g2_theta, r)) + self.sup_u * math.sqrt(
            self._at(self.b2_theta, r))

    def k3(self, r: float) -> float:
        return math.sqrt(self._at(self.b2_theta, r)) + self._at(self.d_theta, r)

    def ktilde(self, r: float) -> float:
        return self.k1(r) + self.k2(r)

    def embedding_scale(self, gamma: float = 2.0, c4: float = 1.0) -> float:
        """Logged (never asserted) scale where the combined modulus reaches
        the absorption threshold c4 / (1 + gamma^2); 0 when there is no data."""
        if self.v_theta is None:
            return 0.0
        rho = self.v_theta.theta_prime_inverse(c4 / (1.0 + gamma * gamma))
        return 1.0 / max(rho, _TINY)

    def to_json(self) -> str:
        out = {"sup_u": self.sup_u}
        for name in ("f_theta", "g2_theta", "b2_theta", "d_theta", "v_theta"):
            prof = getattr(self, name)
            out[name] = None if prof is None else json.loads(prof.to_json())
        return json.dumps(out, sort_keys=True)

    @classmethod
    def from_data(cls, mesh: Mesh, f=None, g=None, b=None, d=None,
                  sup_u: float = 0.0, radii=None, singular_points=(),
                  centers: str = "coarse", base_degree: int = 2,
                  graded_depth: int = 8) -> "DataModuli":
        """Sample the moduli of |f|, |g|^2, |b|^2, |d| and their sum.

        f and d may be callables, per-element arrays, or None; g and b are
        vector-valued and enter through their squared length.  Callables are
        kept so graded quadrature can resolve declared singular points.
        """

        def scalar(fn_or_arr, absolute=True):
            vals = _scalar_elements(mesh, fn_or_arr)
            if vals is None:
                return None, None
            ev = None
            if callable(fn_or_arr):
                raw = fn_or_arr
                ev = (lambda p: np.abs(np.asarray(raw(p), float))) if absolute else raw
            return np.abs(vals), ev

        def squared(fn_or_arr):
            if fn_or_arr is None:
                return None, None
            if callable(fn_or_arr):
                raw = fn_or_arr
                vals = np.asarray(raw(mesh.barycenters), float)
                ev = lambda p: np.einsum("pk,pk->p", np.asarray(raw(p), float),
                                         np.asarray(raw(p), float))
            else:
                vals = _vector_elements(mesh, fn_or_arr)
                ev = None
            return np.einsum("ek,ek->e", vals, vals), ev

        fv, fe = scalar(f)
        g2v, g2e = squared(g)
        b2v, b2e = squared(b)
        dv, de = scalar(d)

        kw = dict(singular_points=singular_points, radii=radii, centers=centers,
                  base_degree=base_degree, graded_depth=graded_depth)
        parts = [(fv, fe), (g2v, g2e), (b2v, b2e), (dv, de)]
        present = [(v, e) for v, e in parts if v is not None and (v.max() > 0 or e is not None)]
        v_profile = None
        if present:
            vsum = np.sum([v for v, _ in present], axis=0)
            evs = [e for _, e in present]
            if all(e is not None for e in evs):
                ev_sum = lambda p: np.sum([e(p) for e in evs], axis=0)
            else:
                ev_sum = None
            v_profile = _field_profile(mesh, vsum, ev_sum, **kw)
        return cls(
            sup_u=float(sup_u),
            f_theta=_field_profile(mesh, fv, fe, **kw),
            g2_theta=_field_profile(mesh, g2v, g2e, **kw),
            b2_theta=_field_profile(mesh, b2v, b2e, **kw),
            d_theta=_field_profile(mesh, dv, de, **kw),
            v_theta=v_profile,
        )


# ---------------------------------------------------------------------------
# structural hypothesis bundles


def _in_kato(profile) -> bool:
    if profile is None:
        return True
    top = float(profile.theta_at(profile.radii[-1]))
    if top <= 1e-14:
        return True
    return float(profile.theta_at(profile.radii[0])) <= KATO_DECAY_FRACTION * top


def _dini_finite(profile) -> bool:
    return profile is None or math.isfinite(profile.dini_constant)


def coefficient_conditions(mesh: Mesh, coeffs: CoefficientSet, radii=None,
                           evaluators=None, singular_points=(),
                           graded_depth: int = 8, q: float = 3.0) -> dict:
    """Sign and smallness markers behind the three hypothesis bundles.

    N couples a nonpositive sign functional with smallness of the combined
    drift; P is the same with reversed signs; D asks the individual
    coefficients for the Dini-refined smallness with no sign help.  Signs
    are exact discrete hat functionals.  Class markers are operational: the
    sampled modulus decaying to KATO_DECAY_FRACTION of its largest value
    stands in for the vanishing-modulus class, and a finite scale-invariant
    Dini constant for the refined class.  evaluators may carry closed forms
    for graded quadrature near singular_points, keyed 'bc2', 'b2', 'c2', 'd'.
    The weak-type drift norm is reported, not gated on: one mesh cannot
    decide its stability under refinement.
    """
    evaluators = evaluators or {}
    vals, scale = negativity_functional(mesh, coeffs, "bd")
    rel = vals / scale
    bd_nonpos = bool(rel.max() <= SIGN_TOL)
    bd_nonneg = bool(rel.min() >= -SIGN_TOL)
    bd_extreme = (float(rel.max()), float(rel.min()))
    vals, scale = negativity_functional(mesh, coeffs, "cd")
    rel = vals / scale
    cd_nonpos = bool(rel.max() <= SIGN_TOL)
    cd_nonneg = bool(rel.min() >= -SIGN_TOL)
    cd_extreme = (float(rel.max()), float(rel.min()))

    bc = coeffs.b + coeffs.c
    kw = dict(singular_points=singular_points, radii=radii, graded_depth=graded_depth)
    bc2 = _field_profile(mesh, np.einsum("ek,ek->e", bc, bc),
                         evaluators.get("bc2"), **kw)
    b2 = _field_profile(mesh, np.einsum("ek,ek->e", coeffs.b, coeffs.b),
                        evaluators.get("b2"), **kw)
    c2 = _field_profile(mesh, np.einsum("ek,ek->e", coeffs.c, coeffs.c),
                        evaluators.get("c2"), **kw)
    dprof = _field_profile(mesh, np.abs(coeffs.d), evaluators.get("d"), **kw)

    cnorm = np.linalg.norm(coeffs.c, axis=1)
    c_lorentz = 0.0
    if cnorm.max(initial=0.0) > 0:
        c_lorentz = lorentz_norm(SampledFunction(mesh, cnorm), 3.0, q).value
    bcnorm = np.linalg.norm(bc, axis=1)
    bc_lorentz = 0.0
    if bcnorm.max(initial=0.0) > 0:
        bc_lorentz = lorentz_norm(SampledFunction(mesh, bcnorm), 3.0, q).value

    out = {
        "bd_nonpos": bd_nonpos,
        "bd_nonneg": bd_nonneg,
        "cd_nonpos": cd_nonpos,
        "cd_nonneg": cd_nonneg,
        "bd_extreme": bd_extreme,
        "cd_extreme": cd_extreme,
        "bc2_in_kato": _in_kato(bc2),
        "bc2_dini_finite": _dini_finite(bc2),
        "b2_dini_finite": _dini_finite(b2),
        "d_dini_finite": _dini_finite(dprof),
        "c2_in_kato": _in_kato(c2),
        "c_lorentz": float(c_lorentz),
        "bc_lorentz": float(bc_lorentz),
    }
    out["N"] = (bd_nonpos and out["bc2_in_kato"]) or (cd_nonpos and out["bc2_dini_finite"])
    out["P"] = (bd_nonneg and out["bc2_in_kato"]) or (cd_nonneg and out["bc2_dini_finite"])
    out["D"] = out["b2_dini_finite"] and out["d_dini_finite"] and out["c2_in_kato"]
    return out


def _gate_conditions(mesh, coeffs, conditions, wanted, enforce, label):
    if conditions is None:
        conditions = coefficient_conditions(mesh, coeffs)
    ok = any(conditions.get(w, False) for w in wanted)
    if enforce and not ok:
        raise PreconditionError(
            f"{label}: none of the hypothesis bundles {wanted} holds "
            f"(markers: { {w: conditions.get(w) for w in wanted} })"
        )
    return conditions, ok


# ---------------------------------------------------------------------------
# energy checks


def _hat_support_margin(mesh: Mesh) -> float:
    # hats reach one cube diagonal into the surrounding cells
    return 1.8 * mesh.h


def _run_refinement(report_fn, refinement):
    """Rerun a measurement on a second mesh level; ordered two-entry scan."""
    if refinement is None:
        return None
    u2, coeffs2, f2, g2 = (list(refinement) + [None, None])[:4]
    return report_fn(u2, coeffs2, f2, g2)


def _as_floats(x):
    if np.ndim(x) == 0:
        return (float(x),)
    return tuple(float(v) for v in x)


def _as_eta_specs(eta_spec):
    # one (center, r_in, r_out) triple or a sequence of them
    if len(eta_spec) == 3 and np.ndim(eta_spec[1]) == 0:
        return (eta_spec,)
    return tuple(eta_spec)


def caccioppoli_check(u: FeFunction, coeffs: CoefficientSet, f=None, g=None,
                      eta_spec=(((0.0, 0.0, 0.0), 0.125, 0.25),
                                ((0.0, 0.0, 0.0), 0.25, 0.5)),
                      boundary: bool = False, kind: str = "subsolution",
                      matrix=None, refinement=None) -> EstimateReport:
    """Gradient-energy bound through a cutoff.

    Measures ||eta grad u||^2 against ||u grad eta||^2 plus the squared data
    norms ||f eta|| in the lower Sobolev-dual exponent (6/5) and ||g eta||
    in L^2, per cutoff spec (center, r_inner, r_outer); eta_spec may be one
    triple or a sequence of them.  With boundary=True the cutoff ball may
    cross the boundary; u must then vanish on the boundary nodes it covers,
    and all integrals silently restrict to the meshed domain.
    """
    eta_specs = _as_eta_specs(eta_spec)

    def measure(uu, cc, ff, gg):
        mesh = uu.mesh
        K = assemble(mesh, cc) if (matrix is None or uu is not u) else matrix
        fv = _scalar_elements(mesh, ff)
        gv = _vector_elements(mesh, gg)
        grad_u = uu.gradient()
        gu2 = np.einsum("ek,ek->e", grad_u, grad_u)
        V = mesh.volumes
        EV_u = uu.values[mesh.elements]
        scan = []
        grad_infs = []
        for center, r_in, r_out in eta_specs:
            margin = _hat_support_margin(mesh)
            if not boundary:
                clearance = _boundary_clearance(mesh, center)
                if clearance < r_out - 1e-12:
                    raise ValueError(
                        f"cutoff ball of radius {r_out} reaches the boundary "
                        f"(clearance {clearance:.3g}); pass boundary=True for "
                        "the boundary variant"
                    )
            else:
                bmask = _node_ball_mask(mesh, center, r_out)[mesh.boundary_nodes]
                if bmask.any():
                    bvals = np.abs(uu.values[mesh.boundary_nodes][bmask])
                    cap = HAT_RESIDUAL_TOL * (float(np.abs(uu.values).max()) + _TINY)
                    if bvals.max() > cap:
                        raise PreconditionError(
                            "boundary variant needs a field vanishing on the "
                            f"covered boundary nodes (worst {bvals.max():.3e})"
                        )
            mask = _interior_ball_mask(mesh, center, r_out - margin)
            require_kind(uu, cc, kind, f=ff, g=gg, node_mask=mask, matrix=K,
                         label="caccioppoli")
            eta = cutoff(mesh, center, r_in, r_out)
            EV_eta = eta.values[mesh.elements]
            grad_eta = eta.gradient()
            ge2 = np.einsum("ek,ek->e", grad_eta, grad_eta)
            grad_infs.append(float(np.sqrt(ge2.max())))
            lhs = float(np.sum(V * gu2 * (EV_eta ** 2).mean(axis=1)))
            rhs = float(np.sum(V * ge2 * (EV_u ** 2).mean(axis=1)))
            if fv is not None:
                ftm = np.sum(V * np.abs(fv) ** 1.2 * (EV_eta ** 1.2).mean(axis=1))
                rhs += float(ftm ** (5.0 / 3.0))
            if gv is not None:
                g2e = np.einsum("ek,ek->e", gv, gv)
                rhs += float(np.sum(V * g2e * (EV_eta ** 2).mean(axis=1)))
            scan.append((r_out, 0.0 if lhs == 0.0 else lhs / (rhs + _TINY)))
        return mesh.h, scan, grad_infs

    h1, scan1, grad_infs = measure(u, coeffs, f, g)
    measured = max(v for _, v in scan1)
    refinement_scan = [(h1, measured)]
    other = _run_refinement(measure, refinement)
    if other is not None:
        h2, scan2, _ = other
        refinement_scan.append((h2, max(v for _, v in scan2)))
    return EstimateReport(
        name="caccioppoli-boundary" if boundary else "caccioppoli",
        measured_constant=measured,
        scale_scan=tuple(scan1),
        refinement_scan=tuple(refinement_scan),
        extras={
            "eta_spec": [list(map(_jsonable, s)) for s in eta_specs],
            "eta_grad_inf": grad_infs,
            "kind": kind,
        },
    )


_BETA_SCAN = (-2.0, -1.0, -0.5, 0.5, 2.0)


def _shift_constants(beta: float, negativity: str, bc_l3: float):
    """Multipliers of the three right-hand terms, with the drift-dependent
    doubling exponent for small shifts under the first sign family."""
    if beta == -1.0:
        return 1.0, 1.0, 1.0, 0.0
    if abs(beta) >= 1.0:
        return (
            1.0 / (beta + 1.0) ** 2,
            1.0 / abs(beta + 1.0),
            1.0 + ((beta - 1.0) / (beta + 1.0)) ** 2,
            0.0,
        )
    if negativity == "cd":
        return 1.0 / beta ** 2, 1.0 / abs(beta), 1.0 / abs(beta), 0.0
    kappa = 1.0 + bc_l3 ** 3 / abs(beta) ** 3
    return (4.0 ** kappa) / beta ** 2, (2.0 ** kappa) / abs(beta), (2.0 ** kappa) / abs(beta), kappa


def _refined_cases(boundary: bool) -> dict:
    # case -> (beta sign, sign marker, needs nonneg u)
    if boundary:
        return {
            "sub": (+1, "nonpos", True),
            "super": (-1, "nonneg", True),
        }
    return {
        "sub": (+1, "nonpos", False),
        "super": (+1, "nonpos", False),
        "nonneg-super": (-1, "nonneg", True),
    }


def refined_caccioppoli_check(u: FeFunction, coeffs: CoefficientSet,
                              beta: float, case_mode: str = "sub",
                              negativity: str = "bd", k_shift=None,
                              f=None, g=None,
                              eta_spec=(((0.0, 0.0, 0.0), 0.25, 0.5),),
                              boundary: bool = False, matrix=None,
                              refinement=None) -> EstimateReport:
    """Shifted-power gradient bound: the energy of the truncated shift
    ubar, weighted by ubar^(beta-1), against C0 ||ubar^((beta+1)/2) grad
    eta||^2 plus shift-normalized data terms with multipliers C1, C2.

    Interior cases: 'sub' (subsolution, beta > 0, positive part),
    'super' (supersolution, beta > 0, negative part), 'nonneg-super'
    (nonnegative supersolution, beta < 0, the field itself).  Boundary
    cases truncate at the boundary extremes instead: 'sub' (beta > 0,
    excess over the boundary max), 'super' (beta < 0, deficit under the
    boundary min), both for nonnegative fields.  The first two interior
    cases and the boundary 'sub' need the first sign family nonpositive;
    the beta < 0 cases need it nonnegative.  negativity selects which sign
    family is read ('bd' or 'cd'); under 'cd' the squared combined drift
    joins the data terms, as the bound requires.  The gradient is taken of
    the truncated shift itself, which agrees with the field's gradient
    wherever the tested part is active.
    """
    cases = _refined_cases(boundary)
    case = case_mode
    eta_specs = _as_eta_specs(eta_spec)
    if case not in cases:
        raise ValueError(f"unknown case {case!r}; choose from {sorted(cases)}")
    if negativity not in ("bd", "cd"):
        raise ValueError("negativity must be 'bd' or 'cd'")
    beta_sign, sign_marker, needs_nonneg = cases[case]
    if beta * beta_sign <= 0:
        raise PreconditionError(
            f"case {case!r} admits only beta with sign {beta_sign:+d}, got {beta}"
        )
    kind = "subsolution" if case == "sub" else "supersolution"

    def measure(uu, cc, ff, gg):
        mesh = uu.mesh
        K = assemble(mesh, cc) if (matrix is None or uu is not u) else matrix
        vals, scale = negativity_functional(mesh, cc, negativity)
        rel = vals / scale
        if sign_marker == "nonpos" and rel.max() > SIGN_TOL:
            raise PreconditionError(
                f"case {case!r} needs the {negativity} functional nonpositive; "
                f"worst relative value {rel.max():.3e}"
            )
        if sign_marker == "nonneg" and rel.min() < -SIGN_TOL:
            raise PreconditionError(
                f"case {case!r} needs the {negativity} functional nonnegative; "
                f"worst relative value {rel.min():.3e}"
            )
        fv = _scalar_elements(mesh, ff)
        gv = _vector_elements(mesh, gg)
        bc = cc.b + cc.c
        bc2e = np.einsum("ek,ek->e", bc, bc)
        bc_l3 = float(np.sum(mesh.volumes * bc2e ** 1.5)) ** (1.0 / 3.0)
        k = float(k_shift) if k_shift is not None else 1e-3 * max(
            1.0, float(np.abs(uu.values).max()))
        if k <= 0.0:
            raise ValueError("the shift must be positive")
        V = mesh.volumes

        scan = []
        beta_rows = {}
        for center, r_in, r_out in eta_specs:
            margin = _hat_support_margin(mesh)
            if not boundary:
                clearance = _boundary_clearance(mesh, center)
                if clearance < r_out - 1e-12:
                    raise ValueError(
                        f"cutoff ball of radius {r_out} reaches the boundary "
                        f"(clearance {clearance:.3g}); pass boundary=True for "
                        "the boundary variant"
                    )
            mask = _interior_ball_mask(mesh, center, r_out - margin)
            require_kind(uu, cc, kind, f=ff, g=gg, node_mask=mask, matrix=K,
                         label=f"refined caccioppoli ({case})")
            ball_nodes = _node_ball_mask(mesh, center, r_out)
            if needs_nonneg:
                floor = -HAT_RESIDUAL_TOL * (float(np.abs(uu.values).max()) + _TINY)
                if uu.values[ball_nodes].min(initial=0.0) < floor:
                    raise PreconditionError(
                        f"case {case!r} needs a nonnegative field on the ball; "
                        f"min {uu.values[ball_nodes].min():.3e}"
                    )
            if boundary:
                bsel = ball_nodes[mesh.boundary_nodes]
                if not bsel.any():
                    raise ValueError("boundary variant needs boundary nodes in the ball")
                bvals = uu.values[mesh.boundary_nodes][bsel]
                part = (np.maximum(uu.values - bvals.max(), 0.0) if case == "sub"
                        else np.maximum(bvals.min() - uu.values, 0.0))
            elif case == "sub":
                part = np.maximum(uu.values, 0.0)
            elif case == "super":
                part = np.maximum(-uu.values, 0.0)
            else:
                part = uu.values
            ubar = part + k
            ub_fe = FeFunction(mesh, ubar)
            grad_ub = ub_fe.gradient()
            gub2 = np.einsum("ek,ek->e", grad_ub, grad_ub)
            eta = cutoff(mesh, center, r_in, r_out)
            EV_eta = eta.values[mesh.elements]
            EV_ub = ubar[mesh.elements]
            grad_eta = eta.gradient()
            ge2 = np.einsum("ek,ek->e", grad_eta, grad_eta)

            def ratio(bb):
                C0, C1, C2, kap = _shift_constants(bb, negativity, bc_l3)
                lhs = float(np.sum(V * gub2 * (EV_eta ** 2 * EV_ub ** (bb - 1.0)).mean(axis=1)))
                rhs = C0 * float(np.sum(V * ge2 * (EV_ub ** (bb + 1.0)).mean(axis=1)))
                if fv is not None:
                    rhs += C1 * float(np.sum(
                        V * np.abs(fv) * (EV_ub ** bb * EV_eta ** 2).mean(axis=1)))
                if gv is not None:
                    g2e = np.einsum("ek,ek->e", gv, gv)
                    rhs += C2 * float(np.sum(
                        V * g2e * (EV_ub ** (bb - 1.0) * EV_eta ** 2).mean(axis=1)))
                if negativity == "cd":
                    rhs += C2 * float(np.sum(
                        V * bc2e * (EV_ub ** (bb + 1.0) * EV_eta ** 2).mean(axis=1)))
                return (0.0 if lhs == 0.0 else lhs / (rhs + _TINY)), (C0, C1, C2, kap)

            val, consts = ratio(beta)
            scan.append((r_out, val))
            for bb in _BETA_SCAN:
                if bb * beta_sign > 0:
                    beta_rows.setdefault(bb, []).append(ratio(bb)[0])
        return mesh.h, scan, beta_rows, consts, k, bc_l3

    h1, scan1, beta_rows, consts, k_used, bc_l3 = measure(u, coeffs, f, g)
    measured = max(v for _, v in scan1)
    refinement_scan = [(h1, measured)]
    other = _run_refinement(measure, refinement)
    if other is not None:
        refinement_scan.append((other[0], max(v for _, v in other[1])))
    C0, C1, C2, kappa = consts
    return EstimateReport(
        name="refined-caccioppoli" + ("-boundary" if boundary else ""),
        measured_constant=measured,
        scale_scan=tuple(scan1),
        refinement_scan=tuple(refinement_scan),
        extras={
            "beta": beta,
            "case": case,
            "negativity": negativity,
            "k_shift": k_used,
            "C0": C0, "C1": C1, "C2": C2, "kappa": kappa,
            "bc_l3": bc_l3,
            "beta_scan": sorted((bb, max(vals)) for bb, vals in beta_rows.items()),
        },
    )


def local_boundedness_check(u: FeFunction, coeffs: CoefficientSet, f=None,
                            g=None, mode: str | None = None,
                            sigma=(0.25, 0.5), p=(1.0, 2.0),
                            center=(0.0, 0.0, 0.0), radii=(0.5,),
                            moduli: DataModuli | None = None, conditions=None,
                            enforce_conditions: bool = True, matrix=None,
                            refinement=None) -> EstimateReport:
    """Nodal sup of the positive part against interior averages plus data.

    Per radius r, sigma and p (each a scalar or a sequence to scan): sup
    over the sigma*r ball of u+ divided by (1-sigma)^(-3/p) times the
    volume-normalized L^p average of u+ over the r ball plus the data
    modulus k(r).  Needs a subsolution and one of the hypothesis bundles
    N or D; mode='N' or 'D' insists on that specific bundle.  Override
    with enforce_conditions=False to document a violating run; the markers
    still land in extras.
    """
    mod = moduli or DataModuli()
    sigmas = _as_floats(sigma)
    ps = _as_floats(p)
    if mode is not None and mode not in ("N", "D"):
        raise ValueError("mode must be 'N' or 'D'")
    wanted = (mode,) if mode is not None else ("N", "D")

    def measure(uu, cc, ff, gg):
        mesh = uu.mesh
        K = assemble(mesh, cc) if (matrix is None or uu is not u) else matrix
        V = mesh.volumes
        up = np.maximum(uu.values, 0.0)
        EV_up = up[mesh.elements]
        scan = []
        table = {}
        for r in radii:
            mask = _interior_ball_mask(mesh, center, r - _hat_support_margin(mesh))
            require_kind(uu, cc, "subsolution", f=ff, g=gg, node_mask=mask,
                         matrix=K, label="local boundedness")
            esel = _element_ball_mask(mesh, center, r)
            vol = float(V[esel].sum())
            kr = mod.k(r)
            worst = 0.0
            for sigma in sigmas:
                nsel = _node_ball_mask(mesh, center, sigma * r)
                lhs = float(up[nsel].max(initial=0.0))
                for p in ps:
                    avg = (float(np.sum(V[esel] * (EV_up[esel] ** p).mean(axis=1)))
                           / max(vol, _TINY)) ** (1.0 / p)
                    rhs = (1.0 - sigma) ** (-3.0 / p) * (avg + kr)
                    c = 0.0 if lhs == 0.0 else lhs / (rhs + _TINY)
                    table[(r, sigma, p)] = c
                    worst = max(worst, c)
            scan.append((r, worst))
        return mesh.h, scan, table

    conditions, cond_ok = _gate_conditions(
        u.mesh, coeffs, conditions, wanted, enforce_conditions,
        "local boundedness")
    h1, scan1, table = measure(u, coeffs, f, g)
    measured = max(v for _, v in scan1)
    refinement_scan = [(h1, measured)]
    other = _run_refinement(measure, refinement)
    if other is not None:
        refinement_scan.append((other[0], max(v for _, v in other[1])))
    return EstimateReport(
        name="local-boundedness",
        measured_constant=measured,
        scale_scan=tuple(scan1),
        refinement_scan=tuple(refinement_scan),
        extras={
            "table": {f"r={r:g},sigma={s:g},p={p:g}": v
                      for (r, s, p), v in sorted(table.items())},
            "conditions": {k: _jsonable(v) for k, v in conditions.items()},
            "conditions_ok": cond_ok,
            "embedding_scale": mod.embedding_scale(),
        },
    )


def weak_harnack_check(u: FeFunction, coeffs: CoefficientSet, f=None, g=None,
                       p=(1.0, 2.0), s=(0.5, 1.0),
                       center=(0.0, 0.0, 0.0), radii=(0.5,),
                       moduli: DataModuli | None = None, conditions=None,
                       enforce_conditions: bool = True, matrix=None,
                       refinement=None) -> EstimateReport:
    """Averages of a nonnegative supersolution against its infimum.

    p and s are matched exponent lists (scalars allowed) zipped into pairs
    (s_i, p_i) with s < p < 3.  Two families per radius r and pair: the
    half-ball L^p average against the full-ball L^s average plus k(r), and
    the full-ball L^p average against the half-ball nodal infimum plus
    k(r/2).  Averages are volume-normalized, so the constant-1 field scores
    exactly 1/(1 + k).  Needs one of the hypothesis bundles P or D.
    """
    mod = moduli or DataModuli()
    ps, ss = _as_floats(p), _as_floats(s)
    if len(ps) != len(ss):
        raise ValueError("p and s must pair up one to one")
    pairs = tuple(zip(ss, ps))
    for s_, p_ in pairs:
        if not 0 < s_ < p_ < CHI:
            raise ValueError(f"need 0 < s < p < {CHI}, got {(s_, p_)}")

    def measure(uu, cc, ff, gg):
        mesh = uu.mesh
        K = assemble(mesh, cc) if (matrix is None or uu is not u) else matrix
        V = mesh.volumes
        floor = -HAT_RESIDUAL_TOL * (float(np.abs(uu.values).max()) + _TINY)
        uvals = np.maximum(uu.values, 0.0)
        EV = uvals[mesh.elements]
        scan = []
        table = {}
        for r in radii:
            nsel_full = _node_ball_mask(mesh, center, r)
            if uu.values[nsel_full].min(initial=0.0) < floor:
                raise PreconditionError(
                    "weak harnack needs a nonnegative field on the ball; "
                    f"min {uu.values[nsel_full].min():.3e}"
                )
            mask = _interior_ball_mask(mesh, center, r - _hat_support_margin(mesh))
            require_kind(uu, cc, "supersolution", f=ff, g=gg, node_mask=mask,
                         matrix=K, label="weak harnack")
            esel_full = _element_ball_mask(mesh, center, r)
            esel_half = _element_ball_mask(mesh, center, 0.5 * r)
            vol_full = float(V[esel_full].sum())
            vol_half = float(V[esel_half].sum())
            inf_half = float(uvals[_node_ball_mask(mesh, center, 0.5 * r)].min())

            def avg(esel, vol, expo):
                return (float(np.sum(V[esel] * (EV[esel] ** expo).mean(axis=1)))
                        / max(vol, _TINY)) ** (1.0 / expo)

            worst = 0.0
            for s, p in pairs:
                den_fwd = avg(esel_full, vol_full, s) + mod.k(r)
                den_inf = inf_half + mod.k(0.5 * r)
                if den_fwd <= 0.0 or den_inf <= 0.0:
                    raise PreconditionError(
                        "weak harnack: the field and the data moduli both "
                        f"vanish on the r={r:g} ball, the bound is vacuous"
                    )
                fwd = avg(esel_half, vol_half, p) / den_fwd
                inf_c = avg(esel_full, vol_full, p) / den_inf
                table[(r, s, p, "forward")] = fwd
                table[(r, s, p, "infimum")] = inf_c
                worst = max(worst, fwd, inf_c)
            scan.append((r, worst))
        return mesh.h, scan, table

    conditions, cond_ok = _gate_conditions(
        u.mesh, coeffs, conditions, ("P", "D"), enforce_conditions,
        "weak harnack")
    h1, scan1, table = measure(u, coeffs, f, g)
    measured = max(v for _, v in scan1)
    refinement_scan = [(h1, measured)]
    other = _run_refinement(measure, refinement)
    if other is not None:
        refinement_scan.append((other[0], max(v for _, v in other[1])))
    return EstimateReport(
        name="weak-harnack",
        measured_constant=measured,
        scale_scan=tuple(scan1),
        refinement_scan=tuple(refinement_scan),
        extras={
            "table": {f"r={r:g},s={s:g},p={p:g},{fam}": v
                      for (r, s, p, fam), v in sorted(table.items())},
            "conditions": {k: _jsonable(v) for k, v in conditions.items()},
            "conditions_ok": cond_ok,
        },
    )


def holder_decay_check(u: FeFunction, coeffs: CoefficientSet, f=None, g=None,
                       center=(0.0, 0.0, 0.0), r: float = 1.0,
                       moduli: DataModuli | None = None, levels: int = 5,
                       matrix=None, refinement=None,
                       noise_floor: float = 1e-12) -> EstimateReport:
    """Nodal oscillation over halving balls and the fitted decay exponent.

    omega(s) = max - min over nodes within the s ball, s = r, r/2, ...;
    levels whose ball holds fewer than 7 nodes (the center and its axis
    neighbors) are dropped as unresolved.  The exponent is the least-squares
    slope of log omega against log s; a scan entirely below the noise floor
    reports 0 with the inconclusive flag instead.  extras carries the
    per-level combined data moduli and the level-to-level decay factors.
    """
    mod = moduli or DataModuli()

    def measure(uu, cc, ff, gg):
        mesh = uu.mesh
        K = assemble(mesh, cc) if (matrix is None or uu is not u) else matrix
        mask = _interior_ball_mask(mesh, center, r - _hat_support_margin(mesh))
        require_kind(uu, cc, "solution", f=ff, g=gg, node_mask=mask, matrix=K,
                     label="oscillation decay")
        kept, dropped = [], 0
        for m in range(levels):
            s = r * 0.5 ** m
            nsel = _node_ball_mask(mesh, center, s)
            if int(nsel.sum()) < 7:
                dropped += 1
                continue
            vals = uu.values[nsel]
            kept.append((s, float(vals.max() - vals.min())))
        return mesh.h, kept, dropped

    def fit(kept, scale):
        live = [(s, w) for s, w in kept if w > noise_floor * scale]
        if len(live) < 2:
            return None
        xs = np.log([s for s, _ in live])
        ys = np.log([w for _, w in live])
        return float(np.polyfit(xs, ys, 1)[0])

    h1, kept, dropped = measure(u, coeffs, f, g)
    scale = float(np.abs(u.values).max()) + 1.0
    alpha = fit(kept, scale)
    inconclusive = alpha is None
    measured = 0.0 if inconclusive else alpha
    refinement_scan = [(h1, measured)]
    alpha2 = None
    other = _run_refinement(measure, refinement)
    if other is not None:
        alpha2 = fit(other[1], scale)
        refinement_scan.append((other[0], 0.0 if alpha2 is None else alpha2))
    ratios = [kept[i + 1][1] / kept[i][1] for i in range(len(kept) - 1)
              if kept[i][1] > noise_floor * scale]
    return EstimateReport(
        name="holder-decay",
        measured_constant=measured,
        scale_scan=tuple(kept) if kept else ((r, 0.0),),
        refinement_scan=tuple(refinement_scan),
        extras={
            "alpha": alpha,
            "alpha_refined": alpha2,
            "inconclusive": inconclusive,
            "dropped_levels": dropped,
            "decay_factors": ratios,
            "ktilde_per_level": [(s, mod.ktilde(0.5 * s)) for s, _ in kept],
        },
    )


def boundary_oscillation_check(mesh: Mesh, coeffs: CoefficientSet,
                               u: FeFunction, phi, xi, rho: float, r: float,
                               f=None, g=None,
                               moduli: DataModuli | None = None,
                               matrix=None) -> EstimateReport:
    """Oscillation near a boundary point against the thickness integral.

    For each sampled inner scale, the measured oscillation of u over the
    ball around xi is compared with the decaying right-hand side: boundary
    data oscillation plus (1 + k3(r)) exp(-W/C') (osc over the r ball +
    k(r)), where W is the dyadic complement-thickness integral from the
    capacity machinery.  Each sample yields the fitted C' that makes the
    two sides match; the report says whether one constant serves all
    samples within a factor 2 (ratio of extreme fits at most 4).  A sample
    whose left side is already below the data oscillation fits C' = 0; a
    sample with no decay at all fits infinity, which survives in extras
    only.
    """
    xi = np.asarray(xi, dtype=float)
    mod = moduli or DataModuli()
    phi_fe = phi if isinstance(phi, FeFunction) else interpolate(mesh, phi)
    if phi_fe.mesh is not mesh or u.mesh is not mesh:
        raise ValueError("fields live on a different mesh")
    K = assemble(mesh, coeffs) if matrix is None else matrix

    bsel = _node_ball_mask(mesh, xi, r)[mesh.boundary_nodes]
    bdiff = np.abs(u.values[mesh.boundary_nodes] - phi_fe.values[mesh.boundary_nodes])
    cap = HAT_RESIDUAL_TOL * (float(np.abs(phi_fe.values).max()) + 1.0)
    if bsel.any() and bdiff[bsel].max() > cap:
        raise PreconditionError(
            f"u does not take the boundary data near xi (worst {bdiff[bsel].max():.3e})"
        )
    mask = _interior_ball_mask(mesh, xi, r - _hat_support_margin(mesh))
    require_kind(u, coeffs, "solution", f=f, g=g, node_mask=mask, matrix=K,
                 label="boundary oscillation")

    def osc(values, sel):
        vals = values[sel]
        return float(vals.max() - vals.min()) if vals.size else 0.0

    osc_r = osc(u.values, _node_ball_mask(mesh, xi, r))
    kr = mod.k(r)
    k3r = mod.k3(r)
    noise = HAT_RESIDUAL_TOL * (float(np.abs(u.values).max())
                                + float(np.abs(phi_fe.values).max()) + 1.0)
    rhos = []
    s = float(rho)
    while 2.0 * s * 2.0 <= r * (1 + 1e-9):
        rhos.append(s)
        s *= 2.0
    if not rhos:
        raise ValueError("need 4*rho <= r for at least one sample")

    samples = []
    fits = []
    scan = []
    for s in rhos:
        w = wiener_integral(mesh, xi, s, r)
        osc_s = osc(u.values, _node_ball_mask(mesh, xi, s))
        osc_phi = osc(phi_fe.values[mesh.boundary_nodes],
                      _node_ball_mask(mesh, xi, s)[mesh.boundary_nodes])
        denom = (1.0 + k3r) * (osc_r + kr)
        excess = osc_s - osc_phi
        q = excess / denom if (denom > noise and excess > noise) else 0.0
        if q <= 0.0:
            cprime = 0.0
        elif q >= 1.0:
            cprime = math.inf
        else:
            cprime = w.integral / (-math.log(q))
        samples.append({
            "rho": s, "wiener": w.integral, "divergent": w.divergent,
            "osc": osc_s, "osc_phi": osc_phi, "q": q, "c_prime": cprime,
        })
        if math.isfinite(cprime) and cprime > 0:
            fits.append(cprime)
        scan.append((s, osc_s))

    ratio = max(fits) / min(fits) if fits else 1.0
    measured = max(fits) if fits else 0.0
    decay = [scan[i][1] / scan[i + 1][1] for i in range(len(scan) - 1)
             if scan[i + 1][1] > noise]
    # no positive decay samples is vacuous consistency (flat field), but an
    # inf fit (no decay where the integral demands some) is a real failure
    single_ok = (ratio <= 4.0) if fits else all(smp["q"] <= 0.0 for smp in samples)
    # the per-sample windows reach out to r, where distant geometry can mask
    # the trend at the point itself; the headline flag reads a window of a
    # few spacings around xi instead
    try:
        fine = wiener_integral(mesh, xi, mesh.h, min(8.0 * mesh.h, r))
        fine_divergent = bool(fine.divergent)
        fine_integral = float(fine.integral)
    except (ResolutionError, ValueError):
        fine_divergent = None
        fine_integral = None
    return EstimateReport(
        name="boundary-oscillation",
        measured_constant=measured,
        scale_scan=tuple(scan),
        refinement_scan=((mesh.h, measured),),
        extras={
            "samples": samples,
            "q_values": [smp["q"] for smp in samples],
            "fit_ratio": ratio,
            "single_constant_ok": single_ok,
            "decay_factors": decay,
            "fine_scale_divergent": fine_divergent,
            "fine_scale_integral": fine_integral,
            "osc_r": osc_r,
            "k_r": kr,
            "k3_r": k3r,
        },
    )


# ---------------------------------------------------------------------------
# the two unbounded-solution showcases (unit-ball scaling of the classical
# radius-1/e domain; L below is |log| of the original radial variable)


def _log_shifted(pts, floor: float = 1e-12):
    rr = np.linalg.norm(np.asarray(pts, float), axis=-1)
    return 1.0 + np.log(1.0 / np.maximum(rr, floor))


def ex_c1_fields(delta: float = 0.5):
    """Outward log-damped drift and the power-of-log solution it produces.

    Returns (b, u) callables on the unit ball: b(x) = delta x / (|x|^2 L),
    u = L^delta with L = 1 + log(1/|x|).  The drift divergence is positive,
    so the first sign family fails; |b|^2 has a vanishing Riesz modulus but
    an infinite refined Dini constant.  The drift direction is the one that
    makes u an exact solution of -div(grad u + b u) = 0: the inward variant
    admits only the bounded power L^(-delta).
    """
    def b(pts):
        pts = np.asarray(pts, float)
        rr = np.maximum(np.linalg.norm(pts, axis=-1), 1e-12)
        return delta * pts / (rr ** 2 * _log_shifted(pts))[..., None]

    def u(pts):
        return _log_shifted(pts) ** delta

    return b, u


def ex_d_fields():
    """Nonnegative zero-order coefficient and the log solution.

    Returns (d, u) callables on the unit ball: d = 1 / (|x|^2 L),
    u = L = 1 + log(1/|x|), an exact solution of -lap u - d u = 0.  Both
    sign families fail (the functional is strictly positive), and the
    modulus of d at the center diverges: its sampled profile keeps growing
    as the graded quadrature looks deeper into the singularity.
    """
    def d(pts):
        pts = np.asarray(pts, float)
        rr = np.maximum(np.linalg.norm(pts, axis=-1), 1e-12)
        return 1.0 / (rr ** 2 * _log_shifted(pts))

    def u(pts):
        return _log_shifted(pts)

    return d, u


def _shell_sups(u_vals, mesh, center, radii_desc):
    out = []
    dist = np.linalg.norm(mesh.nodes - np.asarray(center, float), axis=1)
    for rr in radii_desc:
        sel = (dist >= rr) & (dist < rr + mesh.h)
        if sel.any():
            out.append((rr, float(u_vals[sel].max())))
    return out


def ex_c1_report(delta: float = 0.5, h: float = 1.0 / 16.0,
                 h_coarse: float = 1.0 / 8.0) -> EstimateReport:
    """Composite story of the log-power blowup under an admissible-looking
    drift: modulus decay, Dini divergence, sign violation, cap growth under
    refinement, and the fitted growth exponent of the shell sups against
    the log. The equation is solved with boundary data 1 on two unit-ball
    meshes; nothing about the closed form enters the solves.
    """
    b_fn, u_fn = ex_c1_fields(delta)
    reports = {}
    sups = {}
    caps = {}
    lb = {}
    for hh in (h_coarse, h):
        mesh = ball_mesh(1.0, hh)
        coeffs = CoefficientSet.from_fields(mesh, b=b_fn, negativity_mode="cd")
        op = DirichletOperator(mesh, coeffs)
        ones = interpolate(mesh, lambda p: np.ones(len(p)))
        sol = op.solve(boundary_data=ones).solution
        caps[hh] = float(sol.values.max())
        radii = [0.5, 0.25, 0.125, 0.0625]
        sups[hh] = _shell_sups(sol.values, mesh, (0.0, 0.0, 0.0),
                               [rr for rr in radii if rr >= 2 * hh])
        vals, scale = negativity_functional(mesh, coeffs, "bd")
        reports.setdefault("bd_violation", float((vals / scale).max()))
        lb[hh] = local_boundedness_check(
            sol, coeffs, center=(0.0, 0.0, 0.0), radii=(0.5,), sigma=0.5,
            p=2.0, enforce_conditions=False, matrix=op.matrix,
            conditions={"N": False, "D": False},
        ).measured_constant
        if hh == h:
            dist = np.linalg.norm(mesh.nodes - 0.0, axis=1)
            band = (dist >= 2.5 * hh) & (dist <= 0.5)
            y = np.log(np.maximum(sol.values[band], 1e-12))
            x = np.log(_log_shifted(mesh.nodes[band]))
            fitted = float(np.polyfit(x, y, 1)[0])

    # the modulus of |b|^2 decays like 1/log, so the window must span enough
    # octaves for the decay (and the refined-integral growth) to register;
    # graded quadrature resolves far below the smallest radius here
    b2_ev = lambda p: np.einsum("pk,pk->p", b_fn(p), b_fn(p))
    coarse = ball_mesh(1.0, h_coarse)
    prof = _field_profile(
        coarse, b2_ev(coarse.barycenters), b2_ev,
        singular_points=[(0.0, 0.0, 0.0)],
        radii=np.geomspace(0.02, 0.5, 10),
    )
    theta_ratio = float(prof.theta_at(prof.radii[0]) / prof.theta_at(prof.radii[-1]))

    shell = sups[h]
    return EstimateReport(
        name="ex-c1",
        measured_constant=fitted,
        scale_scan=tuple(shell),
        refinement_scan=((h_coarse, caps[h_coarse]), (h, caps[h])),
        extras={
            "delta": delta,
            "fitted_exponent": fitted,
            "theta_decay_ratio": theta_ratio,
            "theta_values": list(zip(prof.radii.tolist(), prof.theta.tolist())),
            "dini_divergent": not math.isfinite(prof.dini_constant),
            "bd_violation": reports["bd_violation"],
            "cap_growth": caps[h] - caps[h_coarse],
            "local_boundedness_constants": [(h_coarse, lb[h_coarse]), (h, lb[h])],
            "shell_sups_coarse": sups[h_coarse],
        },
    )


def ex_d_report(h: float = 1.0 / 8.0, h_fine: float = 1.0 / 16.0,
                annulus=(0.3, 0.6), depths=(1, 2, 3, 4),
                probe_radius: float = 0.1) -> EstimateReport:
    """Composite story of the log blowup under a nonnegative zero-order
    term: the interpolated log passes the residual gate on an annulus away
    from the center with the defect shrinking under refinement, both sign
    functionals are strictly positive somewhere, and the sampled modulus of
    d keeps growing as each graded-quadrature extension resolves one octave
    closer to the center: the documented divergence heuristic for a field
    outside the vanishing-modulus class.
    """
    d_fn, u_fn = ex_d_fields()
    res = {}
    sign_bd = sign_cd = None
    shell = None
    for hh in (h, h_fine):
        mesh = ball_mesh(1.0, hh)
        coeffs = CoefficientSet.from_fields(mesh, d=d_fn)
        vals = u_fn(mesh.nodes)
        dist = np.linalg.norm(mesh.nodes, axis=1)
        vals[dist < 0.5 * hh] = 1.0 + math.log(2.0 / hh)
        u = FeFunction(mesh, vals)
        r_hats, s_hats = hat_residuals(u, coeffs)
        pts = mesh.nodes[mesh.interior_nodes]
        ring = np.linalg.norm(pts, axis=1)
        band = (ring >= annulus[0]) & (ring <= annulus[1])
        rel = np.abs(r_hats[band] / s_hats[band])
        res[hh] = float(np.sqrt(np.mean(rel ** 2)))
        if hh == h:
            nb, ns = negativity_functional(mesh, coeffs, "bd")
            sign_bd = float((nb / ns).max())
            nb, ns = negativity_functional(mesh, coeffs, "cd")
            sign_cd = float((nb / ns).max())
            shell = _shell_sups(vals, mesh, (0.0, 0.0, 0.0), [0.5, 0.25, 2 * hh])
            d_min = float(coeffs.d.min())

    # partial modulus at a fixed radius under successive depth extensions;
    # each extension halves the smallest resolved scale at the center
    coarse = ball_mesh(1.0, h)
    radii = np.geomspace(0.02, 0.5, 8)
    partials = []
    for depth in depths:
        prof = _field_profile(coarse, d_fn(coarse.barycenters), d_fn,
                              singular_points=[(0.0, 0.0, 0.0)], radii=radii,
                              graded_depth=depth)
        partials.append(float(prof.theta_at(probe_radius)))
    growths = [b / max(a, _TINY) for a, b in zip(partials, partials[1:])]
    divergent = (len(growths) >= DIVERGENCE_EXTENSIONS
                 and all(g >= DIVERGENCE_GROWTH for g in growths))

    ratio = res[h] / max(res[h_fine], _TINY)
    return EstimateReport(
        name="ex-d",
        measured_constant=ratio,
        scale_scan=tuple(shell),
        refinement_scan=((h, res[h]), (h_fine, res[h_fine])),
        extras={
            "residuals": {str(k): v for k, v in res.items()},
            "residual_ratio": ratio,
            "d_nonnegative": d_min >= 0.0,
            "bd_violation": sign_bd,
            "cd_violation": sign_cd,
            "depth_partials": partials,
            "depth_growths": growths,
            "depths": list(depths),
            "kato_divergent": divergent,
        },
    )
