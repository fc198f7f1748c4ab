"""Level-set splittings of a P1 function driven by a coefficient budget.

Given u and a scalar field h, a stopping-time search walks down the level
bands of |u| and closes a band as soon as the h-mass inside it (a Lorentz
tail integral, or a Riesz-potential supremum) reaches the budget a^q
(resp. a^2).  Each piece u_i is a clipped copy of u that carries the exact
gradient of u inside its band, so sums and products of the pieces satisfy
the algebraic identities the downstream energy estimates rely on.

Bands are unions of elements, selected by barycenter value; an element cut
by a level keeps its barycenter band but is flagged, and all identities
that need an uncut element are asserted on the unflagged set only.  The
flagged volume shrinks under refinement, which the tests measure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .function_spaces import SampledFunction, _ball_sums, _centers, lorentz_norm, restrict
from .mesh import FeFunction

# Relative tolerance on the band functional at which the search considers
# the budget reached; levels themselves are never compared to a tolerance.
BISECTION_REL = 1e-12

# Sign convention at u = 0.  Both clips of the truncation vanish there, so
# no piece depends on it; recorded because the bands use strict |u| > k and
# an element whose barycenter value is exactly 0 belongs to no band.
SIGN_AT_ZERO = 1.0


class ProfileInversionError(ValueError):
    """Raised when theta(h, r) = budget/4 has no solution on the resolvable
    radius range; carries the offending profile as ``radii`` / ``theta``."""

    def __init__(self, message: str, radii: np.ndarray, theta: np.ndarray):
        super().__init__(message)
        self.radii = radii
        self.theta = theta


@dataclass(frozen=True)
class SplitResult:
    """Outcome of a stopping-time split.

    ``levels`` is the decreasing ladder [inf, k_1, ..., k_{kappa-1}, 0];
    band i (0-based) is the element set with barycenter value in
    (levels[i+1], levels[i]], ties going to the lower band.  ``bands`` is -1
    on elements outside every band (vanishing gradient or zero barycenter
    value).  ``band_functional`` holds the stopping functional per band and
    ``band_functional_drop`` its value with the band's lowest value class
    removed: together they certify that interior bands bracket the budget.
    """

    mode: str
    a: float
    budget: float
    p: float | None
    q: float | None
    levels: np.ndarray
    bands: np.ndarray
    flagged: np.ndarray
    pieces: list
    kappa: int
    band_functional: np.ndarray
    band_functional_drop: np.ndarray
    norm_per_band: np.ndarray
    kappa_bound: float
    r0: float | None = None

    def flagged_volume(self) -> float:
        mesh = self.pieces[0].mesh
        return float(np.sum(mesh.volumes[self.flagged]))

    def to_json(self, include_pieces: bool = False) -> str:
        obj = {
            "mode": self.mode,
            "a": self.a,
            "budget": self.budget,
            "p": self.p,
            "q": self.q,
            "levels": ["inf" if math.isinf(k) else k for k in self.levels],
            "kappa": self.kappa,
            "bands": self.bands.tolist(),
            "flagged_volume": self.flagged_volume(),
            "band_functional": self.band_functional.tolist(),
            "band_functional_drop": [
                None if math.isnan(v) else v for v in self.band_functional_drop
            ],
            "norm_per_band": self.norm_per_band.tolist(),
            "kappa_bound": self.kappa_bound,
            "r0": self.r0,
        }
        if include_pieces:
            obj["pieces"] = [p.values.tolist() for p in self.pieces]
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _truncate(values: np.ndarray, k: float, t: float) -> np.ndarray:
    """F_{k,t}: clip(u, -t, t) - clip(u, -k, k) applied to nodal values."""
    upper = np.clip(values, -t, t) if math.isfinite(t) else values
    return upper - np.clip(values, -k, k)


def _active_classes(u: FeFunction):
    """Descending distinct barycenter values of |u| over elements that can
    belong to a band (nonzero gradient, nonzero value), plus the sorted
    element ids realizing them."""
    g = u.gradient()
    gnorm = np.sqrt(np.einsum("md,md->m", g, g))
    gscale = float(gnorm.max()) if gnorm.size else 0.0
    grad_on = gnorm > 1e-12 * max(gscale, 1e-300)
    ubar = u.element_means()
    active = grad_on & (np.abs(ubar) > 0)
    ids = np.flatnonzero(active)
    av = np.abs(ubar[ids])
    srt = np.argsort(-av, kind="stable")
    ids, av = ids[srt], av[srt]
    starts = np.flatnonzero(np.r_[True, av[1:] != av[:-1]]) if av.size else np.zeros(0, int)
    classes = av[starts]
    bounds = np.r_[starts, av.size]
    return ids, classes, bounds, grad_on, ubar


def _smallest_reaching(eval_range, lo: int, n: int, budget: float) -> int:
    # F(lo, hi) is nondecreasing in hi and F(lo, n) >= budget is known
    a_, b_ = lo + 1, n
    while a_ < b_:
        mid = (a_ + b_) // 2
        if eval_range(lo, mid) >= budget:
            b_ = mid
        else:
            a_ = mid + 1
    return a_


def _run_stopping(eval_range, classes: np.ndarray, budget: float):
    """Shared stopping-time walk.  Returns (levels, class ranges, F, F_drop);
    class range (lo, hi) covers descending classes [lo, hi)."""
    n = classes.size
    levels = [math.inf]
    ranges, fvals, fdrops = [], [], []
    lo = 0
    while True:
        f_rest = eval_range(lo, n)
        if f_rest <= budget * (1.0 + BISECTION_REL) or lo == n:
            levels.append(0.0)
            ranges.append((lo, n))
            fvals.append(f_rest)
            fdrops.append(eval_range(lo, n - 1) if n - 1 > lo else 0.0)
            break
        hi = _smallest_reaching(eval_range, lo, n, budget)
        f_band = eval_range(lo, hi)
        f_drop = eval_range(lo, hi - 1) if hi - 1 > lo else 0.0
        ranges.append((lo, hi))
        fvals.append(f_band)
        fdrops.append(f_drop)
        if hi == n:
            # the remainder exceeds the budget but no proper prefix reaches
            # it: atomic last band, certified by f_drop < budget
            levels.append(0.0)
            break
        levels.append(float(classes[hi]))
        lo = hi
    return np.asarray(levels), ranges, np.asarray(fvals), np.asarray(fdrops)


def _assign_bands(ubar: np.ndarray, grad_on: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Band of each element by barycenter value; ties |u| = k_i go to the
    lower band (strict k < |u| in the band definition)."""
    bands = np.full(ubar.shape, -1, dtype=int)
    inband = grad_on & (np.abs(ubar) > 0)
    interior_asc = np.sort(levels[1:-1])
    v = np.abs(ubar[inband])
    count_ge = interior_asc.size - np.searchsorted(interior_asc, v, side="left")
    bands[inband] = count_ge
    return bands


def _flag_straddlers(u: FeFunction, bands: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """An element is flagged when its nodal values leave the closed range of
    its band (one sign), except in the lowest band where both signs live on
    the same clip branch.  Elements with nonzero gradient but barycenter
    value exactly 0 are cut by the terminal level and flagged too."""
    ev = u.element_values()
    kappa = levels.size - 1
    g = u.gradient()
    gnorm = np.sqrt(np.einsum("md,md->m", g, g))
    gscale = float(gnorm.max()) if gnorm.size else 0.0
    grad_on = gnorm > 1e-12 * max(gscale, 1e-300)
    flagged = grad_on & (bands < 0)
    sign = np.where(u.element_means() >= 0, 1.0, -1.0)
    sv = sign[:, None] * ev
    for i in range(kappa):
        sel = bands == i
        if not sel.any():
            continue
        k_lo, k_hi = levels[i + 1], levels[i]
        if k_lo == 0.0:
            ok = np.abs(ev[sel]).max(axis=1) <= k_hi
        else:
            ok = (sv[sel].min(axis=1) >= k_lo) & (sv[sel].max(axis=1) <= k_hi)
        idx = np.flatnonzero(sel)
        flagged[idx[~ok]] = True
    return flagged


def _build_result(u, h, mode, a, budget, p, q, active, eval_range,
                  norm_of_mask, kappa_bound, r0, verify_tol):
    ids, classes, bounds, grad_on, ubar = active
    levels, ranges, fvals, fdrops = _run_stopping(eval_range, classes, budget)
    kappa = len(ranges)
    bands = _assign_bands(ubar, grad_on, levels)
    flagged = _flag_straddlers(u, bands, levels)
    pieces = [
        FeFunction(u.mesh, _truncate(u.values, levels[i + 1], levels[i]),
                   zero_trace=u.zero_trace)
        for i in range(kappa)
    ]
    norms = np.array([norm_of_mask(bands == i) for i in range(kappa)])
    result = SplitResult(mode, a, budget, p, q, levels, bands, flagged, pieces,
                         kappa, fvals, fdrops, norms, kappa_bound, r0)
    if verify_tol is not None:
        report = verify_split(u, result, tol=verify_tol)
        worst = max(report, key=report.get)
        if report[worst] > verify_tol:
            raise ValueError(f"split invariant {worst!r} violated: {report[worst]:.3e}")
    return result


def _check_inputs(u: FeFunction, h: SampledFunction, a: float):
    if a <= 0:
        raise ValueError("budget parameter a must be positive")
    if h.mesh is not u.mesh:
        raise ValueError("u and h live on different meshes")
    if not np.all(np.isfinite(u.values)):
        raise ValueError("u has non-finite nodal values")


def split_lorentz(u: FeFunction, h: SampledFunction, p: float, q: float,
                  a: float, verify_tol: float | None = 1e-10) -> SplitResult:
    """Split u into level-band pieces with Lorentz h-mass a per band.

    The band functional is int_0^inf s^q d_{h chi}(s)^{q/p} ds/s, evaluated
    exactly from the level-set breakpoints of h inside the band, and the
    stopping rule closes a band once it reaches a^q.  Interior bands land
    one value class above the budget (the functional jumps by whole element
    classes); the recorded drop value certifies the bracket.

    kappa is bounded by a^{-q} ||h||^q_{p,q} + 1; the norm carries the
    p^{1/q} prefactor, so the bound holds with room.
    """
    if not (1.0 < p <= q) or math.isinf(q):
        raise ValueError("exponents must satisfy 1 < p <= q < inf")
    _check_inputs(u, h, a)
    vols = u.mesh.volumes
    habs = np.abs(h.values)
    active = _active_classes(u)
    ids, _, bounds, _, _ = active

    def eval_range(lo: int, hi: int) -> float:
        sel = ids[bounds[lo]:bounds[hi]]
        hv, w = habs[sel], vols[sel]
        pos = hv > 0
        hv, w = hv[pos], w[pos]
        if hv.size == 0:
            return 0.0
        order = np.argsort(hv)
        hv, w = hv[order], w[order]
        starts = np.flatnonzero(np.r_[True, hv[1:] != hv[:-1]])
        lev = hv[starts]
        tail = np.cumsum(w[::-1])[::-1][starts]
        prev = np.concatenate([[0.0], lev[:-1]])
        return float(np.sum(tail ** (q / p) * (lev ** q - prev ** q)) / q)

    def norm_of_mask(mask):
        return lorentz_norm(restrict(h, mask), p, q).value

    budget = a ** q
    kappa_bound = (lorentz_norm(h, p, q).value / a) ** q + 1.0
    return _build_result(u, h, "lorentz", a, budget, p, q, active, eval_range,
                         norm_of_mask, kappa_bound, None, verify_tol)


def split_kato(u: FeFunction, h: SampledFunction, a: float,
               centers: str = "coarse", verify_tol: float | None = 1e-10) -> SplitResult:
    """Split u into level-band pieces with Riesz-potential h-mass a^2 each.

    The band functional is sup_x sum_e V_e |h_e| / |x - x_e| over the band's
    elements (one point mass per element, probe centers shared with the
    radius calibration below), which equals the radius-r modulus for any r
    covering the domain.  The reported bound
    kappa <= 1 + 2 a^{-2} r0^{-1} ||h||_{L^1} uses the largest resolvable r0
    with theta(h, r0) <= a^2/4 on the same point cloud, so the counting
    argument behind it holds exactly for the discrete sums.
    """
    _check_inputs(u, h, a)
    mesh = u.mesh
    vols = mesh.volumes
    W = vols * np.abs(h.values)
    P = mesh.barycenters
    C = _centers(h, centers)
    box_diag = float(np.linalg.norm(mesh.box[1] - mesh.box[0]))
    r_dom = box_diag * (1.0 + 1e-9)
    active = _active_classes(u)
    ids, _, bounds, _, _ = active

    def eval_range(lo: int, hi: int) -> float:
        sel = ids[bounds[lo]:bounds[hi]]
        if sel.size == 0:
            return 0.0
        return float(_ball_sums(P[sel], W[sel], C, np.array([r_dom]), 1)[0])

    # radius calibration on the same cloud: smallest positive probe-to-mass
    # distance up to the domain diameter
    budget = a * a
    quarter = budget / 4.0
    if W.max() > 0:
        dmin = math.inf
        chunk = max(1, int(8_000_000 // max(P.shape[0], 1)))
        for i in range(0, C.shape[0], chunk):
            dmin = min(dmin, float(cdist(C[i:i + chunk], P).min()))
        radii = np.geomspace(dmin, r_dom, 49)
        theta = _ball_sums(P, W, C, radii, 1)
        theta = np.maximum.accumulate(theta)
        if quarter < theta[0]:
            raise ProfileInversionError(
                f"theta(h, r) = {quarter:.3e} not resolvable: theta at the "
                f"smallest radius {radii[0]:.3e} is already {theta[0]:.3e}",
                radii, theta)
        r0 = float(radii[np.searchsorted(theta, quarter, side="right") - 1])
    else:
        r0 = r_dom
    kappa_bound = 1.0 + 2.0 * h.l1_norm() / (budget * r0)

    def norm_of_mask(mask):
        sel = np.flatnonzero(mask)
        if sel.size == 0:
            return 0.0
        return float(_ball_sums(P[sel], W[sel], C, np.array([r_dom]), 1)[0])

    return _build_result(u, h, "kato", a, budget, None, None, active,
                         eval_range, norm_of_mask, kappa_bound, r0, verify_tol)


def verify_split(u: FeFunction, result: SplitResult, tol: float = 1e-10) -> dict:
    """Measured violations of the split identities, each scaled to be
    compared against ``tol``.

    Interior bands must reach the budget and drop below it when their lowest
    value class is removed; the terminal band must stay at or below the
    budget unless it is atomic (its own drop certifies it cannot shed mass).
    The gradient and product identities are asserted on unflagged elements,
    the pointwise ones on all nodes.
    """
    mesh = u.mesh
    kappa = result.kappa
    budget = result.budget
    levels = result.levels
    uscale = max(float(np.abs(u.values).max()), 1e-300)
    gu = u.gradient()
    gscale = max(float(np.sqrt(np.einsum("md,md->m", gu, gu)).max()), 1e-300)
    ok_elems = ~result.flagged

    report = {}
    fv, fd = result.band_functional, result.band_functional_drop
    interior = fv[:-1]
    report["interior_budget"] = float(
        max(0.0, ((budget - interior) / budget).max()) if interior.size else 0.0)
    report["bracket_drop"] = float(max(0.0, ((fd - budget) / budget).max()))
    terminal_excess = (fv[-1] - budget) / budget
    atomic = fd[-1] < budget and kappa > 0 and fv[-1] > budget
    report["terminal_budget"] = 0.0 if atomic else float(max(0.0, terminal_excess))

    structural = 0.0
    if not (np.all(np.diff(levels) < 0) and math.isinf(levels[0]) and levels[-1] == 0.0):
        structural = 1.0
    if len(result.pieces) != kappa or levels.size != kappa + 1:
        structural = 1.0
    report["structure"] = structural

    sum_vals = np.zeros(mesh.n_nodes)
    for piece in result.pieces:
        sum_vals += piece.values
    support = match = prod_down = prod_up = bound4 = sign5 = 0.0
    prefix = np.zeros(mesh.n_nodes)
    for i, piece in enumerate(result.pieces):
        vi = piece.values
        gi = piece.gradient()
        gin = np.sqrt(np.einsum("md,md->m", gi, gi))
        in_band = result.bands == i
        # (2) supp grad u_i inside band i, (3) gradient equality there
        stray = ok_elems & ~in_band
        support = max(support, float(gin[stray].max() / gscale) if stray.any() else 0.0)
        here = ok_elems & in_band
        if here.any():
            diff = np.sqrt(np.einsum("md,md->m", gi[here] - gu[here], gi[here] - gu[here]))
            match = max(match, float(diff.max() / gscale))
        bound4 = max(bound4, float((np.abs(vi) - np.abs(u.values)).max() / uscale))
        sign5 = max(sign5, float((-(u.values * vi)).max() / uscale ** 2))
        # (7) u_i (grad u - sum_{j<=i} grad u_j) = 0
        prefix = prefix + vi
        gp = FeFunction(mesh, prefix).gradient()
        amp = np.sqrt(np.einsum("md,md->m", gu - gp, gu - gp))
        b_i = np.abs(vi[mesh.elements]).max(axis=1)
        prod_down = max(prod_down, float((amp * b_i)[ok_elems].max() / (gscale * uscale)))
        # (8) grad u_i (u - sum_{j>=i} u_j) = 0
        suffix = sum_vals - (prefix - vi)
        c_i = np.abs((u.values - suffix)[mesh.elements]).max(axis=1)
        prod_up = max(prod_up, float((gin * c_i)[ok_elems].max() / (gscale * uscale)))
    report["support"] = support
    report["gradient_match"] = match
    report["pointwise_bound"] = max(0.0, bound4)
    report["sign"] = max(0.0, sign5)
    report["sum"] = float(np.abs(sum_vals - u.values).max() / uscale)
    report["prod_rule_down"] = prod_down
    report["prod_rule_up"] = prod_up
    report["kappa_bound"] = max(0.0, (kappa - result.kappa_bound) / kappa)
    report["zero_trace"] = 0.0 if (not u.zero_trace or
                                   all(p.zero_trace for p in result.pieces)) else 1.0
    return report
