"""Uniform tetrahedral meshes on axis-aligned boxes.

Every mesh lives on a box grid whose cells are cut into the six Kuhn
tetrahedra around the main cell diagonal.  All elements are translates of
six reference shapes, so geometry tables are tiny and mesh construction is
fully deterministic: identical inputs give byte-identical serializations.

Domains with holes, punctures, or ball shape are realized by removing the
grid nodes inside declared regions and retagging nodes adjacent to the
removal as boundary.  The staircase boundary carries an O(h) geometric
error; downstream checks are tolerance-based under refinement.  Ball-shaped
domains built through :func:`ball_mesh` use a half-cell inflation of the
radius so the staircase straddles the true sphere instead of inscribing it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# Vertex chains of the six Kuhn tetrahedra: start at the cell corner
# (0,0,0), walk one axis at a time in permutation order, end at (1,1,1).
# Odd permutations get their last two vertices swapped so the signed
# volume is positive for every element.
_PERMS = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))
_PERM_PARITY = (1, -1, -1, 1, 1, -1)

_EYE = np.eye(3, dtype=int)


def _shape_corners() -> np.ndarray:
    """(6,4,3) int corner offsets of the reference tetrahedra."""
    shapes = np.empty((6, 4, 3), dtype=int)
    for t, perm in enumerate(_PERMS):
        chain = [np.zeros(3, dtype=int)]
        for ax in perm:
            chain.append(chain[-1] + _EYE[ax])
        if _PERM_PARITY[t] < 0:
            chain[2], chain[3] = chain[3], chain[2]
        shapes[t] = np.stack(chain)
    return shapes


_SHAPE_CORNERS = _shape_corners()

# Quadrature on the reference tetrahedron, barycentric points and weights
# normalized to sum 1.  The 4-point rule is exact for quadratics, the
# 14-point rule for quartics; both keep every point strictly inside the
# element so integrands singular at vertices are never evaluated there.
_D2_A = 0.5854101966249685
_D2_B = 0.1381966011250105
QUAD_D2_BARY = np.array(
    [
        [_D2_A, _D2_B, _D2_B, _D2_B],
        [_D2_B, _D2_A, _D2_B, _D2_B],
        [_D2_B, _D2_B, _D2_A, _D2_B],
        [_D2_B, _D2_B, _D2_B, _D2_A],
    ]
)
QUAD_D2_W = np.full(4, 0.25)


def _perm_rows(a: float, rest: float) -> list[list[float]]:
    rows = []
    for i in range(4):
        row = [rest] * 4
        row[i] = a
        rows.append(row)
    return rows


def _pair_rows(c: float, d: float) -> list[list[float]]:
    rows = []
    for i in range(4):
        for j in range(i + 1, 4):
            row = [d] * 4
            row[i] = c
            row[j] = c
            rows.append(row)
    return rows


_B1 = 0.3108859192633005
_B2 = 0.0927352503108912
_C3 = 0.0455037041256497
QUAD_D4_BARY = np.array(
    _perm_rows(1.0 - 3.0 * _B1, _B1)
    + _perm_rows(1.0 - 3.0 * _B2, _B2)
    + _pair_rows(_C3, 0.5 - _C3)
)
QUAD_D4_W = np.array([0.1126879257180162] * 4 + [0.0734930431163619] * 4 + [0.0425460207770812] * 6)

_QUAD = {2: (QUAD_D2_BARY, QUAD_D2_W), 4: (QUAD_D4_BARY, QUAD_D4_W)}

_EPS = 1e-12


class ResolutionError(RuntimeError):
    """The requested construction needs a finer mesh than the one given."""


@dataclass(frozen=True)
class SobolevExponents:
    """Exponent bookkeeping for the dimension: 2* = 2n/(n-2), 2_* = 2n/(n+2),
    chi = n/(n-2)."""

    n: int
    two_star: float
    two_lower: float
    chi: float


def sobolev_exponents(n: int = 3) -> SobolevExponents:
    if n <= 2:
        raise ValueError("need n >= 3")
    return SobolevExponents(n, 2.0 * n / (n - 2), 2.0 * n / (n + 2), n / (n - 2.0))


# ---------------------------------------------------------------------------
# removal regions


@dataclass(frozen=True)
class Ball:
    """Closed ball removal region; radius 0 removes a single grid node."""

    center: tuple[float, float, float]
    radius: float

    def removes(self, pts: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(pts - np.asarray(self.center), axis=-1)
        return d <= self.radius + _EPS * max(1.0, self.radius)

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(pts - np.asarray(self.center), axis=-1)
        return np.abs(d - self.radius)

    def to_json(self) -> dict:
        return {"type": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class BoxRegion:
    """Closed axis-aligned box removal region."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def removes(self, pts: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo) - _EPS
        hi = np.asarray(self.hi) + _EPS
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
        outside = np.linalg.norm(gap, axis=-1)
        inside = np.min(np.minimum(pts - lo, hi - pts), axis=-1)
        return np.where(outside > 0, outside, np.abs(inside))

    def to_json(self) -> dict:
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class OutsideBall:
    """Removes everything strictly outside a closed keep-ball.  Used to carve
    ball-shaped domains out of their bounding box."""

    center: tuple[float, float, float]
    radius: float

    def removes(self, pts: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(pts - np.asarray(self.center), axis=-1)
        return d > self.radius * (1.0 + _EPS) + _EPS

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(pts - np.asarray(self.center), axis=-1)
        return np.abs(self.radius - d)

    def to_json(self) -> dict:
        return {"type": "outside_ball", "center": list(self.center), "radius": self.radius}


Region = Ball | BoxRegion | OutsideBall


def region_from_json(obj: dict) -> Region:
    kind = obj.get("type")
    if kind == "ball":
        return Ball(tuple(obj["center"]), float(obj["radius"]))
    if kind == "box":
        return BoxRegion(tuple(obj["lo"]), tuple(obj["hi"]))
    if kind == "outside_ball":
        return OutsideBall(tuple(obj["center"]), float(obj["radius"]))
    raise ValueError(f"unknown region type {kind!r}")


# ---------------------------------------------------------------------------
# mesh


@dataclass
class Mesh:
    """P1 tetrahedral mesh.  `nodes` are kept grid nodes (compact numbering),
    `elements` index into them, `boundary_nodes` is the sorted index set of
    nodes on the box faces or adjacent to removed nodes."""

    dim: int
    box: np.ndarray
    h: float
    nodes: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray
    excluded: tuple[Region, ...]
    node_distance_to_boundary: np.ndarray

    # construction metadata (absent on deserialized meshes)
    _spacing: np.ndarray | None = field(default=None, repr=False)
    _ncells: np.ndarray | None = field(default=None, repr=False)
    _grid_idx: np.ndarray | None = field(default=None, repr=False)
    _full_elem_map: np.ndarray | None = field(default=None, repr=False)
    _elem_shape: np.ndarray | None = field(default=None, repr=False)

    _cache: dict = field(default_factory=dict, repr=False)

    # -- geometry tables ----------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def is_boundary(self) -> np.ndarray:
        mask = self._cache.get("is_boundary")
        if mask is None:
            mask = np.zeros(self.n_nodes, dtype=bool)
            mask[self.boundary_nodes] = True
            self._cache["is_boundary"] = mask
        return mask

    @property
    def interior_nodes(self) -> np.ndarray:
        idx = self._cache.get("interior_nodes")
        if idx is None:
            idx = np.flatnonzero(~self.is_boundary)
            self._cache["interior_nodes"] = idx
        return idx

    @property
    def volumes(self) -> np.ndarray:
        v = self._cache.get("volumes")
        if v is None:
            x = self.nodes[self.elements]
            t = x[:, 1:] - x[:, :1]
            v = np.abs(np.linalg.det(t)) / 6.0
            self._cache["volumes"] = v
        return v

    @property
    def signed_volumes(self) -> np.ndarray:
        v = self._cache.get("signed_volumes")
        if v is None:
            x = self.nodes[self.elements]
            t = x[:, 1:] - x[:, :1]
            v = np.linalg.det(t) / 6.0
            self._cache["signed_volumes"] = v
        return v

    @property
    def barycenters(self) -> np.ndarray:
        b = self._cache.get("barycenters")
        if b is None:
            b = self.nodes[self.elements].mean(axis=1)
            self._cache["barycenters"] = b
        return b

    @property
    def basis_gradients(self) -> np.ndarray:
        """(n_elements, 4, 3) gradients of the P1 nodal basis."""
        g = self._cache.get("basis_gradients")
        if g is None:
            x = self.nodes[self.elements]
            t = np.swapaxes(x[:, 1:] - x[:, :1], 1, 2)  # columns X_i - X_0
            tinv = np.linalg.inv(t)
            g = np.empty((self.n_elements, 4, 3))
            g[:, 1:, :] = tinv
            g[:, 0, :] = -tinv.sum(axis=1)
            self._cache["basis_gradients"] = g
        return g

    def quad_points(self, degree: int = 4):
        """Physical quadrature points and weights for every element.

        Returns (points (M,K,3), weights (M,K)); weights include volumes so
        integral(f) = sum(w * f(points)).
        """
        key = ("quad", degree)
        cached = self._cache.get(key)
        if cached is None:
            bary, w = _QUAD[degree]
            x = self.nodes[self.elements]
            pts = np.einsum("kj,mjd->mkd", bary, x)
            wts = self.volumes[:, None] * w[None, :]
            cached = (pts, wts)
            self._cache[key] = cached
        return cached

    # -- point location -----------------------------------------------------

    def locate(self, pts: np.ndarray):
        """Locate points: returns (element ids, barycentric coords); id -1
        where the containing element was removed or the point is outside."""
        if self._spacing is None or self._full_elem_map is None:
            raise ValueError("point location requires a constructed mesh")
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        nc = self._ncells
        f = (pts - self.box[0]) / self._spacing
        cell = np.clip(np.floor(f).astype(int), 0, nc - 1)
        fr = np.clip(f - cell, 0.0, 1.0)
        order = np.argsort(-fr, axis=1, kind="stable")
        tet = order[:, 0] * 2 + (order[:, 1] > order[:, 2])
        flat_cell = (cell[:, 0] * nc[1] + cell[:, 1]) * nc[2] + cell[:, 2]
        full_id = flat_cell * 6 + tet
        eid = self._full_elem_map[full_id]
        g = np.take_along_axis(fr, order, axis=1)
        lam = np.empty((len(pts), 4))
        lam[:, 0] = 1.0 - g[:, 0]
        lam[:, 1] = g[:, 0] - g[:, 1]
        lam[:, 2] = g[:, 1] - g[:, 2]
        lam[:, 3] = g[:, 2]
        odd = np.isin(tet, [1, 2, 5])
        lam[odd] = lam[odd][:, [0, 1, 3, 2]]
        outside = np.any((pts < self.box[0] - _EPS) | (pts > self.box[1] + _EPS), axis=1)
        eid = np.where(outside, -1, eid)
        return eid, lam

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        obj = {
            "nodes": self.nodes.tolist(),
            "elements": self.elements.tolist(),
            "boundary_nodes": self.boundary_nodes.tolist(),
            "box": self.box.tolist(),
            "h": self.h,
        }
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def mesh_from_json(text: str) -> Mesh:
    """Rebuild a mesh from its JSON form.  Construction metadata (point
    location tables, exclusion regions) is not part of the schema, so the
    distance-to-boundary field is recomputed against the box only."""
    obj = json.loads(text)
    nodes = np.asarray(obj["nodes"], dtype=float)
    box = np.asarray(obj["box"], dtype=float)
    dist = np.minimum(
        np.min(nodes - box[0][None, :], axis=1), np.min(box[1][None, :] - nodes, axis=1)
    )
    return Mesh(
        dim=3,
        box=box,
        h=float(obj["h"]),
        nodes=nodes,
        elements=np.asarray(obj["elements"], dtype=np.int64),
        boundary_nodes=np.asarray(obj["boundary_nodes"], dtype=np.int64),
        excluded=(),
        node_distance_to_boundary=dist,
    )


def build_mesh(box, h: float, excluded=()) -> Mesh:
    """Build the Kuhn mesh of an axis-aligned box minus removal regions.

    box: ((x0,y0,z0), (x1,y1,z1)); h: target edge length.  The per-axis cell
    count is round(extent/h) (at least 1), so actual spacings stay within a
    factor 1.5 of h and all tetrahedron edges lie in [h/4, 4h].
    """
    box = np.asarray(box, dtype=float).reshape(2, 3)
    if not np.all(box[1] > box[0]):
        raise ValueError("box must have positive extent on every axis")
    if not h > 0:
        raise ValueError("target edge length must be positive")
    excluded = tuple(excluded)
    extent = box[1] - box[0]
    ncells = np.maximum(1, np.round(extent / h).astype(int))
    spacing = extent / ncells
    nx, ny, nz = ncells

    axes = [box[0][a] + spacing[a] * np.arange(ncells[a] + 1) for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    nodes_full = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    n_full = len(nodes_full)

    removed = np.zeros(n_full, dtype=bool)
    for region in excluded:
        removed |= region.removes(nodes_full)

    # full element table: cells in C order, six tetrahedra each
    cx, cy, cz = np.meshgrid(
        np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
    )
    cgrid = np.stack([cx.ravel(), cy.ravel(), cz.ravel()], axis=1)  # (C,3)
    stride = np.array([(ny + 1) * (nz + 1), nz + 1, 1])
    base = cgrid @ stride
    corner_off = _SHAPE_CORNERS @ stride  # (6,4)
    el_full = (base[:, None, None] + corner_off[None, :, :]).reshape(-1, 4)
    shape_full = np.tile(np.arange(6, dtype=np.uint8), len(cgrid))

    el_keep = ~removed[el_full].any(axis=1)
    elements_old = el_full[el_keep]
    shapes = shape_full[el_keep]
    if len(elements_old) == 0:
        raise ValueError("all elements removed; domain not resolved at this h")

    used = np.zeros(n_full, dtype=bool)
    used[elements_old.ravel()] = True

    new_index = np.full(n_full, -1, dtype=np.int64)
    new_index[used] = np.arange(used.sum())
    nodes = nodes_full[used]
    elements = new_index[elements_old]

    full_map = np.full(len(el_full), -1, dtype=np.int64)
    full_map[np.flatnonzero(el_keep)] = np.arange(len(elements))

    # boundary: box-face nodes plus kept nodes of any dropped element
    ii, jj, kk = np.unravel_index(np.arange(n_full), (nx + 1, ny + 1, nz + 1))
    on_face = (ii == 0) | (ii == nx) | (jj == 0) | (jj == ny) | (kk == 0) | (kk == nz)
    near_removed = np.zeros(n_full, dtype=bool)
    dropped = el_full[~el_keep]
    if len(dropped):
        near_removed[dropped.ravel()] = True
    boundary_full = used & (on_face | near_removed)
    boundary_nodes = np.sort(new_index[boundary_full])

    dist = np.minimum(
        np.min(nodes - box[0][None, :], axis=1), np.min(box[1][None, :] - nodes, axis=1)
    )
    for region in excluded:
        dist = np.minimum(dist, region.boundary_distance(nodes))

    grid_idx = np.stack([ii[used], jj[used], kk[used]], axis=1)

    return Mesh(
        dim=3,
        box=box,
        h=float(h),
        nodes=nodes,
        elements=elements,
        boundary_nodes=boundary_nodes,
        excluded=excluded,
        node_distance_to_boundary=dist,
        _spacing=spacing,
        _ncells=ncells,
        _grid_idx=grid_idx,
        _full_elem_map=full_map,
        _elem_shape=shapes,
    )


# Zero boundary values imposed on a jagged staircase act like a smooth
# Dirichlet sphere sitting about 0.9 grid spacings inside the outermost kept
# nodes (measured on the closed-form torsion problem at h = 1/8 and 1/16,
# residual bias < 0.1% at both).  Inflating the keep radius by that amount
# centers the effective boundary on the true sphere.
STAIRCASE_INFLATION = 0.9

# Constrained u = 1 node sets (condenser electrodes) homogenize differently:
# the jagged equipotential bulges slightly outward of the outermost
# constrained node.  Measured on the concentric-ball condenser with exact
# capacity 4*pi/(1/r - 1/R): +1.4% at h = 1/16, -0.4% at h = 1/32.
ELECTRODE_INFLATION = 0.3


def ball_mesh(radius: float, h: float, center=(0.0, 0.0, 0.0), excluded=()) -> Mesh:
    """Ball-shaped domain B(center, radius) on its bounding box.

    The keep-ball is inflated by STAIRCASE_INFLATION grid spacings so the
    effective Dirichlet boundary lands on the true sphere; an uninflated
    staircase inscribes and biases the effective radius low by O(h).
    """
    center = np.asarray(center, dtype=float)
    pad = 2 * h
    box = (center - radius - pad, center + radius + pad)
    extent = 2 * (radius + pad)
    nc = max(1, round(extent / h))
    spacing = extent / nc
    keep = OutsideBall(tuple(center), radius + STAIRCASE_INFLATION * spacing)
    return build_mesh(box, h, excluded=tuple(excluded) + (keep,))


# ---------------------------------------------------------------------------
# P1 functions


@dataclass
class FeFunction:
    """Continuous piecewise-linear function given by nodal values."""

    mesh: Mesh
    values: np.ndarray
    zero_trace: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError("values must be one scalar per mesh node")
        if self.zero_trace:
            bad = np.abs(self.values[self.mesh.boundary_nodes])
            if bad.size and bad.max() > 0:
                raise ValueError("zero_trace function has nonzero boundary values")

    def element_values(self) -> np.ndarray:
        return self.values[self.mesh.elements]

    def element_means(self) -> np.ndarray:
        return self.element_values().mean(axis=1)

    def gradient(self) -> np.ndarray:
        """(n_elements, 3) constant gradient per element."""
        return np.einsum("mj,mjd->md", self.element_values(), self.mesh.basis_gradients)

    def evaluate(self, pts: np.ndarray, fill: float = np.nan) -> np.ndarray:
        eid, lam = self.mesh.locate(pts)
        ok = eid >= 0
        out = np.full(len(lam), fill)
        if ok.any():
            nv = self.values[self.mesh.elements[eid[ok]]]
            out[ok] = np.einsum("pj,pj->p", nv, lam[ok])
        return out

    def to_json(self) -> str:
        return json.dumps(
            {"values": self.values.tolist(), "zero_trace": self.zero_trace},
            sort_keys=True,
            separators=(",", ":"),
        )


def fe_from_json(mesh: Mesh, text: str) -> FeFunction:
    obj = json.loads(text)
    return FeFunction(mesh, np.asarray(obj["values"], dtype=float), bool(obj["zero_trace"]))


def interpolate(mesh: Mesh, fn, zero_trace: bool = False) -> FeFunction:
    """Nodal interpolation of a callable fn(points (N,3)) -> (N,)."""
    vals = np.asarray(fn(mesh.nodes), dtype=float)
    if zero_trace:
        vals = vals.copy()
        vals[mesh.boundary_nodes] = 0.0
    return FeFunction(mesh, vals, zero_trace=zero_trace)


def zero_function(mesh: Mesh) -> FeFunction:
    return FeFunction(mesh, np.zeros(mesh.n_nodes), zero_trace=True)


# complete homogeneous symmetric polynomial h_m of the 4 nodal values;
# int_T u^m = V * 3! m!/(m+3)! * h_m, exact for P1 u and any integer m >= 0
def _complete_homogeneous(vals: np.ndarray, m: int) -> np.ndarray:
    h = [np.ones(vals.shape[0])] + [np.zeros(vals.shape[0]) for _ in range(m)]
    for j in range(4):
        x = vals[:, j]
        for k in range(1, m + 1):
            h[k] = h[k] + x * h[k - 1]
    return h[m]


def _p1_power_integral(mesh: Mesh, values: np.ndarray, m: int) -> float:
    """Exact integral of u^m for P1 u (m even or u of one sign elementwise is
    what callers use; the polynomial identity itself has no sign caveat)."""
    ev = values[mesh.elements]
    hm = _complete_homogeneous(ev, m)
    import math

    coeff = 6.0 * math.factorial(m) / math.factorial(m + 3)
    return float(np.sum(mesh.volumes * coeff * hm))


NORM_KINDS = ("L2", "L_two_lower", "L_two_star", "grad_L2", "Y12")


def norm(u: FeFunction, kind: str = "Y12") -> float:
    """Norms of a P1 function.

    L2, L_two_star and grad_L2 are quadrature-exact for P1 data; L_two_lower
    (exponent 6/5) is not a polynomial and uses the degree-4 rule.
    Y12 = L_two_star + grad_L2 exactly.
    """
    mesh = u.mesh
    if kind == "L2":
        return float(np.sqrt(_p1_power_integral(mesh, u.values, 2)))
    if kind == "grad_L2":
        g = u.gradient()
        return float(np.sqrt(np.sum(mesh.volumes * np.einsum("md,md->m", g, g))))
    if kind == "L_two_star":
        return float(_p1_power_integral(mesh, u.values, 6) ** (1.0 / 6.0))
    if kind == "L_two_lower":
        bary, w = _QUAD[4]
        uq = np.abs(u.element_values() @ bary.T)  # (M,K)
        val = np.sum(mesh.volumes[:, None] * w[None, :] * uq ** 1.2)
        return float(val ** (5.0 / 6.0))
    if kind == "Y12":
        return norm(u, "L_two_star") + norm(u, "grad_L2")
    raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")


def sobolev_constant_estimate(mesh: Mesh, trials: int = 24, seed: int = 0) -> float:
    """Lower bound for the embedding constant sup ||u||_{2*}/||grad u||_2 over
    zero-trace P1 functions, from seeded randomized trial fields."""
    rng = np.random.default_rng(seed)
    lo, hi = mesh.box
    extent = hi - lo
    x = mesh.nodes
    base = np.prod(np.sin(np.pi * (x - lo) / extent), axis=1)
    best = 0.0
    for _ in range(trials):
        c = lo + extent * (0.25 + 0.5 * rng.random(3))
        width = float(extent.min()) * (0.15 + 0.5 * rng.random())
        r2 = np.sum((x - c) ** 2, axis=1) / width**2
        kind = rng.integers(0, 2)
        if kind == 0:
            vals = np.maximum(0.0, 1.0 - r2) ** 2
        else:
            vals = (1.0 + r2) ** -0.5 * base
        vals = vals * (1.0 + 0.3 * rng.standard_normal() * base)
        vals[mesh.boundary_nodes] = 0.0
        u = FeFunction(mesh, vals, zero_trace=True)
        den = norm(u, "grad_L2")
        if den > 0:
            best = max(best, norm(u, "L_two_star") / den)
    return best
