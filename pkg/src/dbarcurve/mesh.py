"""Quadrature meshes on an affine algebraic curve.

The mesh is a polar grid in the z1-plane (rings x sectors), lifted to all d
sheets of the curve.  Node ids are laid out as

    node = (ring * n_theta + sector) * d + slot

so every z1-cell carries exactly d nodes.  Each node stores the Euclidean
surface-area weight of its patch (``wsurf``), the Lebesgue area of the patch
in its chart coordinate (``area_chart``), and a chart flag: coefficients of
sampled forms are stored against dzbar1/dz1 at chart-1 nodes and against
dzbar2/dz2 at chart-2 nodes (used near ramification points, where the
z1-chart degenerates).

Weights near ramification points are computed by adaptive equal-area
subsampling of the z1-cell, splitting the contribution of colliding root
pairs evenly; the area density (1 + |dz2/dz1|^2) has an integrable
singularity there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from . import poly
from .curve import CurvePoint, PlaneCurve
from .errors import (
    FrameFailure,
    KindMismatch,
    MeshError,
    RamificationCoverageFailure,
    TargetOffMesh,
)

_THETA_OFFSET = 0.5612001  # fixed irrational-ish rotation; keeps nodes off branch points


@dataclass
class SampledForm:
    """A function or form sampled at mesh nodes.

    kind:
      * ``function``: plain complex values.
      * ``form01`` / ``form10``: coefficient of dzbar/dz of the node chart.
      * ``form11``: density against the Euclidean surface weight ``wsurf``.
    """

    mesh: "CurveMesh"
    kind: str
    values: np.ndarray
    support_tag: str | None = None

    _KINDS = ("function", "form01", "form10", "form11")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise KindMismatch(f"unknown form kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.mesh.n,):
            raise KindMismatch("values must have one entry per mesh node")

    def copy(self) -> "SampledForm":
        return SampledForm(self.mesh, self.kind, self.values.copy(), self.support_tag)

    def norm2(self) -> float:
        """Mesh L2 norm (chart-free for forms, surface measure for functions)."""
        m = self.mesh
        if self.kind in ("form01", "form10"):
            return float(np.sqrt(np.sum(np.abs(self.values) ** 2 * m.area_chart)))
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2 * m.wsurf)))


def form_coeff_to_chart(mesh, values, from_chart, kind="form01"):
    """Convert per-node form coefficients between the two chart frames.

    For a (0,1)-form b*dzbar1 = b*conj(dz1/dz2)*dzbar2; for a (1,0)-form
    a*dz1 = a*(dz1/dz2)*dz2.  ``from_chart`` is 1 or 2; output is in each
    node's own chart frame.
    """
    values = np.asarray(values, dtype=complex)
    s12 = mesh.dz1_dz2  # dz1/dz2 at nodes
    s21 = mesh.dz2_dz1
    out = values.copy()
    if kind == "form01":
        j12, j21 = np.conj(s12), np.conj(s21)
    else:
        j12, j21 = s12, s21
    if from_chart == 1:
        sel = mesh.chart == 2
        out[sel] = values[sel] * j12[sel]
    elif from_chart == 2:
        sel = mesh.chart == 1
        out[sel] = values[sel] * j21[sel]
    else:
        raise ValueError("from_chart must be 1 or 2")
    return out


@dataclass
class CurveMesh:
    curve: PlaneCurve
    n_rings: int
    n_theta: int
    R: float
    rtilde: float
    ring_edges: np.ndarray  # (n_rings+1,)
    theta: np.ndarray  # (n_theta,) sector centers
    # node arrays, length n = n_rings * n_theta * d
    z1: np.ndarray
    z2: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    chart: np.ndarray
    wsurf: np.ndarray
    region_end: np.ndarray  # 0 inside V0, else end label 1..d
    params: dict = field(default_factory=dict)

    # ------------------------------------------------------------------
    @property
    def d(self) -> int:
        return self.curve.degree

    @property
    def n(self) -> int:
        return self.z1.size

    @property
    def r0(self) -> float:
        return self.curve.r0

    def node_id(self, ring, sector, slot):
        return (ring * self.n_theta + sector % self.n_theta) * self.d + slot

    @cached_property
    def ring_of(self):
        return np.repeat(np.arange(self.n_rings), self.n_theta * self.d)

    @cached_property
    def sector_of(self):
        return np.tile(np.repeat(np.arange(self.n_theta), self.d), self.n_rings)

    @cached_property
    def slot_of(self):
        return np.tile(np.arange(self.d), self.n_rings * self.n_theta)

    @cached_property
    def dz2_dz1(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -self.p1 / self.p2
        return np.where(np.isfinite(s), s, 0.0)

    @cached_property
    def dz1_dz2(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -self.p2 / self.p1
        return np.where(np.isfinite(s), s, 0.0)

    @cached_property
    def frame_s(self):
        """Derivative of the other coordinate w.r.t. the chart coordinate."""
        return np.where(self.chart == 1, self.dz2_dz1, self.dz1_dz2)

    @cached_property
    def area_chart(self):
        return self.wsurf / (1.0 + np.abs(self.frame_s) ** 2)

    @cached_property
    def chart_curvature(self):
        """|second derivative of the implicit coordinate| in the node chart.

        Differentiating P_1 + P_2 s = 0 along the chart gives
        s' = -(P_11 + 2 P_12 s + P_22 s^2) / P_2 (indices swapped in the
        z2-chart); used to mask stencil rows where the sheet bends faster
        than the grid resolves.
        """
        cu = self.curve
        p11 = poly.polyval2(poly.dz1(cu._d1), self.z1, self.z2)
        p12 = poly.polyval2(poly.dz2(cu._d1), self.z1, self.z2)
        p22 = poly.polyval2(poly.dz2(cu._d2), self.z1, self.z2)
        s = self.frame_s
        num1 = p11 + 2 * p12 * s + p22 * s**2
        num2 = p22 + 2 * p12 * s + p11 * s**2
        with np.errstate(divide="ignore", invalid="ignore"):
            c1 = np.abs(num1 / self.p2)
            c2 = np.abs(num2 / self.p1)
        out = np.where(self.chart == 1, c1, c2)
        return np.where(np.isfinite(out), out, np.inf)

    @cached_property
    def in_annulus(self):
        return (self.region_end > 0) & (np.abs(self.z1) <= self.rtilde)

    @cached_property
    def in_v0(self):
        return self.region_end == 0

    @cached_property
    def kdtree(self):
        pts = np.column_stack(
            [self.z1.real, self.z1.imag, self.z2.real, self.z2.imag]
        )
        return cKDTree(pts)

    @cached_property
    def local_scale(self):
        """Per-node linear cell size in the chart coordinate."""
        return np.sqrt(self.area_chart)

    # adjacency ---------------------------------------------------------
    @cached_property
    def _adjacency(self):
        return _build_adjacency(self)

    @property
    def perm_theta(self):
        return self._adjacency[0]

    @property
    def valid_theta(self):
        return self._adjacency[1]

    @property
    def perm_r(self):
        return self._adjacency[2]

    @property
    def valid_r(self):
        return self._adjacency[3]

    # stencils ----------------------------------------------------------
    @cached_property
    def _stencils(self):
        return _build_stencils(self)

    @property
    def dbar(self) -> sp.csr_matrix:
        """Discrete dbar: function values -> (0,1)-coefficients (node frames)."""
        return self._stencils[0]

    @property
    def dz(self) -> sp.csr_matrix:
        """Discrete d/dz: function values -> (1,0)-coefficients."""
        return self._stencils[1]

    @property
    def mask_solve(self) -> np.ndarray:
        return self._stencils[2]

    @property
    def mask_check(self) -> np.ndarray:
        return self._stencils[3]

    # phase averages ------------------------------------------------------
    def phase_average(self, lam: complex) -> np.ndarray:
        """Per-node cell averages of e_lambda = exp(lam z1 - conj(lam z1)).

        Radially exact on each polar cell, subsampled in angle; chart-2
        nodes fall back to the node value (their z1-extent is tiny).
        """
        key = complex(lam)
        cache = self.params.setdefault("_phase_cache", {})
        if key not in cache:
            cache[key] = _phase_average(self, key)
        return cache[key]

    def e_lambda(self, lam: complex) -> np.ndarray:
        return np.exp(2j * np.imag(lam * self.z1))

    # helpers -------------------------------------------------------------
    def nearest_node(self, point: CurvePoint | tuple) -> tuple[int, float]:
        z1, z2 = (point.z1, point.z2) if hasattr(point, "z1") else point
        dist, idx = self.kdtree.query([z1.real, z1.imag, z2.real, z2.imag])
        return int(idx), float(dist)

    def interpolate(self, values: np.ndarray, point, k: int = 6) -> complex:
        z1, z2 = (point.z1, point.z2) if hasattr(point, "z1") else point
        dist, idx = self.kdtree.query([z1.real, z1.imag, z2.real, z2.imag], k=k)
        dist = np.atleast_1d(dist)
        idx = np.atleast_1d(idx)
        if dist[0] < 1e-12:
            return complex(values[idx[0]])
        w = 1.0 / dist**2
        return complex(np.sum(w * values[idx]) / np.sum(w))

    def laurent_fit(self, values: np.ndarray, end: int, n_terms: int = 5):
        """Fit values ~ sum_k c_k z1^{-k} on the outer two rings of an end."""
        from .errors import MissingLaurentData

        sel = (self.region_end == end) & (self.ring_of >= self.n_rings - 2)
        if np.count_nonzero(sel) < 2 * n_terms:
            raise MissingLaurentData(f"end {end}: {np.count_nonzero(sel)} nodes")
        z = self.z1[sel]
        A = np.stack([z ** (-k) for k in range(n_terms)], axis=1)
        coef, *_ = np.linalg.lstsq(A, values[sel], rcond=None)
        return coef

    def end_limit_row(self, end: int, n_terms: int = 4) -> np.ndarray:
        """Row functional extracting the z1 -> inf limit on one end."""
        sel = (self.region_end == end) & (self.ring_of >= self.n_rings - 2)
        idx = np.nonzero(sel)[0]
        z = self.z1[idx]
        A = np.stack([z ** (-k) for k in range(n_terms)], axis=1)
        # limit = e_0^T pinv(A) restricted to the selected nodes
        piA = np.linalg.pinv(A)
        row = np.zeros(self.n, dtype=complex)
        row[idx] = piA[0]
        return row


# ---------------------------------------------------------------------------
# mesh construction
# ---------------------------------------------------------------------------


def build_mesh(
    curve: PlaneCurve,
    n_inner: int = 8,
    n_outer: int = 12,
    n_theta: int = 32,
    R: float = 6.0,
    rtilde: float | None = None,
    ram_subsample: int = 48,
    coverage_tol: float = 5e-2,
) -> CurveMesh:
    """Build the polar quadrature mesh covering V intersect {|z1| <= R}."""
    if R <= curve.r0:
        raise MeshError("truncation radius R must exceed r0")
    rtilde = 2.0 * curve.r0 if rtilde is None else float(rtilde)
    if not (curve.r0 < rtilde <= R):
        raise MeshError("need r0 < rtilde <= R")
    d = curve.degree
    inner = np.linspace(0.0, curve.r0, n_inner + 1)
    ratio = (R / curve.r0) ** (1.0 / n_outer)
    outer = curve.r0 * ratio ** np.arange(1, n_outer + 1)
    edges = np.concatenate([inner, outer])
    n_rings = n_inner + n_outer
    centers = 0.5 * (edges[:-1] + edges[1:])
    theta = _THETA_OFFSET + 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
    dtheta = 2 * np.pi / n_theta

    n_cells = n_rings * n_theta
    z1c = centers[:, None] * np.exp(1j * theta[None, :])

    z1 = np.empty(n_cells * d, dtype=complex)
    z2 = np.empty(n_cells * d, dtype=complex)
    wsurf = np.empty(n_cells * d, dtype=float)

    branch = curve.ramification_points[:, 0] if len(curve.ramification_points) else np.zeros(0)

    for i in range(n_rings):
        ra, rb = edges[i], edges[i + 1]
        base_area = dtheta * (rb**2 - ra**2) / 2.0
        for j in range(n_theta):
            cell = i * n_theta + j
            zc = z1c[i, j]
            roots = np.sort_complex(poly.roots_z2(curve.coeffs, zc))
            ext = max(rb - ra, centers[i] * dtheta)
            dmin = (
                float(np.min(np.abs(branch - zc))) if branch.size else np.inf
            )
            if dmin < 2.5 * ext:
                ns = ram_subsample if dmin < 1.2 * ext else max(ram_subsample // 4, 8)
                w = _subsampled_weights(
                    curve, roots, ra, rb, theta[j], dtheta, ns, base_area,
                    check=dmin < 1.2 * ext, coverage_tol=coverage_tol,
                )
            else:
                s = -curve.p_z1(zc, roots) / curve.p_z2(zc, roots)
                w = base_area * (1.0 + np.abs(s) ** 2)
            lo = cell * d
            z1[lo : lo + d] = zc
            z2[lo : lo + d] = roots
            wsurf[lo : lo + d] = w

    p1 = curve.p_z1(z1, z2)
    p2 = curve.p_z2(z1, z2)
    scale = np.max(np.abs(curve.coeffs))
    bad = np.maximum(np.abs(p1), np.abs(p2)) < 1e-10 * scale * (
        1 + np.abs(z1) + np.abs(z2)
    ) ** max(d - 1, 0)
    if np.any(bad):
        raise FrameFailure("gradient of P below tolerance at a mesh node")
    chart = np.where(np.abs(p2) >= 0.35 * np.abs(p1), 1, 2).astype(np.uint8)

    region = _end_regions(curve, z1, z2, centers, n_theta, d)

    mesh = CurveMesh(
        curve=curve,
        n_rings=n_rings,
        n_theta=n_theta,
        R=R,
        rtilde=rtilde,
        ring_edges=edges,
        theta=theta,
        z1=z1,
        z2=z2,
        p1=p1,
        p2=p2,
        chart=chart,
        wsurf=wsurf,
        region_end=region,
        params={
            "n_inner": n_inner,
            "n_outer": n_outer,
            "ram_subsample": ram_subsample,
        },
    )
    return mesh


def _subsampled_weights(curve, roots, ra, rb, th, dtheta, ns, base_area, check, coverage_tol):
    """Adaptive equal-area subsampling of one cell's surface-area weights."""
    d = len(roots)
    totals = {}
    for n_sub in ([ns // 2, ns] if check else [ns]):
        r2 = np.linspace(ra**2, rb**2, n_sub + 1)
        rs = np.sqrt(0.5 * (r2[:-1] + r2[1:]))
        ts = th - dtheta / 2 + dtheta * (np.arange(n_sub) + 0.5) / n_sub
        zz = (rs[:, None] * np.exp(1j * ts[None, :])).ravel()
        acc = np.zeros(d)
        cnt = np.zeros(d)
        gap = _min_gap(roots)
        for zs in zz:
            rr = poly.roots_z2(curve.coeffs, zs)
            s = -curve.p_z1(zs, rr) / curve.p_z2(zs, rr)
            f = 1.0 + np.abs(s) ** 2
            cost = np.abs(roots[:, None] - rr[None, :])
            ri, ci = linear_sum_assignment(cost)
            fk = np.empty(d)
            fk[ri] = f[ci]
            # pool colliding clusters: ambiguous assignments share the mean
            if d > 1:
                pooled = _pool_clusters(roots, fk, 0.2 * gap + 1e-12)
                fk = pooled
            acc += fk
            cnt += 1.0
        w = base_area * acc / np.maximum(cnt, 1)
        totals[n_sub] = w
    if check and len(totals) == 2:
        w_lo, w_hi = totals[ns // 2], totals[ns]
        rel = abs(w_lo.sum() - w_hi.sum()) / max(w_hi.sum(), 1e-300)
        if rel > coverage_tol:
            raise RamificationCoverageFailure(
                f"cell weight changed {rel:.2%} between subsample depths"
            )
    return totals[ns]


def _min_gap(roots):
    if len(roots) < 2:
        return np.inf
    dm = np.abs(roots[:, None] - roots[None, :]) + np.eye(len(roots)) * 1e18
    return float(dm.min())


def _pool_clusters(roots, fk, thr):
    d = len(roots)
    out = fk.astype(float).copy()
    used = np.zeros(d, bool)
    for a in range(d):
        if used[a]:
            continue
        cluster = [a]
        for b in range(a + 1, d):
            if abs(roots[a] - roots[b]) < thr:
                cluster.append(b)
        if len(cluster) > 1:
            m = np.mean(out[cluster])
            for c in cluster:
                out[c] = m
                used[c] = True
    return out


def _end_regions(curve, z1, z2, centers, n_theta, d):
    """Label nodes: 0 inside V0, else the end index of their component."""
    from .curve import end_labels_at

    n_rings = len(centers)
    region = np.zeros(n_rings * n_theta * d, dtype=int)
    outside = np.nonzero(centers > curve.r0)[0]
    if len(outside) == 0:
        return region
    # label outermost ring by continuation to a large radius
    labels = np.empty((n_rings, n_theta, d), dtype=int)
    labels.fill(-1)
    i_top = n_rings - 1
    for j in range(n_theta):
        lo = (i_top * n_theta + j) * d
        rr = z2[lo : lo + d]
        labels[i_top, j] = end_labels_at(curve, z1[lo], rr)
    # propagate inward by nearest-root matching
    for i in range(n_rings - 2, outside[0] - 1, -1):
        for j in range(n_theta):
            lo = (i * n_theta + j) * d
            hi = ((i + 1) * n_theta + j) * d
            cost = np.abs(z2[lo : lo + d][:, None] - z2[hi : hi + d][None, :])
            ri, ci = linear_sum_assignment(cost)
            lab = np.empty(d, dtype=int)
            lab[ri] = labels[i + 1, j][ci]
            labels[i, j] = lab
    for i in outside:
        for j in range(n_theta):
            lo = (i * n_theta + j) * d
            region[lo : lo + d] = labels[i, j]
    return region


# ---------------------------------------------------------------------------
# adjacency and stencils
# ---------------------------------------------------------------------------


def _cell_roots(mesh, ring, sector):
    lo = (ring * mesh.n_theta + sector % mesh.n_theta) * mesh.d
    return mesh.z2[lo : lo + mesh.d]


def _build_adjacency(mesh: CurveMesh):
    nr, nt, d = mesh.n_rings, mesh.n_theta, mesh.d
    perm_t = np.zeros((nr, nt, d), dtype=int)
    valid_t = np.zeros((nr, nt), dtype=bool)
    perm_r = np.zeros((nr, nt, d), dtype=int)
    valid_r = np.zeros((nr, nt), dtype=bool)
    for i in range(nr):
        for j in range(nt):
            a = _cell_roots(mesh, i, j)
            b = _cell_roots(mesh, i, j + 1)
            perm_t[i, j], valid_t[i, j] = _match(a, b)
            if i + 1 < nr:
                c = _cell_roots(mesh, i + 1, j)
                perm_r[i, j], valid_r[i, j] = _match(a, c)
    return perm_t, valid_t, perm_r, valid_r


def _match(a, b):
    d = len(a)
    if d == 1:
        return np.zeros(1, dtype=int), True
    cost = np.abs(a[:, None] - b[None, :])
    ri, ci = linear_sum_assignment(cost)
    perm = np.empty(d, dtype=int)
    perm[ri] = ci
    sep = min(_min_gap(a), _min_gap(b))
    ok = bool(cost[ri, ci].max() < 0.45 * sep)
    return perm, ok


def _invert_perm(p):
    q = np.empty_like(p)
    q[p] = np.arange(len(p))
    return q


def _build_stencils(mesh: CurveMesh):
    nr, nt, d = mesh.n_rings, mesh.n_theta, mesh.d
    n = mesh.n
    centers = 0.5 * (mesh.ring_edges[:-1] + mesh.ring_edges[1:])
    dtheta = 2 * np.pi / nt
    perm_t, valid_t, perm_r, valid_r = mesh._adjacency

    rows, cols, vals_db, vals_dz = [], [], [], []
    mask_solve = np.zeros(n, dtype=bool)
    mask_check = np.zeros(n, dtype=bool)
    scatter_nodes = []

    for i in range(nr):
        for j in range(nt):
            for k in range(d):
                node = mesh.node_id(i, j, k)
                if mesh.chart[node] == 2:
                    scatter_nodes.append(node)
                    continue
                jp, jm = (j + 1) % nt, (j - 1) % nt
                ok_t = valid_t[i, j] and valid_t[i, jm]
                kp_t = perm_t[i, j][k]
                km_t = _invert_perm(perm_t[i, jm])[k]
                n_tp = mesh.node_id(i, jp, kp_t)
                n_tm = mesh.node_id(i, jm, km_t)
                has_rp = i + 1 < nr and valid_r[i, j]
                has_rm = i - 1 >= 0 and valid_r[i - 1, j]
                if not ok_t or not (has_rp or has_rm):
                    scatter_nodes.append(node)
                    continue
                th = mesh.theta[j]
                r = centers[i]
                # radial derivative weights
                if has_rp and has_rm:
                    kp_r = perm_r[i, j][k]
                    km_r = _invert_perm(perm_r[i - 1, j])[k]
                    n_rp = mesh.node_id(i + 1, j, kp_r)
                    n_rm = mesh.node_id(i - 1, j, km_r)
                    a = centers[i] - centers[i - 1]
                    b = centers[i + 1] - centers[i]
                    w_m, w_0, w_p = (
                        -b / (a * (a + b)),
                        (b - a) / (a * b),
                        a / (b * (a + b)),
                    )
                    r_entries = [(n_rm, w_m), (node, w_0), (n_rp, w_p)]
                    central = True
                elif has_rp:
                    kp_r = perm_r[i, j][k]
                    n_rp = mesh.node_id(i + 1, j, kp_r)
                    b = centers[i + 1] - centers[i]
                    r_entries = [(node, -1.0 / b), (n_rp, 1.0 / b)]
                    central = False
                else:
                    km_r = _invert_perm(perm_r[i - 1, j])[k]
                    n_rm = mesh.node_id(i - 1, j, km_r)
                    a = centers[i] - centers[i - 1]
                    r_entries = [(n_rm, -1.0 / a), (node, 1.0 / a)]
                    central = False
                t_entries = [(n_tm, -1.0 / (2 * dtheta)), (n_tp, 1.0 / (2 * dtheta))]
                phase = np.exp(1j * th)
                for nb, w in r_entries:
                    rows.append(node)
                    cols.append(nb)
                    vals_db.append(0.5 * phase * w)
                    vals_dz.append(0.5 * np.conj(phase) * w)
                for nb, w in t_entries:
                    rows.append(node)
                    cols.append(nb)
                    vals_db.append(0.5 * phase * (1j / r) * w)
                    vals_dz.append(0.5 * np.conj(phase) * (-1j / r) * w)
                mask_solve[node] = True
                # strict-check rows: central stencils where the sheet bends
                # slower than the grid resolves
                bend = mesh.chart_curvature[node] * mesh.local_scale[node]
                mask_check[node] = central and bend <= 0.25
    # scattered least-squares stencils (chart-2 and irregular nodes)
    sc_rows, sc_cols, sc_db, sc_dz, ok_nodes = _scatter_stencils(mesh, scatter_nodes)
    rows += sc_rows
    cols += sc_cols
    vals_db += sc_db
    vals_dz += sc_dz
    mask_solve[ok_nodes] = True

    dbar = sp.csr_matrix(
        (np.array(vals_db), (np.array(rows), np.array(cols))), shape=(n, n)
    )
    dz = sp.csr_matrix(
        (np.array(vals_dz), (np.array(rows), np.array(cols))), shape=(n, n)
    )
    return dbar, dz, mask_solve, mask_check


def _scatter_stencils(mesh: CurveMesh, nodes, k_neighbors=10):
    """Weighted quadratic fits in the node chart for irregular nodes."""
    rows, cols, vdb, vdz, ok = [], [], [], [], []
    if not nodes:
        return rows, cols, vdb, vdz, ok
    tree = mesh.kdtree
    pts = np.column_stack(
        [mesh.z1.real, mesh.z1.imag, mesh.z2.real, mesh.z2.imag]
    )
    for node in nodes:
        dist, idx = tree.query(pts[node], k=k_neighbors + 1)
        idx = np.atleast_1d(idx)
        nb = [int(q) for q in idx if q != node]
        if len(nb) < 6:
            continue
        if mesh.chart[node] == 1:
            zeta = mesh.z1[nb] - mesh.z1[node]
        else:
            zeta = mesh.z2[nb] - mesh.z2[node]
        scale = np.max(np.abs(zeta))
        if scale < 1e-14:
            continue
        zt = zeta / scale
        A = np.column_stack(
            [
                np.ones(len(nb)),
                zt,
                np.conj(zt),
                zt**2,
                zt * np.conj(zt),
                np.conj(zt) ** 2,
            ]
        )
        w = 1.0 / (np.abs(zt) + 0.3)
        Aw = A * w[:, None]
        try:
            piA = np.linalg.pinv(Aw, rcond=1e-8)
        except np.linalg.LinAlgError:
            continue
        # F(zeta) ~ c0 + c1 zeta + c2 zetabar + ...; the node itself anchors c0
        # fit on differences F(nb) - F(node) so the constant column drops out
        row_dz = piA[1] * w / scale
        row_db = piA[2] * w / scale
        rows.extend([node] * (len(nb) + 1))
        cols.extend(nb + [node])
        vdb.extend(list(row_db) + [-row_db.sum()])
        vdz.extend(list(row_dz) + [-row_dz.sum()])
        ok.append(node)
    return rows, cols, vdb, vdz, ok


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


def integrate(mesh: CurveMesh, form: SampledForm) -> complex:
    """Integral of a (1,1)-form given as density against the area weight."""
    if form.kind != "form11":
        raise KindMismatch("integrate expects a form11 density")
    return complex(np.sum(form.values * mesh.wsurf))


def singular_integrate(mesh: CurveMesh, kernel_evaluator, target) -> complex:
    """Quadrature of a kernel with at most a 1/|xi - z| pole at the target.

    The singular self-cell is dropped: the leading Cauchy-type term
    integrates to zero over a centered disk of equal area, and the smooth
    remainder contributes O(cell) there.
    """
    if isinstance(target, (int, np.integer)):
        self_idx = int(target)
    else:
        self_idx, dist = mesh.nearest_node(target)
        if dist > 3.0 * mesh.local_scale[self_idx] + 1e-12:
            raise TargetOffMesh(f"target {target} is {dist:.3g} from the mesh")
    vals = np.asarray(kernel_evaluator(mesh), dtype=complex)
    w = mesh.wsurf.copy()
    w[self_idx] = 0.0
    vals = np.where(np.isfinite(vals), vals, 0.0)
    return complex(np.sum(vals * w))


def tail_estimate(mesh: CurveMesh, magnitudes: np.ndarray) -> float:
    """Geometric extrapolation of |integrand| mass beyond the last ring."""
    i_last, i_prev = mesh.n_rings - 1, mesh.n_rings - 2
    s_last = float(np.sum(magnitudes[mesh.ring_of == i_last] * mesh.wsurf[mesh.ring_of == i_last]))
    s_prev = float(np.sum(magnitudes[mesh.ring_of == i_prev] * mesh.wsurf[mesh.ring_of == i_prev]))
    if s_last <= 0 or s_prev <= 0:
        return 0.0
    q = min(s_last / s_prev, 0.95)
    return s_last * q / (1.0 - q)


# ---------------------------------------------------------------------------
# oscillatory phase averages
# ---------------------------------------------------------------------------


def _radial_phase_integral(kappa, ra, rb):
    """int_ra^rb exp(i kappa r) r dr, exact, vectorized over kappa."""
    kappa = np.asarray(kappa, dtype=float)
    out = np.empty(kappa.shape, dtype=complex)
    small = np.abs(kappa) * (rb - ra) < 1e-6
    k = np.where(small, 1.0, kappa)
    eb = np.exp(1j * k * rb)
    ea = np.exp(1j * k * ra)
    out = eb * (-1j * rb / k + 1.0 / k**2) - ea * (-1j * ra / k + 1.0 / k**2)
    if np.any(small):
        ks = kappa[small]
        out[small] = (rb**2 - ra**2) / 2 + 1j * ks * (rb**3 - ra**3) / 3
    return out


def _phase_average(mesh: CurveMesh, lam: complex) -> np.ndarray:
    nr, nt, d = mesh.n_rings, mesh.n_theta, mesh.d
    dtheta = 2 * np.pi / nt
    edges = mesh.ring_edges
    amp, arg = 2.0 * abs(lam), np.angle(lam)
    p_cell = np.empty((nr, nt), dtype=complex)
    for i in range(nr):
        ra, rb = edges[i], edges[i + 1]
        area = dtheta * (rb**2 - ra**2) / 2
        n_s = int(np.clip(np.ceil(amp * rb * dtheta / 0.25), 2, 1024))
        loc = (np.arange(n_s) + 0.5) / n_s - 0.5
        ths = mesh.theta[:, None] + dtheta * loc[None, :]
        kappa = amp * np.sin(ths + arg)
        I = _radial_phase_integral(kappa.ravel(), ra, rb).reshape(nt, n_s)
        p_cell[i] = I.mean(axis=1) * dtheta / area
    p = np.repeat(p_cell.reshape(-1), d)
    ch2 = mesh.chart == 2
    if np.any(ch2):
        p[ch2] = mesh.e_lambda(lam)[ch2]
    return p
