"""Plane algebraic curves V = {P(z1, z2) = 0} and their validated data.

A curve enters the numerical pipeline only after :func:`validate_curve`
checks the three structural requirements:

  i)   the projective closure meets the line at infinity transversally in
       d distinct points, none of them in the vertical direction (so the
       z2-degree equals the total degree and every end is a graph over z1);
  ii)  the ratio |dP/dz1| / |dP/dz2| stays bounded on |z1| >= r0, so the
       projection to z1 is a clean d-sheeted covering outside a disk;
  iii) every ramification point of that projection is simple
       (d2P/dz2^2 != 0 there).

The genus of the compactified curve is (d-1)(d-2)/2 and the projection has
exactly d(d-1) simple ramification points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import poly
from .errors import (
    IllConditionedGram,
    InfinityTangency,
    NearRamification,
    NonSimpleRamification,
    SingularCurve,
)


@dataclass(frozen=True)
class CurvePoint:
    """A point on V with optional sheet label and preferred chart."""

    z1: complex
    z2: complex
    sheet_index: int = -1
    chart: int = 1  # 1: parametrized by z1, 2: by z2


@dataclass
class HeferPair:
    """Polynomial pair Q = (Q1, Q2) with P(xi) - P(z) = <Q(xi, z), xi - z>.

    Q1 is stored as q1[a, b, j] multiplying xi1**a * z1**b * xi2**j and
    Q2 as q2[i, a, b] multiplying z1**i * xi2**a * z2**b, the telescoping
    divided-difference construction.  On the diagonal Q(xi, xi) equals the
    gradient of P.
    """

    q1: np.ndarray
    q2: np.ndarray

    def eval(self, xi1, xi2, z1, z2):
        xi1, xi2, z1, z2 = np.broadcast_arrays(
            *map(lambda a: np.asarray(a, dtype=complex), (xi1, xi2, z1, z2))
        )
        q1 = np.zeros(xi1.shape, dtype=complex)
        A, B, J = self.q1.shape
        xi1p = _powers(xi1, A)
        z1p = _powers(z1, max(B, self.q2.shape[0]))
        xi2p = _powers(xi2, max(J, self.q2.shape[1]))
        z2p = _powers(z2, self.q2.shape[2])
        for a in range(A):
            for b in range(B):
                row = self.q1[a, b]
                if not row.any():
                    continue
                q1 += xi1p[a] * z1p[b] * (row @ xi2p[:J])
        q2 = np.zeros(xi1.shape, dtype=complex)
        I, A2, B2 = self.q2.shape
        for i in range(I):
            for a in range(A2):
                row = self.q2[i, a]
                if not row.any():
                    continue
                q2 += z1p[i] * xi2p[a] * (row @ z2p[:B2])
        return q1, q2


def _powers(x, n):
    out = np.empty((max(n, 1),) + x.shape, dtype=complex)
    out[0] = 1.0
    for k in range(1, max(n, 1)):
        out[k] = out[k - 1] * x
    return out


@dataclass
class PlaneCurve:
    """Validated affine plane curve of degree d."""

    coeffs: np.ndarray
    degree: int
    genus: int
    r0: float
    infinity_directions: np.ndarray  # d complex slopes alpha_j (z2 ~ alpha_j z1)
    ramification_points: np.ndarray  # (m, 2) complex, m = d(d-1)
    validation_tol: float
    ratio_bound: float  # sampled sup |P_z1 / P_z2| on |z1| = r0
    _d1: np.ndarray = field(repr=False, default=None)
    _d2: np.ndarray = field(repr=False, default=None)
    _d22: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self._d1 is None:
            object.__setattr__(self, "_d1", poly.dz1(self.coeffs))
        if self._d2 is None:
            object.__setattr__(self, "_d2", poly.dz2(self.coeffs))
        if self._d22 is None:
            object.__setattr__(self, "_d22", poly.dz2(poly.dz2(self.coeffs)))

    # point evaluation ---------------------------------------------------
    def p(self, z1, z2):
        return poly.polyval2(self.coeffs, z1, z2)

    def p_z1(self, z1, z2):
        return poly.polyval2(self._d1, z1, z2)

    def p_z2(self, z1, z2):
        return poly.polyval2(self._d2, z1, z2)

    def p_z2z2(self, z1, z2):
        return poly.polyval2(self._d22, z1, z2)

    def on_curve_tol(self, z1, z2):
        z = np.hypot(np.abs(np.asarray(z1)), np.abs(np.asarray(z2)))
        return self.validation_tol * (1.0 + z) ** self.degree * self._coeff_scale()

    def _coeff_scale(self):
        return max(np.max(np.abs(self.coeffs)), 1.0)

    def roots(self, z1):
        return poly.roots_z2(self.coeffs, z1)


def validate_curve(
    poly_coeffs,
    validation_tol: float = 1e-9,
    min_r0: float = 1.0,
    r0_override: float | None = None,
) -> PlaneCurve:
    """Validate P and return a :class:`PlaneCurve`.

    Raises :class:`InfinityTangency`, :class:`SingularCurve` or
    :class:`NonSimpleRamification` when the structural conditions fail.
    """
    c = poly.trim(poly_coeffs, rel_tol=1e-14)
    d = poly.total_degree(c)
    if d < 1:
        raise ValueError("polynomial must have degree >= 1")
    scale = np.max(np.abs(c))

    # Leading form roots: ell(alpha) = sum_{i+j=d} c[i,j] alpha^j.
    lead = np.zeros(d + 1, dtype=complex)
    for j in range(d + 1):
        i = d - j
        if i < c.shape[0] and j < c.shape[1]:
            lead[j] = c[i, j]
    if abs(lead[d]) <= 1e-12 * scale:
        raise InfinityTangency(
            "leading form has a root in the vertical direction; "
            "ends are not graphs over z1"
        )
    alphas = np.polynomial.polynomial.polyroots(lead)
    if d > 1:
        sep = np.min(
            np.abs(alphas[:, None] - alphas[None, :])
            + np.eye(d) * (1.0 + np.max(np.abs(alphas)))
        )
        if sep <= 1e-6 * (1.0 + np.max(np.abs(alphas))):
            raise InfinityTangency("leading form has a repeated projective root")
    alphas = alphas[np.lexsort((alphas.imag, alphas.real))]

    ram = _ramification_points(c, d, scale)
    for z1r, z2r in ram:
        if abs(poly.polyval2(poly.dz1(c), z1r, z2r)) <= 1e-7 * scale * (
            1.0 + abs(z1r) + abs(z2r)
        ) ** max(d - 1, 0):
            raise SingularCurve(
                f"gradient of P vanishes on V near ({z1r:.4g}, {z2r:.4g})"
            )
        if abs(poly.polyval2(poly.dz2(poly.dz2(c)), z1r, z2r)) <= 1e-7 * scale * (
            1.0 + abs(z1r) + abs(z2r)
        ) ** max(d - 2, 0):
            raise NonSimpleRamification(
                f"d2P/dz2^2 vanishes at ramification point ({z1r:.4g}, {z2r:.4g})"
            )
    if len(ram) != d * (d - 1):
        raise NonSimpleRamification(
            f"found {len(ram)} ramification points, expected {d * (d - 1)}"
        )

    max_branch = max((abs(z1r) for z1r, _ in ram), default=0.0)
    r0 = 1.1 * max(min_r0, max_branch / 0.9)
    if r0_override is not None:
        if max_branch >= 0.9 * r0_override:
            raise ValueError("r0 override does not enclose the ramification set")
        r0 = float(r0_override)

    ratio = _ratio_bound(c, d, r0)

    return PlaneCurve(
        coeffs=c,
        degree=d,
        genus=(d - 1) * (d - 2) // 2,
        r0=r0,
        infinity_directions=alphas,
        ramification_points=np.array(ram, dtype=complex).reshape(-1, 2),
        validation_tol=validation_tol,
        ratio_bound=ratio,
    )


def _ramification_points(c, d, scale):
    """Common zeros of (P, dP/dz2) via a sampled resultant in z1."""
    cd2 = poly.dz2(c)
    if poly.total_degree(cd2) < 0 or np.max(np.abs(cd2)) == 0 or d == 1:
        return []
    deg_bound = 2 * d * d
    radius = 4.0
    for _ in range(6):
        m = 2 * deg_bound + 17
        th = 2.0 * np.pi * np.arange(m) / m
        zs = radius * np.exp(1j * th)
        vals = np.empty(m, dtype=complex)
        for k, z1s in enumerate(zs):
            co = poly.z2_coeffs_at(c, z1s).ravel()
            rr = np.polynomial.polynomial.polyroots(co)
            vals[k] = co[-1] ** (max(d - 1, 0)) * np.prod(
                poly.polyval2(cd2, z1s, rr)
            )
        # least-squares Vandermonde fit on the circle
        V = np.vander(zs, deg_bound + 1, increasing=True)
        co_res, *_ = np.linalg.lstsq(V, vals, rcond=None)
        mag = np.abs(co_res)
        if mag.max() == 0:
            return []
        co_res[mag < 1e-11 * mag.max()] = 0.0
        nz = np.nonzero(co_res)[0]
        res_roots = np.polynomial.polynomial.polyroots(co_res[: nz[-1] + 1])
        if len(res_roots) == 0 or np.max(np.abs(res_roots)) < 0.8 * radius:
            break
        radius *= 2.0
    pts = []
    for b in res_roots:
        ys = poly.roots_z2(c, b)
        d2v = np.abs(poly.polyval2(cd2, b, ys))
        # loose candidate filter; Newton refinement + verification follows
        for y in ys[d2v < 1e3 * max(d2v.min(), 1e-300)]:
            z1r, z2r = _refine_ramification(c, b, y)
            sz = scale * (1.0 + abs(z1r) + abs(z2r)) ** d
            if (
                abs(poly.polyval2(c, z1r, z2r)) < 1e-9 * sz
                and abs(poly.polyval2(cd2, z1r, z2r)) < 1e-9 * sz
            ):
                pts.append((z1r, z2r))
    # dedupe clusters
    out = []
    for p in pts:
        if all(abs(p[0] - q[0]) + abs(p[1] - q[1]) > 1e-6 * (1 + abs(p[0])) for q in out):
            out.append(p)
    return out


def _refine_ramification(c, z1, z2, steps=8):
    """Newton iteration on the system (P, dP/dz2) = 0."""
    cd1, cd2 = poly.dz1(c), poly.dz2(c)
    cd12, cd22 = poly.dz2(cd1), poly.dz2(cd2)
    for _ in range(steps):
        f = np.array(
            [poly.polyval2(c, z1, z2), poly.polyval2(cd2, z1, z2)], dtype=complex
        )
        J = np.array(
            [
                [poly.polyval2(cd1, z1, z2), poly.polyval2(cd2, z1, z2)],
                [poly.polyval2(cd12, z1, z2), poly.polyval2(cd22, z1, z2)],
            ],
            dtype=complex,
        )
        try:
            dz = np.linalg.solve(J, f)
        except np.linalg.LinAlgError:
            break
        z1, z2 = z1 - dz[0], z2 - dz[1]
        if np.max(np.abs(dz)) < 1e-14 * (1 + abs(z1) + abs(z2)):
            break
    return complex(z1), complex(z2)


def _ratio_bound(c, d, r0, n_samples=96):
    cd1, cd2 = poly.dz1(c), poly.dz2(c)
    th = 2 * np.pi * (np.arange(n_samples) + 0.37) / n_samples
    worst = 0.0
    for z1s in r0 * np.exp(1j * th):
        rr = poly.roots_z2(c, z1s)
        p1 = poly.polyval2(cd1, z1s, rr)
        p2 = poly.polyval2(cd2, z1s, rr)
        worst = max(worst, float(np.max(np.abs(p1) / np.maximum(np.abs(p2), 1e-300))))
    return worst


def sheets_at(curve: PlaneCurve, z1: complex, guard: bool = True) -> list[CurvePoint]:
    """The d points of V over z1, with stable end labels when |z1| >= r0.

    Raises :class:`NearRamification` when two roots are closer than the
    separation threshold 1e-6 * (1 + |z1|); callers must switch to the
    z2-chart in that regime.
    """
    r = curve.roots(z1)
    if guard and curve.degree > 1:
        sep = np.min(
            np.abs(r[:, None] - r[None, :]) + np.eye(len(r)) * (1 + np.max(np.abs(r)))
        )
        if sep < 1e-6 * (1.0 + abs(z1)):
            raise NearRamification(
                f"sheet separation {sep:.3g} below threshold at z1 = {z1:.6g}"
            )
    if abs(z1) >= curve.r0:
        labels = end_labels_at(curve, z1, r)
    else:
        labels = -np.ones(len(r), dtype=int)
    order = np.argsort(labels) if labels[0] >= 0 else np.lexsort((r.imag, r.real))
    p2 = curve.p_z2(z1, r)
    p1 = curve.p_z1(z1, r)
    return [
        CurvePoint(
            complex(z1),
            complex(r[k]),
            int(labels[k]),
            1 if abs(p2[k]) >= 0.35 * abs(p1[k]) else 2,
        )
        for k in order
    ]


def end_labels_at(curve: PlaneCurve, z1: complex, roots: np.ndarray) -> np.ndarray:
    """Match roots over z1 (|z1| >= r0) to ends by continuation from afar.

    Ends are labeled 1..d following the sorted asymptotic directions, with
    label 1 reassigned to the end that continues, along the positive real
    ray from the base point 2*r0, the root with the largest real part.
    """
    far = _continue_roots(curve, z1, roots, 40.0 * curve.r0)
    slopes = far / (40.0 * curve.r0 * z1 / abs(z1))
    base = np.argmin(
        np.abs(slopes[:, None] - curve.infinity_directions[None, :]), axis=1
    )
    perm = _v1_relabel(curve)
    return perm[base]


_V1_CACHE: dict[int, np.ndarray] = {}


def _v1_relabel(curve: PlaneCurve) -> np.ndarray:
    """Permutation sending sorted-direction indices to end labels 1..d."""
    key = id(curve)
    if key not in _V1_CACHE:
        d = curve.degree
        base_z1 = 2.0 * curve.r0
        r = curve.roots(base_z1)
        k = int(np.argmax(r.real + 1e-9 * r.imag))
        far = _continue_roots(curve, base_z1, r, 40.0 * curve.r0)
        slopes = far / (40.0 * curve.r0)
        dir_idx = np.argmin(
            np.abs(slopes[:, None] - curve.infinity_directions[None, :]), axis=1
        )
        v1_dir = dir_idx[k]
        perm = np.empty(d, dtype=int)
        perm[v1_dir] = 1
        nxt = 2
        for j in range(d):
            if j != v1_dir:
                perm[j] = nxt
                nxt += 1
        _V1_CACHE[key] = perm
    return _V1_CACHE[key]


def _continue_roots(curve, z1_from, roots_from, r_to, n_steps=24):
    """Track the root tuple radially outward from z1_from to radius r_to."""
    t = np.linspace(0.0, 1.0, n_steps + 1)[1:]
    phase = z1_from / abs(z1_from)
    radii = np.exp(np.log(abs(z1_from)) + t * (np.log(r_to) - np.log(abs(z1_from))))
    cur = roots_from.copy()
    for rr in radii:
        z1n = phase * rr
        nxt = curve.roots(z1n)
        cost = np.abs(cur[:, None] - nxt[None, :])
        ri, ci = linear_sum_assignment(cost)
        new = np.empty_like(cur)
        new[ri] = nxt[ci]
        cur = new
    return cur


def monodromy_circle(
    curve: PlaneCurve, radius: float, n_steps: int = 720
) -> np.ndarray:
    """Permutation of root slots after one positive loop |z1| = radius."""
    th = 2 * np.pi * np.arange(n_steps + 1) / n_steps
    cur = curve.roots(radius)
    start = cur.copy()
    for t in th[1:]:
        nxt = curve.roots(radius * np.exp(1j * t))
        cost = np.abs(cur[:, None] - nxt[None, :])
        ri, ci = linear_sum_assignment(cost)
        new = np.empty_like(cur)
        new[ri] = nxt[ci]
        cur = new
    cost = np.abs(start[:, None] - cur[None, :])
    ri, ci = linear_sum_assignment(cost)
    perm = np.empty(len(start), dtype=int)
    perm[ri] = ci
    return perm


def hefer_decomposition(curve: PlaneCurve) -> HeferPair:
    """Telescoping divided-difference Hefer pair for P.

    Q1(xi, z) = (P(xi1, xi2) - P(z1, xi2)) / (xi1 - z1) and
    Q2(xi, z) = (P(z1, xi2) - P(z1, z2)) / (xi2 - z2), expanded as
    polynomials; the identity holds exactly in coefficient arithmetic.
    """
    c = curve.coeffs
    ni, nj = c.shape
    q1 = np.zeros((max(ni - 1, 1), max(ni - 1, 1), nj), dtype=complex)
    for i in range(1, ni):
        for j in range(nj):
            if c[i, j] == 0:
                continue
            for a in range(i):
                q1[a, i - 1 - a, j] += c[i, j]
    q2 = np.zeros((ni, max(nj - 1, 1), max(nj - 1, 1)), dtype=complex)
    for i in range(ni):
        for j in range(1, nj):
            if c[i, j] == 0:
                continue
            for a in range(j):
                q2[i, a, j - 1 - a] += c[i, j]
    return HeferPair(q1=q1, q2=q2)


@dataclass
class HolomorphicBasis:
    """Orthonormal holomorphic (1,0)-forms q(z) dz1 / (dP/dz2), deg q <= d-3.

    ``values`` holds the per-node chart-frame coefficients of the
    orthonormalized forms (N x g).  Orthonormality is with respect to the
    positive pairing <w, v> = (i/2) int w ^ conj(v) evaluated by mesh
    quadrature, i.e. sum over nodes of coeff * conj(coeff) * chart area.
    """

    exponents: list[tuple[int, int]]
    mixing: np.ndarray  # (n_monomials, g) complex
    values: np.ndarray  # (N, g) complex node coefficients
    gram_defect: float

    @property
    def size(self) -> int:
        return self.values.shape[1] if self.values.ndim == 2 else 0

    def eval_coeff_dz1(self, curve: PlaneCurve, z1, z2):
        """dz1-frame coefficients of the g forms at arbitrary points."""
        z1 = np.asarray(z1, dtype=complex)
        z2 = np.asarray(z2, dtype=complex)
        p2 = curve.p_z2(z1, z2)
        cols = []
        for m, (a, b) in enumerate(self.exponents):
            cols.append(z1**a * z2**b)
        if not cols:
            return np.zeros(z1.shape + (0,), dtype=complex)
        mono = np.stack(cols, axis=-1)
        return (mono @ self.mixing) / p2[..., None]


def holomorphic_basis(
    curve: PlaneCurve, mesh, cond_threshold: float = 1e10
) -> HolomorphicBasis:
    """Quadrature-orthonormalized basis of holomorphic (1,0)-forms on V.

    Empty for genus 0.  Raises :class:`IllConditionedGram` when the mesh
    cannot resolve the Gram matrix of the adjoint monomial forms.
    """
    d = curve.degree
    expo = [(a, b) for a in range(max(d - 2, 0)) for b in range(max(d - 2, 0)) if a + b <= d - 3]
    g = curve.genus
    assert len(expo) == g
    if g == 0:
        return HolomorphicBasis(
            exponents=[], mixing=np.zeros((0, 0)), values=np.zeros((mesh.n, 0)), gram_defect=0.0
        )
    raw = np.empty((mesh.n, g), dtype=complex)
    for m, (a, b) in enumerate(expo):
        mono = mesh.z1**a * mesh.z2**b
        # dz1-frame: q/P_z2; dz2-frame: -q/P_z1 (Poincare residue identity)
        raw[:, m] = np.where(
            mesh.chart == 1, mono / mesh.p2, -mono / mesh.p1
        )
    gram = (raw.conj().T * mesh.area_chart) @ raw
    gram = 0.5 * (gram + gram.conj().T)
    cond = np.linalg.cond(gram)
    if cond > cond_threshold:
        raise IllConditionedGram(f"Gram condition number {cond:.3g}")
    mix = _orthonormal_mixing(gram)
    vals = raw @ mix
    gram2 = (vals.conj().T * mesh.area_chart) @ vals
    defect = float(np.max(np.abs(gram2 - np.eye(g))))
    return HolomorphicBasis(exponents=expo, mixing=mix, values=vals, gram_defect=defect)


def _orthonormal_mixing(gram: np.ndarray) -> np.ndarray:
    """Mixing matrix M with M^H G M = I via eigen-decomposition."""
    w, U = np.linalg.eigh(gram)
    w = np.maximum(w, 0.0)
    return U @ np.diag(1.0 / np.sqrt(w)) @ U.conj().T
