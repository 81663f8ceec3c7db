"""Raviart-Thomas velocity elements, broken scalar elements and interpolation.

The reference element lives on the triangle with vertices (0,0), (1,0), (0,1);
edge i is opposite vertex i and runs counterclockwise.  Velocity basis
functions are dual to Legendre edge-normal moments plus orthonormalized
interior moments, obtained by inverting the moment Vandermonde once per
degree.  Physical elements follow by the contravariant Piola transform, which
preserves edge-normal moments and therefore glues H(div)-conformingly.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .quadrature import segment_rule, triangle_rule

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
REF_EDGE_VERTICES = ((1, 2), (2, 0), (0, 1))
REF_EDGE_NORMALS = np.array([
    [1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)],
    [-1.0, 0.0],
    [0.0, -1.0],
])
REF_EDGE_LENGTHS = np.array([np.sqrt(2.0), 1.0, 1.0])

SUPPORTED_DEGREES = (1, 2)


def _pow(x, e):
    if e < 0:
        return np.zeros_like(x)
    return x ** e


def scalar_monomial_exponents(k):
    """Exponent pairs of the monomial basis of P_k, graded ordering."""
    return [(d - b, b) for d in range(k + 1) for b in range(d + 1)]


def eval_scalar_monomials(exps, points):
    points = np.asarray(points, dtype=float)
    x, y = points[..., 0], points[..., 1]
    return np.stack([_pow(x, a) * _pow(y, b) for a, b in exps], axis=-1)


def _rt_monomials(k):
    """Monomial basis of RT_k = [P_k]^2 + (homogeneous P_k) * x."""
    terms = []
    for comp in (0, 1):
        for a, b in scalar_monomial_exponents(k):
            terms.append(("comp", comp, a, b))
    for a in range(k + 1):
        terms.append(("radial", a, k - a))
    return terms


def eval_rt_monomials(k, points):
    """Evaluate value, divergence and gradient of every RT_k monomial.

    Returns arrays of shape (npts, nmono, 2), (npts, nmono), (npts, nmono, 2, 2)
    with gradient convention grad[a, b] = d v_a / d x_b.
    """
    points = np.asarray(points, dtype=float)
    x, y = points[..., 0], points[..., 1]
    terms = _rt_monomials(k)
    npts = x.shape[0]
    nm = len(terms)
    vals = np.zeros((npts, nm, 2))
    divs = np.zeros((npts, nm))
    grads = np.zeros((npts, nm, 2, 2))
    for m, term in enumerate(terms):
        if term[0] == "comp":
            _, comp, a, b = term
            vals[:, m, comp] = _pow(x, a) * _pow(y, b)
            grads[:, m, comp, 0] = a * _pow(x, a - 1) * _pow(y, b)
            grads[:, m, comp, 1] = b * _pow(x, a) * _pow(y, b - 1)
            divs[:, m] = grads[:, m, comp, comp]
        else:
            _, a, c = term
            vals[:, m, 0] = _pow(x, a + 1) * _pow(y, c)
            vals[:, m, 1] = _pow(x, a) * _pow(y, c + 1)
            divs[:, m] = (k + 2) * _pow(x, a) * _pow(y, c)
            grads[:, m, 0, 0] = (a + 1) * _pow(x, a) * _pow(y, c)
            grads[:, m, 0, 1] = c * _pow(x, a + 1) * _pow(y, c - 1)
            grads[:, m, 1, 0] = a * _pow(x, a - 1) * _pow(y, c + 1)
            grads[:, m, 1, 1] = (c + 1) * _pow(x, a) * _pow(y, c)
    return vals, divs, grads


class RTReference:
    """Reference RT_k element with moment-dual basis, built once per degree."""

    def __init__(self, k):
        if k not in SUPPORTED_DEGREES:
            raise ValueError(f"unsupported degree k={k}; supported: {SUPPORTED_DEGREES}")
        self.k = k
        self.n_edge_moments = k + 1
        self.n_interior = k * (k + 1)
        self.n_dofs = (k + 1) * (k + 3)

        # orthonormal scalar polynomials of degree <= k-1 for interior moments
        int_exps = scalar_monomial_exponents(k - 1)
        rule = triangle_rule(2 * k + 2)
        mon = eval_scalar_monomials(int_exps, rule.points)
        gram = np.einsum("qi,qj,q->ij", mon, mon, rule.weights)
        self._int_exps = int_exps
        self._int_coeffs = np.linalg.inv(np.linalg.cholesky(gram))

        # edge quadrature in the reference edge parameter t in [0,1]
        erule = segment_rule(2 * k + 3)
        self._edge_t = erule.points
        self._edge_w = erule.weights
        self._edge_leg = np.polynomial.legendre.legvander(2.0 * erule.points - 1.0, k)

        self.coeffs = np.linalg.inv(self._vandermonde())

    def _edge_points(self, i):
        a = REF_VERTICES[REF_EDGE_VERTICES[i][0]]
        b = REF_VERTICES[REF_EDGE_VERTICES[i][1]]
        return a + self._edge_t[:, None] * (b - a)

    def interior_polys(self, points):
        """Orthonormalized interior moment polynomials at reference points."""
        return eval_scalar_monomials(self._int_exps, points) @ self._int_coeffs.T

    def _vandermonde(self):
        nm = self.n_dofs
        V = np.zeros((nm, nm))
        row = 0
        for i in range(3):
            pts = self._edge_points(i)
            vals, _, _ = eval_rt_monomials(self.k, pts)
            vn = vals @ REF_EDGE_NORMALS[i]
            w = self._edge_w * REF_EDGE_LENGTHS[i]
            for j in range(self.n_edge_moments):
                V[row] = np.einsum("q,qm->m", w * self._edge_leg[:, j], vn)
                row += 1
        rule = triangle_rule(2 * self.k + 2)
        vals, _, _ = eval_rt_monomials(self.k, rule.points)
        polys = self.interior_polys(rule.points)
        for p in range(polys.shape[1]):
            for comp in (0, 1):
                V[row] = np.einsum("q,qm->m", rule.weights * polys[:, p], vals[:, :, comp])
                row += 1
        return V

    def eval_basis(self, points):
        """Values, divergences and gradients of the dual basis at points."""
        mv, md, mg = eval_rt_monomials(self.k, points)
        vals = np.einsum("qma,mb->qba", mv, self.coeffs)
        divs = md @ self.coeffs
        grads = np.einsum("qmab,mc->qcab", mg, self.coeffs)
        return vals, divs, grads

    def apply_dofs(self, func):
        """Apply every reference DOF functional to a callable field on the
        reference cell; used by the duality test."""
        out = np.zeros(self.n_dofs)
        row = 0
        for i in range(3):
            pts = self._edge_points(i)
            vn = np.asarray([func(p) for p in pts]) @ REF_EDGE_NORMALS[i]
            w = self._edge_w * REF_EDGE_LENGTHS[i]
            for j in range(self.n_edge_moments):
                out[row] = np.sum(w * self._edge_leg[:, j] * vn)
                row += 1
        rule = triangle_rule(2 * self.k + 4)
        vals = np.asarray([func(p) for p in rule.points])
        polys = self.interior_polys(rule.points)
        for p in range(polys.shape[1]):
            for comp in (0, 1):
                out[row] = np.sum(rule.weights * polys[:, p] * vals[:, comp])
                row += 1
        return out


@lru_cache(maxsize=None)
def rt_reference(k):
    return RTReference(k)


def rt_reference_basis(k, point):
    """Evaluate the reference RT_k basis at one point.

    Returns a list of (value, divergence) pairs, one per local basis function.
    """
    vals, divs, _ = rt_reference(k).eval_basis(np.asarray(point, dtype=float)[None, :])
    return [(vals[0, b], divs[0, b]) for b in range(vals.shape[1])]


def piola_map(jacobian, ref_value, ref_div=None, ref_grad=None):
    """Contravariant Piola transform of reference evaluations.

    v = J v_ref / det J, div v = div_ref / det J, grad v = J G J^{-1} / det J.
    Leading axes broadcast, so whole tables map in one call.
    """
    jacobian = np.asarray(jacobian, dtype=float)
    det = jacobian[..., 0, 0] * jacobian[..., 1, 1] - jacobian[..., 0, 1] * jacobian[..., 1, 0]
    if np.any(det <= 0):
        raise ValueError("degenerate cell: non-positive Jacobian determinant")
    value = np.einsum("...ab,...b->...a", jacobian, ref_value) / det[..., None]
    out = [value]
    if ref_div is not None:
        out.append(ref_div / det)
    if ref_grad is not None:
        inv = np.empty_like(jacobian)
        inv[..., 0, 0] = jacobian[..., 1, 1]
        inv[..., 1, 1] = jacobian[..., 0, 0]
        inv[..., 0, 1] = -jacobian[..., 0, 1]
        inv[..., 1, 0] = -jacobian[..., 1, 0]
        inv = inv / det[..., None, None]
        grad = np.einsum("...ag,...gd,...db->...ab", jacobian, ref_grad, inv) / det[..., None, None]
        out.append(grad)
    return out[0] if len(out) == 1 else tuple(out)


@dataclass
class CoefVec:
    """Coefficient vector of a discrete field in a given space."""

    space: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.space.n_dofs,):
            raise ValueError(
                f"coefficient length {self.values.shape} does not match "
                f"space with {self.space.n_dofs} DOFs")

    def copy(self):
        return CoefVec(self.space, self.values.copy())

    def is_finite(self):
        return bool(np.all(np.isfinite(self.values)))


class RTSpace:
    """Global H(div)-conforming RT_k space on a triangular mesh.

    Edge DOFs are shared between the two cells of an interior facet; the
    per-cell sign arrays absorb normal and tangential orientation flips so a
    cell-local coefficient is sign * global coefficient.
    """

    def __init__(self, mesh, k):
        self.mesh = mesh
        self.k = k
        self.ref = rt_reference(k)
        ne = self.ref.n_edge_moments
        ni = self.ref.n_interior
        nf, nc = mesh.n_facets, mesh.n_cells
        self.n_loc = self.ref.n_dofs
        self.n_facet_dofs = nf * ne
        self.n_dofs = nf * ne + nc * ni

        cell_dofs = np.empty((nc, self.n_loc), dtype=int)
        cell_signs = np.ones((nc, self.n_loc))
        cell_ids = np.arange(nc)
        for i in range(3):
            f = mesh.cell_facets[:, i]
            va = mesh.cells[:, (i + 1) % 3]
            vb = mesh.cells[:, (i + 2) % 3]
            sigma_t = np.where(va < vb, 1.0, -1.0)
            sigma_n = np.where(mesh.facet_plus[f] == cell_ids, 1.0, -1.0)
            for j in range(ne):
                cell_dofs[:, i * ne + j] = f * ne + j
                cell_signs[:, i * ne + j] = sigma_n * sigma_t ** j
        for m in range(ni):
            cell_dofs[:, 3 * ne + m] = nf * ne + cell_ids * ni + m
        self.cell_dofs = cell_dofs
        self.cell_signs = cell_signs

        self.boundary_dofs = (
            mesh.boundary_facets[:, None] * ne + np.arange(ne)[None, :]
        ).ravel()
        self.is_boundary_dof = np.zeros(self.n_dofs, dtype=bool)
        self.is_boundary_dof[self.boundary_dofs] = True
        self.free_dofs = np.flatnonzero(~self.is_boundary_dof)

        self._cell_tables = {}
        self._facet_tables = {}
        self._ref_tables = {}
        self._metric = None

    def zero(self):
        return CoefVec(self, np.zeros(self.n_dofs))

    @property
    def metric(self):
        """(J^T J) / det(J)^2 per cell; contracts Piola factors so volume
        convection can run on shared reference tables."""
        if self._metric is None:
            jac = self.mesh.cell_jac
            self._metric = np.einsum("cga,cgb->cab", jac, jac) \
                / self.mesh.cell_detj[:, None, None] ** 2
        return self._metric

    # -- cached assembly tables ------------------------------------------------

    def cell_tables(self, order):
        """Physical basis values/divs/grads at a shared volume rule."""
        tab = self._cell_tables.get(order)
        if tab is not None:
            return tab
        mesh = self.mesh
        rule = triangle_rule(order)
        rv, rd, rg = self.ref.eval_basis(rule.points)
        det = mesh.cell_detj
        val = np.einsum("cab,qib->cqia", mesh.cell_jac, rv, optimize=True)
        val /= det[:, None, None, None]
        div = rd[None, :, :] / det[:, None, None]
        grad = np.einsum("cag,qigd,cdb->cqiab", mesh.cell_jac, rg,
                         mesh.cell_jac_inv, optimize=True)
        grad /= det[:, None, None, None, None]
        wdet = rule.weights[None, :] * det[:, None]
        pts = mesh.map_to_physical(
            np.repeat(np.arange(mesh.n_cells), len(rule.weights)),
            np.tile(rule.points, (mesh.n_cells, 1)),
        ).reshape(mesh.n_cells, len(rule.weights), 2)
        tab = dict(rule=rule, val=val, div=div, grad=grad, wdet=wdet, points=pts)
        self._cell_tables[order] = tab
        return tab

    def ref_tables(self, order):
        """Flattened reference basis tables for GEMM-style volume kernels."""
        tab = self._ref_tables.get(order)
        if tab is not None:
            return tab
        rule = triangle_rule(order)
        rv, _, rg = self.ref.eval_basis(rule.points)
        nq = len(rule.weights)
        tab = dict(
            rule=rule,
            val_flat=np.ascontiguousarray(
                rv.transpose(1, 0, 2).reshape(self.n_loc, nq * 2)),
            grad_flat=np.ascontiguousarray(
                rg.transpose(1, 0, 2, 3).reshape(self.n_loc, nq * 4)),
            val_weighted=np.ascontiguousarray(
                (rv * rule.weights[:, None, None])
                .transpose(0, 2, 1).reshape(nq * 2, self.n_loc)),
            nq=nq,
        )
        self._ref_tables[order] = tab
        return tab

    def facet_tables(self, order):
        """Basis traces from both sides of every facet at a shared edge rule."""
        tab = self._facet_tables.get(order)
        if tab is not None:
            return tab
        mesh = self.mesh
        rule = segment_rule(order)
        t = rule.points
        nq = len(t)
        nf = mesh.n_facets

        a = mesh.vertices[mesh.facet_vertices[:, 0]]
        b = mesh.vertices[mesh.facet_vertices[:, 1]]
        pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        weights = rule.weights[None, :] * mesh.facet_length[:, None]
        leg = np.polynomial.legendre.legvander(2.0 * t - 1.0, self.k)

        minus_safe = np.where(mesh.facet_minus < 0, mesh.facet_plus, mesh.facet_minus)
        sides = {}
        for name, cells in (("plus", mesh.facet_plus), ("minus", minus_safe)):
            ref_pts = mesh.map_to_reference(
                np.repeat(cells, nq), pts.reshape(-1, 2))
            rv, _, rg = self.ref.eval_basis(ref_pts)
            jac = np.repeat(mesh.cell_jac[cells], nq, axis=0)
            det = np.repeat(mesh.cell_detj[cells], nq)
            val = np.einsum("pab,pib->pia", jac, rv) / det[:, None, None]
            inv = np.repeat(mesh.cell_jac_inv[cells], nq, axis=0)
            grad = np.einsum("pag,pigd,pdb->piab", jac, rg, inv, optimize=True)
            grad /= det[:, None, None, None]
            sides[name] = dict(
                val=val.reshape(nf, nq, self.n_loc, 2),
                grad=grad.reshape(nf, nq, self.n_loc, 2, 2),
                dofs=self.cell_dofs[cells],
                signs=self.cell_signs[cells],
            )
        tab = dict(rule=rule, weights=weights, legendre=leg,
                   plus=sides["plus"], minus=sides["minus"], points=pts)
        # pre-sliced interior-facet arrays keep the hot convection path free
        # of per-call fancy-index copies
        ii = mesh.interior_facets
        tab["interior"] = dict(
            weights=weights[ii],
            plus={key: sides["plus"][key][ii] for key in ("val", "dofs", "signs")},
            minus={key: sides["minus"][key][ii] for key in ("val", "dofs", "signs")},
        )
        self._facet_tables[order] = tab
        return tab

    def normal_trace_coeffs(self, coeffs):
        """Per-facet expansion of u . n_F in Legendre polynomials.

        The normal trace on F lies in P_k(F) and is determined by the k+1
        shared edge DOFs alone: u.n(s) = sum_j (2j+1)/|F| c_{F,j} P_j(s).
        """
        ne = self.ref.n_edge_moments
        c = coeffs[:self.n_facet_dofs].reshape(-1, ne)
        scale = (2.0 * np.arange(ne) + 1.0)[None, :] / self.mesh.facet_length[:, None]
        return c * scale

    # -- evaluation --------------------------------------------------------------

    def evaluate(self, coeffs, cells, ref_points, with_grad=False):
        """Field value (and broken gradient) at reference points in cells."""
        cells = np.asarray(cells, dtype=int)
        ref_points = np.asarray(ref_points, dtype=float)
        rv, _, rg = self.ref.eval_basis(ref_points)
        jac = self.mesh.cell_jac[cells]
        det = self.mesh.cell_detj[cells]
        loc = coeffs[self.cell_dofs[cells]] * self.cell_signs[cells]
        ref_val = np.einsum("...i,...ia->...a", loc, rv)
        val = np.einsum("...ab,...b->...a", jac, ref_val) / det[..., None]
        if not with_grad:
            return val
        inv = self.mesh.cell_jac_inv[cells]
        ref_grad = np.einsum("...i,...iab->...ab", loc, rg)
        grad = np.einsum("...ag,...gd,...db->...ab", jac, ref_grad, inv)
        grad /= det[..., None, None]
        return val, grad


def evaluate_field(space, coeffs, cell, ref_point):
    """Value and broken-gradient matrix of a discrete field at one point."""
    if isinstance(coeffs, CoefVec):
        if coeffs.space is not space:
            raise ValueError("coefficient vector does not belong to this space")
        coeffs = coeffs.values
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.n_dofs,):
        raise ValueError("coefficient length does not match the space")
    val, grad = space.evaluate(coeffs, np.asarray([cell]),
                               np.asarray(ref_point, dtype=float)[None, :],
                               with_grad=True)
    return val[0], grad[0]


def rt_interpolate(field, space, enforce_boundary=True, order=None):
    """Raviart-Thomas interpolation of a pointwise-evaluable vector field.

    Edge DOFs are the Legendre moments of field . n_F along each facet,
    interior DOFs the orthonormalized moments of the Piola pullback.  With
    ``enforce_boundary`` the boundary edge DOFs come from the field (which is
    then expected to satisfy u.n = 0 on the boundary); otherwise they are
    zeroed so the result lies in the constrained space regardless.
    """
    mesh = space.mesh
    k = space.k
    if order is None:
        # trig moments need depth well beyond the polynomial minimum so that
        # div(Pi u) of solenoidal data sits at roundoff, not quadrature error
        order = max(2 * k + 2, 15)

    erule = segment_rule(order)
    t = erule.points
    a = mesh.vertices[mesh.facet_vertices[:, 0]]
    b = mesh.vertices[mesh.facet_vertices[:, 1]]
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    uvals = np.asarray(field(pts[..., 0], pts[..., 1]), dtype=float)
    un = np.einsum("fqa,fa->fq", uvals, mesh.facet_normal)
    leg = np.polynomial.legendre.legvander(2.0 * t - 1.0, k)
    wq = erule.weights[None, :] * mesh.facet_length[:, None]
    edge_moments = np.einsum("fq,qj->fj", wq * un, leg)

    trule = triangle_rule(order)
    nq = len(trule.weights)
    cells = np.repeat(np.arange(mesh.n_cells), nq)
    phys = mesh.map_to_physical(cells, np.tile(trule.points, (mesh.n_cells, 1)))
    phys = phys.reshape(mesh.n_cells, nq, 2)
    uc = np.asarray(field(phys[..., 0], phys[..., 1]), dtype=float)
    pullback = np.einsum("cba,cqa->cqb", mesh.cell_jac_inv, uc)
    pullback *= mesh.cell_detj[:, None, None]
    polys = space.ref.interior_polys(trule.points)
    interior = np.einsum("q,qp,cqb->cpb", trule.weights, polys, pullback)

    values = np.empty(space.n_dofs)
    values[:space.n_facet_dofs] = edge_moments.ravel()
    values[space.n_facet_dofs:] = interior.reshape(mesh.n_cells, -1).ravel()
    if not enforce_boundary:
        values[space.boundary_dofs] = 0.0
    return CoefVec(space, values)


class ScalarDGSpace:
    """Broken P_k multiplier space: one monomial block per cell, no coupling."""

    def __init__(self, mesh, k):
        self.mesh = mesh
        self.k = k
        self.exponents = scalar_monomial_exponents(k)
        self.n_loc = len(self.exponents)
        self.n_dofs = mesh.n_cells * self.n_loc

        rule = triangle_rule(2 * k)
        mon = eval_scalar_monomials(self.exponents, rule.points)
        self.local_mass = np.einsum("qi,qj,q->ij", mon, mon, rule.weights)
        self.local_mass_inv = np.linalg.inv(self.local_mass)
        self.local_integrals = np.einsum("qi,q->i", mon, rule.weights)

        self._cell_tables = {}

    def eval_ref(self, points):
        return eval_scalar_monomials(self.exponents, points)

    def cell_tables(self, order):
        tab = self._cell_tables.get(order)
        if tab is None:
            rule = triangle_rule(order)
            tab = dict(rule=rule, val=self.eval_ref(rule.points))
            self._cell_tables[order] = tab
        return tab

    def evaluate(self, coeffs, cells, ref_points):
        cells = np.asarray(cells, dtype=int)
        loc = coeffs.reshape(-1, self.n_loc)[cells]
        return np.einsum("...i,...i->...", loc, self.eval_ref(ref_points))

    def project(self, func, order=None):
        """Local L2 projection of a scalar function onto broken P_k."""
        if order is None:
            order = max(2 * self.k + 2, 15)
        mesh = self.mesh
        rule = triangle_rule(order)
        nq = len(rule.weights)
        cells = np.repeat(np.arange(mesh.n_cells), nq)
        phys = mesh.map_to_physical(cells, np.tile(rule.points, (mesh.n_cells, 1)))
        phys = phys.reshape(mesh.n_cells, nq, 2)
        fvals = np.asarray(func(phys[..., 0], phys[..., 1]), dtype=float)
        mon = self.eval_ref(rule.points)
        moments = np.einsum("q,qi,cq->ci", rule.weights, mon, fvals)
        coeffs = moments @ self.local_mass_inv.T
        return CoefVec(self, coeffs.ravel())

    def integral_vector(self):
        """Functional q -> integral of q over the domain, as a DOF vector."""
        return (self.mesh.cell_detj[:, None] * self.local_integrals[None, :]).ravel()


__all__ = [
    "RTReference", "RTSpace", "ScalarDGSpace", "CoefVec",
    "rt_reference", "rt_reference_basis", "piola_map",
    "rt_interpolate", "evaluate_field",
    "scalar_monomial_exponents", "eval_scalar_monomials", "eval_rt_monomials",
    "SUPPORTED_DEGREES",
]
