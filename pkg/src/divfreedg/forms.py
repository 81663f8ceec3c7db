"""Assembly of the discrete forms: mass, divergence constraint, upwind
convection (residual and linearized matrix), SIP viscosity, loads and the
upwind jump seminorm.

All facet convection terms run over interior facets only; the single-valued
normal velocity a . n_F is read from the shared edge DOFs rather than traced
from either side.  Assembly is serial and deterministic: per-cell/per-facet
contributions are accumulated into triplets and compressed by summation.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fe_space import CoefVec
from .quadrature import triangle_rule


def default_sigma(k):
    return 10.0 * k * k


def default_cell_order(k):
    return 2 * k + 3


def default_facet_order(k):
    # upwind terms couple two tangential traces of degree k+1 with a . n
    return max(2 * k + 3, 3 * k + 2)


def default_load_order(k):
    # smooth forcing: two extra Gauss points keep the quadrature error of
    # gradient-type loads below the divergence-free projection tolerances
    return 2 * k + 7


@dataclass
class FormParams:
    """Penalty, viscosity and quadrature orders for the discrete forms."""

    sigma: float = None
    nu: float = 0.0
    cell_order: int = None
    facet_order: int = None
    load_order: int = None

    def resolve(self, k):
        return FormParams(
            sigma=default_sigma(k) if self.sigma is None else self.sigma,
            nu=self.nu,
            cell_order=default_cell_order(k) if self.cell_order is None else self.cell_order,
            facet_order=default_facet_order(k) if self.facet_order is None else self.facet_order,
            load_order=default_load_order(k) if self.load_order is None else self.load_order,
        )

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("viscosity must be nonnegative")
        if self.nu > 0 and self.sigma is not None and self.sigma <= 0:
            raise ValueError("SIP penalty sigma must be positive for viscous runs")


def _values(space, field):
    if isinstance(field, CoefVec):
        if field.space is not space:
            raise ValueError("coefficient vector belongs to a different space")
        return field.values
    field = np.asarray(field, dtype=float)
    if field.shape != (space.n_dofs,):
        raise ValueError("coefficient length does not match the space")
    return field


def _local(space, values, cells=slice(None)):
    return values[space.cell_dofs[cells]] * space.cell_signs[cells]


def _to_csr(n_rows, n_cols, rows, cols, vals):
    mat = sp.coo_matrix(
        (np.concatenate([v.ravel() for v in vals]),
         (np.concatenate([r.ravel() for r in rows]),
          np.concatenate([c.ravel() for c in cols]))),
        shape=(n_rows, n_cols),
    )
    return mat.tocsr()


def assemble_mass(space, order=None):
    """Velocity mass matrix, symmetric positive definite."""
    if order is None:
        order = default_cell_order(space.k)
    tab = space.cell_tables(order)
    loc = np.einsum("cqia,cqja,cq->cij", tab["val"], tab["val"], tab["wdet"],
                    optimize=True)
    loc *= space.cell_signs[:, :, None] * space.cell_signs[:, None, :]
    rows = np.broadcast_to(space.cell_dofs[:, :, None], loc.shape)
    cols = np.broadcast_to(space.cell_dofs[:, None, :], loc.shape)
    return _to_csr(space.n_dofs, space.n_dofs, [rows], [cols], [loc])


def assemble_div(space, q_space, order=None):
    """Constraint matrix with entries (div phi_j, theta_i)."""
    if q_space.k != space.k:
        raise ValueError("multiplier degree must match the velocity degree")
    if q_space.mesh is not space.mesh:
        raise ValueError("spaces live on different meshes")
    if order is None:
        order = default_cell_order(space.k)
    tab = space.cell_tables(order)
    qv = q_space.eval_ref(tab["rule"].points)
    loc = np.einsum("qi,cqj,cq->cij", qv, tab["div"], tab["wdet"], optimize=True)
    loc *= space.cell_signs[:, None, :]
    nc = space.mesh.n_cells
    qdofs = np.arange(nc)[:, None] * q_space.n_loc + np.arange(q_space.n_loc)[None, :]
    rows = np.broadcast_to(qdofs[:, :, None], loc.shape)
    cols = np.broadcast_to(space.cell_dofs[:, None, :], loc.shape)
    return _to_csr(q_space.n_dofs, space.n_dofs, [rows], [cols], [loc])


def _facet_normal_values(space, tab, a_values):
    """a . n_F at the facet quadrature points, from the shared edge DOFs."""
    coeffs = space.normal_trace_coeffs(a_values)
    return coeffs @ tab["legendre"].T  # (nf, nq)


def _upwind_weights(space, tab, a_values):
    an = _facet_normal_values(space, tab, a_values)
    gp = 0.5 * (np.abs(an) - an)
    gm = -0.5 * (np.abs(an) + an)
    return an, gp, gm


def apply_convection(space, a, w, cell_order=None, facet_order=None):
    """Residual vector r with r_i = c_h(a, w, phi_i).

    Volume term (a . grad) w . v plus the interior-facet upwind flux terms;
    a must be H(div)-conforming with zero boundary-normal DOFs.
    """
    av = _values(space, a)
    wv = _values(space, w)
    if cell_order is None:
        cell_order = default_cell_order(space.k)
    if facet_order is None:
        facet_order = default_facet_order(space.k)
    r = np.zeros(space.n_dofs)

    # Volume term on shared reference tables: with the Piola factors
    # contracted into the cell metric A = J^T J / det^2, the integrand is
    # w_q (Ghat_w ahat)^T A vhat, leaving three dense GEMMs per apply.
    rtab = space.ref_tables(cell_order)
    nq = rtab["nq"]
    nc = space.mesh.n_cells
    a_loc = _local(space, av)
    w_loc = _local(space, wv)
    a_hat = (a_loc @ rtab["val_flat"]).reshape(nc, nq, 2)
    g_hat = (w_loc @ rtab["grad_flat"]).reshape(nc, nq, 2, 2)
    t0 = g_hat[..., 0, 0] * a_hat[..., 0] + g_hat[..., 0, 1] * a_hat[..., 1]
    t1 = g_hat[..., 1, 0] * a_hat[..., 0] + g_hat[..., 1, 1] * a_hat[..., 1]
    metric = space.metric
    s = np.empty((nc, nq, 2))
    s[..., 0] = t0 * metric[:, None, 0, 0] + t1 * metric[:, None, 1, 0]
    s[..., 1] = t0 * metric[:, None, 0, 1] + t1 * metric[:, None, 1, 1]
    r_loc = s.reshape(nc, nq * 2) @ rtab["val_weighted"]
    np.add.at(r, space.cell_dofs, r_loc * space.cell_signs)

    ftab = space.facet_tables(facet_order)
    ii = space.mesh.interior_facets
    _, gp, gm = _upwind_weights(space, ftab, av)
    itab = ftab["interior"]
    wq = itab["weights"]
    plus, minus = itab["plus"], itab["minus"]
    wp = np.einsum("fi,fqia->fqa", wv[plus["dofs"]] * plus["signs"],
                   plus["val"], optimize=True)
    wm = np.einsum("fi,fqia->fqa", wv[minus["dofs"]] * minus["signs"],
                   minus["val"], optimize=True)
    wjump = wp - wm
    rp = np.einsum("fqa,fqia->fi", (wq * gp[ii])[:, :, None] * wjump,
                   plus["val"], optimize=True)
    rm = np.einsum("fqa,fqia->fi", (wq * gm[ii])[:, :, None] * wjump,
                   minus["val"], optimize=True)
    np.add.at(r, plus["dofs"], rp * plus["signs"])
    np.add.at(r, minus["dofs"], rm * minus["signs"])
    return r


def convection_matrix(space, a, cell_order=None, facet_order=None):
    """Matrix C with C_ij = c_h(a, phi_j, phi_i), the linearized convection."""
    av = _values(space, a)
    if cell_order is None:
        cell_order = default_cell_order(space.k)
    if facet_order is None:
        facet_order = default_facet_order(space.k)

    rows, cols, vals = [], [], []

    tab = space.cell_tables(cell_order)
    a_loc = _local(space, av)
    a_q = np.einsum("ci,cqia->cqa", a_loc, tab["val"], optimize=True)
    loc = np.einsum("cqjab,cqb,cqia,cq->cij", tab["grad"], a_q, tab["val"],
                    tab["wdet"], optimize=True)
    loc *= space.cell_signs[:, :, None] * space.cell_signs[:, None, :]
    rows.append(np.broadcast_to(space.cell_dofs[:, :, None], loc.shape))
    cols.append(np.broadcast_to(space.cell_dofs[:, None, :], loc.shape))
    vals.append(loc)

    ftab = space.facet_tables(facet_order)
    ii = space.mesh.interior_facets
    _, gp, gm = _upwind_weights(space, ftab, av)
    itab = ftab["interior"]
    wq = itab["weights"]
    sides = {
        "+": (itab["plus"]["val"], itab["plus"]["dofs"], itab["plus"]["signs"]),
        "-": (itab["minus"]["val"], itab["minus"]["dofs"], itab["minus"]["signs"]),
    }
    for test, g in (("+", gp[ii]), ("-", gm[ii])):
        tval, tdofs, tsigns = sides[test]
        for trial, jump_sign in (("+", 1.0), ("-", -1.0)):
            rval, rdofs, rsigns = sides[trial]
            blk = jump_sign * np.einsum("fq,fqja,fqia->fij", wq * g, rval, tval,
                                        optimize=True)
            blk *= tsigns[:, :, None] * rsigns[:, None, :]
            rows.append(np.broadcast_to(tdofs[:, :, None], blk.shape))
            cols.append(np.broadcast_to(rdofs[:, None, :], blk.shape))
            vals.append(blk)
    return _to_csr(space.n_dofs, space.n_dofs, rows, cols, vals)


def jump_seminorm(space, a, v, facet_order=None):
    """Squared upwind jump seminorm |v|^2_{a,up} over interior facets."""
    av = _values(space, a)
    vv = _values(space, v)
    if facet_order is None:
        facet_order = default_facet_order(space.k)
    ftab = space.facet_tables(facet_order)
    ii = space.mesh.interior_facets
    an = _facet_normal_values(space, ftab, av)[ii]
    itab = ftab["interior"]
    plus, minus = itab["plus"], itab["minus"]
    vp = np.einsum("fi,fqia->fqa", vv[plus["dofs"]] * plus["signs"],
                   plus["val"], optimize=True)
    vm = np.einsum("fi,fqia->fqa", vv[minus["dofs"]] * minus["signs"],
                   minus["val"], optimize=True)
    jump2 = np.sum((vp - vm) ** 2, axis=-1)
    return float(np.sum(itab["weights"] * 0.5 * np.abs(an) * jump2))


def _facet_grads(space, tab, side, facets):
    return tab[side]["grad"][facets]


def assemble_sip(space, params=None):
    """Symmetric interior penalty matrix for the vector Laplacian.

    Runs over all facets; on the boundary the jump and average reduce to the
    trace itself, enforcing no-slip weakly.
    """
    params = (params or FormParams()).resolve(space.k)
    if params.sigma <= 0:
        raise ValueError("SIP penalty sigma must be positive")
    cell_order = params.cell_order
    facet_order = params.facet_order

    rows, cols, vals = [], [], []

    tab = space.cell_tables(cell_order)
    loc = np.einsum("cqiab,cqjab,cq->cij", tab["grad"], tab["grad"], tab["wdet"],
                    optimize=True)
    loc *= space.cell_signs[:, :, None] * space.cell_signs[:, None, :]
    rows.append(np.broadcast_to(space.cell_dofs[:, :, None], loc.shape))
    cols.append(np.broadcast_to(space.cell_dofs[:, None, :], loc.shape))
    vals.append(loc)

    ftab = space.facet_tables(facet_order)
    mesh = space.mesh
    penalty = params.sigma / mesh.facet_length

    for facets, two_sided in ((mesh.interior_facets, True),
                              (mesh.boundary_facets, False)):
        if len(facets) == 0:
            continue
        wq = ftab["weights"][facets]
        nrm = mesh.facet_normal[facets]
        pen = penalty[facets]
        side_names = ("plus", "minus") if two_sided else ("plus",)
        avg_w = 0.5 if two_sided else 1.0
        jump_sign = {"plus": 1.0, "minus": -1.0}
        for test in side_names:
            tv = ftab[test]["val"][facets]
            tgn = np.einsum("fqiab,fb->fqia", _facet_grads(space, ftab, test, facets), nrm)
            tdofs, tsigns = ftab[test]["dofs"][facets], ftab[test]["signs"][facets]
            for trial in side_names:
                rv = ftab[trial]["val"][facets]
                rgn = np.einsum("fqiab,fb->fqia",
                                _facet_grads(space, ftab, trial, facets), nrm)
                rdofs, rsigns = ftab[trial]["dofs"][facets], ftab[trial]["signs"][facets]
                st, sr = jump_sign[test], jump_sign[trial]
                blk = -avg_w * st * np.einsum("fq,fqja,fqia->fij", wq, rgn, tv,
                                              optimize=True)
                blk += -avg_w * sr * np.einsum("fq,fqja,fqia->fij", wq, rv, tgn,
                                               optimize=True)
                blk += st * sr * np.einsum("f,fq,fqja,fqia->fij", pen, wq, rv, tv,
                                           optimize=True)
                blk *= tsigns[:, :, None] * rsigns[:, None, :]
                rows.append(np.broadcast_to(tdofs[:, :, None], blk.shape))
                cols.append(np.broadcast_to(rdofs[:, None, :], blk.shape))
                vals.append(blk)
    return _to_csr(space.n_dofs, space.n_dofs, rows, cols, vals)


def assemble_sip_boundary_load(space, g, params=None, order=None):
    """Right-hand-side functional of the SIP form for inhomogeneous Dirichlet
    data g on the boundary:

        r_i = sum_{F on boundary} int_F [ -g . (grad phi_i n_F)
                                          + (sigma/h_F) g . phi_i ] ds

    Pairs with assemble_sip so manufactured boundary velocities enter the
    viscous scheme consistently; with g = 0 this is the zero vector.
    """
    params = (params or FormParams()).resolve(space.k)
    if order is None:
        order = params.facet_order
    ftab = space.facet_tables(order)
    mesh = space.mesh
    bb = mesh.boundary_facets
    r = np.zeros(space.n_dofs)
    if len(bb) == 0:
        return r
    pts = ftab["points"][bb]
    gv = np.asarray(g(pts[..., 0], pts[..., 1]), dtype=float)
    wq = ftab["weights"][bb]
    nrm = mesh.facet_normal[bb]
    plus = ftab["plus"]
    val = plus["val"][bb]
    gn = np.einsum("fqiab,fb->fqia", plus["grad"][bb], nrm)
    pen = (params.sigma / mesh.facet_length[bb])[:, None]
    r_loc = np.einsum("fq,fqa,fqia->fi", wq, -gv, gn, optimize=True)
    r_loc += np.einsum("fq,fqa,fqia->fi", wq * pen, gv, val, optimize=True)
    np.add.at(r, plus["dofs"][bb], r_loc * plus["signs"][bb])
    return r


def assemble_load(space, f, order=None):
    """Load vector with entries (f, phi_i) for a pointwise-evaluable f."""
    if order is None:
        order = default_load_order(space.k)
    tab = space.cell_tables(order)
    pts = tab["points"]
    fv = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
    r_loc = np.einsum("cqa,cqia,cq->ci", fv, tab["val"], tab["wdet"], optimize=True)
    r = np.zeros(space.n_dofs)
    np.add.at(r, space.cell_dofs, r_loc * space.cell_signs)
    return r


def div_norm_quadrature(space, coeffs, order=None):
    """L2 norm of div u_h by direct quadrature (independent of the B matrix)."""
    cv = _values(space, coeffs)
    if order is None:
        order = default_cell_order(space.k)
    tab = space.cell_tables(order)
    dv = np.einsum("ci,cqi->cq", _local(space, cv), tab["div"], optimize=True)
    return float(np.sqrt(np.sum(tab["wdet"] * dv ** 2)))


def projected_divergence(space, q_space, coeffs, div_matrix):
    """Coefficients of div u_h in the broken multiplier space."""
    cv = _values(space, coeffs)
    moments = (div_matrix @ cv).reshape(space.mesh.n_cells, q_space.n_loc)
    local = moments @ q_space.local_mass_inv.T / space.mesh.cell_detj[:, None]
    return local.ravel()


def divergence_l2_norm(space, q_space, coeffs, div_matrix):
    """Cheap per-step divergence norm via (Bu)^T Mq^{-1} (Bu)."""
    cv = _values(space, coeffs)
    moments = (div_matrix @ cv).reshape(space.mesh.n_cells, q_space.n_loc)
    sq = np.einsum("ci,ij,cj->c", moments, q_space.local_mass_inv, moments)
    val = np.sum(sq / space.mesh.cell_detj)
    return float(np.sqrt(max(val, 0.0)))


def quadrature_points(mesh, order):
    """Physical quadrature points and weights on every cell of the mesh."""
    rule = triangle_rule(order)
    nq = len(rule.weights)
    cells = np.repeat(np.arange(mesh.n_cells), nq)
    pts = mesh.map_to_physical(cells, np.tile(rule.points, (mesh.n_cells, 1)))
    wdet = rule.weights[None, :] * mesh.cell_detj[:, None]
    return pts.reshape(mesh.n_cells, nq, 2), wdet, rule


__all__ = [
    "FormParams", "assemble_mass", "assemble_div", "apply_convection",
    "convection_matrix", "assemble_sip", "assemble_sip_boundary_load",
    "assemble_load", "jump_seminorm",
    "div_norm_quadrature", "divergence_l2_norm", "projected_divergence",
    "default_sigma", "default_cell_order", "default_facet_order",
    "default_load_order", "quadrature_points",
]
