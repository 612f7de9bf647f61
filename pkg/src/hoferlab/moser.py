"""Coarse Moser splitting of quasi-cylinder two-forms on M x U grids.

A DiscreteTwoForm samples the six components of a two-form on a structured
grid over M x U (M a torus fundamental domain, U a rectangle; four
dimensions total). moser_split decomposes tau into the normal form
omega + rho sigma + du^alpha + dv^beta, checks the positivity chain of the
interpolating family

    tau_t = omega + (1 - t + t rho) sigma + t (du^alpha + dv^beta),

builds a boundary-vanishing primitive of dtau_t/dt = tau - tau_0 by sparse
least squares on the grid exterior derivative (the LSQR residual doubles as
the exactness tripwire), and integrates the Moser field to a sampled
diffeomorphism h_1 with the pullback residual ||h_1^*(tau_1) - tau_0||_inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import lsqr

from .errors import NondegeneracyFailed, ResidualTooLarge

AXES = ("x", "y", "u", "v")
PAIRS = (("x", "y"), ("x", "u"), ("x", "v"), ("y", "u"), ("y", "v"), ("u", "v"))


@dataclass
class DiscreteTwoForm:
    """Sampled two-form on a structured grid over M x U.

    `comps` maps component pairs like ("x","y") to arrays of shape
    (nx, ny, nu, nv); x and y are torus-periodic, u and v live on the
    rectangle spanned by `u_range` x `v_range`. `area_weight` is the
    constant coefficient of the fiber form omega = a dx^dy.
    """
    shape: tuple
    u_range: tuple
    v_range: tuple
    comps: dict
    area_weight: float = 1.0

    def axes(self):
        nx, ny, nu, nv = self.shape
        return (np.arange(nx) / nx, np.arange(ny) / ny,
                np.linspace(*self.u_range, nu), np.linspace(*self.v_range, nv))

    def steps(self):
        nx, ny, nu, nv = self.shape
        return (1.0 / nx, 1.0 / ny,
                (self.u_range[1] - self.u_range[0]) / (nu - 1),
                (self.v_range[1] - self.v_range[0]) / (nv - 1))

    def grid_scale(self):
        return max(self.steps())

    def closedness_residual(self):
        """Max discrete exterior-derivative component of the form."""
        d = _partials
        h = self.steps()
        worst = 0.0
        trip = [("x", "y", "u"), ("x", "y", "v"), ("x", "u", "v"), ("y", "u", "v")]
        for (i, j, k) in trip:
            val = (d(self.comps[_key(j, k)], AXES.index(i), h)
                   - d(self.comps[_key(i, k)], AXES.index(j), h)
                   + d(self.comps[_key(i, j)], AXES.index(k), h))
            worst = max(worst, float(np.max(np.abs(val))))
        return worst


def _key(i, j):
    order = {a: n for n, a in enumerate(AXES)}
    return (i, j) if order[i] < order[j] else (j, i)


def _sign(i, j):
    order = {a: n for n, a in enumerate(AXES)}
    return 1.0 if order[i] < order[j] else -1.0


def _partials(arr, axis, steps):
    """Central differences; periodic in x,y, one-sided at u,v edges."""
    h = steps[axis]
    if axis < 2:
        return (np.roll(arr, -1, axis=axis) - np.roll(arr, 1, axis=axis)) / (2 * h)
    out = np.gradient(arr, h, axis=axis, edge_order=2)
    return out


def split_form(shape, u_range=(0.0, 1.0), v_range=(0.0, 1.0), area_weight=1.0):
    """The product form omega (+) du^dv sampled on the grid."""
    comps = {pair: np.zeros(shape) for pair in PAIRS}
    comps[("x", "y")] += area_weight
    comps[("u", "v")] += 1.0
    return DiscreteTwoForm(shape, u_range, v_range, comps, area_weight)


def perturbed_split_form(shape, amplitude=0.25, u_range=(0.0, 1.0),
                         v_range=(0.0, 1.0), area_weight=1.0):
    """Split form plus an exact interior perturbation d(eta).

    eta = g du + f dv with g, f smooth products of interior bumps in (u, v)
    and periodic factors in (x, y); d(eta) is sampled from its closed form,
    so the grid form is exact up to finite differences.
    """
    form = split_form(shape, u_range, v_range, area_weight)
    X, Y, U, V = np.meshgrid(*form.axes(), indexing="ij")

    def uwin(u):
        s = (u - u_range[0]) / (u_range[1] - u_range[0])
        return np.sin(math.pi * np.clip(s, 0, 1)) ** 4

    def vwin(v):
        s = (v - v_range[0]) / (v_range[1] - v_range[0])
        return np.sin(math.pi * np.clip(s, 0, 1)) ** 4

    two_pi = 2 * math.pi
    su = (u_range[1] - u_range[0])
    sv = (v_range[1] - v_range[0])
    g = amplitude * np.sin(two_pi * X) * np.cos(two_pi * Y) * uwin(U) * vwin(V)
    f = amplitude * np.cos(two_pi * X) * np.sin(two_pi * Y) * uwin(U) * vwin(V)

    # analytic partial derivatives of the window products
    def duwin(u):
        s = (u - u_range[0]) / su
        s = np.clip(s, 0, 1)
        return 4 * np.sin(math.pi * s) ** 3 * np.cos(math.pi * s) * math.pi / su

    def dvwin(v):
        s = (v - v_range[0]) / sv
        s = np.clip(s, 0, 1)
        return 4 * np.sin(math.pi * s) ** 3 * np.cos(math.pi * s) * math.pi / sv

    gx = amplitude * two_pi * np.cos(two_pi * X) * np.cos(two_pi * Y) * uwin(U) * vwin(V)
    gy = -amplitude * two_pi * np.sin(two_pi * X) * np.sin(two_pi * Y) * uwin(U) * vwin(V)
    gv = amplitude * np.sin(two_pi * X) * np.cos(two_pi * Y) * uwin(U) * dvwin(V)
    fx = -amplitude * two_pi * np.sin(two_pi * X) * np.sin(two_pi * Y) * uwin(U) * vwin(V)
    fy = amplitude * two_pi * np.cos(two_pi * X) * np.cos(two_pi * Y) * uwin(U) * vwin(V)
    fu = amplitude * np.cos(two_pi * X) * np.sin(two_pi * Y) * duwin(U) * vwin(V)

    # d(g du + f dv) = gx dx^du + gy dy^du + gv dv^du
    #                + fx dx^dv + fy dy^dv + fu du^dv
    form.comps[("x", "u")] += gx
    form.comps[("y", "u")] += gy
    form.comps[("x", "v")] += fx
    form.comps[("y", "v")] += fy
    form.comps[("u", "v")] += fu - gv
    return form


# ---------------------------------------------------------------------------
# primitive by sparse least squares
# ---------------------------------------------------------------------------

def _exterior_matrix(form, collar_weight=10.0, collar=2):
    """Sparse operator rows for d(pi) = theta plus boundary-collar penalties."""
    nx, ny, nu, nv = form.shape
    steps = form.steps()
    n_nodes = nx * ny * nu * nv
    idx = np.arange(n_nodes).reshape(form.shape)

    rows, cols, vals = [], [], []
    rhs_blocks = []
    row0 = 0

    def add_partial(comp_axis, diff_axis, sign, row_base):
        """rows += sign * d(pi_comp)/d(axis)."""
        h = steps[diff_axis]
        if diff_axis < 2:
            fwd = np.roll(idx, -1, axis=diff_axis).ravel()
            bwd = np.roll(idx, 1, axis=diff_axis).ravel()
            rows.extend([row_base + np.arange(n_nodes)] * 2)
            cols.append(comp_axis * n_nodes + fwd)
            vals.append(np.full(n_nodes, sign / (2 * h)))
            cols.append(comp_axis * n_nodes + bwd)
            vals.append(np.full(n_nodes, -sign / (2 * h)))
        else:
            # one-sided 2nd-order at the u/v edges, central inside
            n_ax = form.shape[diff_axis]
            sl_all = [slice(None)] * 4
            for pos in range(n_ax):
                sl = list(sl_all)
                sl[diff_axis] = pos
                node_ids = idx[tuple(sl)].ravel()
                if pos == 0:
                    offs, ws = (0, 1, 2), (-1.5, 2.0, -0.5)
                elif pos == n_ax - 1:
                    offs, ws = (0, -1, -2), (1.5, -2.0, 0.5)
                else:
                    offs, ws = (1, -1), (0.5, -0.5)
                for o, wgt in zip(offs, ws):
                    sl2 = list(sl_all)
                    sl2[diff_axis] = pos + o
                    rows.append(row_base + node_ids)
                    cols.append(comp_axis * n_nodes + idx[tuple(sl2)].ravel())
                    vals.append(np.full(node_ids.shape, sign * wgt / h))

    theta = {}
    for pair in PAIRS:
        comp = form.comps[pair].copy()
        if pair == ("x", "y"):
            comp = comp - form.area_weight
        elif pair == ("u", "v"):
            comp = comp - 1.0
        theta[pair] = comp

    for pair in PAIRS:
        i, j = pair
        ai, aj = AXES.index(i), AXES.index(j)
        add_partial(aj, ai, +1.0, row0)   # d_i pi_j
        add_partial(ai, aj, -1.0, row0)   # - d_j pi_i
        rhs_blocks.append(theta[pair].ravel())
        row0 += n_nodes

    # boundary collar: pi ~ 0 near the u/v edges
    mask = np.zeros(form.shape, dtype=bool)
    mask[:, :, :collar, :] = True
    mask[:, :, -collar:, :] = True
    mask[:, :, :, :collar] = True
    mask[:, :, :, -collar:] = True
    bnodes = idx[mask].ravel()
    for comp_axis in range(4):
        rows.append(row0 + np.arange(len(bnodes)))
        cols.append(comp_axis * n_nodes + bnodes)
        vals.append(np.full(len(bnodes), collar_weight))
        rhs_blocks.append(np.zeros(len(bnodes)))
        row0 += len(bnodes)

    A = coo_matrix(
        (np.concatenate(vals),
         (np.concatenate(rows), np.concatenate(cols))),
        shape=(row0, 4 * n_nodes)).tocsr()
    b = np.concatenate(rhs_blocks)
    return A, b, theta


# ---------------------------------------------------------------------------
# moser flow
# ---------------------------------------------------------------------------

def _interp(axes, arr):
    return RegularGridInterpolator(axes, arr, method="linear",
                                   bounds_error=False, fill_value=None)


def moser_split(form, n_time=16, residual_bound=5e-2, lsqr_tol=1e-10,
                collar_weight=10.0):
    """Grid Moser step: isotope tau to the split form, report the residual.

    Returns a report with the sampled time-1 map, the pullback residual
    ||h_1^*(tau_1) - tau_0||_inf, the positivity-chain margin, and the
    least-squares primitive residual. Raises NondegeneracyFailed when the
    disc restriction rho is not positive (or the interpolating family
    degenerates), ResidualTooLarge when the pullback residual exceeds
    `residual_bound`.
    """
    a_w = form.area_weight
    fiber_defect = float(np.max(np.abs(form.comps[("x", "y")] - a_w)))
    rho = form.comps[("u", "v")]
    if float(np.min(rho)) <= 0.0:
        raise NondegeneracyFailed(
            f"disc restriction has min {float(np.min(rho)):.4g} <= 0")
    # normal-form fields (du^alpha = -alpha_1 dx^du - alpha_2 dy^du, etc.)
    alpha1 = -form.comps[("x", "u")]
    alpha2 = -form.comps[("y", "u")]
    beta1 = -form.comps[("x", "v")]
    beta2 = -form.comps[("y", "v")]

    # positivity chain of tau_t at the grid nodes
    ts = np.linspace(0.0, 1.0, n_time + 1)
    chain_min = float("inf")
    for t in ts:
        rho_t = 1.0 - t + t * rho
        top = rho_t * a_w - (t ** 2) * (alpha1 * beta2 - alpha2 * beta1)
        chain_min = min(chain_min, float(np.min(top)))
    if chain_min <= 0.0:
        raise NondegeneracyFailed(
            f"interpolating family degenerates (min top coefficient {chain_min:.4g})")

    # primitive of theta = tau - tau_0
    A, b, theta = _exterior_matrix(form, collar_weight=collar_weight)
    sol = lsqr(A, b, atol=lsqr_tol, btol=lsqr_tol, iter_lim=4000)
    pi_flat, lsqr_residual = sol[0], float(sol[3])
    n_nodes = int(np.prod(form.shape))
    pi = [pi_flat[k * n_nodes:(k + 1) * n_nodes].reshape(form.shape)
          for k in range(4)]

    axes = form.axes()
    pi_i = [_interp(axes, p) for p in pi]
    rho_i = _interp(axes, rho)
    a1_i, a2_i = _interp(axes, alpha1), _interp(axes, alpha2)
    b1_i, b2_i = _interp(axes, beta1), _interp(axes, beta2)

    def tau_t_matrix(P, t):
        """tau_t as (n,4,4) antisymmetric matrices at points P."""
        n = P.shape[0]
        M = np.zeros((n, 4, 4))
        r = 1.0 - t + t * rho_i(P)
        a1, a2 = t * a1_i(P), t * a2_i(P)
        b1, b2 = t * b1_i(P), t * b2_i(P)
        M[:, 0, 1] = a_w
        M[:, 2, 3] = r
        M[:, 0, 2] = -a1
        M[:, 1, 2] = -a2
        M[:, 0, 3] = -b1
        M[:, 1, 3] = -b2
        M -= np.transpose(M, (0, 2, 1))
        return M

    def wrap(P):
        Q = P.copy()
        Q[:, 0] %= 1.0
        Q[:, 1] %= 1.0
        Q[:, 2] = np.clip(Q[:, 2], form.u_range[0], form.u_range[1])
        Q[:, 3] = np.clip(Q[:, 3], form.v_range[0], form.v_range[1])
        return Q

    def velocity(P, t):
        # iota_V tau_t = -pi with antisymmetric component matrix M reads
        # M V = +pi in coordinates
        Pw = wrap(P)
        rhs = np.stack([p(Pw) for p in pi_i], axis=1)
        M = tau_t_matrix(Pw, t)
        return np.linalg.solve(M, rhs[:, :, None])[:, :, 0]

    X, Y, U, V = np.meshgrid(*axes, indexing="ij")
    P = np.stack([X.ravel(), Y.ravel(), U.ravel(), V.ravel()], axis=1)
    dt = 1.0 / n_time
    for k in range(n_time):
        t = k * dt
        k1 = velocity(P, t)
        k2 = velocity(P + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = velocity(P + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = velocity(P + dt * k3, t + dt)
        P = P + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    H = [P[:, k].reshape(form.shape) for k in range(4)]

    # pullback residual of tau_1 under the sampled map against tau_0;
    # periodic position components differentiate through wrapped numerators
    steps = form.steps()
    dH = np.empty((4, 4) + form.shape)   # dH[k, i] = d h^k / d axis_i
    for kcomp in range(4):
        arr = H[kcomp] % 1.0 if kcomp < 2 else H[kcomp]
        for iax in range(4):
            h = steps[iax]
            if iax < 2:
                num = np.roll(arr, -1, axis=iax) - np.roll(arr, 1, axis=iax)
                if kcomp < 2:
                    num = (num + 0.5) % 1.0 - 0.5
                dH[kcomp, iax] = num / (2 * h)
            else:
                if kcomp < 2:
                    # differences along u/v stay small; unwrap value jumps
                    g = np.diff(arr, axis=iax)
                    g = (g + 0.5) % 1.0 - 0.5
                    acc = np.concatenate(
                        [np.take(arr, [0], axis=iax),
                         np.take(arr, [0], axis=iax) + np.cumsum(g, axis=iax)],
                        axis=iax)
                    dH[kcomp, iax] = np.gradient(acc, h, axis=iax, edge_order=2)
                else:
                    dH[kcomp, iax] = np.gradient(arr, h, axis=iax, edge_order=2)
    Pw = wrap(np.stack([Hc.ravel() for Hc in H], axis=1))
    tau1 = tau_t_matrix(Pw, 1.0)
    grad = np.stack([np.stack([dH[kc, ia].ravel() for ia in range(4)], axis=1)
                     for kc in range(4)], axis=1)  # (n, kcomp, iax)
    pulled = np.einsum("nki,nkl,nlj->nij", grad, tau1, grad)
    tau0 = tau_t_matrix(Pw, 0.0) * 0.0
    tau0[:, 0, 1] = a_w
    tau0[:, 1, 0] = -a_w
    tau0[:, 2, 3] = 1.0
    tau0[:, 3, 2] = -1.0
    residual = float(np.max(np.abs(pulled - tau0)))
    report = {
        "grid": list(form.shape),
        "fiber_restriction_defect": fiber_defect,
        "closedness_residual": form.closedness_residual(),
        "positivity_chain_min": chain_min,
        "primitive_lsqr_residual": lsqr_residual,
        "pullback_residual": residual,
        "displacement_max": float(np.max(np.abs(P - np.stack(
            [X.ravel(), Y.ravel(), U.ravel(), V.ravel()], axis=1)))),
    }
    if residual > residual_bound:
        raise ResidualTooLarge(
            f"pullback residual {residual:.4g} exceeds {residual_bound}")
    report["map_samples"] = H
    return report