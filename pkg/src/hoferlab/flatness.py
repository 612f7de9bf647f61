"""Generating-function correspondence near the identity and flatness checks.

The chart identifies a neighborhood of the diagonal in (M x M, -omega (+)
omega) with the cotangent space of M through the symmetric (midpoint) map

    ((q, p), (Q, P))  ->  (base ((q+Q)/2, (p+P)/2), covector a(P-p, q-Q)),

where a is the constant chart weight of omega = a dq^dp (1 for the plane
and the sphere's polar cap, the total area for the unit torus). Under this
chart the isotopy of the section family t dF is the implicit midpoint step

    Q = q - (t/a) F_y(mid),   P = p + (t/a) F_x(mid),

solved pointwise by fixed-point/Newton iteration; the map is symplectic
exactly (midpoint rule), and its fixed points are the critical points of F
for every t. The generating Hamiltonian is recovered from the defining
relation iota_V omega = -dH by line integration from the fixed minimum,
normalized so inf_x H_t = 0.

Sign conventions (fixed here, asserted on every run): with this artifact's
flow convention the identities read

    F(q2) - F(q1) = int_0^1 (H_t(q2) - H_t(q1)) dt = A(q1, q2),

where A is the swept area of an arc from q1 to q2 computed with the chart
orientation of omega.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EndpointNotFixed, NewtonDiverged
from .expr import ScalarField
from .numerics import gauss_legendre, halton
from .paths import HamiltonianPath, NumericField
from .surfaces import sample_states, support_box


def chart_weight(surface):
    if surface.kind == "torus":
        return surface.area
    return 1.0


def weinstein_chart_residual(surface=None):
    """Symplecticity defect of the midpoint identification (exact linear map).

    The pullback of -d(lambda_can) under the chart equals -omega (+) omega;
    for the linear chart this is a finite-dimensional identity, checked
    here by assembling both constant 4x4 forms.
    """
    a = chart_weight(surface) if surface is not None else 1.0
    # coordinates (q, p, Q, P); chart: b = ((q+Q)/2, (p+P)/2),
    # xi = a (P - p, q - Q); -d lambda_can = db1^dxi1 + db2^dxi2
    Db1 = np.array([0.5, 0.0, 0.5, 0.0])
    Db2 = np.array([0.0, 0.5, 0.0, 0.5])
    Dx1 = a * np.array([0.0, -1.0, 0.0, 1.0])
    Dx2 = a * np.array([1.0, 0.0, -1.0, 0.0])

    def wedge(u, v):
        return np.outer(u, v) - np.outer(v, u)

    pullback = wedge(Db1, Dx1) + wedge(Db2, Dx2)
    omega2 = np.zeros((4, 4))
    omega2[0, 1] = -a   # -omega on the first factor
    omega2[1, 0] = a
    omega2[2, 3] = a    # +omega on the second
    omega2[3, 2] = -a
    return float(np.max(np.abs(pullback - omega2)))


@dataclass
class GeneratingFunction:
    field: ScalarField
    surface: object
    support: dict | None = None
    critical_points: np.ndarray | None = None

    def c2_norm(self, n=500):
        S = sample_states(self.surface, n, support=self.support)
        args = {"x": S[:, 0], "y": S[:, 1]}
        worst = float(np.max(np.abs(self.field.value(**args))))
        for c1 in ("x", "y"):
            worst = max(worst, float(np.max(np.abs(
                self.field.grad_component(c1, **args)))))
            for c2 in ("x", "y"):
                worst = max(worst, float(np.max(np.abs(
                    self.field.hess_component(c1, c2, **args)))))
        return worst

    def find_critical_points(self, n_starts=160, tol=1e-11):
        """Isolated interior critical points by multistart gradient-norm descent."""
        from scipy.optimize import minimize
        S = sample_states(self.surface, n_starts, support=self.support)
        fld = self.field

        def g2(xy):
            args = {"x": xy[0], "y": xy[1]}
            gx = float(np.asarray(fld.grad_component("x", **args)).reshape(-1)[0])
            gy = float(np.asarray(fld.grad_component("y", **args)).reshape(-1)[0])
            return gx * gx + gy * gy

        found = []
        for s in S:
            res = minimize(g2, s, method="Nelder-Mead",
                           options={"xatol": 1e-13, "fatol": 1e-26,
                                    "maxiter": 400})
            if res.fun < tol ** 2:
                p = res.x
                # keep interior nondegenerate points, deduplicate
                args = {"x": p[0], "y": p[1]}
                hxx = float(np.asarray(fld.hess_component("x", "x", **args)).reshape(-1)[0])
                hxy = float(np.asarray(fld.hess_component("x", "y", **args)).reshape(-1)[0])
                hyy = float(np.asarray(fld.hess_component("y", "y", **args)).reshape(-1)[0])
                if abs(hxx * hyy - hxy * hxy) < 1e-10:
                    continue
                if not any(np.linalg.norm(p - q) < 1e-6 for q in found):
                    found.append(p)
        self.critical_points = np.asarray(sorted(found, key=lambda p: (p[0], p[1])))
        return self.critical_points


class MidpointIsotopy:
    """The isotopy of the section family t dF under the midpoint chart."""

    def __init__(self, gen, max_iter=200, tol=1e-13):
        self.gen = gen
        self.weight = chart_weight(gen.surface)
        self.max_iter = max_iter
        self.tol = tol

    def _step(self, X, t):
        """Solve the implicit midpoint relation from initial guess X."""
        fld = self.gen.field
        q, p = X[:, 0], X[:, 1]
        Q, P = q.copy(), p.copy()
        s = t / self.weight
        for _ in range(self.max_iter):
            mx, my = 0.5 * (q + Q), 0.5 * (p + P)
            gx = np.asarray(fld.grad_component("x", x=mx, y=my), dtype=float)
            gy = np.asarray(fld.grad_component("y", x=mx, y=my), dtype=float)
            Qn = q - s * gy
            Pn = p + s * gx
            delta = float(np.max(np.hypot(Qn - Q, Pn - P)))
            Q, P = Qn, Pn
            if delta < self.tol:
                break
        else:
            raise NewtonDiverged(
                f"midpoint solve did not converge at t={t} (input too large)")
        return np.stack([Q, P], axis=1)

    def apply(self, points, t):
        """psi_t on an (N,2) batch."""
        X = np.atleast_2d(np.asarray(points, dtype=float))
        if abs(t) < 1e-300:
            return X.copy()
        return self._step(X, t)

    def apply_inverse(self, points, t):
        """psi_t^{-1}; the midpoint rule is time-reversible."""
        return self.apply(points, -t)

    def velocity(self, points, t, dt=1e-5):
        """d/dt psi_t at psi_t(points), i.e. V_t o psi_t (central FD)."""
        X = np.atleast_2d(np.asarray(points, dtype=float))
        return (self.apply(X, t + dt) - self.apply(X, t - dt)) / (2 * dt)

    def hamiltonian_at(self, points, t, anchor, n_panels=8, n_gl=12):
        """H_t at points via line integration of iota_V omega from anchor.

        Uses dH = -iota_V omega along straight chart segments; the anchor
        value is 0 (it is the fixed minimum after normalization). Composite
        Gauss panels keep the error small across the profile's C^2 knots.
        """
        X = np.atleast_2d(np.asarray(points, dtype=float))
        a0 = np.asarray(anchor, dtype=float)
        nodes, wts = gauss_legendre(n_gl)
        s_nodes = np.concatenate(
            [(k + 0.5 * (nodes + 1.0)) / n_panels for k in range(n_panels)])
        w_all = np.tile(wts, n_panels) / (2.0 * n_panels)
        seg = X - a0[None, :]
        allpts = a0[None, None, :] + s_nodes[None, :, None] * seg[:, None, :]
        flat = allpts.reshape(-1, 2)
        back = self.apply_inverse(flat, t)
        V = self.velocity(back, t).reshape(X.shape[0], -1, 2)
        # iota_V omega (W) = a (V1 W2 - V2 W1); dH = -iota_V omega
        integrand = -self.weight * (V[:, :, 0] * seg[:, None, 1]
                                    - V[:, :, 1] * seg[:, None, 0])
        return integrand @ w_all


def isotopy_from_generating(gen, n_check=60):
    """Build the midpoint isotopy of t dF and its recovered Hamiltonian path.

    Returns (isotopy, HamiltonianPath); the path's field evaluates H_t by
    anchored line integration with inf_x H_t = 0 (anchored at the minimum
    of F, which is a fixed point of the isotopy).
    """
    iso = MidpointIsotopy(gen)
    crit = gen.critical_points if gen.critical_points is not None \
        else gen.find_critical_points()
    if len(crit) == 0:
        raise NewtonDiverged("no critical points found for the profile")
    vals = [float(np.asarray(gen.field.value(x=c[0], y=c[1])).reshape(-1)[0])
            for c in crit]
    anchor = crit[int(np.argmin(vals))]

    def H_fn(x=0.0, y=0.0, z=0.0, t=0.0):
        X = np.stack([np.broadcast_to(np.asarray(x, float), np.shape(x) or (1,)).ravel(),
                      np.broadcast_to(np.asarray(y, float), np.shape(x) or (1,)).ravel()],
                     axis=1)
        vals = iso.hamiltonian_at(X, float(t), anchor)
        if np.shape(x) == ():
            return float(vals[0])
        return vals.reshape(np.shape(x))

    fld = NumericField(H_fn, wrt=("x", "y"), time_dependent=True,
                       source="<recovered from generating profile>")
    path = HamiltonianPath(gen.surface, fld, (0.0, 1.0), gen.support,
                           normalized=True, name="generating-isotopy")
    return iso, path


def swept_area(iso, arc, n_t=32, s_panels=12, s_gl=8, fd=1e-5):
    """Area swept by an arc under the isotopy: int Psi^*(omega).

    `arc` is a callable s in [0,1] -> (2,) chart point, or an (m, 2)
    polyline (interpolated by arc length). The endpoints must be fixed
    points of the isotopy (EndpointNotFixed otherwise). The sweep
    Psi(s, t) = psi_t(arc(s)) is integrated with Gauss nodes in t and
    composite Gauss panels in s, with central differences for the partials.
    """
    if callable(arc):
        def arc_at(svals):
            return np.asarray([arc(float(s)) for s in np.atleast_1d(svals)],
                              dtype=float)
    else:
        pts_arr = np.asarray(arc, dtype=float)
        segs = np.diff(pts_arr, axis=0)
        lens = np.linalg.norm(segs, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(lens)])
        total = cum[-1]

        def arc_at(svals):
            s = np.clip(np.asarray(svals, float), 0.0, 1.0) * total
            idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0,
                          len(segs) - 1)
            frac = (s - cum[idx]) / np.maximum(lens[idx], 1e-300)
            return pts_arr[idx] + frac[:, None] * segs[idx]

    for end_s in (0.0, 1.0):
        end = arc_at([end_s])[0]
        moved = iso.apply(end[None, :], 1.0)[0]
        if float(np.linalg.norm(moved - end)) > 1e-9:
            raise EndpointNotFixed(f"arc endpoint {end} moves under the isotopy")

    gl_s, w_s = gauss_legendre(s_gl)
    s_nodes = np.concatenate(
        [(k + 0.5 * (gl_s + 1.0)) / s_panels for k in range(s_panels)])
    w_all = np.tile(w_s, s_panels) / (2.0 * s_panels)
    gl_t, w_t = gauss_legendre(n_t)
    t_nodes = 0.5 * (gl_t + 1.0)

    pts = arc_at(s_nodes)
    plus_s = arc_at(np.minimum(s_nodes + fd, 1.0))
    minus_s = arc_at(np.maximum(s_nodes - fd, 0.0))
    ds_eff = np.minimum(s_nodes + fd, 1.0) - np.maximum(s_nodes - fd, 0.0)
    a = iso.weight
    vals = np.zeros((len(s_nodes), n_t))
    for j, t in enumerate(t_nodes):
        Psi_s = (iso.apply(plus_s, t) - iso.apply(minus_s, t)) / ds_eff[:, None]
        Psi_t = (iso.apply(pts, t + fd) - iso.apply(pts, t - fd)) / (2 * fd)
        vals[:, j] = a * (Psi_s[:, 0] * Psi_t[:, 1] - Psi_s[:, 1] * Psi_t[:, 0])
    return 0.5 * float(w_all @ vals @ w_t)


def _bent_arc(q1, q2, bend):
    """Smooth quadratic arc from q1 to q2 through an offset midpoint."""
    q1 = np.asarray(q1, float)
    q2 = np.asarray(q2, float)
    mid = 0.5 * (q1 + q2)
    d = q2 - q1
    normal = np.array([-d[1], d[0]])
    ctrl = mid + bend * normal

    def arc(s):
        return ((1 - s) ** 2) * q1 + 2 * s * (1 - s) * ctrl + (s ** 2) * q2
    return arc


def verify_flatness(gen, t_nodes=17, n_samples=200):
    """Full identity report for one generating profile.

    Checks, with every quantity measured independently:
      * length identity: L(psi_t) = max F - min F;
      * fixed extrema: the arg-extrema of F attain the extrema of H_t for
        all sampled t (against a quasi-random sample cloud);
      * time-curve identity F(q2)-F(q1) = int (H_t(q2)-H_t(q1)) dt over
        all critical pairs;
      * swept-area identity and arc independence across three arcs.
    """
    iso, path = isotopy_from_generating(gen)
    crit = gen.critical_points
    fld = gen.field
    cvals = np.array([float(np.asarray(fld.value(x=c[0], y=c[1])).reshape(-1)[0])
                      for c in crit])
    i_min, i_max = int(np.argmin(cvals)), int(np.argmax(cvals))
    P, p = crit[i_max], crit[i_min]
    osc_F = float(cvals[i_max] - cvals[i_min])
    anchor = p

    ts = np.linspace(0.0, 1.0, t_nodes)
    S = sample_states(gen.surface, n_samples, support=gen.support)
    max_track, min_track = [], []
    fixed_max_defect = 0.0
    fixed_min_defect = 0.0
    for t in ts:
        hc = iso.hamiltonian_at(crit, float(t), anchor)
        hs = iso.hamiltonian_at(S, float(t), anchor)
        hmax, hmin = float(np.max(hc)), float(np.min(hc))
        max_track.append(hmax)
        min_track.append(hmin)
        fixed_max_defect = max(fixed_max_defect,
                               float(np.max(hs)) - float(hc[i_max]))
        fixed_min_defect = max(fixed_min_defect,
                               float(hc[i_min]) - float(np.min(hs)))

    # Gauss quadrature of the extremum gap over t (tracks are smooth here:
    # the extrema sit at fixed critical points)
    nodes, wts = gauss_legendre(33)
    tq = 0.5 * (nodes + 1.0)
    gaps = []
    h_at_P = []
    for t in tq:
        hc = iso.hamiltonian_at(np.stack([P, p]), float(t), anchor)
        gaps.append(float(hc[0] - hc[1]))
        h_at_P.append(float(hc[0]))
    L = 0.5 * float(np.dot(wts, gaps))

    # time-curve identity over all critical pairs
    pair_defect = 0.0
    for i in range(len(crit)):
        for j in range(len(crit)):
            if i == j:
                continue
            vals = []
            for t in tq:
                hc = iso.hamiltonian_at(np.stack([crit[j], crit[i]]), float(t),
                                        anchor)
                vals.append(float(hc[0] - hc[1]))
            lhs = float(cvals[j] - cvals[i])
            rhs = 0.5 * float(np.dot(wts, vals))
            pair_defect = max(pair_defect, abs(lhs - rhs))

    # swept-area identity and arc independence (three arcs p -> P)
    def straight(s):
        return p + s * (P - p)

    arcs = [straight, _bent_arc(p, P, 0.25), _bent_arc(p, P, -0.4)]
    areas = [swept_area(iso, arc) for arc in arcs]
    area_spread = float(np.max(areas) - np.min(areas))
    swept_defect = abs(areas[0] - osc_F)

    return {
        "oscillation_F": osc_F,
        "length": L,
        "length_identity_defect": abs(L - osc_F),
        "fixed_max_defect": fixed_max_defect,
        "fixed_min_defect": fixed_min_defect,
        "time_curve_identity_defect": pair_defect,
        "swept_areas": areas,
        "swept_area_spread": area_spread,
        "swept_area_identity_defect": swept_defect,
        "critical_points": crit.tolist(),
        "c2_norm": gen.c2_norm(),
        "chart_residual": weinstein_chart_residual(gen.surface),
    }
