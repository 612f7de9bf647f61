"""Thickened graph regions, monodromy gluing, areas, and the comparison law.

Geometry lives in M x R x [0,1] with the split form Omega_0 = omega (+)
ds^dt. Characteristics of a graph hypersurface {s = H_t(x)} flow by the
field with iota_X omega = +dH, which is this artifact's Hamiltonian flow of
-H; the gluing machinery uses those characteristic flows throughout. The
glued region

    R_{H,K}(nu) = {(x, s, t): lambda(t) <= s <= mu_K(t) + F_t(x)}

attaches the region under the graph of H to the region over the graph of K
along the graph identification

    Phi(x, s, t) = (f_t(x), s + H_t(f_t(x)) - K_t(x), t),

with f_t = phi_t o psi_t^{-1} and F_t(y) = H_t(y) - K_t(psi_t phi_t^{-1} y).
Hamiltonians are normalized to inf_x = 0 by a time-dependent shift before
gluing (the shift is constant in x, so flows are unchanged; the shifted
field may be a nonzero constant at infinity, which the area bookkeeping
accounts for).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import EndpointMismatch, InconsistentArea
from .expr import Bin, Num, ScalarField, fold
from .flow import integrate_batch
from .lengths import calabi, length, tracks, totvar
from .numerics import adaptive_quad_batch, plateau_ramp
from .paths import HamiltonianPath
from .surfaces import field_args, sample_states, support_box, wrap_half

RAMP_WIDTH = 0.1  # time fraction of the quintic thickening ramps


# ---------------------------------------------------------------------------
# characteristic flows
# ---------------------------------------------------------------------------

_NEG_MEMO: dict = {}


def _negated(fld):
    key = id(fld)
    if key not in _NEG_MEMO:
        if isinstance(fld, ScalarField):
            _NEG_MEMO[key] = ScalarField(fold(Bin("-", Num(0.0), fld.ast)),
                                         wrt=fld.wrt)
        else:
            from .paths import NumericField
            _NEG_MEMO[key] = NumericField(
                lambda **b: -np.asarray(fld.value(**b), float),
                wrt=fld.wrt, time_dependent=fld.time_dependent)
    return _NEG_MEMO[key]


def _char_field(path):
    """Field whose artifact-flow is the characteristic flow of the graph."""
    return _negated(path.field)


def char_flow(path, states, t_from, t_to, tol=1e-11):
    """Characteristic flow of the path's graph between two times (batched)."""
    if abs(t_to - t_from) < 1e-15:
        return np.atleast_2d(np.asarray(states, dtype=float))
    core = getattr(path, "core", None)
    if core is not None:
        G, gamma = core[0], core[1]
        p0 = gamma(t_from)
        p1 = gamma(t_to)
        if abs(p1 - p0) < 1e-15:
            return np.atleast_2d(np.asarray(states, dtype=float))
        _, ys = integrate_batch(path.surface, _negated(G), states, (p0, p1),
                                tol=tol)
        return ys[-1]
    _, ys = integrate_batch(path.surface, _char_field(path), states,
                            (t_from, t_to), tol=tol)
    return ys[-1]


def _compose_flow(path_fwd, path_bwd, states, t, tol=1e-11):
    """phi^{fwd}_t o (phi^{bwd}_t)^{-1} applied to states (batched).

    With declared autonomous cores this collapses to a single flow of the
    shared core for the parameter difference.
    """
    c1 = getattr(path_fwd, "core", None)
    c2 = getattr(path_bwd, "core", None)
    if c1 is not None and c2 is not None and c1[0] is c2[0]:
        G = c1[0]
        dp = c1[1](t) - c2[1](t)
        if abs(dp) < 1e-15:
            return np.atleast_2d(np.asarray(states, dtype=float))
        _, ys = integrate_batch(path_fwd.surface, _negated(G), states,
                                (0.0, dp), tol=tol)
        return ys[-1]
    back = char_flow(path_bwd, states, t, 0.0, tol=tol)
    return char_flow(path_fwd, back, 0.0, t, tol=tol)


def _compose_flow_many(path_fwd, path_bwd, states, ts, tol=1e-10):
    """_compose_flow at many times; shared-core pairs ride one trajectory.

    Returns a dict t -> transported state batch. For a shared core the
    composite map at every t lies on the same core trajectory, so one
    forward and one backward sweep record every needed parameter.
    """
    ts = [float(t) for t in ts]
    c1 = getattr(path_fwd, "core", None)
    c2 = getattr(path_bwd, "core", None)
    out = {}
    if c1 is not None and c2 is not None and c1[0] is c2[0]:
        G = c1[0]
        neg = _negated(G)
        dps = {t: c1[1](t) - c2[1](t) for t in ts}
        S = np.atleast_2d(np.asarray(states, dtype=float))
        by_dp = {}
        for t, dp in dps.items():
            by_dp.setdefault(round(dp, 15), []).append(t)
        pos = sorted(dp for dp in by_dp if dp > 1e-15)
        neg_dps = sorted((dp for dp in by_dp if dp < -1e-15), reverse=True)
        for sweep in (pos, neg_dps):
            if not sweep:
                continue
            rec_ts, ys = integrate_batch(path_fwd.surface, neg, S,
                                         (0.0, sweep[-1]), tol=tol,
                                         t_record=sweep)
            recorded = {round(float(p), 15): ys[i] for i, p in enumerate(rec_ts)}
            for dp in sweep:
                for t in by_dp[dp]:
                    out[t] = recorded[round(float(dp), 15)]
        for dp, tlist in by_dp.items():
            if abs(dp) <= 1e-15:
                for t in tlist:
                    out[t] = S
        return out
    for t in ts:
        out[t] = _compose_flow(path_fwd, path_bwd, states, t, tol=tol)
    return out


def same_path(a, b):
    return a is b or (a.surface.kind == b.surface.kind
                      and getattr(a.field, "source", 1) == getattr(b.field, "source", 2)
                      and a.interval == b.interval)


# ---------------------------------------------------------------------------
# graph regions
# ---------------------------------------------------------------------------

@dataclass
class GraphRegion:
    path: HamiltonianPath
    side: str            # "under" | "over"
    nu: float
    delta: float
    ramp_width: float = RAMP_WIDTH

    def lam(self, ts):
        """Lower profile lambda(t) in [-delta, 0], -delta off the ramps."""
        a, b = self.path.interval
        tt = (np.asarray(ts, dtype=float) - a) / (b - a)
        return -self.delta * plateau_ramp(tt, self.ramp_width)

    def mu(self, ts):
        """Upper profile: normalized max track plus the ramp allowance."""
        a, b = self.path.interval
        tt = (np.asarray(ts, dtype=float) - a) / (b - a)
        ramp = self.delta * plateau_ramp(tt, self.ramp_width)
        base = np.array([totvar(self.path, float(t)) for t in np.atleast_1d(ts)])
        return base + ramp

    def thickening_areas(self, tol=1e-10):
        """(lower, upper) thickening areas; each must equal nu/2."""
        a, b = self.path.interval

        def f(ts):
            lam = -self.lam(ts)
            a_, b_ = self.path.interval
            tt = (np.asarray(ts) - a_) / (b_ - a_)
            up = self.delta * plateau_ramp(tt, self.ramp_width)
            return np.stack([lam, up], axis=1)

        vals, _, _ = adaptive_quad_batch(f, a, b, tol=tol)
        return float(vals[0]), float(vals[1])


def thicken(path, nu):
    """Thickened regions under and over the graph, each of extra area nu/2.

    Profiles are quintic plateau ramps of time-width RAMP_WIDTH; the height
    delta solves the area normalization delta * (1 - w) = nu / 2.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    a, b = path.interval
    delta = nu / (2.0 * (1.0 - RAMP_WIDTH) * (b - a))
    return (GraphRegion(path, "under", nu, delta),
            GraphRegion(path, "over", nu, delta))


# ---------------------------------------------------------------------------
# quasi-cylinders
# ---------------------------------------------------------------------------

def _norm_shift(path, t):
    """inf_x H_t, the normalization shift (continuous, maybe kinked)."""
    return tracks(path).at(float(t), "min")[0]


@dataclass
class QuasiCylinder:
    lower_path: HamiltonianPath    # H: region under its graph
    upper_path: HamiltonianPath    # K: region over its graph
    nu: float
    orientation: str               # "R_{H,K}"
    under: GraphRegion
    over: GraphRegion
    identity_gluing: bool

    def F(self, states, t):
        """Normalized transition Hamiltonian F_t on a state batch."""
        return self.F_batch(states, [t])[float(t)]

    def F_batch(self, states, ts):
        """F_t for many times at once (one trajectory sweep per core pair)."""
        H, K = self.lower_path, self.upper_path
        S = np.atleast_2d(np.asarray(states, dtype=float))
        if self.identity_gluing:
            return {float(t): np.zeros(S.shape[0]) for t in ts}
        moved = _compose_flow_many(K, H, S, ts)   # psi_t o phi_t^{-1}
        out = {}
        for t in (float(x) for x in ts):
            hv = H.values(S, t) - _norm_shift(H, t)
            kv = K.values(moved[t], t) - _norm_shift(K, t)
            out[t] = hv - kv
        return out

    def gluing_map(self, pts):
        """Graph identification applied to (x1, x2, s, t) sample rows."""
        P = np.atleast_2d(np.asarray(pts, dtype=float))
        H, K = self.lower_path, self.upper_path
        out = np.empty_like(P)
        for t in np.unique(P[:, 3]):
            rows = np.nonzero(P[:, 3] == t)[0]
            X = P[rows, :2]
            if self.identity_gluing:
                fx = X
                shift = 0.0
            else:
                fx = _compose_flow(H, K, X, float(t))   # phi_t o psi_t^{-1}
                hv = H.values(fx, float(t)) - _norm_shift(H, float(t))
                kv = K.values(X, float(t)) - _norm_shift(K, float(t))
                shift = hv - kv
            out[rows, :2] = fx
            out[rows, 2] = P[rows, 2] + shift
            out[rows, 3] = t
        return out

    def gluing_map_inverse(self, pts):
        P = np.atleast_2d(np.asarray(pts, dtype=float))
        H, K = self.lower_path, self.upper_path
        out = np.empty_like(P)
        for t in np.unique(P[:, 3]):
            rows = np.nonzero(P[:, 3] == t)[0]
            Y = P[rows, :2]
            if self.identity_gluing:
                gy = Y
                shift = 0.0
            else:
                gy = _compose_flow(K, H, Y, float(t))   # psi_t o phi_t^{-1}
                hv = H.values(Y, float(t)) - _norm_shift(H, float(t))
                kv = K.values(gy, float(t)) - _norm_shift(K, float(t))
                shift = hv - kv
            out[rows, :2] = gy
            out[rows, 2] = P[rows, 2] - shift
            out[rows, 3] = t
        return out

    def fiber_area(self, states, tol=1e-9):
        """Per-fiber disc areas int (mu_K + F_t(x) - lambda) dt (batched).

        The profile part (mu_K - lambda, cheap but kinked where the
        arg-extremum jumps) and the transition part (F_t, flow-backed but
        smooth in t) are integrated on separate adaptive grids.
        """
        S = np.atleast_2d(np.asarray(states, dtype=float))
        a, b = self.lower_path.interval

        def profile(ts):
            ts = np.atleast_1d(ts)
            return self.over.mu(ts) - self.under.lam(ts)

        from .numerics import adaptive_quad
        base, _, _ = adaptive_quad(profile, a, b, tol=tol)
        if self.identity_gluing:
            return np.full(S.shape[0], base)

        def f(ts):
            fb = self.F_batch(S, list(np.atleast_1d(ts)))
            return np.asarray([fb[float(t)] for t in np.atleast_1d(ts)])

        vals, errs, ok = adaptive_quad_batch(f, a, b, tol=tol, max_panels=256)
        return base + vals

    def declared_area(self):
        return length(self.upper_path) + self.nu


def glue(H, K, nu, endpoint_tol=1e-6, endpoint_grid=12, _skip_endpoint_check=False):
    """Glue the region under graph(H) to the region over graph(K).

    Precondition: the time-1 characteristic maps agree on a test grid
    within `endpoint_tol` (EndpointMismatch otherwise). The K = H case
    reduces to the identity gluing exactly (group law), which realizes the
    split product cylinder. `_skip_endpoint_check` exists for fault
    injection in tests.
    """
    if H.surface.kind != K.surface.kind:
        raise EndpointMismatch("paths live on different surfaces")
    identity = same_path(H, K)
    if not identity and not _skip_endpoint_check:
        S = sample_states(H.surface, endpoint_grid * endpoint_grid,
                          support=H.support)
        endH = char_flow(H, S, H.interval[0], H.interval[1])
        endK = char_flow(K, S, K.interval[0], K.interval[1])
        d = endH - endK
        if H.surface.kind == "torus":
            d = wrap_half(d)
        worst = float(np.max(np.linalg.norm(d, axis=1)))
        if worst > endpoint_tol:
            raise EndpointMismatch(
                f"time-1 maps differ by {worst:.3e} > {endpoint_tol}")
    under_H, _ = thicken(H, nu)
    _, over_K = thicken(K, nu)
    return QuasiCylinder(H, K, nu, "R_{H,K}", under_H, over_K, identity)


def verify_gluing_symplectic(Q, samples=1000, fd_step=1e-5, t_values=8,
                             tol=1e-11):
    """Max symplecticity defect of the gluing map at sampled points.

    At each sample the 4x4 Jacobian J of the map is taken by central
    differences (the x-stencil flows advance in one common-step batch per
    time value, so the differences stay smooth); the reported residual is
    max ||J^T Omega_0 J - Omega_0||_inf with Omega_0 = omega (+) ds^dt.
    """
    surface = Q.lower_path.surface
    a_w = 1.0 if surface.kind == "plane" else surface.area
    Omega = np.array([[0.0, a_w, 0.0, 0.0],
                      [-a_w, 0.0, 0.0, 0.0],
                      [0.0, 0.0, 0.0, 1.0],
                      [0.0, 0.0, -1.0, 0.0]])
    n_space = max(1, samples // t_values)
    S = sample_states(surface, n_space, support=Q.upper_path.support)
    t0, t1 = Q.lower_path.interval
    ts = t0 + (t1 - t0) * (np.arange(t_values) + 0.5) / t_values
    worst = 0.0
    h = fd_step
    for t in ts:
        mu = float(Q.over.mu(np.array([t]))[0])
        svals = 0.25 * mu + 0.5 * mu * ((np.arange(n_space) % 5) / 5.0)
        base = np.stack([S[:, 0], S[:, 1], svals, np.full(n_space, t)], axis=1)
        cols = []
        for j in range(4):
            d = np.zeros(4)
            d[j] = h
            plus = Q.gluing_map(base + d)
            minus = Q.gluing_map(base - d)
            diff = plus - minus
            if surface.kind == "torus":
                diff[:, :2] = wrap_half(plus[:, :2] - minus[:, :2])
            cols.append(diff / (2 * h))
        J = np.stack(cols, axis=2)  # (n, 4, 4)
        R = np.einsum("nij,ik,nkl->njl", J, Omega, J) - Omega[None, :, :]
        worst = max(worst, float(np.max(np.abs(R))))
    return {"max_residual": worst, "samples": n_space * t_values,
            "fd_step": h}


def area(Q, n_fibers=20, tol=1e-9, deviation_tol=1e-4):
    """Quasi-cylinder area by fiber-disc quadrature, with independence report.

    Fibers are sampled inside and outside the supports; the mean is the
    area, and the max pairwise deviation plus the Calabi difference of the
    two generating paths make up the well-definedness report
    (InconsistentArea when the deviation exceeds `deviation_tol`).
    """
    surface = Q.lower_path.surface
    inside = sample_states(surface, n_fibers - 4, support=Q.lower_path.support)
    if surface.kind == "plane":
        box = support_box(Q.lower_path.support)
        far = max(abs(box[0][0]), abs(box[0][1]), abs(box[1][0]),
                  abs(box[1][1])) + 2.0
        outside = np.array([[far, 0.0], [0.0, far], [-far, far], [far, -far]])
        S = np.concatenate([inside, outside], axis=0)
    else:
        S = sample_states(surface, n_fibers)
    vals = Q.fiber_area(S, tol=tol)
    mean = float(np.mean(vals))
    dev = float(np.max(vals) - np.min(vals))
    cal_gap = abs(calabi(Q.lower_path) - calabi(Q.upper_path))
    report = {
        "area": mean,
        "max_pairwise_deviation": dev,
        "n_fibers": int(S.shape[0]),
        "calabi_gap": cal_gap,
        "declared_area": Q.declared_area(),
    }
    if dev > deviation_tol:
        raise InconsistentArea(
            f"fiber areas deviate by {dev:.3e} (calabi gap {cal_gap:.3e}); "
            "inputs are not an endpoint-matched homotopic pair",
            deviation=dev)
    return mean, report


def compare(H, K, nu, tol=1e-5):
    """Both glued areas, the volume sum identity, and the shorter-side flag.

    Checks area(R_{H,K}) + area(R_{K,H}) = len(H) + len(K) + 2 nu and flags
    which side is below len(H). Informational (no flag) when
    2 nu >= len(H) - len(K).
    """
    LH, LK = length(H), length(K)
    Q_hk = glue(H, K, nu)
    Q_kh = glue(K, H, nu)
    a_hk, rep_hk = area(Q_hk)
    a_kh, rep_kh = area(Q_kh)
    ssum = a_hk + a_kh
    expected = LH + LK + 2 * nu
    report = {
        "length_H": LH,
        "length_K": LK,
        "nu": nu,
        "area_R_HK": a_hk,
        "area_R_KH": a_kh,
        "sum": ssum,
        "expected_sum": expected,
        "sum_identity_defect": abs(ssum - expected),
        "sum_identity_ok": abs(ssum - expected) <= tol,
        "fiber_reports": {"R_HK": rep_hk, "R_KH": rep_kh},
    }
    if LK + 2 * nu < LH:
        sides = []
        if a_hk < LH - 1e-12:
            sides.append("R_HK")
        if a_kh < LH - 1e-12:
            sides.append("R_KH")
        report["informational"] = False
        report["short_sides"] = sides
        report["at_least_one_short"] = bool(sides)
    else:
        report["informational"] = True
        report["short_sides"] = []
    return report
