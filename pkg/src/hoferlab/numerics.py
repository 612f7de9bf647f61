"""Shared numerical kernels: quasi-random sequences, quadrature, ODE stepping.

Everything here is deterministic: fixed node tables, fixed refinement rules,
no wall-clock or RNG state. The ODE integrator is an embedded Dormand-Prince
5(4) pair that advances a whole batch of states with a common step sequence,
which keeps finite differences of flow maps smooth across stencil points.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import StepUnderflow


# ---------------------------------------------------------------------------
# quasi-random sequences
# ---------------------------------------------------------------------------

def halton(n, dim=2, skip=20):
    """First `n` points of the Halton sequence in [0,1)^dim."""
    primes = (2, 3, 5, 7, 11, 13)
    out = np.empty((n, dim))
    for d in range(dim):
        b = primes[d]
        idx = np.arange(skip, skip + n)
        col = np.zeros(n)
        f = 1.0
        i = idx.astype(np.float64)
        while np.any(i > 0):
            f /= b
            col += f * (i % b)
            i = np.floor(i / b)
        out[:, d] = col
    return out


def sphere_lattice(n, avoid_poles=0.05):
    """Deterministic Fibonacci lattice on the unit sphere.

    `avoid_poles` clips |z| away from 1 by that fraction (pole caps are
    chart-degenerate for cylindrical bookkeeping, not for dynamics).
    """
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    z = np.clip(z, -1.0 + avoid_poles, 1.0 - avoid_poles)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    theta = golden * i
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


# ---------------------------------------------------------------------------
# smooth ramps
# ---------------------------------------------------------------------------

def smoothstep5(u):
    """Quintic smoothstep: 0 at u<=0, 1 at u>=1, C^2 monotone between."""
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def plateau_ramp(t, w):
    """C^2 profile equal to 0 at t in {0,1}, 1 on [w, 1-w]; integral 1-w."""
    t = np.asarray(t, dtype=float)
    return smoothstep5(t / w) * smoothstep5((1.0 - t) / w)


# ---------------------------------------------------------------------------
# Gauss-Legendre panels and adaptive quadrature
# ---------------------------------------------------------------------------

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(n):
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (x, w)
    return _GL_CACHE[n]


def fixed_quad(f, a, b, n=32):
    """Single-panel Gauss-Legendre; `f` takes an array of nodes."""
    x, w = gauss_legendre(n)
    h = 0.5 * (b - a)
    nodes = a + h * (x + 1.0)
    return h * float(np.dot(w, np.asarray(f(nodes), dtype=float)))


def adaptive_quad(f, a, b, tol=1e-10, max_panels=4096, n_lo=7, n_hi=15):
    """Adaptive panel quadrature of a batchable scalar integrand.

    `f` maps an array of nodes to an array of values. Panels are bisected
    where the GL(n_hi) vs GL(n_lo) discrepancy dominates. Returns
    (value, error_estimate, converged).
    """
    x_lo, w_lo = gauss_legendre(n_lo)
    x_hi, w_hi = gauss_legendre(n_hi)

    def panel_eval(lo, hi):
        h = 0.5 * (hi - lo)
        nodes = np.concatenate([lo + h * (x_hi + 1.0), lo + h * (x_lo + 1.0)])
        vals = np.asarray(f(nodes), dtype=float)
        v_hi = h * np.dot(w_hi, vals[: n_hi])
        v_lo = h * np.dot(w_lo, vals[n_hi:])
        return v_hi, abs(v_hi - v_lo)

    panels = [(float(a), float(b))]
    vals, errs = [], []
    v, e = panel_eval(a, b)
    vals.append(v)
    errs.append(e)
    while sum(errs) > tol and len(panels) < max_panels:
        i = int(np.argmax(errs))
        lo, hi = panels[i]
        if hi - lo < 1e-14 * (b - a):
            break
        mid = 0.5 * (lo + hi)
        panels[i] = (lo, mid)
        vals[i], errs[i] = panel_eval(lo, mid)
        panels.append((mid, hi))
        v, e = panel_eval(mid, hi)
        vals.append(v)
        errs.append(e)
    total_err = float(sum(errs))
    return float(sum(vals)), total_err, total_err <= tol


def adaptive_quad_batch(f, a, b, tol=1e-9, max_panels=2048, n_lo=7, n_hi=15):
    """Adaptive quadrature of a vector-valued integrand, shared nodes.

    `f` maps an array of m nodes to an array of shape (m, k); all k
    components are integrated on a common adaptively-refined panel set
    (refinement driven by the worst component). Returns (values (k,),
    error_estimates (k,), converged).
    """
    x_lo, w_lo = gauss_legendre(n_lo)
    x_hi, w_hi = gauss_legendre(n_hi)

    def panel_eval(lo, hi):
        h = 0.5 * (hi - lo)
        nodes = np.concatenate([lo + h * (x_hi + 1.0), lo + h * (x_lo + 1.0)])
        vals = np.asarray(f(nodes), dtype=float)
        v_hi = h * (w_hi @ vals[: n_hi])
        v_lo = h * (w_lo @ vals[n_hi:])
        return v_hi, np.abs(v_hi - v_lo)

    panels = [(float(a), float(b))]
    v, e = panel_eval(a, b)
    vals, errs = [v], [e]
    while float(np.max(np.sum(errs, axis=0))) > tol and len(panels) < max_panels:
        worst = [float(np.max(er)) for er in errs]
        i = int(np.argmax(worst))
        lo, hi = panels[i]
        if hi - lo < 1e-14 * (b - a):
            break
        mid = 0.5 * (lo + hi)
        panels[i] = (lo, mid)
        vals[i], errs[i] = panel_eval(lo, mid)
        panels.append((mid, hi))
        v, e = panel_eval(mid, hi)
        vals.append(v)
        errs.append(e)
    total = np.sum(vals, axis=0)
    err = np.sum(errs, axis=0)
    return total, err, float(np.max(err)) <= tol


def adaptive_quad2d(f, box, tol=1e-9, max_panels=8192, n_lo=6, n_hi=12):
    """Adaptive 2D panel quadrature over an axis-aligned box.

    `f` maps arrays (X, Y) to values. Panels are quartered where the
    GL(n_hi)^2 vs GL(n_lo)^2 discrepancy dominates. Returns
    (value, error_estimate, converged).
    """
    x_lo, w_lo = gauss_legendre(n_lo)
    x_hi, w_hi = gauss_legendre(n_hi)
    (ax, bx), (ay, by) = box

    def panel_eval(rect):
        lx, hx, ly, hy = rect
        sx, sy = 0.5 * (hx - lx), 0.5 * (hy - ly)
        nx = lx + sx * (x_hi + 1.0)
        ny = ly + sy * (x_hi + 1.0)
        X, Y = np.meshgrid(nx, ny, indexing="ij")
        vals = np.asarray(f(X.ravel(), Y.ravel()), dtype=float).reshape(X.shape)
        v_hi = sx * sy * float(w_hi @ vals @ w_hi)
        mx = lx + sx * (x_lo + 1.0)
        my = ly + sy * (x_lo + 1.0)
        X2, Y2 = np.meshgrid(mx, my, indexing="ij")
        vals2 = np.asarray(f(X2.ravel(), Y2.ravel()), dtype=float).reshape(X2.shape)
        v_lo = sx * sy * float(w_lo @ vals2 @ w_lo)
        return v_hi, abs(v_hi - v_lo)

    rects = [(float(ax), float(bx), float(ay), float(by))]
    v, e = panel_eval(rects[0])
    vals, errs = [v], [e]
    while sum(errs) > tol and len(rects) < max_panels:
        i = int(np.argmax(errs))
        lx, hx, ly, hy = rects[i]
        if (hx - lx) * (hy - ly) < 1e-24:
            break
        mx, my = 0.5 * (lx + hx), 0.5 * (ly + hy)
        quads = [(lx, mx, ly, my), (mx, hx, ly, my), (lx, mx, my, hy), (mx, hx, my, hy)]
        rects[i] = quads[0]
        vals[i], errs[i] = panel_eval(quads[0])
        for q in quads[1:]:
            rects.append(q)
            v, e = panel_eval(q)
            vals.append(v)
            errs.append(e)
    total_err = float(sum(errs))
    return float(sum(vals)), total_err, total_err <= tol


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4) batch integrator
# ---------------------------------------------------------------------------

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


class OdeResult:
    """Recorded solution of a batched DP5(4) run."""

    def __init__(self, ts, ys, n_steps, event_t=None, event_y=None):
        self.ts = ts            # (m,) recorded times
        self.ys = ys            # (m, N, d) recorded batch states
        self.n_steps = n_steps
        self.event_t = event_t
        self.event_y = event_y


def integrate_dp54(rhs, t0, t1, y0, tol=1e-10, t_record=None, project=None,
                   event=None, event_skip=0.0, max_steps=2_000_000, h0=None):
    """Batched embedded Dormand-Prince 5(4) with shared adaptive steps.

    rhs(t, Y) -> dY for Y of shape (N, d). All batch members advance with a
    common step controlled by the worst per-member error. `project`, if
    given, renormalizes accepted states (used for the sphere). `t_record`
    lists times that must be hit exactly; recorded states are returned in
    order. `event(t, Y) -> float` (batch size 1 only) stops integration at
    the first sign change from negative to positive after `event_skip`;
    the crossing is refined by bisection on re-integrated short spans.
    """
    y = np.atleast_2d(np.asarray(y0, dtype=float)).copy()
    single = np.asarray(y0).ndim == 1
    t = float(t0)
    t_end = float(t1)
    if t_end == t:
        ts = np.array([t])
        return OdeResult(ts, y[None, ...], 0)
    direction = 1.0 if t_end > t else -1.0
    span = abs(t_end - t)

    record = sorted(set(float(s) for s in (t_record or []))) if t_record else []
    if direction < 0:
        record = sorted(record, reverse=True)
    rec_ts, rec_ys = [], []
    ri = 0

    def record_if_hit(tc, yc):
        nonlocal ri
        while ri < len(record) and abs(record[ri] - tc) <= 1e-13 * (1 + abs(tc)):
            rec_ts.append(record[ri])
            rec_ys.append(yc.copy())
            ri += 1

    h = h0 if h0 is not None else span / 100.0
    h = min(h, span)
    k1 = rhs(t, y)
    g_prev = float(event(t, y)) if event is not None else None
    ev_t = ev_y = None
    n_steps = 0
    record_if_hit(t, y)

    while (t_end - t) * direction > 1e-14 * span:
        if h < 1e-14 * span:
            raise StepUnderflow(f"step size underflow at t={t:.6g}")
        # land exactly on the next record time / the end
        t_target = t_end
        if ri < len(record) and (record[ri] - t) * direction > 0:
            t_target = record[ri]
        h_try = min(h, abs(t_target - t))
        ht = direction * h_try

        ks = [k1]
        for i in range(1, 7):
            yi = y + ht * np.einsum("s,snd->nd", _DP_A[i], np.stack(ks))
            ks.append(rhs(t + _DP_C[i] * ht, yi))
        kmat = np.stack(ks)
        y5 = y + ht * np.einsum("s,snd->nd", _DP_B5, kmat)
        y4 = y + ht * np.einsum("s,snd->nd", _DP_B4, kmat)
        scale = tol + tol * np.maximum(np.abs(y), np.abs(y5))
        err = float(np.max(np.abs(y5 - y4) / scale)) + 1e-300
        if err <= 1.0:
            t_new = t + ht
            y_new = y5
            if project is not None:
                y_new = project(y_new)
            if event is not None:
                g_new = float(event(t_new, y_new))
                if (
                    g_prev is not None
                    and g_prev < 0.0 <= g_new
                    and (t_new - t0) * direction > event_skip
                ):
                    ev_t, ev_y = _refine_event(
                        rhs, event, t, y, t_new, tol, project, direction
                    )
                    if (ev_t - t0) * direction > event_skip:
                        record_if_hit(ev_t, ev_y)
                        return OdeResult(
                            np.array(rec_ts),
                            (np.stack(rec_ys) if rec_ys
                             else np.zeros((0,) + y.shape)),
                            n_steps,
                            ev_t,
                            ev_y[0] if single else ev_y,
                        )
                g_prev = g_new
            t, y = t_new, y_new
            k1 = ks[6] if project is None else rhs(t, y)  # FSAL
            record_if_hit(t, y)
        h = h_try * min(5.0, max(0.2, 0.9 * err ** -0.2))
        h = min(h, span)
        n_steps += 1
        if n_steps > max_steps:
            raise StepUnderflow("step budget exhausted")

    record_if_hit(t, y)
    if not rec_ys:
        rec_ts.append(t)
        rec_ys.append(y.copy())
    return OdeResult(np.array(rec_ts), np.stack(rec_ys), n_steps)


def _refine_event(rhs, event, t_lo, y_lo, t_hi, tol, project, direction):
    """Bisect the event crossing inside [t_lo, t_hi] by re-integration."""
    a, b = t_lo, t_hi
    for _ in range(60):
        if abs(b - a) < 1e-12 * (1 + abs(b)):
            break
        mid = 0.5 * (a + b)
        sol = integrate_dp54(rhs, t_lo, mid, y_lo, tol=tol, project=project,
                             t_record=[mid])
        y_mid = sol.ys[-1]
        if float(event(mid, y_mid)) < 0.0:
            a = mid
        else:
            b = mid
    sol = integrate_dp54(rhs, t_lo, b, y_lo, tol=tol, project=project, t_record=[b])
    return b, sol.ys[-1]


# ---------------------------------------------------------------------------
# multistart maximization
# ---------------------------------------------------------------------------

def ascent_multistart(value_grad, starts, n_iter=120, step0=0.1, project=None):
    """Vectorized projected gradient ascent with backtracking from many starts.

    value_grad(P) -> (values (N,), grads (N,d)). Returns (best_value,
    best_point, values_of_all_starts_after_ascent).
    """
    P = np.asarray(starts, dtype=float).copy()
    v, g = value_grad(P)
    step = np.full(P.shape[0], step0)
    for _ in range(n_iter):
        cand = P + step[:, None] * g
        if project is not None:
            cand = project(cand)
        vc, gc = value_grad(cand)
        better = vc > v
        P[better] = cand[better]
        v[better] = vc[better]
        g[better] = gc[better]
        step[better] = np.minimum(step[better] * 1.3, 1.0)
        step[~better] *= 0.4
        if float(np.max(step)) < 1e-14:
            break
    i = int(np.argmax(v))
    return float(v[i]), P[i].copy(), v
