"""Hamiltonian flow integration, flow maps, and variational (linearized) flows.

Integration uses the shared embedded Dormand-Prince 5(4) stepper. Sphere
states are renormalized onto the unit sphere after every accepted step.
Batches advance with a common step sequence, so finite differences across
stencil members stay smooth (important for Jacobian estimates).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotFixed
from .numerics import integrate_dp54
from .surfaces import (SurfacePoint, cap_frame, field_args,
                       ham_vector_field_states, make_point, states_of)

FD_STEP = 1e-5  # chart-unit step for finite-difference Jacobians


def _rhs(surface, fld):
    def rhs(t, Y):
        return ham_vector_field_states(surface, fld, Y, t)
    return rhs


def _project(surface):
    if surface.kind != "sphere":
        return None

    def project(Y):
        return Y / np.linalg.norm(Y, axis=1, keepdims=True)
    return project


@dataclass
class Trajectory:
    """Ordered flow samples of a single seed.

    `states` are cover coordinates for plane/torus (no wrapping, so torus
    lifts can be read off directly) and ambient unit vectors for the sphere.
    """
    surface: object
    ts: np.ndarray           # (m,)
    states: np.ndarray       # (m, d)
    tol: float
    drift: float | None = None  # max |H - H(start)| for autonomous fields

    def points(self):
        return [make_point(self.surface, s) for s in self.states]

    def end_state(self):
        return self.states[-1]

    def to_csv_rows(self):
        rows = []
        for t, s in zip(self.ts, self.states):
            p = make_point(self.surface, s)
            row = {"t": float(t), "chart": p.chart,
                   "c1": p.coords[0], "c2": p.coords[1]}
            if self.surface.kind == "sphere":
                row.update({"ax": p.ambient[0], "ay": p.ambient[1],
                            "az": p.ambient[2]})
            rows.append(row)
        return rows


def integrate_flow(surface, fld, x0, span, tol=1e-10, n_samples=33,
                   t_record=None, event=None, event_skip=0.0):
    """Integrate the Hamiltonian flow of a compiled field from one seed.

    `fld` is a ScalarField (or any object exposing grad_component) over the
    surface's chart variables plus t. Returns a Trajectory sampled at
    `n_samples` uniform times (or at `t_record`). Autonomous fields get a
    conservation drift measurement attached.
    """
    t0, t1 = float(span[0]), float(span[1])
    y0 = states_of(surface, [x0])[0]
    if t_record is None:
        t_record = list(np.linspace(t0, t1, n_samples))
    sol = integrate_dp54(_rhs(surface, fld), t0, t1, y0[None, :], tol=tol,
                         t_record=t_record, project=_project(surface),
                         event=event, event_skip=event_skip)
    states = sol.ys[:, 0, :]
    drift = None
    if not getattr(fld, "time_dependent", False) and len(states):
        vals = np.asarray(fld.value(**field_args(surface, states)), dtype=float)
        vals = np.broadcast_to(vals, (states.shape[0],))
        drift = float(np.max(np.abs(vals - vals[0])))
    traj = Trajectory(surface, sol.ts, states, tol, drift)
    traj.event_t = sol.event_t
    traj.event_state = sol.event_y
    return traj


def integrate_batch(surface, fld, states0, span, tol=1e-10, t_record=None):
    """Common-step batch integration; returns (ts, ys of shape (m, N, d))."""
    t0, t1 = float(span[0]), float(span[1])
    Y0 = np.atleast_2d(np.asarray(states0, dtype=float))
    if t_record is None:
        t_record = [t1]
    sol = integrate_dp54(_rhs(surface, fld), t0, t1, Y0, tol=tol,
                         t_record=t_record, project=_project(surface))
    return sol.ts, sol.ys


def _tangent_frame(surface, state):
    """Orthonormal-ish frame used for FD stencils and 2x2 Jacobians."""
    if surface.kind == "sphere":
        e1, e2, to_chart, from_chart = cap_frame(surface, state)
        return e1, e2, to_chart, from_chart
    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])
    return e1, e2, None, None


@dataclass
class FlowMapSample:
    start: SurfacePoint
    end: SurfacePoint
    elapsed: float
    jacobian: np.ndarray  # 2x2 in the start/end tangent frames

    @property
    def det_defect(self):
        return abs(abs(float(np.linalg.det(self.jacobian))) - 1.0)


def flow_map(surface, fld, t, points, tol=1e-11, t0=0.0):
    """Time-t flow map on a batch of points, with FD 2x2 Jacobians.

    The 5-point stencil of every seed is integrated in one common-step
    batch; Jacobians are central differences at step FD_STEP expressed in
    orthonormal tangent frames (det J = 1 is area preservation for all
    three surface models).
    """
    seeds = states_of(surface, points)
    n = seeds.shape[0]
    stencils = []
    frames = []
    for s in seeds:
        e1, e2, to_chart, from_chart = _tangent_frame(surface, s)
        frames.append((e1, e2, to_chart, from_chart))
        if surface.kind == "sphere":
            block = [s,
                     from_chart(to_chart(s) + [FD_STEP, 0.0]),
                     from_chart(to_chart(s) - [FD_STEP, 0.0]),
                     from_chart(to_chart(s) + [0.0, FD_STEP]),
                     from_chart(to_chart(s) - [0.0, FD_STEP])]
        else:
            block = [s, s + FD_STEP * e1, s - FD_STEP * e1,
                     s + FD_STEP * e2, s - FD_STEP * e2]
        stencils.append(np.asarray(block))
    Y0 = np.concatenate(stencils, axis=0)
    _, ys = integrate_batch(surface, fld, Y0, (t0, t), tol=tol, t_record=[t])
    out = ys[-1]
    samples = []
    for i in range(n):
        c, px, mx, py, my = out[5 * i: 5 * i + 5]
        if surface.kind == "sphere":
            _, _, to_end, _ = _tangent_frame(surface, c)
            J = np.stack([(to_end(px) - to_end(mx)) / (2 * FD_STEP),
                          (to_end(py) - to_end(my)) / (2 * FD_STEP)], axis=1)
        else:
            J = np.stack([(px - mx) / (2 * FD_STEP),
                          (py - my) / (2 * FD_STEP)], axis=1)
        samples.append(FlowMapSample(make_point(surface, seeds[i]),
                                     make_point(surface, c), t - t0, J))
    return samples


@dataclass
class LinearizedFlow:
    """Monodromy matrices of the variational equation along a fixed orbit."""
    surface: object
    point: SurfacePoint
    ts: np.ndarray          # (m,)
    matrices: np.ndarray    # (m, 2, 2)

    def det_defect(self):
        dets = np.linalg.det(self.matrices)
        return float(np.max(np.abs(dets - 1.0)))


def _linearization_matrix(surface, fld, state, t):
    """A(t) = D X_H at a fixed point, in the working chart at that point."""
    if surface.kind == "sphere":
        # FD of the chart-pushed field in a Darboux cap at the point
        _, _, to_chart, from_chart = cap_frame(surface, state)
        A = np.zeros((2, 2))
        hh = 1e-5
        for j in range(2):
            dp = np.zeros(2)
            dp[j] = hh
            vp = _chart_push_field(surface, fld, from_chart, dp, t)
            vm = _chart_push_field(surface, fld, from_chart, -dp, t)
            A[:, j] = (vp - vm) / (2 * hh)
        return A
    a = 1.0 if surface.kind == "plane" else surface.area
    args = field_args(surface, state[None, :], t)
    hxx = float(np.asarray(fld.hess_component("x", "x", **args)).reshape(-1)[0])
    hxy = float(np.asarray(fld.hess_component("x", "y", **args)).reshape(-1)[0])
    hyy = float(np.asarray(fld.hess_component("y", "y", **args)).reshape(-1)[0])
    # X = (-H_y, H_x)/a  =>  A = [[-H_yx, -H_yy], [H_xx, H_xy]]/a
    return np.array([[-hxy, -hyy], [hxx, hxy]]) / a


def _dn(from_chart, uv, j, h):
    d = np.zeros(2)
    d[j] = h
    return (from_chart(uv + d) - from_chart(uv - d)) / (2 * h)


def _chart_push_field(surface, fld, from_chart, uv, t):
    """Chart components of X_H at chart position uv (orthogonal-projection)."""
    n = from_chart(uv)
    v = ham_vector_field_states(surface, fld, n[None, :], t)[0]
    h = 1e-6
    b1 = _dn(from_chart, uv, 0, h)
    b2 = _dn(from_chart, uv, 1, h)
    G = np.array([[np.dot(b1, b1), np.dot(b1, b2)], [np.dot(b1, b2), np.dot(b2, b2)]])
    rhs = np.array([np.dot(v, b1), np.dot(v, b2)])
    return np.linalg.solve(G, rhs)


def linearized_monodromy(surface, fld, point, span=(0.0, 1.0), tol=1e-12,
                         n_grid=201, fixed_tol=1e-10):
    """Integrate the variational equation at a fixed point of the isotopy.

    Checks that the point is fixed (field norm below `fixed_tol` on a time
    sample); integrates M' = A(t) M with A(t) the field linearization in a
    fixed chart at the point. Returns a LinearizedFlow on a uniform grid.
    """
    state = states_of(surface, [point])[0]
    ts_check = np.linspace(span[0], span[1], 17)
    for t in ts_check:
        v = ham_vector_field_states(surface, fld, state[None, :], t)[0]
        if float(np.linalg.norm(v)) > fixed_tol:
            raise NotFixed(
                f"|X_H| = {np.linalg.norm(v):.3e} at t={t:.3f} exceeds {fixed_tol}")

    def rhs(t, Y):
        A = _linearization_matrix(surface, fld, state, t)
        M = Y.reshape(-1, 2, 2)
        return (A @ M).reshape(Y.shape)

    grid = list(np.linspace(span[0], span[1], n_grid))
    sol = integrate_dp54(rhs, span[0], span[1], np.eye(2).reshape(1, 4), tol=tol,
                         t_record=grid)
    mats = sol.ys[:, 0, :].reshape(-1, 2, 2)
    return LinearizedFlow(surface, make_point(surface, state), sol.ts, mats)
