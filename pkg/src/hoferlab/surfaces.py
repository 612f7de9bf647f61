"""Two-dimensional model surfaces: plane, torus, sphere.

Conventions (fixed once, documented here and in the README):

* Plane: coordinates (x, y), area form dx^dy.
* Torus: fundamental domain [0,1)^2, area form A dx^dy. Fields must be
  1-periodic expressions (the catalog uses sin/cos of 2*pi*x etc.); flows
  integrate in the universal cover, which makes lifts trivial to read off.
* Sphere of total area A: points carried as ambient unit 3-vectors; area
  form (A/4pi) times the solid-angle form. Bookkeeping charts: cylindrical
  (z, theta) away from the poles plus two symplectic polar caps in which
  the area form is exactly du^dv.
* Hamiltonian vector field sign: X_H is the 90-degree counterclockwise
  rotation of the gradient, i.e. iota_{X_H} omega = -dH. With this choice
  the shear H = f(x) on the unit torus lifts to (x, y) -> (x, y + t f'(x)).
  The opposite-sign field (the characteristic orientation of graph
  hypersurfaces in M x R^2) is obtained by negating H where needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import AmbiguousLift, DomainError, NonConvergence
from .numerics import adaptive_quad2d, halton, sphere_lattice

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SurfaceModel:
    kind: str                 # "plane" | "torus" | "sphere"
    area: float | None = None

    def __post_init__(self):
        if self.kind not in ("plane", "torus", "sphere"):
            raise ValueError(f"unknown surface kind {self.kind!r}")
        if self.kind != "plane" and (self.area is None or self.area <= 0):
            raise ValueError(f"{self.kind} needs a positive total area")

    @property
    def admitted_vars(self):
        if self.kind == "sphere":
            return ("x", "y", "z")
        return ("x", "y")

    @property
    def state_dim(self):
        return 3 if self.kind == "sphere" else 2

    def describe(self):
        d = {"kind": self.kind}
        if self.area is not None:
            d["area"] = self.area
        return d


def plane():
    return SurfaceModel("plane")


def torus(area=1.0):
    return SurfaceModel("torus", area)


def sphere(area=4.0):
    return SurfaceModel("sphere", area)


def from_descriptor(desc):
    kind = desc["kind"]
    if kind == "plane":
        return plane()
    return SurfaceModel(kind, float(desc.get("area", 1.0)))


@dataclass(frozen=True)
class SurfacePoint:
    chart: str
    coords: tuple
    ambient: tuple | None = None  # sphere cache, unit norm

    def as_array(self):
        return np.asarray(self.ambient if self.ambient is not None else self.coords,
                          dtype=float)


@dataclass(frozen=True)
class TangentVector:
    base: SurfacePoint
    components: tuple  # chart components; sphere: ambient 3-vector


# ---------------------------------------------------------------------------
# point construction / wrapping
# ---------------------------------------------------------------------------

def make_point(surface, coords):
    """Build a SurfacePoint from raw coordinates.

    Plane/torus: (x, y) chart coordinates (torus wraps into [0,1)).
    Sphere: an ambient 3-vector, renormalized onto the unit sphere.
    """
    c = np.asarray(coords, dtype=float)
    if surface.kind == "plane":
        return SurfacePoint("plane", (float(c[0]), float(c[1])))
    if surface.kind == "torus":
        w = np.mod(c, 1.0)
        return SurfacePoint("torus", (float(w[0]), float(w[1])))
    n = c / np.linalg.norm(c)
    z, theta = float(n[2]), float(math.atan2(n[1], n[0]) % TWO_PI)
    return SurfacePoint("cyl", (z, theta), ambient=tuple(float(v) for v in n))


def states_of(surface, points):
    """Stack SurfacePoints (or raw coordinate tuples) into a state array."""
    rows = []
    for p in points:
        if isinstance(p, SurfacePoint):
            rows.append(p.as_array())
        else:
            rows.append(make_point(surface, p).as_array())
    return np.asarray(rows, dtype=float)


def field_args(surface, states, t=0.0):
    """Bindings for compiled ScalarField evaluation from a state batch."""
    S = np.atleast_2d(np.asarray(states, dtype=float))
    if surface.kind == "sphere":
        return {"x": S[:, 0], "y": S[:, 1], "z": S[:, 2], "t": t}
    return {"x": S[:, 0], "y": S[:, 1], "t": t}


# ---------------------------------------------------------------------------
# Hamiltonian vector field
# ---------------------------------------------------------------------------

def ham_vector_field_states(surface, fld, states, t=0.0):
    """X_H on a batch of states (chart pairs, or ambient tangent 3-vectors).

    Sign convention iota_{X_H} omega = -dH: on an omega = a dx^dy chart,
    X_H = (-H_y, H_x) / a; on the sphere, X_H = (4pi/A) n x grad H with the
    ambient gradient (tangential projection is implicit in the cross
    product against n).
    """
    S = np.atleast_2d(np.asarray(states, dtype=float))
    args = field_args(surface, S, t)
    if surface.kind == "sphere":
        gx = np.broadcast_to(np.asarray(fld.grad_component("x", **args), float), S[:, 0].shape)
        gy = np.broadcast_to(np.asarray(fld.grad_component("y", **args), float), S[:, 0].shape)
        gz = np.broadcast_to(np.asarray(fld.grad_component("z", **args), float), S[:, 0].shape)
        G = np.stack([gx, gy, gz], axis=1)
        return (4.0 * math.pi / surface.area) * np.cross(S, G)
    a = 1.0 if surface.kind == "plane" else surface.area
    hx = np.broadcast_to(np.asarray(fld.grad_component("x", **args), float), S[:, 0].shape)
    hy = np.broadcast_to(np.asarray(fld.grad_component("y", **args), float), S[:, 0].shape)
    return np.stack([-hy / a, hx / a], axis=1)


def hamiltonian_vector_field(surface, fld, point, time=0.0):
    """X_H at a single SurfacePoint, as a TangentVector."""
    p = point if isinstance(point, SurfacePoint) else make_point(surface, point)
    v = ham_vector_field_states(surface, fld, p.as_array()[None, :], time)[0]
    if surface.kind == "sphere":
        n = p.as_array()
        v = v - n * float(np.dot(n, v))  # enforce tangency against roundoff
    return TangentVector(p, tuple(float(c) for c in v))


# ---------------------------------------------------------------------------
# area integration
# ---------------------------------------------------------------------------

def area_integral(surface, integrand, support=None, tol=1e-10, max_panels=12000):
    """Integrate a density over the surface against its area form.

    `integrand` is a ScalarField (over the surface's chart variables) or a
    callable mapping a state batch to values. Plane integrands need compact
    support inside `support` (an ((ax,bx),(ay,by)) box; defaults to
    [-4,4]^2). Returns (value, error_estimate); raises NonConvergence with
    the partial value attached when the error target cannot be met.
    """
    def density(states):
        if callable(integrand) and not hasattr(integrand, "value"):
            return np.asarray(integrand(states), dtype=float)
        args = field_args(surface, states)
        return np.broadcast_to(
            np.asarray(integrand.value(**args), dtype=float), (states.shape[0],)
        )

    if surface.kind == "plane":
        if isinstance(support, dict):
            box = support_box(support)
        else:
            box = support if support is not None else ((-4.0, 4.0), (-4.0, 4.0))
        def f(X, Y):
            return density(np.stack([X, Y], axis=1))
        val, err, ok = adaptive_quad2d(f, box, tol=tol, max_panels=max_panels)
    elif surface.kind == "torus":
        def f(X, Y):
            return density(np.stack([X, Y], axis=1)) * surface.area
        val, err, ok = adaptive_quad2d(f, ((0.0, 1.0), (0.0, 1.0)), tol=tol,
                                       max_panels=max_panels)
    else:
        w = surface.area / (4.0 * math.pi)
        def f(Z, TH):
            r = np.sqrt(np.maximum(0.0, 1.0 - Z * Z))
            states = np.stack([r * np.cos(TH), r * np.sin(TH), Z], axis=1)
            return density(states) * w
        val, err, ok = adaptive_quad2d(f, ((-1.0, 1.0), (0.0, TWO_PI)), tol=tol,
                                       max_panels=max_panels)
    if not ok and err > 100 * tol:
        raise NonConvergence("area quadrature did not converge", value=val, error=err)
    return val, err


# ---------------------------------------------------------------------------
# torus covering lifts
# ---------------------------------------------------------------------------

def wrap_half(d):
    """Wrap displacements into [-1/2, 1/2) componentwise."""
    return (np.asarray(d, dtype=float) + 0.5) % 1.0 - 0.5


def lift_to_cover(surface, point, anchor):
    """Continuous lift of a torus point given the previous lifted sample.

    Picks the representative of `point` nearest to `anchor`; ambiguous when
    the wrapped displacement is half a period in some coordinate.
    """
    if surface.kind != "torus":
        raise DomainError("covering lifts are defined for the torus model")
    p = point.as_array() if isinstance(point, SurfacePoint) else np.asarray(point, float)
    a = np.asarray(anchor, dtype=float)
    d = wrap_half(p - a)
    if np.any(np.abs(d) > 0.5 - 1e-6):
        raise AmbiguousLift("consecutive samples half a period apart")
    return a + d


def lift_path(surface, samples, anchor):
    """Lift a sampled torus path to the cover, chaining anchors."""
    out = []
    a = np.asarray(anchor, dtype=float)
    for p in samples:
        a = lift_to_cover(surface, p, a)
        out.append(a)
    return np.asarray(out)


# ---------------------------------------------------------------------------
# sphere charts
# ---------------------------------------------------------------------------
# Cylindrical chart (z, theta): omega = (A/4pi) dz^dtheta, valid away from
# the poles. Polar caps: Darboux coordinates in which omega = du^dv exactly,
#   north: u + iv = rho(z) e^{-i theta},  pi rho^2 = (A/4pi) * 2pi (1 - z)
#   south: u + iv = rho(z) e^{+i theta},  pi rho^2 = (A/4pi) * 2pi (1 + z)
# (the conjugation keeps both caps orientation-compatible with omega).

def sphere_to_cyl(n):
    n = np.asarray(n, dtype=float)
    return np.array([n[2], math.atan2(n[1], n[0]) % TWO_PI])


def cyl_to_sphere(zc, theta):
    r = math.sqrt(max(0.0, 1.0 - zc * zc))
    return np.array([r * math.cos(theta), r * math.sin(theta), zc])


def sphere_to_cap(surface, n, pole="n"):
    n = np.asarray(n, dtype=float)
    z = n[2] if pole == "n" else -n[2]
    rho = math.sqrt(surface.area * (1.0 - z) / (2.0 * math.pi))
    theta = math.atan2(n[1], n[0])
    if pole == "n":
        return np.array([rho * math.cos(theta), -rho * math.sin(theta)])
    return np.array([rho * math.cos(theta), rho * math.sin(theta)])


def cap_to_sphere(surface, uv, pole="n"):
    u, v = float(uv[0]), float(uv[1])
    rho2 = u * u + v * v
    z = 1.0 - 2.0 * math.pi * rho2 / surface.area
    z = max(-1.0, min(1.0, z))
    r = math.sqrt(max(0.0, 1.0 - z * z))
    rho = math.sqrt(rho2)
    if rho < 1e-300:
        c, s = 1.0, 0.0
    else:
        c, s = u / rho, v / rho
    if pole == "n":
        n = np.array([r * c, -r * s, z])
    else:
        n = np.array([r * c, r * s, -z])
    return n / np.linalg.norm(n)


def cap_frame(surface, n0, pole=None):
    """Orthonormal tangent frame at n0 aligned with a cap chart at n0.

    Returns (e1, e2, to_chart, from_chart) for a rotated Darboux cap
    centered at n0; used for monodromy charts and FD Jacobians.
    """
    n0 = np.asarray(n0, dtype=float)
    n0 = n0 / np.linalg.norm(n0)
    ref = np.array([0.0, 0.0, 1.0]) if abs(n0[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(ref, n0)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n0, e1)
    scale = math.sqrt(surface.area / (4.0 * math.pi))  # du^dv = omega at center

    def to_chart(n):
        n = np.asarray(n, dtype=float)
        # rotate n0 -> north pole frame, then apply the north cap formula
        zc = np.dot(n, n0)
        a, b = np.dot(n, e1), np.dot(n, e2)
        rho = math.sqrt(surface.area * max(0.0, 1.0 - zc) / (2.0 * math.pi))
        den = math.hypot(a, b)
        if den < 1e-300:
            return np.zeros(2)
        return np.array([rho * a / den, -rho * b / den])

    def from_chart(uv):
        u, v = float(uv[0]), float(uv[1])
        rho2 = u * u + v * v
        zc = 1.0 - 2.0 * math.pi * rho2 / surface.area
        zc = max(-1.0, min(1.0, zc))
        r = math.sqrt(max(0.0, 1.0 - zc * zc))
        rho = math.sqrt(rho2)
        if rho < 1e-300:
            c, s = 1.0, 0.0
        else:
            c, s = u / rho, -v / rho
        n = zc * n0 + r * (c * e1 + s * e2)
        return n / np.linalg.norm(n)

    return e1 * scale, e2 * scale, to_chart, from_chart


def chart_transition_residuals(surface, n_samples=200):
    """Max area-form defect of cap/cylinder transitions at overlap samples.

    For the transition T = cap o cyl^{-1} the pullback condition is
    det DT = A/4pi (the cylinder weight); caps have weight 1.
    """
    if surface.kind != "sphere":
        return 0.0
    pts = sphere_lattice(n_samples, avoid_poles=0.25)
    w_cyl = surface.area / (4.0 * math.pi)
    worst = 0.0

    def jac(z0, th0, pole, h):
        J = np.zeros((2, 2))
        for j, (dz, dth) in enumerate(((h, 0.0), (0.0, h))):
            p_plus = sphere_to_cap(surface, cyl_to_sphere(z0 + dz, th0 + dth), pole)
            p_minus = sphere_to_cap(surface, cyl_to_sphere(z0 - dz, th0 - dth), pole)
            J[:, j] = (p_plus - p_minus) / (2 * h)
        return J

    for n in pts:
        for pole in ("n", "s"):
            z0, th0 = sphere_to_cyl(n)
            h = 1e-4
            J = (4.0 * jac(z0, th0, pole, h / 2) - jac(z0, th0, pole, h)) / 3.0
            worst = max(worst, abs(abs(np.linalg.det(J)) - w_cyl))
    return worst


# ---------------------------------------------------------------------------
# sampling helpers
# ---------------------------------------------------------------------------

def support_box(support, pad=1.0):
    """Axis-aligned box of a planar support spec {center, radius} or box."""
    if support is None:
        return ((-4.0, 4.0), (-4.0, 4.0))
    if "box" in support:
        (ax, bx), (ay, by) = support["box"]
        return ((ax - pad * 0.0, bx), (ay, by))
    cx, cy = support.get("center", (0.0, 0.0))
    r = support["radius"]
    return ((cx - r, cx + r), (cy - r, cy + r))


def sample_states(surface, n, support=None, grid=None):
    """Deterministic state samples covering the search domain."""
    if surface.kind == "sphere":
        return sphere_lattice(n, avoid_poles=1e-3)
    if surface.kind == "torus":
        box = ((0.0, 1.0), (0.0, 1.0))
    else:
        box = support_box(support)
    (ax, bx), (ay, by) = box
    if grid is not None:
        gx, gy = grid
        xs = ax + (bx - ax) * (np.arange(gx) + 0.5) / gx
        ys = ay + (by - ay) * (np.arange(gy) + 0.5) / gy
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)
    pts = halton(n, dim=2)
    return np.stack([ax + (bx - ax) * pts[:, 0], ay + (by - ay) * pts[:, 1]], axis=1)
