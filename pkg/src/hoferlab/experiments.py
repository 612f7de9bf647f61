"""The experiment catalog: named end-to-end runs with declared targets.

Every numeric assertion carries its tolerance and a provenance tag:
"closed-form" (checked against an independent closed form), "oracle"
(independent numerical oracle), or "construction" (a certified residual of
a constructed object). Conclusions that rest on machinery outside this
laboratory (holomorphic-curve arguments, energy-capacity inequalities)
appear only under cited_conclusions, supported by the computed
certificates, never as computed facts.
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import capacity, catalog, flatness, gluing, lengths, moser, orbits
from . import surfaces as sf
from .errors import ShortOrbit, ShortOrbitInK, UnknownExperiment
from .expr import ScalarField
from .flow import integrate_batch
from .numerics import sphere_lattice
from .reporting import CheckRow, ExperimentReport


def run_sphere_loop(grid=None, tol=None):
    """Full-turn loop on the sphere: periods, length, two-sided certificates."""
    t0 = time.time()
    path = catalog.load("sphere-height")
    shifted = catalog.load("sphere-height-shifted")
    surface = path.surface
    A = surface.area
    rows = []

    seeds = sphere_lattice(50, avoid_poles=0.08)
    periods = []
    for s in seeds:
        T = orbits.minimal_positive_period(surface, path.field, s, horizon=1.6)
        periods.append(T if T is not None else float("nan"))
    worst = float(np.max(np.abs(np.asarray(periods) - 1.0)))
    rows.append(CheckRow("orbit_period_defect_50_seeds", worst, 1e-3,
                         worst <= 1e-3, "oracle",
                         "all sampled orbits close up at period 1"))

    L = lengths.length(path)
    rows.append(CheckRow("length", L, 1e-9, abs(L - A) <= 1e-9, "closed-form",
                         f"total variation of the height function = area {A}"))

    cert = capacity.cg_dim2_certificate(surface, shifted, epsilon=0.05 * A)
    floor = A * (1 - 0.05)
    rows.append(CheckRow("two_sided_ball_capacity", cert.value, None,
                         cert.value >= floor - 1e-12, "construction",
                         f"both-sided embedding value, target >= {floor}"))
    rows.append(CheckRow("certificate_pullback_defect",
                         cert.residuals["under_du_pullback_defect"], 1e-6,
                         cert.residuals["under_du_pullback_defect"] < 1e-6,
                         "construction"))
    level_ok = all(lp["period"] is None or lp["period"] >= 1 - 1e-3
                   for side in cert.level_periods.values() for lp in side)
    rows.append(CheckRow("level_periods_at_least_1", 1.0, 1e-3, level_ok,
                         "oracle"))

    curves = {"orbit_periods": {
        "columns": ["seed_x", "seed_y", "seed_z", "period"],
        "rows": [[float(s[0]), float(s[1]), float(s[2]), float(T)]
                 for s, T in zip(seeds, periods)]}}
    rep = ExperimentReport(
        "sphere-loop",
        {"surface": surface.describe(), "H": path.field.source},
        rows,
        cited_conclusions=[
            {"statement": "every essential loop of area-A sphere maps has "
                          "length at least A",
             "support": "two-sided ball embeddings of capacity A - eps for "
                        "every eps > 0 (certificate above) combined with the "
                        "capacity-area inequality (cited, not re-proved)"},
            {"statement": "the smallest positive loop length on the sphere "
                          "equals the area A",
             "support": "the full-turn loop computed here attains length A"},
        ],
        tolerances={"period": 1e-3, "length": 1e-9},
        curves=curves)
    rep.runtime_seconds = time.time() - t0
    return rep


def run_torus_shear(grid=30, tol=None, times=(1.0, 2.0, 4.0)):
    """Shear flow on the unit torus: covering lifts and disjoined regions."""
    t0 = time.time()
    path = catalog.load("torus-shear")
    surface = path.surface
    rows = []
    xs = (np.arange(grid) + 0.5) / grid
    ys = (np.arange(grid) + 0.5) / grid
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    S = np.stack([X.ravel(), Y.ravel()], axis=1)
    fprime = math.pi * np.sin(2 * math.pi * S[:, 0])

    lift_rows = []
    for T in times:
        _, out = integrate_batch(surface, path.field, S, (0.0, T), tol=1e-11)
        end = out[-1]
        target = np.stack([S[:, 0], S[:, 1] + T * fprime], axis=1)
        defect = float(np.max(np.linalg.norm(end - target, axis=1)))
        rows.append(CheckRow(f"lift_formula_defect_T{T:g}", defect, 1e-6,
                             defect <= 1e-6, "closed-form",
                             "lift (x, y + t f'(x)) on the cover"))
        # disjoined region in the cover: delta-margin strip under T f'(x)
        delta = 0.025
        from .numerics import adaptive_quad
        area_val, _, _ = adaptive_quad(
            lambda xv: T * math.pi * np.sin(2 * math.pi * np.asarray(xv)),
            delta, 0.5 - delta, tol=1e-10)
        rows.append(CheckRow(f"disjoined_area_T{T:g}", area_val, 0.02 * T,
                             abs(area_val - T) <= 0.02 * T, "oracle",
                             "area of the strip 0 < y < T f'(x) in the cover"))
        lift_rows.extend([[float(T), float(s[0]), float(s[1]),
                           float(e[0]), float(e[1])]
                          for s, e in zip(S[:: grid], end[:: grid])])
        # measured flow length: autonomous => t * TotVar
        Lt = T * lengths.totvar(path, 0.0)
        rows.append(CheckRow(f"length_t{T:g}", Lt, 1e-9,
                             abs(Lt - T * 1.0) <= 1e-9, "closed-form",
                             "flow length t * TotVar(H), TotVar = 1"))

    rep = ExperimentReport(
        "torus-shear",
        {"surface": surface.describe(), "H": path.field.source,
         "grid": grid, "times": list(times)},
        rows,
        cited_conclusions=[
            {"statement": "the shear flow is length-minimizing for all "
                          "times, so the group of torus Hamiltonian maps has "
                          "unbounded diameter",
             "support": "the lift disjoins cover regions of area close to t "
                        "(measured above); the step from disjoining to the "
                        "norm lower bound is the energy-capacity inequality "
                        "(cited, not re-proved)"},
        ],
        tolerances={"lift": 1e-6, "area_rel": 0.02},
        curves={"lift_samples": {
            "columns": ["T", "x0", "y0", "x1", "y1"], "rows": lift_rows}})
    rep.runtime_seconds = time.time() - t0
    return rep


def run_plateau_bump(grid=None, tol=None):
    """Plateau bump: two-sided certificates and the short-orbit threshold."""
    t0 = time.time()
    path = catalog.load("plateau-bump")
    surface = path.surface
    rows = []
    cert = capacity.cg_dim2_certificate(surface, path, epsilon=0.05)
    rows.append(CheckRow("two_sided_capacity", cert.value, None,
                         cert.value >= 0.95 - 1e-12, "construction",
                         "target >= 0.95 * oscillation"))
    plateau_area = math.pi * 0.36
    rows.append(CheckRow("plateau_area_exceeds_max", plateau_area, None,
                         plateau_area > 1.0, "closed-form",
                         "area(H^{-1}(max)) = pi * 0.36 > max H = 1"))
    level_ok = all(lp["period"] is None or lp["period"] >= 1 - 1e-3
                   for side in cert.level_periods.values() for lp in side)
    rows.append(CheckRow("level_periods_at_least_1", 1.0, 1e-3, level_ok,
                         "oracle"))

    # short orbits appear once the edge slope passes the radial threshold
    # |dh/drho| = S'(1/2)/(pi W) = 1  =>  W* = 1.875/pi
    W_star = 1.875 / math.pi
    outcomes = []
    ok = True
    for W in (0.45, 0.52, 0.68, 0.8):
        fld = ScalarField(f"bump(x^2 + y^2 - 0.36; {W!r})")
        w = orbits.has_short_orbit(surface, fld,
                                   support={"center": (0, 0), "radius": 1.2})
        expected = W < W_star
        outcomes.append([W, None if w is None else w.period, expected])
        ok = ok and ((w is not None) == expected)
    rows.append(CheckRow("steep_edge_threshold", W_star, None, ok, "oracle",
                         "witness found exactly below W* = 1.875/pi"))

    rep = ExperimentReport(
        "plateau-bump",
        {"surface": surface.describe(), "H": path.field.source},
        rows,
        cited_conclusions=[
            {"statement": "with a plateau of area exceeding the oscillation, "
                          "balls of capacity equal to the oscillation embed "
                          "on both sides even when short orbits exist, so "
                          "the ball criterion is strictly stronger than the "
                          "no-short-orbit criterion",
             "support": "the two-sided certificate above, plus the measured "
                        "steep-edge witnesses"},
        ],
        tolerances={"epsilon": 0.05},
        curves={"steepness_scan": {
            "columns": ["W", "witness_period", "expected_witness"],
            "rows": outcomes}})
    rep.runtime_seconds = time.time() - t0
    return rep


def run_geodesic_gallery(grid=None, tol=None, subdivision=8):
    """Quasi-autonomy verdicts for autonomous / traveling / concatenated."""
    t0 = time.time()
    rows = []
    verdicts = {}
    for name, expect in (("slow-bump", "all"), ("traveling-bump", "none"),
                         ("auto-then-travel", "prefix")):
        path = catalog.load(name)
        rep = lengths.geodesic_check(path, subdivision=subdivision)
        flags = [w["quasi_autonomous"] for w in rep["windows"]]
        verdicts[name] = flags
        if expect == "all":
            ok = all(flags)
        elif expect == "none":
            ok = not any(flags)
        else:
            ok = flags == sorted(flags, reverse=True) and flags[0] and not flags[-1]
        rows.append(CheckRow(f"verdict_{name}", float(sum(flags)), None, ok,
                             "derived", f"windows passing: {flags}"))
    rep = ExperimentReport(
        "geodesic-gallery",
        {"subdivision": subdivision},
        rows,
        cited_conclusions=[
            {"statement": "a regular path is a geodesic exactly when it has "
                          "a fixed maximum and a fixed minimum at each "
                          "moment (the criterion is necessary and "
                          "sufficient)",
             "support": "verdicts above exercise the criterion; sufficiency "
                        "rests on the local ball embedding construction"},
        ],
        tolerances={})
    rep.runtime_seconds = time.time() - t0
    return rep


def run_glue_compare(grid=None, tol=None, nu=0.05):
    """One homotopic pair through the full gluing comparison."""
    t0 = time.time()
    H, K = catalog.glue_pair("slow-bump-detour")
    rows = []
    rep_cmp = gluing.compare(H, K, nu)
    rows.append(CheckRow("sum_identity_defect", rep_cmp["sum_identity_defect"],
                         1e-5, rep_cmp["sum_identity_defect"] <= 1e-5,
                         "oracle", "area(R_HK) + area(R_KH) = L(H)+L(K)+2nu"))
    rows.append(CheckRow("shorter_side_flagged", 1.0, None,
                         rep_cmp["at_least_one_short"], "derived",
                         f"short sides: {rep_cmp['short_sides']}"))
    Q = gluing.glue(H, K, nu)
    sym = gluing.verify_gluing_symplectic(Q, samples=1000)
    rows.append(CheckRow("gluing_symplecticity", sym["max_residual"], 1e-5,
                         sym["max_residual"] <= 1e-5, "construction"))
    Qs = gluing.glue(K, K, nu)
    sym0 = gluing.verify_gluing_symplectic(Qs, samples=1000)
    rows.append(CheckRow("identity_gluing_symplecticity", sym0["max_residual"],
                         1e-10, sym0["max_residual"] <= 1e-10, "construction"))
    rep = ExperimentReport(
        "glue-compare",
        {"pair": "slow-bump-detour", "nu": nu,
         "length_H": rep_cmp["length_H"], "length_K": rep_cmp["length_K"]},
        rows,
        cited_conclusions=[
            {"statement": "when one path is shorter, at least one of the two "
                          "glued quasi-cylinders has area below the longer "
                          "length",
             "support": "both sides measured above"},
        ],
        tolerances={"sum_identity": 1e-5, "symplecticity": 1e-5})
    rep.runtime_seconds = time.time() - t0
    return rep


def run_flatness(grid=None, tol=None, deltas=(1e-3, 1e-2)):
    """Generating-profile corpus through the flatness identities."""
    t0 = time.time()
    pl = sf.plane()
    rows = []
    for delta in deltas:
        F = ScalarField(f"{delta!r}*x*bump(x^2 + y^2 - 0.25; 1.0)")
        gen = flatness.GeneratingFunction(F, pl,
                                          support={"center": (0, 0),
                                                   "radius": 1.2})
        gen.find_critical_points()
        rep_f = flatness.verify_flatness(gen)
        rows.append(CheckRow(f"length_identity_delta{delta:g}",
                             rep_f["length_identity_defect"], 1e-4 * delta,
                             rep_f["length_identity_defect"] < 1e-4 * delta,
                             "oracle", "L = max F - min F"))
        rows.append(CheckRow(f"swept_spread_delta{delta:g}",
                             rep_f["swept_area_spread"], 1e-7,
                             rep_f["swept_area_spread"] < 1e-7, "oracle",
                             "swept area independent of the arc"))
        fixed_ok = rep_f["fixed_max_defect"] <= 1e-9 and \
            rep_f["fixed_min_defect"] <= 1e-9
        rows.append(CheckRow(f"fixed_extrema_delta{delta:g}",
                             max(rep_f["fixed_max_defect"],
                                 rep_f["fixed_min_defect"]), 1e-9, fixed_ok,
                             "derived", "arg-extrema of F stay extremal"))
        rows.append(CheckRow(f"time_curve_identity_delta{delta:g}",
                             rep_f["time_curve_identity_defect"], 1e-4 * delta,
                             rep_f["time_curve_identity_defect"] < 1e-4 * delta,
                             "oracle"))
    rep = ExperimentReport(
        "flatness", {"deltas": list(deltas)}, rows,
        cited_conclusions=[
            {"statement": "near the identity the Hofer norm equals the "
                          "oscillation of the generating profile, so a "
                          "neighborhood of the identity is flat",
             "support": "the measured identities; the step from length to "
                        "norm uses the capacity machinery (cited)"},
        ],
        tolerances={"length_identity_rel": 1e-4, "spread": 1e-7})
    rep.runtime_seconds = time.time() - t0
    return rep


def run_linear_rigidity(grid=None, tol=None):
    """Linearized short orbits force nonlinear witnesses at fixed extrema."""
    t0 = time.time()
    pl = sf.plane()
    rows = []
    quart = catalog.load("quartic-rigid")
    probe = orbits.rigidity_probe(pl, quart, (0.0, 0.0),
                                  support=quart.support)
    ok = probe["verdict"].startswith("nonlinear witness found")
    rows.append(CheckRow("quartic_linear_period", probe["linear_period"], 1e-3,
                         abs(probe["linear_period"] - 0.5) < 1e-3,
                         "closed-form", "rotation reaches a full turn at 1/2"))
    oracle_diff = None
    if probe.get("witness"):
        w = probe["witness"]
        r = math.hypot(*w["seed"])
        T_oracle = orbits.radial_period_oracle(quart.field, r)
        oracle_diff = abs(w["period"] - T_oracle)
        rows.append(CheckRow("witness_vs_radial_oracle", oracle_diff, 1e-3,
                             oracle_diff < 1e-3, "oracle",
                             f"witness period {w['period']:.6f} at r={r:.3f}"))
    rows.append(CheckRow("quartic_nonlinear_witness", 1.0 if ok else 0.0,
                         None, ok, "derived", probe["verdict"]))

    ctrl = catalog.load("rot-pi-control")
    probe2 = orbits.rigidity_probe(pl, ctrl, (0.0, 0.0), support=ctrl.support)
    silent = probe2["verdict"].startswith("criterion silent")
    rows.append(CheckRow("control_criterion_silent", 1.0 if silent else 0.0,
                         None, silent, "derived", probe2["verdict"]))
    rep = ExperimentReport(
        "linear-rigidity",
        {"quartic": quart.field.source, "control": ctrl.field.source},
        rows,
        cited_conclusions=[
            {"statement": "if the linearized flow at a fixed extremum has a "
                          "non-constant closed trajectory in time below 1, "
                          "so does the flow itself",
             "support": "the probe exhibits the nonlinear witness; whether "
                        "it can be found arbitrarily close to the fixed "
                        "point is open, so the search is global"},
        ],
        tolerances={"period": 1e-3})
    rep.runtime_seconds = time.time() - t0
    return rep


def run_hz_lower_bound(grid=None, tol=None, nu=0.1):
    """Oscillation certificates from admissible functions over the graph."""
    t0 = time.time()
    pl = sf.plane()
    rows = []
    slow = catalog.load("slow-bump")
    cert = capacity.chz_certificate(pl, slow, nu=nu)
    rows.append(CheckRow("certificate_value", cert.value, 1e-9,
                         abs(cert.value - 1.0) <= 1e-9, "construction",
                         "equals the oscillation of H"))
    rows.append(CheckRow("boundary_constancy",
                         cert.residuals["boundary_constancy"], 1e-9,
                         cert.residuals["boundary_constancy"] <= 1e-9,
                         "construction"))
    rows.append(CheckRow("seeds_per_level",
                         float(cert.residuals["seeds_per_level"]), None,
                         cert.residuals["seeds_per_level"] >= 1000,
                         "derived", "no closed trajectory below the horizon"))

    rot = catalog.load("rot4pi")
    try:
        capacity.chz_certificate(pl, rot, nu=nu)
        refused, wp = False, None
    except (ShortOrbitInK, ShortOrbit) as exc:
        refused, wp = True, exc.witness.period
    rows.append(CheckRow("fast_rotation_refused", wp, 1e-4,
                         refused and abs(wp - 0.5) <= 1e-4, "oracle",
                         "witness period 1/2 at the elliptic center"))
    rep = ExperimentReport(
        "hz-lower-bound",
        {"H": slow.field.source, "nu": nu, "refused": rot.field.source},
        rows,
        cited_conclusions=[
            {"statement": "an autonomous function with no closed trajectory "
                          "in time below 1 realizes its oscillation as a "
                          "lower capacity bound, hence its flow minimizes "
                          "length among homotopic paths",
             "support": "the admissible function constructed above; the "
                        "final step uses the capacity-area inequality "
                        "(cited, not re-proved)"},
        ],
        tolerances={"witness_period": 1e-4})
    rep.runtime_seconds = time.time() - t0
    return rep


def run_moser_split(grid=12, tol=None, amplitude=0.02):
    """Perturbed-split test form through the grid Moser step."""
    t0 = time.time()
    rows = []
    g1 = int(grid)
    g2 = g1 + 4
    f1 = moser.perturbed_split_form((g1,) * 4, amplitude=amplitude)
    rep1 = moser.moser_split(f1, residual_bound=5e-2)
    rows.append(CheckRow(f"residual_{g1}^4", rep1["pullback_residual"], 5e-2,
                         rep1["pullback_residual"] < 5e-2, "construction"))
    f2 = moser.perturbed_split_form((g2,) * 4, amplitude=amplitude)
    rep2 = moser.moser_split(f2, residual_bound=5e-2)
    rows.append(CheckRow(f"residual_{g2}^4", rep2["pullback_residual"],
                         rep1["pullback_residual"],
                         rep2["pullback_residual"] < rep1["pullback_residual"],
                         "construction", "decreasing under refinement"))
    rep = ExperimentReport(
        "moser-split", {"grids": [g1, g2], "amplitude": amplitude}, rows,
        cited_conclusions=[],
        tolerances={"residual": 5e-2})
    rep.runtime_seconds = time.time() - t0
    return rep


CATALOG = {
    "sphere-loop": (run_sphere_loop,
                    "full-turn sphere loop: periods, length, certificates"),
    "torus-shear": (run_torus_shear,
                    "torus shear: covering lifts and disjoined areas"),
    "plateau-bump": (run_plateau_bump,
                     "plateau bump: two-sided capacity and edge threshold"),
    "geodesic-gallery": (run_geodesic_gallery,
                         "quasi-autonomy verdicts on the path gallery"),
    "glue-compare": (run_glue_compare,
                     "glued quasi-cylinder areas and the comparison law"),
    "flatness": (run_flatness,
                 "generating-profile identities near the identity"),
    "linear-rigidity": (run_linear_rigidity,
                        "linearized-to-nonlinear closed-orbit transfer"),
    "hz-lower-bound": (run_hz_lower_bound,
                       "admissible-function certificates over the graph"),
    "moser-split": (run_moser_split,
                    "grid Moser step on the perturbed split form"),
}


def experiment_names():
    return sorted(CATALOG)


def describe_experiments():
    return {name: desc for name, (fn, desc) in sorted(CATALOG.items())}


def run_experiment(name, grid=None, tol=None):
    if name not in CATALOG:
        raise UnknownExperiment(
            f"unknown experiment {name!r}; known: {', '.join(experiment_names())}")
    fn, _ = CATALOG[name]
    kwargs = {}
    if grid is not None:
        kwargs["grid"] = grid
    if tol is not None:
        kwargs["tol"] = tol
    return fn(**kwargs)
