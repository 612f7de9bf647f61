"""Experiment reports and deterministic emission.

Reports serialize to canonical JSON bytes with volatile fields (wall-clock
runtime) stripped, so identical inputs produce byte-identical files across
runs; timing lives in a sidecar run log. Plot data is emitted as per-curve
CSV bundles.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field as dc_field

from .errors import IoError

VERSION = "0.1.0"
VOLATILE_FIELDS = ("runtime_seconds",)


@dataclass
class CheckRow:
    name: str
    value: float | None
    tolerance: float | None
    passed: bool
    provenance: str = "derived"
    note: str = ""

    def to_dict(self):
        return {"name": self.name, "value": self.value,
                "tolerance": self.tolerance, "passed": self.passed,
                "provenance": self.provenance, "note": self.note}


@dataclass
class ExperimentReport:
    id: str
    inputs: dict
    results: list          # CheckRow items
    cited_conclusions: list = dc_field(default_factory=list)
    tolerances: dict = dc_field(default_factory=dict)
    curves: dict = dc_field(default_factory=dict)   # name -> {columns, rows}
    runtime_seconds: float | None = None
    version: str = VERSION

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def to_dict(self, include_volatile=True):
        d = {
            "id": self.id,
            "inputs": self.inputs,
            "results": [r.to_dict() for r in self.results],
            "cited_conclusions": self.cited_conclusions,
            "tolerances": self.tolerances,
            "passed": self.passed,
            "version": self.version,
        }
        if include_volatile:
            d["runtime_seconds"] = self.runtime_seconds
        return d

    def canonical_bytes(self):
        """Deterministic serialization: volatile fields stripped, keys sorted."""
        return json.dumps(self.to_dict(include_volatile=False), sort_keys=True,
                          separators=(",", ":"), allow_nan=True).encode()

    def summary_lines(self):
        lines = [f"[{self.id}] {'PASS' if self.passed else 'FAIL'}"]
        for r in self.results:
            mark = "ok " if r.passed else "FAIL"
            val = "none" if r.value is None else f"{r.value:.6g}"
            tol = "" if r.tolerance is None else f" (tol {r.tolerance:.3g})"
            lines.append(f"  {mark} {r.name}: {val}{tol} [{r.provenance}]")
        return lines


def report_from_dict(d):
    rows = [CheckRow(**r) for r in d.get("results", [])]
    return ExperimentReport(
        id=d["id"], inputs=d.get("inputs", {}), results=rows,
        cited_conclusions=d.get("cited_conclusions", []),
        tolerances=d.get("tolerances", {}),
        runtime_seconds=d.get("runtime_seconds"),
        version=d.get("version", VERSION))


def emit(reports, formats=("json",), outdir="out"):
    """Write reports deterministically; returns the emitted-file manifest.

    json: canonical per-report files plus a manifest; csv/plotdata: one CSV
    per curve bundle. Raises IoError when the target cannot be written.
    """
    manifest = []
    try:
        os.makedirs(outdir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {outdir!r}: {exc}")
    for rep in reports:
        if "json" in formats:
            path = os.path.join(outdir, f"{rep.id}.json")
            _write(path, rep.canonical_bytes())
            manifest.append(path)
        if "csv" in formats or "plotdata" in formats:
            for cname, curve in sorted(rep.curves.items()):
                path = os.path.join(outdir, f"{rep.id}__{cname}.csv")
                buf = io.StringIO()
                w = csv.writer(buf, lineterminator="\n")
                w.writerow(curve["columns"])
                for row in curve["rows"]:
                    w.writerow(row)
                _write(path, buf.getvalue().encode())
                manifest.append(path)
    if "json" in formats:
        mpath = os.path.join(outdir, "manifest.json")
        _write(mpath, json.dumps(sorted(manifest), indent=0,
                                 separators=(",", ":")).encode())
        manifest.append(mpath)
    if reports and any(r.runtime_seconds is not None for r in reports):
        log = os.path.join(outdir, "runlog.txt")
        lines = [f"{r.id}: {r.runtime_seconds:.3f}s"
                 for r in reports if r.runtime_seconds is not None]
        _write(log, ("\n".join(lines) + "\n").encode())
    return sorted(manifest)


def _write(path, data):
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoError(f"cannot write {path!r}: {exc}")
