"""Point-wise and trajectory-wise horizontal/vertical prediction errors."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .geo import haversine_nm


@dataclass
class ErrorReport:
    """Errors of one flight, or of a corpus after :func:`aggregate`.

    ``pve`` is signed (predicted minus true altitude); ``the`` and ``tve``
    are per-flight means, ``tve`` of the signed ``pve``.  The ``ma*`` fields
    average absolute values.
    """

    phe: np.ndarray
    pve: np.ndarray
    the: np.ndarray
    tve: np.ndarray
    flight_ids: List[str] = field(default_factory=list)

    @property
    def maphe(self) -> float:
        return float(np.mean(np.abs(self.phe))) if self.phe.size else float("nan")

    @property
    def mapve(self) -> float:
        return float(np.mean(np.abs(self.pve))) if self.pve.size else float("nan")

    @property
    def mathe(self) -> float:
        return float(np.mean(np.abs(self.the))) if self.the.size else float("nan")

    @property
    def matve(self) -> float:
        return float(np.mean(np.abs(self.tve))) if self.tve.size else float("nan")

    def summary(self) -> Dict[str, float]:
        return {"flights": len(self.the), "points": int(self.phe.size), "MAPHE_nm": self.maphe,
                "MAPVE_ft": self.mapve, "MATHE_nm": self.mathe, "MATVE_ft": self.matve}


def evaluate(predicted, truth, flight_id: str = "") -> ErrorReport:
    """Errors of aligned (T, >=3) arrays of ``[lon, lat, alt, ...]`` rows."""
    p = np.asarray(predicted, dtype=float)
    q = np.asarray(truth, dtype=float)
    if p.shape[0] != q.shape[0]:
        raise ValueError(f"length mismatch: {p.shape[0]} predicted vs {q.shape[0]} true points")
    if p.shape[0] == 0:
        raise ValueError("nothing to evaluate")
    phe = np.atleast_1d(haversine_nm(p[:, :2], q[:, :2]))
    pve = p[:, 2] - q[:, 2]
    return ErrorReport(phe, pve, np.array([phe.mean()]), np.array([pve.mean()]), [flight_id])


def aggregate(reports: Sequence[ErrorReport]) -> ErrorReport:
    if not reports:
        raise ValueError("no reports to aggregate")
    return ErrorReport(
        np.concatenate([r.phe for r in reports]),
        np.concatenate([r.pve for r in reports]),
        np.concatenate([r.the for r in reports]),
        np.concatenate([r.tve for r in reports]),
        [i for r in reports for i in r.flight_ids],
    )


def write_csv(path, reports: Sequence[ErrorReport]) -> None:
    """One row per flight and a final summary row."""
    total = aggregate(reports)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flight_id", "points", "THE_nm", "TVE_ft", "max_PHE_nm", "mean_abs_PVE_ft"])
        for r in reports:
            w.writerow([r.flight_ids[0] if r.flight_ids else "", r.phe.size, f"{r.the[0]:.6f}",
                        f"{r.tve[0]:.6f}", f"{r.phe.max():.6f}", f"{np.abs(r.pve).mean():.6f}"])
        s = total.summary()
        w.writerow(["ALL", s["points"], f"{s['MATHE_nm']:.6f}", f"{s['MATVE_ft']:.6f}",
                    f"{total.phe.max():.6f}", f"{s['MAPVE_ft']:.6f}"])


def write_json(path, report: ErrorReport, extra=None) -> None:
    doc = report.summary()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def histogram_rows(report: ErrorReport, bins: int = 30):
    """Bin counts of PHE, PVE, THE and TVE as ``(metric, lo, hi, count)`` rows."""
    rows = []
    for name, vals in (("PHE_nm", report.phe), ("PVE_ft", report.pve),
                       ("THE_nm", report.the), ("TVE_ft", report.tve)):
        counts, edges = np.histogram(vals, bins=bins)
        rows += [(name, float(lo), float(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
    return rows


def write_histograms(path, report: ErrorReport, bins: int = 30) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "bin_lo", "bin_hi", "count"])
        w.writerows(histogram_rows(report, bins))
