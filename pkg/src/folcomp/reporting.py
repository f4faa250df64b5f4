"""Audit reports, delimited output, run manifests and figures.

CSV values are written with 17 significant digits so that re-running a
seeded audit reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from dataclasses import dataclass, field

import numpy as np


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


@dataclass
class AuditReport:
    """A table of measured quantities against theorem bounds.

    The verdict is 'pass' exactly when every certified row satisfies
    measured <= bound + tolerance; uncertified rows are skipped and counted.
    """

    kind: str
    columns: list
    rows: list
    tolerances: dict
    verdict: str = "pass"
    skipped: int = 0
    extras: dict = field(default_factory=dict)

    @classmethod
    def build(cls, kind, columns, rows, tolerances, extras=None):
        tol = tolerances.get("bound", 0.0)
        skipped = 0
        verdict = "pass"
        for row in rows:
            certified = row.get("certificate", "certified") == "certified"
            if not certified:
                skipped += 1
                continue
            measured = row.get("measured")
            bound = row.get("bound")
            if measured is None or bound is None:
                continue
            if measured > bound + tol:
                verdict = "fail"
        return cls(
            kind=kind,
            columns=list(columns),
            rows=list(rows),
            tolerances=dict(tolerances),
            verdict=verdict,
            skipped=skipped,
            extras=dict(extras or {}),
        )

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def write_csv(self, path) -> str:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(fmt(row.get(c, "")) for c in self.columns) + "\n")
        return str(path)

    def summary(self) -> str:
        return (
            f"{self.kind}: {self.verdict} "
            f"({len(self.rows)} rows, {self.skipped} skipped, tol={self.tolerances})"
        )


def content_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def spec_hash(spec) -> str:
    doc = {
        "name": spec.name,
        "dim": spec.dim,
        "basis_labels": list(spec.basis_labels),
        "structure_constants": [list(e) for e in spec.structure_constants],
        "horizontal_indices": list(spec.horizontal_indices),
        "vertical_indices": list(spec.vertical_indices),
        "metric": None if spec.metric is None else np.asarray(spec.metric).tolist(),
        "grading": None if spec.grading is None else [list(l) for l in spec.grading],
        "epsilon": spec.epsilon,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


class ManifestWriter:
    """Collects outputs and verdicts of one CLI run into a manifest JSON."""

    def __init__(self, argv, model_hash, seed, version):
        self.doc = {
            "command_line": " ".join(argv),
            "model_content_hash": model_hash,
            "seed": seed,
            "tool_version": version,
            "start_timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "end_timestamp": None,
            "outputs": [],
            "verdicts": {},
            "wall_time_seconds": None,
        }
        self._t0 = time.time()

    def add_output(self, path):
        self.doc["outputs"].append(str(path))

    def add_verdict(self, name, verdict):
        self.doc["verdicts"][name] = verdict

    def write(self, path):
        self.doc["end_timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.doc["wall_time_seconds"] = time.time() - self._t0
        with open(path, "w") as fh:
            json.dump(self.doc, fh, indent=2)
            fh.write("\n")
        self.add_output(str(path))
        return str(path)


# -- figures -------------------------------------------------------------------
#
# The report path renders one figure per audit next to the CSV.  Rendering is
# best effort: a missing display or backend never breaks a run.


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def render_figure(report: AuditReport, csv_path, fig_path=None) -> str | None:
    try:
        plt = _plt()
    except Exception as exc:  # pragma: no cover
        print(f"figure rendering unavailable: {exc}", file=sys.stderr)
        return None
    fig_path = fig_path or str(csv_path).rsplit(".", 1)[0] + ".png"
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    try:
        _FIGURES.get(report.kind, _figure_generic)(ax, report)
        ax.set_title(f"{report.kind} [{report.verdict}]")
        fig.tight_layout()
        fig.savefig(fig_path, dpi=120)
    finally:
        plt.close(fig)
    return fig_path


def _rows_value(report, key):
    return np.array([row[key] for row in report.rows], dtype=float)


def _figure_generic(ax, report):
    if not report.rows:
        ax.text(0.5, 0.5, "empty report", ha="center")
        return
    y = _rows_value(report, "measured") if "measured" in report.rows[0] else None
    if y is not None:
        ax.plot(y, ".", label="measured")
        if "bound" in report.rows[0]:
            ax.plot(_rows_value(report, "bound"), "-", label="bound")
        ax.legend()
    ax.set_xlabel("row")


def _figure_compare(ax, report):
    if not report.rows:
        return
    r = _rows_value(report, "r")
    measured = _rows_value(report, "measured")
    bound = _rows_value(report, "bound")
    cert = np.array([row["certificate"] == "certified" for row in report.rows])
    ax.plot(r[cert], measured[cert], "o", ms=4, label="measured (certified)")
    if (~cert).any():
        ax.plot(r[~cert], measured[~cert], "x", ms=4, color="gray", label="uncertified")
    order = np.argsort(r)
    ax.plot(r[order], bound[order], "-", color="C3", label="bound")
    ax.set_xlabel("r")
    ax.set_ylabel("horizontal Laplacian of distance")
    ax.legend()


def _figure_coupled(ax, report):
    _figure_compare(ax, report)
    ax.set_ylabel("coupled Laplacian of distance")


def _figure_bonnet_myers(ax, report):
    d = _rows_value(report, "measured")
    ax.hist(d[np.isfinite(d)], bins=48, color="C0", alpha=0.8)
    bound = report.extras.get("diameter_bound")
    if bound:
        ax.axvline(bound, color="C3", label=f"diameter bound {bound:.4f}")
        ax.legend()
    ax.set_xlabel("sampled distance")
    ax.set_ylabel("count")


def _figure_radial(ax, report):
    ts = _rows_value(report, "t")
    ax.plot(ts, _rows_value(report, "measured"), "o", label="process quantile")
    ax.plot(ts, _rows_value(report, "bound"), "s", label="comparison quantile + slack")
    ax.set_xlabel("t")
    ax.set_ylabel("quantile of radial distance")
    ax.legend()


def _figure_exit(ax, report):
    r = _rows_value(report, "r")
    p = _rows_value(report, "probability")
    pos = p > 0
    ax.semilogy(r[pos] ** 2, p[pos], "o-")
    ax.set_xlabel("r^2")
    ax.set_ylabel("P(sup distance >= r)")


def _figure_coupling(ax, report):
    ts = _rows_value(report, "t")
    ax.plot(ts, _rows_value(report, "measured"), "o-", label="mean pair distance")
    ax.plot(ts, _rows_value(report, "bound"), "s--", label="contraction bound")
    ax.set_xlabel("t")
    ax.legend()


_FIGURES = {
    "compare": _figure_compare,
    "coupled-compare": _figure_coupled,
    "bonnet-myers": _figure_bonnet_myers,
    "radial": _figure_radial,
    "exit": _figure_exit,
    "coupling": _figure_coupling,
    "lipschitz": _figure_generic,
    "gradient": _figure_generic,
    "heatdiag": _figure_generic,
}
