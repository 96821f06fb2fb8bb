"""Synthetic datasets, stress-series CSV files and dataset manifests.

Series files are UTF-8 CSV with a header row. Required columns are
``step,lambda,sigma11_gpa``; ``k,delta_lambda,fy_gpa`` are optional
diagnostics. Writers emit LF line endings and an initial ``#`` line carrying
the format version; readers accept CRLF and files without the version line.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import potentials as P
from .constitutive import SolverSettings
from .driver import LoadingProgram, TimeSeries, run_program
from .errors import MalformedRow, SchemaVersionMismatch

FORMAT_VERSION = 1
REQUIRED = ("step", "lambda", "sigma11_gpa")
OPTIONAL = ("k", "delta_lambda", "fy_gpa")
# optional CSV column -> TimeSeries.internals key
_INTERNAL_OF = {"k": "k", "delta_lambda": "delta_lambda", "fy_gpa": "fy"}
_VERSION_TAG = "#format=uniaxial-series;version="


# ---------------------------------------------------------------------------
# series CSV


def format_series(ts: TimeSeries, diagnostics: bool = True) -> str:
    cols = list(REQUIRED)
    extra = [c for c in OPTIONAL if diagnostics and _INTERNAL_OF[c] in ts.internals]
    cols += extra
    buf = io.StringIO()
    buf.write(f"{_VERSION_TAG}{FORMAT_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    data = [ts.step, ts.lam, ts.sigma11] + [np.asarray(ts.internals[_INTERNAL_OF[c]])
                                             for c in extra]
    for i in range(len(ts)):
        w.writerow([str(int(data[0][i]))] + [repr(float(col[i])) for col in data[1:]])
    return buf.getvalue()


def write_series(path, ts: TimeSeries, diagnostics: bool = True) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_series(ts, diagnostics))


def parse_series(text: str) -> TimeSeries:
    """Parse CSV text; see :func:`read_series`."""
    lines = text.splitlines()
    lineno = 0
    if lines and lines[0].startswith("#"):
        head = lines[0].strip()
        if head.startswith(_VERSION_TAG):
            version = head[len(_VERSION_TAG):]
            if version != str(FORMAT_VERSION):
                raise SchemaVersionMismatch(
                    f"series format version {version}, expected {FORMAT_VERSION}")
        lines = lines[1:]
        lineno = 1
    rows = csv.reader(lines)
    try:
        header = [h.strip() for h in next(rows)]
    except StopIteration:
        raise MalformedRow("missing header row", line=lineno + 1) from None
    lineno += 1
    missing = [c for c in REQUIRED if c not in header]
    if missing:
        raise MalformedRow(f"missing required column(s) {missing}", line=lineno)
    unknown = [c for c in header if c not in REQUIRED + OPTIONAL]
    if unknown:
        raise MalformedRow(f"unknown column(s) {unknown}", line=lineno)
    cols = {c: [] for c in header}
    for row in rows:
        lineno += 1
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise MalformedRow(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        for name, cell in zip(header, row):
            try:
                value = float(cell)
            except ValueError:
                raise MalformedRow(f"non-numeric {name!r} value {cell!r}", line=lineno) from None
            if not np.isfinite(value):
                raise MalformedRow(f"non-finite {name!r} value", line=lineno)
            cols[name].append(value)
    step = np.asarray(cols["step"])
    if step.size and not np.array_equal(step, np.arange(step.size)):
        raise MalformedRow("step column must count 0, 1, 2, ...", line=lineno)
    internals = {_INTERNAL_OF[c]: np.asarray(cols[c]) for c in OPTIONAL if c in cols}
    return TimeSeries(np.asarray(cols["lambda"]), np.asarray(cols["sigma11_gpa"]), internals)


def read_series(path) -> TimeSeries:
    """Read a stress-series CSV (LF or CRLF).

    Raises
    ------
    MalformedRow
        On a missing required column, a wrong field count or a bad value;
        the message carries the 1-based line number.
    SchemaVersionMismatch
        If the version line names another format version.
    """
    with open(path, encoding="utf-8-sig", newline="") as fh:
        return parse_series(fh.read())


# ---------------------------------------------------------------------------
# manifests


@dataclass
class DatasetManifest:
    generator: dict | str          # potential-set record, or "external"
    program: dict
    stress_scale: float = 1.0
    seed: int = 0
    format_version: int = FORMAT_VERSION
    solver: dict = field(default_factory=dict)
    series_sha256: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        doc = json.loads(text)
        if doc.get("format_version") != FORMAT_VERSION:
            raise SchemaVersionMismatch(
                f"manifest format version {doc.get('format_version')}, expected {FORMAT_VERSION}")
        return cls(**doc)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def potentials(self) -> P.PotentialSet:
        if self.generator == "external":
            raise ValueError("external datasets have no generator")
        return P.from_dict(self.generator)

    def loading_program(self) -> LoadingProgram:
        return LoadingProgram.from_description(self.program)

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(**self.solver) if self.solver else SolverSettings()


def _settings_record(s: SolverSettings) -> dict:
    return {"tol": s.tol, "max_iter": s.max_iter, "stress_scale": s.stress_scale,
            "max_bisections": s.max_bisections}


def generate_synthetic(generator: P.PotentialSet, program: LoadingProgram,
                       settings: SolverSettings = SolverSettings(), seed: int = 0
                       ) -> tuple[TimeSeries, DatasetManifest]:
    """Noiseless stress history of ``generator`` along ``program`` plus its manifest."""
    ts = run_program(program, generator, settings)
    manifest = DatasetManifest(P.to_dict(generator), program.describe(), settings.stress_scale,
                               int(seed), FORMAT_VERSION, _settings_record(settings))
    manifest.series_sha256 = hashlib.sha256(format_series(ts).encode()).hexdigest()
    return ts, manifest


def regenerate(manifest: DatasetManifest) -> TimeSeries:
    return run_program(manifest.loading_program(), manifest.potentials(),
                       manifest.solver_settings())


def write_dataset(directory, ts: TimeSeries, manifest: DatasetManifest) -> tuple[Path, Path]:
    """Write ``series.csv`` and ``manifest.json`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_series(d / "series.csv", ts)
    manifest.save(d / "manifest.json")
    return d / "series.csv", d / "manifest.json"


def read_dataset(directory) -> tuple[TimeSeries, DatasetManifest | None]:
    d = Path(directory)
    ts = read_series(d / "series.csv")
    m = d / "manifest.json"
    return ts, (DatasetManifest.load(m) if m.exists() else None)
