"""File formats: prediction/label CSVs, population and report JSON, plot data.

CSV is used for matrices (human-diffable), JSON for populations and reports.
All JSON is emitted with sorted keys and no timestamps, so identical inputs
produce byte-identical artifacts; floats round-trip exactly through their
shortest decimal representation.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .calibration import CalibrationCurve, ConfidenceBin
from .core import (
    LabelVector,
    Population,
    PredictionMatrix,
    ProbabilityProfile,
    validate_profile,
)
from .errors import (
    ClassRangeError,
    DuplicateIdError,
    IoError,
    ParseError,
    SchemaError,
)

SCHEMA_VERSION = "1"


def _read_rows(path) -> list:
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such file: {path}")
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _parse_class(value: str, path, line: int, n_classes: Optional[int]) -> int:
    try:
        k = int(value)
    except ValueError:
        raise ParseError(f"expected integer class, got {value!r}", path, line) from None
    if k < 0 or (n_classes is not None and k >= n_classes):
        raise ClassRangeError(f"{path}: line {line}: class {k} out of range")
    return k


def load_predictions(path, format: str = "wide-csv", n_classes: Optional[int] = None) -> PredictionMatrix:
    """Load a prediction matrix from CSV.

    wide-csv has header ``point_id,model_0,...,model_{M-1}`` and one row per
    point with integer class entries.  long-csv has header
    ``point_id,model_id,class`` and one row per (point, model) cell; every
    cell must be present exactly once.
    """
    if format not in ("wide-csv", "long-csv"):
        raise ParseError(f"unknown predictions format {format!r}", path)
    rows = _read_rows(path)
    if not rows:
        raise ParseError("empty file", path, 1)
    if format == "wide-csv":
        return _load_predictions_wide(path, rows, n_classes)
    return _load_predictions_long(path, rows, n_classes)


def _load_predictions_wide(path, rows, n_classes) -> PredictionMatrix:
    header = rows[0]
    if not header or header[0] != "point_id":
        raise ParseError(f"header must start with 'point_id', got {header[:1]}", path, 1)
    for m, name in enumerate(header[1:]):
        if name != f"model_{m}":
            raise ParseError(
                f"expected contiguous model columns; column {m + 1} is {name!r}, "
                f"expected 'model_{m}'",
                path,
                1,
            )
    n_models = len(header) - 1
    if n_models < 1:
        raise ParseError("need at least one model column", path, 1)
    ids, data, seen = [], [], set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != n_models + 1:
            raise ParseError(f"expected {n_models + 1} fields, got {len(row)}", path, lineno)
        pid = row[0]
        if pid in seen:
            raise DuplicateIdError(f"duplicate point id {pid!r}", path, lineno)
        seen.add(pid)
        ids.append(pid)
        data.append([_parse_class(v, path, lineno, n_classes) for v in row[1:]])
    if not ids:
        raise ParseError("no data rows", path, 2)
    return PredictionMatrix(np.array(data), tuple(ids), n_classes)


def _load_predictions_long(path, rows, n_classes) -> PredictionMatrix:
    if rows[0] != ["point_id", "model_id", "class"]:
        raise ParseError(
            f"expected header point_id,model_id,class, got {','.join(rows[0])}", path, 1
        )
    cells = {}
    ids_in_order = []
    seen_pids = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", path, lineno)
        pid, mid_s, cls_s = row
        try:
            mid = int(mid_s)
        except ValueError:
            raise ParseError(f"expected integer model_id, got {mid_s!r}", path, lineno) from None
        if mid < 0:
            raise ParseError(f"negative model_id {mid}", path, lineno)
        key = (pid, mid)
        if key in cells:
            raise DuplicateIdError(f"duplicate cell for point {pid!r}, model {mid}", path, lineno)
        if pid not in seen_pids:
            seen_pids.add(pid)
            ids_in_order.append(pid)
        cells[key] = _parse_class(cls_s, path, lineno, n_classes)
    if not cells:
        raise ParseError("no data rows", path, 2)
    n_models = max(m for _, m in cells) + 1
    data = np.zeros((len(ids_in_order), n_models), dtype=np.int64)
    for i, pid in enumerate(ids_in_order):
        for m in range(n_models):
            if (pid, m) not in cells:
                raise ParseError(
                    f"missing cell for point {pid!r}, model {m}", path
                )
            data[i, m] = cells[(pid, m)]
    return PredictionMatrix(data, tuple(ids_in_order), n_classes)


def load_labels(path) -> LabelVector:
    """Load labels from a CSV with header ``point_id,label``."""
    rows = _read_rows(path)
    if not rows or rows[0] != ["point_id", "label"]:
        raise ParseError("expected header point_id,label", path, 1)
    ids, labels, seen = [], [], set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, got {len(row)}", path, lineno)
        pid = row[0]
        if pid in seen:
            raise DuplicateIdError(f"duplicate point id {pid!r}", path, lineno)
        seen.add(pid)
        ids.append(pid)
        labels.append(_parse_class(row[1], path, lineno, None))
    if not ids:
        raise ParseError("no data rows", path, 2)
    return LabelVector(np.array(labels), tuple(ids))


def load_probabilities(path, tol: float = 1e-6) -> ProbabilityProfile:
    """Load a probability profile from a long CSV ``point_id,class,prob``.

    Every point must list every class exactly once; rows are validated and
    renormalized onto the simplex within ``tol``.
    """
    rows = _read_rows(path)
    if not rows or rows[0] != ["point_id", "class", "prob"]:
        raise ParseError("expected header point_id,class,prob", path, 1)
    cells = {}
    ids_in_order = []
    seen_pids = set()
    max_class = -1
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", path, lineno)
        pid, cls_s, prob_s = row
        cls = _parse_class(cls_s, path, lineno, None)
        try:
            prob = float(prob_s)
        except ValueError:
            raise ParseError(f"expected float prob, got {prob_s!r}", path, lineno) from None
        if (pid, cls) in cells:
            raise DuplicateIdError(f"duplicate cell for point {pid!r}, class {cls}", path, lineno)
        if pid not in seen_pids:
            seen_pids.add(pid)
            ids_in_order.append(pid)
        cells[(pid, cls)] = prob
        max_class = max(max_class, cls)
    if not cells:
        raise ParseError("no data rows", path, 2)
    k = max_class + 1
    probs = np.zeros((len(ids_in_order), k))
    for i, pid in enumerate(ids_in_order):
        for c in range(k):
            if (pid, c) not in cells:
                raise ParseError(f"missing probability for point {pid!r}, class {c}", path)
            probs[i, c] = cells[(pid, c)]
    return validate_profile(ProbabilityProfile(probs, tuple(ids_in_order)), tol)


def load_population(path, tol: float = 1e-6) -> Population:
    """Load a population from JSON ``{"atoms": [{"w", "hhat", "label_dist"}, ...]}``."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such file: {path}")
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or "atoms" not in doc:
        raise SchemaError(f"{path}: expected an object with an 'atoms' list")
    atoms = doc["atoms"]
    if not isinstance(atoms, list) or not atoms:
        raise SchemaError(f"{path}: 'atoms' must be a nonempty list")
    k = None
    ws, hhats, labels = [], [], []
    for i, atom in enumerate(atoms):
        if not isinstance(atom, dict) or not {"w", "hhat", "label_dist"} <= set(atom):
            raise SchemaError(f"{path}: atom {i} must have keys w, hhat, label_dist")
        hhat = atom["hhat"]
        label = atom["label_dist"]
        if k is None:
            k = len(hhat)
        if len(hhat) != k or len(label) != k:
            raise SchemaError(
                f"{path}: atom {i} has vector length {len(hhat)}/{len(label)}, expected {k}"
            )
        ws.append(float(atom["w"]))
        hhats.append([float(v) for v in hhat])
        labels.append([float(v) for v in label])
    return Population(np.array(ws), np.array(hhats), np.array(labels), tol=tol)


def save_population(pop: Population, path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "atoms": [
            {"w": float(w), "hhat": [float(v) for v in h], "label_dist": [float(v) for v in l]}
            for w, h, l in pop.atoms
        ],
    }
    Path(path).write_text(dumps_canonical(doc))


def dumps_canonical(obj) -> str:
    """Deterministic JSON: sorted keys, minimal separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def file_digest(path) -> str:
    """Hex sha256 of a file's bytes."""
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def curve_to_dict(curve: CalibrationCurve) -> dict:
    return {
        "kind": curve.kind,
        "class_index": curve.class_index,
        "n_bins": curve.n_bins,
        "bins": [
            {
                "lower": b.lower,
                "upper": b.upper,
                "mass": b.mass,
                "hits": b.hits,
                "mean_confidence": b.mean_confidence,
            }
            for b in curve.bins
        ],
    }


def curve_from_dict(doc: dict) -> CalibrationCurve:
    try:
        bins = tuple(
            ConfidenceBin(
                lower=b["lower"],
                upper=b["upper"],
                mass=b["mass"],
                hits=b["hits"],
                mean_confidence=b["mean_confidence"],
            )
            for b in doc["bins"]
        )
        return CalibrationCurve(
            bins, kind=doc["kind"], n_bins=doc["n_bins"], class_index=doc["class_index"]
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"bad curve document: {exc}") from None


@dataclass
class ReportDocument:
    """Merged analysis artifact; every section is optional.

    Round-trips losslessly through JSON: floats keep their exact values and
    field layout is fixed by the schema version.
    """

    schema_version: str = SCHEMA_VERSION
    inputs: dict = field(default_factory=dict)
    test_errors: Optional[list] = None
    disagreement: Optional[dict] = None
    gde: Optional[dict] = None
    curves: Optional[list] = None
    calibration: Optional[dict] = None
    scatter: Optional[list] = None
    theory: Optional[dict] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ReportDocument":
        if not isinstance(doc, dict):
            raise SchemaError("report document must be a JSON object")
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema_version {version!r}")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise SchemaError(f"unknown report fields {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> str:
        return dumps_canonical(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ReportDocument":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}") from None

    def merged_with(self, other: "ReportDocument") -> "ReportDocument":
        """New document taking the other's sections where present."""
        merged = ReportDocument(inputs={**self.inputs, **other.inputs})
        for name in ("test_errors", "disagreement", "gde", "curves", "calibration", "scatter", "theory"):
            setattr(merged, name, getattr(other, name) if getattr(other, name) is not None else getattr(self, name))
        return merged


def save_report(doc: ReportDocument, path) -> None:
    Path(path).write_text(doc.to_json())


def load_report(path) -> ReportDocument:
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such file: {path}")
    return ReportDocument.from_json(path.read_text())


def export_curve_csv(curve: CalibrationCurve, path) -> None:
    """Write curve bins as CSV (bin_lower, bin_upper, mean_confidence, accuracy, mass)."""
    if not curve.bins:
        raise IoError("cannot export an empty calibration curve")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lower", "bin_upper", "mean_confidence", "accuracy", "mass"])
        for b in curve.bins:
            w.writerow([repr(b.lower), repr(b.upper), repr(b.mean_confidence), repr(b.accuracy), repr(b.mass)])


def export_scatter_csv(points: Sequence[tuple], path) -> None:
    """Write scatter points as CSV (x, y, group, bootstrap_std).

    Each point is (x, y, group) or (x, y, group, bootstrap_std); x is the
    disagreement, y the test error.  The y = x reference line is implicit.
    """
    points = list(points)
    if not points:
        raise IoError("cannot export an empty scatter")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "group", "bootstrap_std"])
        for p in points:
            if len(p) == 3:
                x, y, group = p
                std = ""
            else:
                x, y, group, std = p
                std = repr(float(std))
            w.writerow([repr(float(x)), repr(float(y)), str(group), std])


def load_scatter_csv(path) -> list:
    """Re-parse an exported scatter CSV into (x, y, group, std|None) tuples."""
    rows = _read_rows(path)
    if not rows or rows[0] != ["x", "y", "group", "bootstrap_std"]:
        raise ParseError("expected header x,y,group,bootstrap_std", path, 1)
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", path, lineno)
        std = float(row[3]) if row[3] != "" else None
        out.append((float(row[0]), float(row[1]), row[2], std))
    return out
