"""On-disk workload representation: manifest, label/prediction/embedding TSVs.

A workload is the joined view of one classifier run over a dataset split
into train/valid/test, together with one embedding table per backbone.
All files are UTF-8 TSV with a mandatory header; floats are serialized
with 9 significant digits.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

FLOAT_FMT = "%.9g"
SPLITS = ("train", "valid", "test")
MISSING_LABEL = -1


class WorkloadError(ValueError):
    """Raised for malformed manifests or workload files."""


def fmt_float(x: float) -> str:
    return FLOAT_FMT % x


@dataclass
class InstanceRecord:
    id: str
    split: str
    true_label: int  # MISSING_LABEL when absent
    predicted_label: int = MISSING_LABEL
    logits: list[float] | None = None

    @property
    def has_true_label(self) -> bool:
        return self.true_label != MISSING_LABEL


@dataclass
class EmbeddingSet:
    backbone_name: str
    dim: int
    rows: dict[str, list[float]]


@dataclass
class WorkloadManifest:
    num_classes: int
    embedding_files: list[str]
    prediction_file: str
    label_file: str


@dataclass
class Workload:
    instances: list[InstanceRecord]
    embeddings: list[EmbeddingSet]
    num_classes: int

    def by_split(self, split: str) -> list[InstanceRecord]:
        return [r for r in self.instances if r.split == split]

    def instance(self, iid: str) -> InstanceRecord:
        if not hasattr(self, "_index"):
            self._index = {r.id: r for r in self.instances}
        return self._index[iid]


@dataclass
class ValidationReport:
    split_counts: dict[str, int] = field(default_factory=dict)
    class_counts: dict[int, int] = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_lines(self) -> list[str]:
        lines = ["section\tkey\tvalue"]
        for s in SPLITS:
            lines.append("split_count\t%s\t%d" % (s, self.split_counts.get(s, 0)))
        for c in sorted(self.class_counts):
            lines.append("class_count\t%d\t%d" % (c, self.class_counts[c]))
        for v in self.violations:
            lines.append("violation\t-\t%s" % v)
        return lines


def load_manifest(path: str) -> WorkloadManifest:
    """Parse a key=value manifest; paths are resolved relative to its directory."""
    if not os.path.isfile(path):
        raise WorkloadError("manifest not found: %s" % path)
    base = os.path.dirname(os.path.abspath(path))
    num_classes = None
    embedding_files: list[str] = []
    prediction_file = None
    label_file = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise WorkloadError(
                    "%s:%d: expected key=value, got %r" % (path, lineno, line)
                )
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "num_classes":
                try:
                    num_classes = int(value)
                except ValueError:
                    raise WorkloadError(
                        "%s:%d: num_classes must be an integer" % (path, lineno)
                    ) from None
                if num_classes < 2:
                    raise WorkloadError(
                        "%s:%d: num_classes must be >= 2" % (path, lineno)
                    )
            elif key == "embedding_file":
                embedding_files.append(os.path.join(base, value))
            elif key == "prediction_file":
                prediction_file = os.path.join(base, value)
            elif key == "label_file":
                label_file = os.path.join(base, value)
            else:
                raise WorkloadError("%s:%d: unknown key %r" % (path, lineno, key))
    if num_classes is None:
        raise WorkloadError("%s: missing key num_classes" % path)
    if not embedding_files:
        raise WorkloadError("%s: at least one embedding_file required" % path)
    if prediction_file is None:
        raise WorkloadError("%s: missing key prediction_file" % path)
    if label_file is None:
        raise WorkloadError("%s: missing key label_file" % path)
    return WorkloadManifest(num_classes, embedding_files, prediction_file, label_file)


def _read_tsv(path: str, expected_header: list[str] | None = None):
    if not os.path.isfile(path):
        raise WorkloadError("file not found: %s" % path)
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline().rstrip("\n")
        if not header_line:
            raise WorkloadError("%s: empty file (header required)" % path)
        header = header_line.split("\t")
        if expected_header is not None and header != expected_header:
            raise WorkloadError(
                "%s: bad header %r, expected %r" % (path, header, expected_header)
            )
        rows = []
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line:
                continue
            rows.append((lineno, line.split("\t")))
    return header, rows


def _parse_float(token: str, path: str, lineno: int, iid: str) -> float:
    try:
        v = float(token)
    except ValueError:
        raise WorkloadError(
            "%s:%d (id %s): not a number: %r" % (path, lineno, iid, token)
        ) from None
    if not math.isfinite(v):
        raise WorkloadError(
            "%s:%d (id %s): non-finite value %r" % (path, lineno, iid, token)
        )
    return v


def _load_labels(path: str, C: int) -> list[InstanceRecord]:
    _, rows = _read_tsv(path, ["id", "split", "true_label"])
    records = []
    seen = set()
    for lineno, cols in rows:
        if len(cols) != 3:
            raise WorkloadError("%s:%d: expected 3 columns" % (path, lineno))
        iid, split, label_s = cols
        if iid in seen:
            raise WorkloadError("%s:%d: duplicate id %s" % (path, lineno, iid))
        seen.add(iid)
        if split not in SPLITS:
            raise WorkloadError(
                "%s:%d (id %s): bad split %r" % (path, lineno, iid, split)
            )
        try:
            label = int(label_s)
        except ValueError:
            raise WorkloadError(
                "%s:%d (id %s): bad true_label %r" % (path, lineno, iid, label_s)
            ) from None
        if label != MISSING_LABEL and not 0 <= label < C:
            raise WorkloadError(
                "%s:%d (id %s): true_label %d out of [0, %d)"
                % (path, lineno, iid, label, C)
            )
        records.append(InstanceRecord(iid, split, label))
    return records


def _load_predictions(path: str, C: int) -> dict[str, tuple[int, list[float]]]:
    expected = ["id", "predicted_label"] + ["logit_%d" % c for c in range(C)]
    _, rows = _read_tsv(path, expected)
    out: dict[str, tuple[int, list[float]]] = {}
    for lineno, cols in rows:
        if len(cols) != 2 + C:
            raise WorkloadError("%s:%d: expected %d columns" % (path, lineno, 2 + C))
        iid = cols[0]
        try:
            pred = int(cols[1])
        except ValueError:
            raise WorkloadError(
                "%s:%d (id %s): bad predicted_label %r" % (path, lineno, iid, cols[1])
            ) from None
        if not 0 <= pred < C:
            raise WorkloadError(
                "%s:%d (id %s): predicted_label %d out of [0, %d)"
                % (path, lineno, iid, pred, C)
            )
        logits = [_parse_float(t, path, lineno, iid) for t in cols[2:]]
        out[iid] = (pred, logits)
    return out


def _load_embeddings(path: str) -> EmbeddingSet:
    header, rows = _read_tsv(path)
    if not header or header[0] != "id":
        raise WorkloadError("%s: first column must be 'id'" % path)
    dim = len(header) - 1
    if dim < 1:
        raise WorkloadError("%s: no feature columns" % path)
    if header[1:] != ["f_%d" % i for i in range(dim)]:
        raise WorkloadError("%s: feature columns must be f_0..f_%d" % (path, dim - 1))
    name = os.path.splitext(os.path.basename(path))[0]
    table: dict[str, list[float]] = {}
    for lineno, cols in rows:
        iid = cols[0]
        if len(cols) != dim + 1:
            raise WorkloadError(
                "%s:%d (id %s): expected %d values, got %d"
                % (path, lineno, iid, dim, len(cols) - 1)
            )
        table[iid] = [_parse_float(t, path, lineno, iid) for t in cols[1:]]
    return EmbeddingSet(name, dim, table)


def load_workload(manifest: WorkloadManifest) -> Workload:
    """Join label, prediction, and embedding files into one Workload.

    The join is strict: every id in the label file must appear in the
    prediction file and in every embedding file.
    """
    C = manifest.num_classes
    records = _load_labels(manifest.label_file, C)
    preds = _load_predictions(manifest.prediction_file, C)
    embeddings = [_load_embeddings(p) for p in manifest.embedding_files]
    for rec in records:
        if rec.id not in preds:
            raise WorkloadError(
                "id %s in %s missing from %s"
                % (rec.id, manifest.label_file, manifest.prediction_file)
            )
        rec.predicted_label, rec.logits = preds[rec.id]
        for emb in embeddings:
            if rec.id not in emb.rows:
                raise WorkloadError(
                    "id %s missing from embedding %s" % (rec.id, emb.backbone_name)
                )
    return Workload(records, embeddings, C)


def validate_workload(w: Workload) -> ValidationReport:
    """Check all workload invariants; violations go in the report, not raised."""
    report = ValidationReport()
    seen: set[str] = set()
    for s in SPLITS:
        report.split_counts[s] = 0
    for rec in w.instances:
        if rec.id in seen:
            report.violations.append("duplicate id %s" % rec.id)
        seen.add(rec.id)
        if rec.split not in SPLITS:
            report.violations.append("id %s: bad split %r" % (rec.id, rec.split))
        else:
            report.split_counts[rec.split] += 1
        if rec.has_true_label:
            if not 0 <= rec.true_label < w.num_classes:
                report.violations.append(
                    "id %s: true_label %d out of range" % (rec.id, rec.true_label)
                )
            else:
                report.class_counts[rec.true_label] = (
                    report.class_counts.get(rec.true_label, 0) + 1
                )
        elif rec.split in ("train", "valid"):
            report.violations.append(
                "id %s: %s instance missing true_label" % (rec.id, rec.split)
            )
        if not 0 <= rec.predicted_label < w.num_classes:
            report.violations.append(
                "id %s: predicted_label %d out of range" % (rec.id, rec.predicted_label)
            )
    for emb in w.embeddings:
        for rec in w.instances:
            row = emb.rows.get(rec.id)
            if row is None:
                report.violations.append(
                    "id %s missing from embedding %s" % (rec.id, emb.backbone_name)
                )
            elif len(row) != emb.dim:
                report.violations.append(
                    "id %s: embedding %s has %d values, expected %d"
                    % (rec.id, emb.backbone_name, len(row), emb.dim)
                )
    return report


def write_ranking(scores, path: str) -> None:
    """Write the risk ranking TSV: highest risk first, ties by id.

    `scores` is a RiskScoreTable (anything exposing predicted_items()
    yielding (id, predicted_class, gamma) tuples).
    """
    items = list(scores.predicted_items())
    items.sort(key=lambda t: (-t[2], t[0]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id\tpredicted_class\trisk_score\trank\n")
        for rank, (iid, cls, gamma) in enumerate(items, start=1):
            fh.write("%s\t%d\t%s\t%d\n" % (iid, cls, fmt_float(gamma), rank))


def write_workload(w: Workload, out_dir: str, name: str = "workload") -> str:
    """Serialize a workload to `out_dir` in the manifest formats; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    label_path = os.path.join(out_dir, "labels.tsv")
    with open(label_path, "w", encoding="utf-8") as fh:
        fh.write("id\tsplit\ttrue_label\n")
        for rec in w.instances:
            fh.write("%s\t%s\t%d\n" % (rec.id, rec.split, rec.true_label))
    pred_path = os.path.join(out_dir, "predictions.tsv")
    with open(pred_path, "w", encoding="utf-8") as fh:
        fh.write(
            "id\tpredicted_label\t"
            + "\t".join("logit_%d" % c for c in range(w.num_classes))
            + "\n"
        )
        for rec in w.instances:
            logits = rec.logits or [0.0] * w.num_classes
            fh.write(
                "%s\t%d\t%s\n"
                % (rec.id, rec.predicted_label, "\t".join(fmt_float(v) for v in logits))
            )
    emb_names = []
    for emb in w.embeddings:
        p = os.path.join(out_dir, "%s.tsv" % emb.backbone_name)
        emb_names.append("%s.tsv" % emb.backbone_name)
        with open(p, "w", encoding="utf-8") as fh:
            fh.write("id\t" + "\t".join("f_%d" % i for i in range(emb.dim)) + "\n")
            for rec in w.instances:
                row = emb.rows[rec.id]
                fh.write("%s\t%s\n" % (rec.id, "\t".join(fmt_float(v) for v in row)))
    manifest_path = os.path.join(out_dir, "%s.manifest" % name)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("# generated workload manifest\n")
        fh.write("num_classes=%d\n" % w.num_classes)
        for n in emb_names:
            fh.write("embedding_file=%s\n" % n)
        fh.write("prediction_file=predictions.tsv\n")
        fh.write("label_file=labels.tsv\n")
    return manifest_path
