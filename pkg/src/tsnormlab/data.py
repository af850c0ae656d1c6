"""Time series containers, file loaders and synthetic generators.

Two on-disk formats are supported:

* the UEA/sktime ``.ts`` text dialect (equal-length, no timestamps, no
  missing values) via :func:`parse_uea_ts` / :func:`write_uea_ts`;
* a long-format CSV with columns ``instance_id, channel, t, value, label``
  via :func:`parse_csv`.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, ParseWarning, ShapeError, UnsupportedError
from .linalg import RngStream


@dataclass(frozen=True)
class TimeSeriesInstance:
    """One multivariate series stored as a ``channels x length`` grid."""

    values: np.ndarray
    label: str | None = None
    target: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2 or values.shape[1] == 0:
            raise ShapeError(f"instance values must be channels x length, got {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.target is not None:
            target = np.asarray(self.target, dtype=np.float64)
            if target.ndim == 1:
                target = target[None, :]
            if target.shape[0] != values.shape[0]:
                raise ShapeError("target must have the same channel count as values")
            target.setflags(write=False)
            object.__setattr__(self, "target", target)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray, target: np.ndarray | None = None) -> "TimeSeriesInstance":
        return TimeSeriesInstance(values, self.label, self.target if target is None else target)


@dataclass(frozen=True)
class Dataset:
    name: str
    instances: tuple[TimeSeriesInstance, ...]
    class_labels: tuple[str, ...] = ()
    split: str = "train"
    provenance: str = ""
    meta: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        object.__setattr__(self, "class_labels", tuple(self.class_labels))
        if self.instances:
            k = self.instances[0].channels
            for i, inst in enumerate(self.instances):
                if inst.channels != k:
                    raise ShapeError(f"instance {i} has {inst.channels} channels, expected {k}")
                if self.class_labels and inst.label not in self.class_labels:
                    raise ValueError(f"instance {i} label {inst.label!r} not in vocabulary")

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    @property
    def channels(self) -> int:
        return self.instances[0].channels

    @property
    def is_classification(self) -> bool:
        return bool(self.class_labels)

    def values_array(self) -> np.ndarray:
        """Stack to ``(instances, channels, length)``; requires equal lengths."""
        return np.stack([inst.values for inst in self.instances])

    def label_indices(self) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.class_labels)}
        return np.array([lookup[inst.label] for inst in self.instances], dtype=np.int64)

    def subset(self, indices: Iterable[int], split: str | None = None) -> "Dataset":
        return Dataset(self.name, tuple(self.instances[i] for i in indices), self.class_labels,
                       split or self.split, self.provenance, dict(self.meta))

    def equals(self, other: "Dataset") -> bool:
        if (self.name, self.class_labels, len(self)) != (other.name, other.class_labels, len(other)):
            return False
        for a, b in zip(self.instances, other.instances):
            if a.label != b.label or not np.array_equal(a.values, b.values):
                return False
        return True


# --------------------------------------------------------------------------
# .ts format

_KNOWN_TAGS = {
    "problemname", "timestamps", "missing", "univariate", "dimensions",
    "equallength", "serieslength", "classlabel", "targetlabel", "data",
}


def _as_text(text: str | bytes) -> str:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return text


def _truthy(value: str, line_no: int) -> bool:
    v = value.strip().lower()
    if v == "true":
        return True
    if v == "false":
        return False
    raise ParseError(f"expected true/false, got {value!r}", line=line_no)


def parse_uea_ts(text: str | bytes, name: str | None = None, split: str = "train") -> Dataset:
    """Parse the equal-length UEA ``.ts`` dialect into a :class:`Dataset`.

    Header values (``@dimensions``, ``@serieslength``, ``@classlabel``) are
    checked against every data line. Unknown ``@`` tags produce a
    :class:`ParseWarning`; timestamps, missing values and unequal lengths are
    rejected with :class:`UnsupportedError`.
    """
    lines = _as_text(text).replace("\r\n", "\n").replace("\r", "\n").split("\n")
    header: dict[str, str] = {}
    labels: tuple[str, ...] = ()
    has_labels = False
    in_data = False
    instances: list[TimeSeriesInstance] = []

    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not in_data:
            if not line.startswith("@"):
                raise ParseError("data line before @data", line=line_no)
            spelled, _, rest = line[1:].partition(" ")
            tag = spelled.lower()
            rest = rest.strip()
            if tag not in _KNOWN_TAGS:
                warnings.warn(f"line {line_no}: unknown header tag @{spelled}", ParseWarning, stacklevel=2)
                continue
            if tag == "data":
                in_data = True
                continue
            if tag == "classlabel":
                parts = rest.split()
                if not parts:
                    raise ParseError("@classlabel needs true/false", line=line_no)
                has_labels = _truthy(parts[0], line_no)
                labels = tuple(parts[1:]) if has_labels else ()
                if has_labels and not labels:
                    raise ParseError("@classlabel true without any labels", line=line_no)
            elif tag in ("timestamps", "missing"):
                if _truthy(rest, line_no):
                    raise UnsupportedError(f"line {line_no}: @{tag} true is not supported")
            elif tag == "equallength":
                if not _truthy(rest, line_no):
                    raise UnsupportedError(f"line {line_no}: unequal-length series are not supported")
            elif tag == "targetlabel":
                if _truthy(rest, line_no):
                    raise UnsupportedError(f"line {line_no}: regression targets are not supported")
            header[tag] = rest
            continue

        fields = line.split(":")
        label = None
        if has_labels:
            if len(fields) < 2:
                raise ParseError("missing class label field", line=line_no)
            label = fields[-1].strip()
            fields = fields[:-1]
            if label not in labels:
                raise ParseError(f"class label {label!r} not declared in @classlabel", line=line_no)
        dims = header.get("dimensions")
        if dims is not None and len(fields) != int(dims):
            raise ParseError(f"expected {dims} channels, found {len(fields)}", line=line_no)
        series_len = header.get("serieslength")
        rows = []
        col = 1
        for ch, chunk in enumerate(fields, start=1):
            tokens = chunk.split(",")
            if series_len is not None and len(tokens) != int(series_len):
                raise ParseError(
                    f"channel {ch} has length {len(tokens)}, expected {series_len}", line=line_no,
                    column=col)
            row = []
            for tok in tokens:
                tok_s = tok.strip()
                if tok_s == "?":
                    raise UnsupportedError(f"line {line_no}: missing values are not supported")
                try:
                    val = float(tok_s)
                except ValueError:
                    raise ParseError(f"non-numeric value {tok_s!r} in channel {ch}",
                                     line=line_no, column=col) from None
                if not math.isfinite(val):
                    raise ParseError(f"non-finite value {tok_s!r} in channel {ch}",
                                     line=line_no, column=col)
                row.append(val)
                col += len(tok) + 1
            rows.append(row)
        if rows and len({len(r) for r in rows}) != 1:
            raise ParseError("channels have unequal lengths", line=line_no)
        if instances and len(rows) != instances[0].channels:
            raise ParseError(f"expected {instances[0].channels} channels, found {len(rows)}",
                             line=line_no)
        instances.append(TimeSeriesInstance(np.array(rows), label))

    if not in_data:
        raise ParseError("no @data section found")
    ds_name = name or header.get("problemname", "unnamed")
    return Dataset(ds_name, tuple(instances), labels, split, provenance="uea .ts")


def write_uea_ts(dataset: Dataset) -> str:
    """Serialise to ``.ts`` text; floats use 17 significant digits."""
    if not dataset.instances:
        raise ValueError("cannot write an empty dataset")
    length = dataset.instances[0].length
    for inst in dataset.instances:
        if inst.length != length:
            raise UnsupportedError("only equal-length datasets can be written")
    out = [
        f"@problemName {dataset.name}",
        "@timeStamps false",
        "@missing false",
        f"@univariate {'true' if dataset.channels == 1 else 'false'}",
        f"@dimensions {dataset.channels}",
        "@equalLength true",
        f"@seriesLength {length}",
    ]
    if dataset.class_labels:
        out.append("@classLabel true " + " ".join(dataset.class_labels))
    else:
        out.append("@classLabel false")
    out.append("@data")
    for inst in dataset.instances:
        chans = [",".join(f"{v:.17g}" for v in row) for row in inst.values]
        if dataset.class_labels:
            chans.append(str(inst.label))
        out.append(":".join(chans))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# long-format CSV

CSV_COLUMNS = ("instance_id", "channel", "t", "value", "label")


def parse_csv(text: str | bytes, schema: Mapping[str, str] | None = None,
              name: str = "csv", split: str = "train") -> Dataset:
    """Assemble a dataset from long-format rows (one value per row).

    ``schema`` maps the roles ``instance_id, channel, t, value, label`` to
    column names; ``label`` may map to a missing column for unlabelled data.
    Row order does not matter. Duplicate or missing cells raise
    :class:`ParseError`.
    """
    cols = dict(zip(CSV_COLUMNS, CSV_COLUMNS))
    if schema:
        cols.update(schema)
    reader = csv.DictReader(io.StringIO(_as_text(text)))
    fieldnames = reader.fieldnames or []
    for role in ("instance_id", "channel", "t", "value"):
        if cols[role] not in fieldnames:
            raise ParseError(f"header is missing column {cols[role]!r}", line=1)
    has_label = cols["label"] in fieldnames

    cells: dict[str, dict[str, dict[int, float]]] = {}
    inst_labels: dict[str, str] = {}
    for line_no, row in enumerate(reader, start=2):
        try:
            inst = row[cols["instance_id"]].strip()
            chan = row[cols["channel"]].strip()
            t = int(row[cols["t"]])
            val = float(row[cols["value"]])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"bad row: {exc}", line=line_no) from None
        if not math.isfinite(val):
            raise ParseError("non-finite value", line=line_no)
        per_chan = cells.setdefault(inst, {}).setdefault(chan, {})
        if t in per_chan:
            raise ParseError(f"duplicate cell (instance {inst}, channel {chan}, t {t})", line=line_no)
        per_chan[t] = val
        if has_label:
            lab = (row[cols["label"]] or "").strip()
            if lab:
                prev = inst_labels.setdefault(inst, lab)
                if prev != lab:
                    raise ParseError(f"instance {inst} has conflicting labels {prev!r}, {lab!r}",
                                     line=line_no)

    def _key(s: str):
        try:
            return (0, int(s), s)
        except ValueError:
            return (1, 0, s)

    all_channels = sorted({c for chans in cells.values() for c in chans}, key=_key)
    instances = []
    ragged = []
    for inst in sorted(cells, key=_key):
        chans = cells[inst]
        if set(chans) != set(all_channels):
            ragged.append(inst)
            continue
        lengths = {len(chans[c]) for c in all_channels}
        times = [sorted(chans[c]) for c in all_channels]
        if len(lengths) != 1 or any(ts != times[0] for ts in times):
            ragged.append(inst)
            continue
        expected = list(range(times[0][0], times[0][0] + len(times[0])))
        if times[0] != expected:
            raise ParseError(f"instance {inst} has missing time steps")
        grid = np.array([[chans[c][t] for t in times[0]] for c in all_channels])
        instances.append(TimeSeriesInstance(grid, inst_labels.get(inst)))
    if ragged:
        raise ParseError(f"ragged channels in instance(s): {', '.join(ragged)}")
    if not instances:
        raise ParseError("no data rows")
    labels: tuple[str, ...] = ()
    if inst_labels:
        if len(inst_labels) != len(instances):
            missing = [i for i in sorted(cells, key=_key) if i not in inst_labels]
            raise ParseError(f"missing label for instance(s): {', '.join(missing)}")
        labels = tuple(sorted(set(inst_labels.values()), key=_key))
    return Dataset(name, tuple(instances), labels, split, provenance="long csv")


def write_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i, inst in enumerate(dataset.instances):
        for c, row in enumerate(inst.values):
            for t, v in enumerate(row):
                w.writerow([i, c, t, f"{v:.17g}", inst.label or ""])
    return buf.getvalue()


# --------------------------------------------------------------------------
# tokenisation

def tokenize(x: TimeSeriesInstance | np.ndarray, scheme: str = "per-timestep") -> np.ndarray:
    """Turn a ``channels x length`` series into an ``n x d`` token matrix.

    Only ``per-timestep`` is implemented: token ``i`` is the vector of channel
    values at time ``i``, so ``n = length`` and ``d = channels``.
    """
    if scheme != "per-timestep":
        raise UnsupportedError(f"unsupported tokenisation scheme {scheme!r}; use 'per-timestep'")
    values = x.values if isinstance(x, TimeSeriesInstance) else np.asarray(x, dtype=np.float64)
    if values.shape[-2] < 2:
        raise UnsupportedError(
            "per-timestep tokens need at least 2 channels (token dimension d >= 2); "
            "add a channel or use a multivariate dataset")
    return np.swapaxes(values, -1, -2).copy()


def untokenize(tokens: np.ndarray) -> np.ndarray:
    return np.swapaxes(np.asarray(tokens), -1, -2).copy()


# --------------------------------------------------------------------------
# splits

def train_val_split(dataset: Dataset, val_fraction: float = 0.2,
                    seed: int = 0) -> tuple[Dataset, Dataset]:
    """Hold out ``val_fraction`` of the instances, stratified by class label."""
    gen = RngStream(seed, 0x5B117).generator()
    n = len(dataset)
    if dataset.is_classification:
        groups: dict[str, list[int]] = {}
        for i, inst in enumerate(dataset.instances):
            groups.setdefault(inst.label, []).append(i)
        val_idx = []
        for lab in dataset.class_labels:
            idx = np.array(groups.get(lab, []))
            if idx.size == 0:
                continue
            gen.shuffle(idx)
            k = int(round(val_fraction * idx.size))
            if idx.size > 1:
                k = min(max(k, 1), idx.size - 1)
            val_idx.extend(idx[:k].tolist())
    else:
        idx = np.arange(n)
        gen.shuffle(idx)
        k = min(max(int(round(val_fraction * n)), 1), n - 1) if n > 1 else 0
        val_idx = idx[:k].tolist()
    val_set = set(val_idx)
    train_idx = [i for i in range(n) if i not in val_set]
    return dataset.subset(train_idx, "train"), dataset.subset(sorted(val_set), "val")


# --------------------------------------------------------------------------
# synthetic generators

def _balanced_labels(n: int, gen: np.random.Generator) -> np.ndarray:
    labels = np.arange(n) % 2
    gen.shuffle(labels)
    return labels


def synth_gaussian(n_instances: int, channels: int, length: int, seed: int,
                   name: str = "gaussian") -> Dataset:
    """Unlabelled i.i.d. standard normal series (raw-input distribution for scans)."""
    gen = RngStream(seed, 0x6A55).generator()
    vals = gen.standard_normal((n_instances, channels, length))
    return Dataset(name, tuple(TimeSeriesInstance(v) for v in vals), (), "train",
                   f"synth_gaussian(seed={seed})")


def synth_dominant_channel(n_instances: int, length: int, scale_ratio: float, seed: int,
                           noise: float = 0.1, cycles: float = 0.8) -> Dataset:
    """Two-class set where a huge class-free channel masks a small informative one.

    Channel 1 is Gaussian noise with standard deviation ``scale_ratio``.
    Channel 2 is ``sin(2*pi*cycles*t/length + phase) + noise*N(0,1)`` with
    phase 0 for class ``A`` and pi for class ``B``.
    """
    if scale_ratio < 1:
        raise ValueError("scale_ratio must be >= 1")
    gen = RngStream(seed, 0xD0C4).generator()
    labels = _balanced_labels(n_instances, gen)
    t = np.arange(length)
    base = 2 * np.pi * cycles * t / length
    instances = []
    for lab in labels:
        ch1 = scale_ratio * gen.standard_normal(length)
        ch2 = np.sin(base + np.pi * lab) + noise * gen.standard_normal(length)
        instances.append(TimeSeriesInstance(np.stack([ch1, ch2]), "AB"[lab]))
    return Dataset("dominant_channel", tuple(instances), ("A", "B"), "train",
                   f"synth_dominant_channel(ratio={scale_ratio}, seed={seed})")


def synth_amplitude_classes(n_instances: int, length: int, amp_a: float, amp_b: float,
                            seed: int, cycles: float = 2.0) -> Dataset:
    """Two-class set where only the amplitude of channel 1 carries the label.

    Instances come in matched pairs sharing one waveform
    ``1 + 0.5*sin(2*pi*cycles*t/length + phase)`` (random phase per pair);
    the class ``A`` member scales it by ``amp_a``, the class ``B`` member by
    ``amp_b``. Channel 2 is unit-variance noise. Per-channel instance
    standardisation maps both members' channel 1 to the same values.
    """
    if amp_a == amp_b:
        warnings.warn("amp_a == amp_b: classes are indistinguishable", UserWarning, stacklevel=2)
    gen = RngStream(seed, 0xA3B1).generator()
    t = np.arange(length)
    n_pairs = (n_instances + 1) // 2
    instances = []
    for _ in range(n_pairs):
        phase = gen.uniform(0, 2 * np.pi)
        wave = 1.0 + 0.5 * np.sin(2 * np.pi * cycles * t / length + phase)
        for amp, lab in ((amp_a, "A"), (amp_b, "B")):
            ch2 = gen.standard_normal(length)
            instances.append(TimeSeriesInstance(np.stack([amp * wave, ch2]), lab))
    instances = instances[:n_instances]
    order = np.arange(len(instances))
    gen.shuffle(order)
    return Dataset("amplitude_classes", tuple(instances[i] for i in order), ("A", "B"), "train",
                   f"synth_amplitude_classes(a={amp_a}, b={amp_b}, seed={seed})")


def persistence_mae(dataset: Dataset) -> float:
    """MAE of repeating each channel's last context value over the horizon."""
    errs = []
    for inst in dataset.instances:
        last = inst.values[:, -1:]
        errs.append(np.abs(inst.target - last).ravel())
    return float(np.mean(np.concatenate(errs)))


def synth_trend_forecast(n_instances: int, context: int, horizon: int, offset: float = 100.0,
                         seed: int = 0, channels: int = 2, trend: float = 0.01,
                         seasonal: float = 1.0, period: float = 24.0,
                         noise: float = 0.5) -> Dataset:
    """Forecasting set: ``offset + trend*t + seasonal*sin(2*pi*t/period + phase) + noise``.

    Every instance starts at ``t = 0`` and draws a random seasonal phase per
    channel. ``target``
    holds the ``horizon`` values following the ``context`` window. The
    persistence (repeat-last-value) MAE is stored in ``meta['persistence_mae']``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    gen = RngStream(seed, 0x7F0C).generator()
    total = context + horizon
    t = np.arange(total)
    instances = []
    for _ in range(n_instances):
        rows = []
        for _c in range(channels):
            phase = gen.uniform(0, 2 * np.pi)
            series = (offset + trend * t
                      + seasonal * np.sin(2 * np.pi * t / period + phase)
                      + noise * gen.standard_normal(total))
            rows.append(series)
        grid = np.stack(rows)
        instances.append(TimeSeriesInstance(grid[:, :context], None, grid[:, context:]))
    ds = Dataset("trend_forecast", tuple(instances), (), "train",
                 f"synth_trend_forecast(offset={offset}, seed={seed})")
    return replace(ds, meta={"persistence_mae": persistence_mae(ds)})


def concat_datasets(parts: Sequence[Dataset], name: str | None = None) -> Dataset:
    first = parts[0]
    insts = tuple(i for p in parts for i in p.instances)
    return Dataset(name or first.name, insts, first.class_labels, first.split, first.provenance,
                   dict(first.meta))
