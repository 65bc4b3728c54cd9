"""On-disk formats shared across the project.

DNEV is the little-endian binary event format: magic ``DNEV``, u32
length, u32 channels, u64 event count, then (u32 t, u32 c) records
sorted by (t, c).  A CSV twin exists for debugging.  Networks and
readout checkpoints are JSON-header-plus-raw-blob hybrids: one JSON
line describing the geometry, followed by little-endian arrays.
Dataset manifests are plain JSON listing sample files and labels.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import EventStream, SequenceSpec
from .data import Dataset, LabeledSample
from .readout import QuantizedWeights, ReadoutModel

__all__ = [
    "write_dnev",
    "read_dnev",
    "write_events_csv",
    "read_events_csv",
    "write_network",
    "read_network",
    "write_checkpoint",
    "read_checkpoint",
    "save_dataset",
    "load_dataset",
]

DNEV_MAGIC = b"DNEV"
_HEADER = struct.Struct("<4sIIQ")
_RECORD = struct.Struct("<II")


def write_dnev(path: str | Path, stream: EventStream) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DNEV_MAGIC, stream.length, stream.channels, stream.n_events))
        buf = np.empty((stream.n_events, 2), dtype="<u4")
        buf[:, 0] = stream.times
        buf[:, 1] = stream.chans
        fh.write(buf.tobytes())


def read_dnev(path: str | Path) -> EventStream:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, length, channels, n = _HEADER.unpack(head)
        if magic != DNEV_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        raw = fh.read(n * _RECORD.size)
        if len(raw) != n * _RECORD.size:
            raise ValueError(f"{path}: truncated event records")
    arr = np.frombuffer(raw, dtype="<u4").reshape(-1, 2).astype(np.int64)
    return EventStream(length, channels, arr[:, 0], arr[:, 1])


def write_events_csv(path: str | Path, stream: EventStream) -> None:
    with open(path, "w") as fh:
        fh.write(f"#T={stream.length},C={stream.channels}\n")
        fh.write("t,c\n")
        for t, c in zip(stream.times, stream.chans):
            fh.write(f"{t},{c}\n")


def read_events_csv(path: str | Path) -> EventStream:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#T="):
            raise ValueError(f"{path}: missing #T=..,C=.. header")
        t_part, c_part = header[1:].split(",")
        length = int(t_part.split("=")[1])
        channels = int(c_part.split("=")[1])
        events = []
        for line in fh:
            line = line.strip()
            if not line or line == "t,c":
                continue
            t, c = line.split(",")
            events.append((int(t), int(c)))
    return EventStream.from_events(length, channels, events)


def _write_header_line(fh, header: dict) -> None:
    fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
    fh.write(b"\n")


def _read_header_line(fh) -> dict:
    line = fh.readline()
    if not line:
        raise ValueError("missing JSON header line")
    return json.loads(line.decode())


def write_network(
    path: str | Path,
    units: Sequence[SequenceSpec],
    channels: int,
    accept_window: int,
    class_of: Sequence[int] | None = None,
) -> None:
    header = {
        "format": "dnn-network",
        "version": 1,
        "n_units": len(units),
        "channels": channels,
        "accept_window": accept_window,
        "spines": [spec.n_spines for spec in units],
        "class_of": list(class_of) if class_of is not None else None,
    }
    with open(path, "wb") as fh:
        _write_header_line(fh, header)
        for spec in units:
            fh.write(np.asarray(spec.origins, dtype="<u4").tobytes())
            fh.write(np.asarray(spec.intervals, dtype="<u4").tobytes())


def read_network(
    path: str | Path,
) -> tuple[list[SequenceSpec], int, int, list[int] | None]:
    """Returns (units, channels, accept_window, class_of)."""
    with open(path, "rb") as fh:
        header = _read_header_line(fh)
        if header.get("format") != "dnn-network":
            raise ValueError(f"{path}: not a network file")
        units = []
        for ns in header["spines"]:
            origins = np.frombuffer(fh.read(4 * ns), dtype="<u4")
            intervals = np.frombuffer(fh.read(4 * (ns - 1)), dtype="<u4")
            units.append(
                SequenceSpec(origins=tuple(origins), intervals=tuple(intervals))
            )
    return units, header["channels"], header["accept_window"], header["class_of"]


def write_checkpoint(path: str | Path, model: ReadoutModel, meta: dict | None = None) -> None:
    header = {
        "format": "dnn-readout",
        "version": 1,
        "n_classes": model.n_classes,
        "n_units": model.n_units,
        "quant_scale": model.quantized.scale if model.quantized else None,
        "has_null_thresholds": model.null_thresholds is not None,
        "prune_rate": model.prune_rate(),
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        _write_header_line(fh, header)
        fh.write(model.weights.astype("<f4").tobytes())
        fh.write(model.prune_mask.astype("u1").tobytes())
        if model.quantized is not None:
            fh.write(model.quantized.values.astype("i1").tobytes())
        if model.null_thresholds is not None:
            fh.write(model.null_thresholds.astype("<f4").tobytes())


def read_checkpoint(path: str | Path) -> tuple[ReadoutModel, dict]:
    with open(path, "rb") as fh:
        header = _read_header_line(fh)
        if header.get("format") != "dnn-readout":
            raise ValueError(f"{path}: not a readout checkpoint")
        nc, nu = header["n_classes"], header["n_units"]
        weights = (
            np.frombuffer(fh.read(4 * nc * nu), dtype="<f4")
            .reshape(nc, nu)
            .astype(np.float64)
        )
        mask = np.frombuffer(fh.read(nc * nu), dtype="u1").reshape(nc, nu)
        model = ReadoutModel(weights=weights, prune_mask=mask.copy())
        if header["quant_scale"] is not None:
            values = np.frombuffer(fh.read(nc * nu), dtype="i1").reshape(nc, nu)
            model.quantized = QuantizedWeights(
                values=values.copy(), scale=header["quant_scale"]
            )
        if header["has_null_thresholds"]:
            model.null_thresholds = np.frombuffer(
                fh.read(4 * nc), dtype="<f4"
            ).astype(np.float64)
    return model, header.get("meta", {})


def save_dataset(
    dataset: Dataset,
    directory: str | Path,
    name: str,
    time_unit: str = "step",
    meta: dict | None = None,
) -> Path:
    """Write samples as DNEV files plus a JSON manifest; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sample in enumerate(dataset.samples):
        fname = f"{name}_{i:05d}.dnev"
        write_dnev(directory / fname, sample.stream)
        entries.append({"path": fname, "label": sample.label})
    manifest = {
        "format": "dnn-dataset",
        "version": 1,
        "split": name,
        "n_classes": dataset.n_classes,
        "class_names": dataset.class_names,
        "batch_size": dataset.batch_size,
        "time_unit": time_unit,
        "samples": entries,
        "meta": meta or {},
    }
    manifest_path = directory / f"{name}.manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest_path


def load_dataset(manifest_path: str | Path) -> Dataset:
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "dnn-dataset":
        raise ValueError(f"{manifest_path}: not a dataset manifest")
    samples = [
        LabeledSample(
            stream=read_dnev(manifest_path.parent / entry["path"]),
            label=entry["label"],
        )
        for entry in manifest["samples"]
    ]
    return Dataset(
        samples=samples,
        n_classes=manifest["n_classes"],
        class_names=manifest["class_names"],
        batch_size=manifest["batch_size"],
    )
