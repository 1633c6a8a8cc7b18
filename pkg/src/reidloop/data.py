"""Dataset manifests, feature file formats, and the synthetic benchmark generator.

A dataset is a JSON manifest next to one feature file:

    {
      "name": "...",
      "d": 30,
      "features": "features.bin",        # or .csv
      "split": {"train": [ids...], "test": [ids...]}
    }

CSV feature files carry a header ``id,camera,path,f0..f{d-1}`` with one record
per row (path may be empty).  The binary format is:

    magic b"TMAF", u32 version=1, u32 count, u32 dim, then per record:
    u16 id byte length, UTF-8 id, u8 camera, dim float64 little-endian.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FeatureRecord

FEATURE_MAGIC = b"TMAF"
FEATURE_VERSION = 1


class DatasetError(ValueError):
    """Malformed manifest or feature file."""


@dataclass
class Dataset:
    name: str
    d: int
    records: list[FeatureRecord]
    train_ids: list[str]
    test_ids: list[str]
    root: Path | None = None

    def _subset(self, ids: list[str]) -> list[FeatureRecord]:
        wanted = set(ids)
        return [r for r in self.records if r.person_id in wanted]

    def train_records(self) -> list[FeatureRecord]:
        return self._subset(self.train_ids)

    def test_records(self) -> list[FeatureRecord]:
        return self._subset(self.test_ids)

    @staticmethod
    def probes(records: list[FeatureRecord]) -> list[FeatureRecord]:
        """Records of the lowest camera id (the probe view)."""
        cam = min(r.camera_id for r in records)
        return [r for r in records if r.camera_id == cam]

    @staticmethod
    def gallery(records: list[FeatureRecord]) -> list[FeatureRecord]:
        cam = max(r.camera_id for r in records)
        return [r for r in records if r.camera_id == cam]


def write_features_csv(path: str | Path, records: list[FeatureRecord]) -> None:
    d = records[0].dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "camera", "path"] + [f"f{i}" for i in range(d)])
        for r in records:
            writer.writerow([r.person_id, r.camera_id, r.image_path or ""]
                            + [repr(float(v)) for v in r.feature])


def read_features_csv(path: str | Path) -> list[FeatureRecord]:
    path = Path(path)
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty feature file") from None
        if header[:3] != ["id", "camera", "path"]:
            raise DatasetError(f"{path}: header must start with id,camera,path")
        d = len(header) - 3
        if d < 1 or header[3:] != [f"f{i}" for i in range(d)]:
            raise DatasetError(f"{path}: malformed feature columns in header")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 3:
                raise DatasetError(f"{path}:{lineno}: expected {d + 3} fields, got {len(row)}")
            try:
                feature = np.array([float(v) for v in row[3:]])
                camera = int(row[1])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            records.append(FeatureRecord(row[0], camera, feature, row[2] or None))
    if not records:
        raise DatasetError(f"{path}: no records")
    return records


def write_features_binary(path: str | Path, records: list[FeatureRecord]) -> None:
    d = records[0].dim
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, len(records), d))
        for r in records:
            ident = r.person_id.encode("utf-8")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<B", r.camera_id))
            fh.write(np.ascontiguousarray(r.feature, dtype="<f8").tobytes())


def read_features_binary(path: str | Path) -> list[FeatureRecord]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16:
        raise DatasetError(f"{path}: truncated header")
    if blob[:4] != FEATURE_MAGIC:
        raise DatasetError(f"{path}: bad magic {blob[:4]!r}")
    version, count, dim = struct.unpack_from("<III", blob, 4)
    if version != FEATURE_VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    off = 16
    records = []
    for i in range(count):
        try:
            (id_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            ident = blob[off:off + id_len].decode("utf-8")
            if len(blob[off:off + id_len]) != id_len:
                raise struct.error("id bytes")
            off += id_len
            (camera,) = struct.unpack_from("<B", blob, off)
            off += 1
            feat_bytes = blob[off:off + dim * 8]
            if len(feat_bytes) != dim * 8:
                raise struct.error("feature bytes")
            off += dim * 8
        except (struct.error, UnicodeDecodeError) as exc:
            raise DatasetError(f"{path}: record {i} at offset {off}: {exc}") from exc
        feature = np.frombuffer(feat_bytes, dtype="<f8").astype(np.float64)
        records.append(FeatureRecord(ident, camera, feature))
    if not records:
        raise DatasetError(f"{path}: no records")
    return records


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Read a manifest, materialize its features, and validate consistency."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DatasetError(f"{manifest_path}: invalid JSON: {exc}") from exc
    for key in ("name", "d", "features", "split"):
        if key not in manifest:
            raise DatasetError(f"{manifest_path}: missing key {key!r}")
    split = manifest["split"]
    if not isinstance(split, dict) or "train" not in split or "test" not in split:
        raise DatasetError(f"{manifest_path}: split must hold 'train' and 'test' id lists")

    feat_path = manifest_path.parent / manifest["features"]
    if feat_path.suffix == ".csv":
        records = read_features_csv(feat_path)
    else:
        records = read_features_binary(feat_path)

    d = int(manifest["d"])
    for r in records:
        if r.dim != d:
            raise DatasetError(
                f"{feat_path}: record {r.person_id!r} has dim {r.dim}, manifest says {d}")

    train_ids = [str(i) for i in split["train"]]
    test_ids = [str(i) for i in split["test"]]
    overlap = set(train_ids) & set(test_ids)
    if overlap:
        raise DatasetError(f"{manifest_path}: ids in both splits: {sorted(overlap)[:5]}")
    known = set(train_ids) | set(test_ids)
    missing = {r.person_id for r in records} - known
    if missing:
        raise DatasetError(f"{manifest_path}: records outside any split: {sorted(missing)[:5]}")

    return Dataset(str(manifest["name"]), d, records, train_ids, test_ids,
                   root=manifest_path.parent)


def save_dataset(dataset: Dataset, out_dir: str | Path,
                 feature_format: str = "bin") -> Path:
    """Write the feature file and manifest into out_dir; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if feature_format == "csv":
        feat_name = "features.csv"
        write_features_csv(out_dir / feat_name, dataset.records)
    elif feature_format == "bin":
        feat_name = "features.bin"
        write_features_binary(out_dir / feat_name, dataset.records)
    else:
        raise ValueError(f"unknown feature format {feature_format!r}")
    manifest = {
        "name": dataset.name,
        "d": dataset.d,
        "features": feat_name,
        "split": {"train": dataset.train_ids, "test": dataset.test_ids},
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    return manifest_path


def make_synthetic_dataset(num_train_ids: int = 40, num_test_ids: int = 40,
                           d: int = 30, images_per_camera: int = 1,
                           noise: float = 0.12, camera_shift: float = 1.5,
                           sibling_offset: float = 0.7,
                           seed: int = 7, name: str = "synthetic") -> Dataset:
    """Two-camera synthetic re-identification set with confusable identity pairs.

    Identity prototypes are sampled in sibling pairs (the second of each pair
    sits a small offset from the first) so some negatives are genuinely hard.
    Camera 1 adds a global shift.  Every image gets Gaussian noise and the
    feature vectors are normalized to unit length, which keeps the unit step
    size of the reference training protocol stable.
    """
    total = num_train_ids + num_test_ids
    if total % 2:
        raise ValueError("id counts must give an even total (prototypes come in pairs)")
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(total // 2, d))
    protos = np.empty((total, d))
    protos[0::2] = base
    protos[1::2] = base + rng.normal(scale=sibling_offset, size=(total // 2, d))
    shift = rng.normal(size=d)
    shift = shift / np.linalg.norm(shift) * camera_shift

    ids = [f"id{i:03d}" for i in range(total)]
    records = []
    for camera, offset in ((0, 0.0), (1, shift)):
        for i in range(total):
            for _ in range(images_per_camera):
                x = protos[i] + offset + rng.normal(scale=noise, size=d)
                x = x / np.linalg.norm(x)
                records.append(FeatureRecord(ids[i], camera, x))

    # sibling pairs stay whole within a split so both contain hard negatives
    if num_train_ids % 2 or num_test_ids % 2:
        raise ValueError("per-split id counts must be even to keep sibling pairs whole")
    train_ids = ids[:num_train_ids]
    test_ids = ids[num_train_ids:]
    return Dataset(name, d, records, train_ids, test_ids)
