import json

import numpy as np
import pytest

from reidloop import (Dataset, DatasetError, FeatureRecord, load_dataset,
                      make_synthetic_dataset, save_dataset)
from reidloop.data import (read_features_binary, read_features_csv,
                           write_features_binary, write_features_csv)


def two_person_records():
    return [
        FeatureRecord("alice", 0, np.array([0.1, 0.2, 0.3]), "img/a0.png"),
        FeatureRecord("alice", 1, np.array([0.1, 0.25, 0.31])),
        FeatureRecord("bob", 0, np.array([-1.0, 0.0, 2.0])),
        FeatureRecord("bob", 1, np.array([-1.1, 0.1, 2.2])),
    ]


def write_manifest(tmp_path, records, fmt="csv", d=3, split=None):
    ds = Dataset("fixture", d, records,
                 *(split or (["alice"], ["bob"])))
    return save_dataset(ds, tmp_path, feature_format=fmt)


# --- csv ------------------------------------------------------------------------

def test_csv_roundtrip(tmp_path):
    records = two_person_records()
    path = tmp_path / "f.csv"
    write_features_csv(path, records)
    back = read_features_csv(path)
    assert len(back) == 4
    assert back[0].person_id == "alice"
    assert back[0].camera_id == 0
    assert back[0].image_path == "img/a0.png"
    assert back[1].image_path is None
    for a, b in zip(records, back):
        assert np.array_equal(a.feature, b.feature)


def test_csv_infers_dimension_from_header(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("id,camera,path,f0,f1\nalice,0,,1.0,2.0\nbob,1,,3.0,4.0\n")
    back = read_features_csv(path)
    assert len(back) == 2 and back[0].dim == 2


def test_csv_bad_header(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("identity,cam,f0\nx,0,1.0\n")
    with pytest.raises(DatasetError):
        read_features_csv(path)


def test_csv_ragged_row(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("id,camera,path,f0,f1\nalice,0,,1.0\n")
    with pytest.raises(DatasetError, match=":2"):
        read_features_csv(path)


# --- binary ----------------------------------------------------------------------

def test_binary_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    records = [FeatureRecord(f"person-{i}", i % 2, rng.normal(size=4))
               for i in range(3)]
    path = tmp_path / "f.bin"
    write_features_binary(path, records)
    back = read_features_binary(path)
    assert len(back) == 3
    for a, b in zip(records, back):
        assert a.person_id == b.person_id
        assert a.camera_id == b.camera_id
        assert np.array_equal(a.feature, b.feature)


def test_binary_header_contract(tmp_path):
    path = tmp_path / "f.bin"
    write_features_binary(path, two_person_records())
    blob = path.read_bytes()
    assert blob[:4] == b"TMAF"
    version, count, dim = np.frombuffer(blob[4:16], dtype="<u4")
    assert (version, count, dim) == (1, 4, 3)


def test_binary_truncated_file_is_schema_error(tmp_path):
    path = tmp_path / "f.bin"
    write_features_binary(path, two_person_records())
    blob = path.read_bytes()
    truncated = tmp_path / "t.bin"
    truncated.write_bytes(blob[:len(blob) - 10])
    with pytest.raises(DatasetError):
        read_features_binary(truncated)


def test_binary_bad_magic(tmp_path):
    path = tmp_path / "f.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(DatasetError, match="magic"):
        read_features_binary(path)


# --- manifest ----------------------------------------------------------------------

def test_load_dataset_csv_fixture(tmp_path):
    manifest = write_manifest(tmp_path, two_person_records(), fmt="csv")
    ds = load_dataset(manifest)
    assert ds.d == 3
    assert len(ds.records) == 4
    assert {r.person_id for r in ds.train_records()} == {"alice"}
    assert {r.person_id for r in ds.test_records()} == {"bob"}


def test_load_dataset_binary(tmp_path):
    manifest = write_manifest(tmp_path, two_person_records(), fmt="bin")
    ds = load_dataset(manifest)
    assert len(ds.records) == 4


def test_load_dataset_d_mismatch(tmp_path):
    manifest = write_manifest(tmp_path, two_person_records(), fmt="csv", d=5)
    with pytest.raises(DatasetError, match="dim"):
        load_dataset(manifest)


def test_load_dataset_split_overlap(tmp_path):
    manifest = write_manifest(tmp_path, two_person_records(),
                              split=(["alice", "bob"], ["bob"]))
    with pytest.raises(DatasetError, match="both splits"):
        load_dataset(manifest)


def test_load_dataset_unassigned_record(tmp_path):
    manifest = write_manifest(tmp_path, two_person_records(),
                              split=(["alice"], []))
    with pytest.raises(DatasetError, match="outside"):
        load_dataset(manifest)


def test_load_dataset_missing_key(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"name": "x", "d": 3}))
    with pytest.raises(DatasetError, match="missing key"):
        load_dataset(path)


def test_load_dataset_bad_json(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{not json")
    with pytest.raises(DatasetError, match="JSON"):
        load_dataset(path)


# --- synthetic generator ---------------------------------------------------------------

def test_synthetic_shapes_and_split():
    ds = make_synthetic_dataset(num_train_ids=8, num_test_ids=8, d=6,
                                images_per_camera=2, seed=1)
    assert ds.d == 6
    assert len(ds.train_ids) == 8 and len(ds.test_ids) == 8
    assert not set(ds.train_ids) & set(ds.test_ids)
    # 16 ids x 2 cameras x 2 images
    assert len(ds.records) == 64
    for r in ds.records:
        assert r.dim == 6
        assert np.linalg.norm(r.feature) == pytest.approx(1.0)
    train = ds.train_records()
    assert len(Dataset.probes(train)) == 16
    assert len(Dataset.gallery(train)) == 16


def test_synthetic_is_seeded():
    a = make_synthetic_dataset(num_train_ids=4, num_test_ids=4, d=5, seed=9)
    b = make_synthetic_dataset(num_train_ids=4, num_test_ids=4, d=5, seed=9)
    for ra, rb in zip(a.records, b.records):
        assert np.array_equal(ra.feature, rb.feature)


def test_synthetic_roundtrips_through_files(tmp_path):
    ds = make_synthetic_dataset(num_train_ids=4, num_test_ids=4, d=5, seed=2)
    manifest = save_dataset(ds, tmp_path, feature_format="bin")
    back = load_dataset(manifest)
    assert back.train_ids == ds.train_ids
    assert len(back.records) == len(ds.records)
    for a, b in zip(ds.records, back.records):
        assert np.array_equal(a.feature, b.feature)
