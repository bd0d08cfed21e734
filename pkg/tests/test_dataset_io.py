from __future__ import annotations

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifsr.dataset_io import (
    CACHE_MAGIC,
    ClassLabels,
    FeatureRecord,
    GalleryManifest,
    align_labels,
    load_features,
    parse_cla,
    parse_off,
    save_features,
    serialize_cla,
    serialize_off,
    write_off,
)
from ifsr.errors import (
    CountMismatch,
    DeclaredCountMismatch,
    DimensionHeaderMismatch,
    IncompleteRecord,
    IndexOutOfRange,
    MissingHeader,
    VersionMismatch,
)
from ifsr.mesh import TriangleMesh, box_mesh, icosphere

QUAD = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"


def test_minimal_off():
    m = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2")
    assert m.n_vertices == 3 and m.n_faces == 1
    assert m.faces.tolist() == [[0, 1, 2]]


def test_fan_triangulation():
    m = parse_off(QUAD)
    assert m.n_vertices == 4
    assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_comments_and_blank_lines_skipped():
    text = "# leading comment\nOFF\n\n3 1 0\n# vertex block\n0 0 0\n1 0 0\n\n0 1 0\n3 0 1 2\n"
    assert parse_off(text).n_faces == 1


def test_missing_header():
    with pytest.raises(MissingHeader):
        parse_off("3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2")


def test_count_mismatch():
    with pytest.raises(CountMismatch):
        parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2")
    with pytest.raises(CountMismatch):
        parse_off("OFF\n3 2 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2")


def test_index_out_of_range():
    with pytest.raises(IndexOutOfRange):
        parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7")


def test_mesh_rejects_repeated_vertex_in_face():
    with pytest.raises(IndexOutOfRange):
        TriangleMesh(np.eye(3), np.array([[0, 1, 1]]))


def test_off_roundtrip_exact(tmp_path):
    m = icosphere(1)
    again = parse_off(serialize_off(m))
    assert np.array_equal(again.vertices, m.vertices)
    assert np.array_equal(again.faces, m.faces)
    write_off(m, tmp_path / "a.off")
    assert (tmp_path / "a.off").read_text() == serialize_off(m)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 12), st.integers(0, 2**31 - 1))
def test_fan_triangulation_count(k, seed):
    rng = np.random.default_rng(seed)
    verts = rng.normal(size=(k, 3))
    text = "OFF\n{} 1 0\n{}\n{} {}\n".format(
        k, "\n".join(" ".join(repr(float(c)) for c in v) for v in verts), k, " ".join(map(str, range(k)))
    )
    m = parse_off(text)
    assert m.n_faces == k - 2
    assert (m.faces[:, 0] == 0).all()


CLA = """PSB 1
3 5

animal 0 0

dog animal 3
1
4
7

cat animal 2
2
9
"""


def test_parse_cla_drops_empty_parent():
    labels = parse_cla(CLA)
    assert labels.class_names == ["dog", "cat"]
    assert labels.assignment == {"1": 0, "4": 0, "7": 0, "2": 1, "9": 1}
    assert labels.class_sizes().tolist() == [3, 2]


def test_cla_roundtrip():
    labels = parse_cla(CLA)
    again = parse_cla(serialize_cla(labels))
    assert again.class_names == labels.class_names
    assert again.assignment == labels.assignment


def test_cla_declared_count_mismatch():
    with pytest.raises(DeclaredCountMismatch):
        parse_cla(CLA.replace("3 5", "3 6"))
    with pytest.raises(DeclaredCountMismatch):
        parse_cla(CLA.replace("9\n", "4\n"))  # duplicate id


def test_align_labels_numeric():
    labels = ClassLabels(["a", "b"], {"42": 0, "7": 1})
    aligned = align_labels(labels, ["D00042", "D00007"])
    assert aligned.assignment == {"D00042": 0, "D00007": 1}


def test_manifest_roundtrip(tmp_path):
    for name in ("b", "a", "c"):
        write_off(box_mesh((1, 1, 1)), tmp_path / f"{name}.off")
    man = GalleryManifest.from_directory(tmp_path, "toy")
    assert man.shape_ids == ["a", "b", "c"]
    again = GalleryManifest.from_json(man.to_json())
    assert again.shape_ids == man.shape_ids
    assert not any(e.missing for e in again.entries)
    (tmp_path / "b.off").unlink()
    assert [e.missing for e in GalleryManifest.from_json(man.to_json()).entries] == [False, True, False]


def _records(n=4, V=16, seed=0):
    rng = np.random.default_rng(seed)
    return [
        FeatureRecord(
            f"s{i}",
            rng.random(72).astype(np.float32),
            rng.random(7).astype(np.float32),
            rng.random(10).astype(np.float32),
            rng.random(V).astype(np.float32),
        )
        for i in range(n)
    ]


def test_feature_cache_roundtrip_bit_exact(tmp_path):
    recs = _records()
    save_features(recs, tmp_path / "feat")
    back = load_features(tmp_path / "feat")
    for a, b in zip(recs, back):
        assert a.shape_id == b.shape_id
        for f in ("f_s", "f_w", "f_g", "local"):
            assert getattr(a, f).tobytes() == getattr(b, f).tobytes()


def test_feature_cache_is_byte_deterministic(tmp_path):
    save_features(_records(), tmp_path / "a")
    save_features(_records(), tmp_path / "b")
    assert (tmp_path / "a.f32").read_bytes() == (tmp_path / "b.f32").read_bytes()
    blob = (tmp_path / "a.f32").read_bytes()
    assert blob[:8] == CACHE_MAGIC
    assert struct.unpack_from("<II", blob, 8) == (1, 16)


def test_feature_cache_version_mismatch(tmp_path):
    save_features(_records(), tmp_path / "f")
    blob = bytearray((tmp_path / "f.f32").read_bytes())
    blob[8:12] = struct.pack("<I", 2)
    (tmp_path / "f.f32").write_bytes(bytes(blob))
    with pytest.raises(VersionMismatch):
        load_features(tmp_path / "f")


def test_feature_cache_dimension_mismatch(tmp_path):
    save_features(_records(), tmp_path / "f")
    man = json.loads((tmp_path / "f.manifest.json").read_text())
    man["fields"]["local"] = 17
    (tmp_path / "f.manifest.json").write_text(json.dumps(man))
    with pytest.raises(DimensionHeaderMismatch):
        load_features(tmp_path / "f")
    recs = _records()
    recs[0].f_w = np.zeros(6, np.float32)
    with pytest.raises(DimensionHeaderMismatch):
        save_features(recs, tmp_path / "g")


def test_feature_cache_incomplete_record(tmp_path):
    recs = _records()
    recs[2].local = None
    with pytest.raises(IncompleteRecord):
        save_features(recs, tmp_path / "f")
