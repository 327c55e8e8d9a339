import json
import struct

import numpy as np
import pytest

from tensor_io import (
    MAGIC,
    MANIFEST_FILE,
    TensorManifest,
    decode_tensor,
    directory_digest,
    encode_tensor,
    load_manifest_dir,
    manifest_kind,
    save_manifest_dir,
)
from uno_errors import (
    MagicMismatchError,
    ManifestError,
    MissingCheckpointError,
    TensorFormatError,
    TruncatedPayloadError,
    VersionUnsupportedError,
)


class TestUnot:
    def test_header_layout(self):
        buf = encode_tensor(np.array([[1.0, 2.0, 3.0]]))
        assert buf[:4] == MAGIC
        assert struct.unpack_from("<HBB", buf, 4) == (1, 0, 2)
        assert struct.unpack_from("<2Q", buf, 8) == (1, 3)
        assert len(buf) == 8 + 16 + 3 * 8

    def test_scalar_and_empty(self):
        assert decode_tensor(encode_tensor(np.float64(2.5))).shape == ()
        assert len(encode_tensor(np.float64(2.5))) == 4 + 4 + 8
        assert decode_tensor(encode_tensor(np.zeros((0, 4)))).shape == (0, 4)

    def test_values_survive_exactly(self, rng):
        a = rng.standard_normal((3, 4, 2))
        np.testing.assert_array_equal(decode_tensor(encode_tensor(a)), a)

    def test_bad_magic(self):
        buf = bytearray(encode_tensor(np.ones(2)))
        buf[:4] = b"NOPE"
        with pytest.raises(MagicMismatchError):
            decode_tensor(bytes(buf))

    def test_unsupported_version(self):
        buf = bytearray(encode_tensor(np.ones(2)))
        struct.pack_into("<H", buf, 4, 9)
        with pytest.raises(VersionUnsupportedError):
            decode_tensor(bytes(buf))

    def test_truncated(self):
        buf = encode_tensor(np.ones(4))
        with pytest.raises(TruncatedPayloadError):
            decode_tensor(buf[:-3])
        with pytest.raises(TruncatedPayloadError):
            decode_tensor(buf[:2])

    def test_trailing_bytes(self):
        with pytest.raises(TensorFormatError):
            decode_tensor(encode_tensor(np.ones(2)) + b"\0")


class TestManifestDirectory:
    def test_round_trip_and_sorted_listing(self, tmp_path, rng):
        tensors = {"b": rng.standard_normal(3), "a": rng.standard_normal((2, 2))}
        save_manifest_dir(tmp_path / "m", TensorManifest(kind="test"), tensors)
        manifest, loaded = load_manifest_dir(tmp_path / "m", TensorManifest)
        assert manifest.tensors == ["a", "b"]
        for name, arr in tensors.items():
            np.testing.assert_array_equal(loaded[name], arr)

    def test_digest_is_stable(self, tmp_path):
        for d in ("x", "y"):
            save_manifest_dir(tmp_path / d, TensorManifest(kind="test"), {"w": np.arange(4.0)})
        assert directory_digest(tmp_path / "x") == directory_digest(tmp_path / "y")

    def test_missing_tensor_file(self, tmp_path):
        save_manifest_dir(tmp_path, TensorManifest(kind="test"), {"w": np.ones(2)})
        (tmp_path / "w.unot").unlink()
        with pytest.raises(ManifestError):
            load_manifest_dir(tmp_path, TensorManifest)

    def test_unknown_manifest_field(self, tmp_path):
        save_manifest_dir(tmp_path, TensorManifest(kind="test"), {})
        raw = json.loads((tmp_path / MANIFEST_FILE).read_text())
        raw["surprise"] = 1
        (tmp_path / MANIFEST_FILE).write_text(json.dumps(raw))
        with pytest.raises(ManifestError):
            load_manifest_dir(tmp_path, TensorManifest)

    def test_manifest_kind(self, tmp_path):
        save_manifest_dir(tmp_path / "m", TensorManifest(kind="flow"), {})
        assert manifest_kind(tmp_path / "m") == "flow"
        with pytest.raises(MissingCheckpointError):
            manifest_kind(tmp_path / "absent")
