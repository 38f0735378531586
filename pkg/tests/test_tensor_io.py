"""Binary tensor format and manifest loading."""

import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from cfa.errors import (
    BadMagicError,
    BadVersionError,
    CfaError,
    DataError,
    ManifestError,
    PayloadMismatchError,
    TensorFormatError,
    TruncatedFileError,
)
from cfa.tensor_io import load_manifest, read_header, read_tensor, write_tensor


def write_manifest(path, rows, header=False):
    lines = (["path,class_id,split"] if header else []) + rows
    path.write_text("\n".join(lines) + "\n")


class TestWriteTensor:
    def test_minimal_tensor_is_header_plus_four_bytes(self, tmp_path):
        p = tmp_path / "t.cfat"
        write_tensor(np.zeros((1, 1, 1), dtype=np.float32), p)
        # magic 4 + version 4 + rank 1 + one uint32 extent per axis + payload
        assert p.stat().st_size == 9 + 4 * 3 + 4

    def test_round_trip_rank3_is_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        for shape in ((1, 1, 1), (3, 4, 4), (16, 2, 5)):
            t = rng.normal(size=shape).astype(np.float32)
            p = tmp_path / "t.cfat"
            write_tensor(t, p)
            back = read_tensor(p)
            assert back.dtype == np.float32
            assert_array_equal(back, t)

    def test_round_trip_rank4_is_bitwise(self, tmp_path):
        rng = np.random.default_rng(1)
        t = rng.normal(size=(4, 2, 3, 3)).astype(np.float32)
        p = tmp_path / "t.cfat"
        write_tensor(t, p)
        assert_array_equal(read_tensor(p), t)

    def test_two_by_two_by_two_bytes_match_independent_encoding(self, tmp_path):
        t = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
        p = tmp_path / "t.cfat"
        write_tensor(t, p)
        data = p.read_bytes()
        expected_header = b"CFAF" + struct.pack("<I", 1) + bytes([3])
        expected_header += struct.pack("<3I", 2, 2, 2)
        assert data[:len(expected_header)] == expected_header
        payload = data[len(expected_header):]
        # each float encoded independently, row-major order
        assert payload == b"".join(struct.pack("<f", float(v)) for v in range(8))

    def test_rejects_bad_rank_and_non_finite(self, tmp_path):
        p = tmp_path / "t.cfat"
        with pytest.raises(DataError):
            write_tensor(np.zeros((2, 2)), p)
        with pytest.raises(DataError):
            write_tensor(np.full((1, 1, 1), np.nan), p)
        with pytest.raises(DataError):
            write_tensor(np.full((1, 1, 1), np.inf), p)


class TestReadTensor:
    def valid_bytes(self):
        t = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
        return (b"CFAF" + struct.pack("<I", 1) + bytes([3])
                + struct.pack("<3I", 2, 2, 2) + t.tobytes())

    def test_reads_header_shape(self, tmp_path):
        p = tmp_path / "t.cfat"
        write_tensor(np.zeros((3, 4, 4), dtype=np.float32), p)
        assert read_header(p) == (3, 4, 4)
        assert read_tensor(p).shape == (3, 4, 4)

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "t.cfat"
        p.write_bytes(b"XXXX" + self.valid_bytes()[4:])
        with pytest.raises(BadMagicError):
            read_tensor(p)

    def test_wrong_version(self, tmp_path):
        p = tmp_path / "t.cfat"
        data = self.valid_bytes()
        p.write_bytes(data[:4] + struct.pack("<I", 9) + data[8:])
        with pytest.raises(BadVersionError):
            read_tensor(p)

    def test_payload_mismatch(self, tmp_path):
        p = tmp_path / "t.cfat"
        p.write_bytes(self.valid_bytes()[:-4])  # 7 floats for a 2x2x2 shape
        with pytest.raises(PayloadMismatchError):
            read_tensor(p)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "t.cfat"
        p.write_bytes(b"CFAF\x01")
        with pytest.raises(TruncatedFileError):
            read_tensor(p)

    def test_bad_rank_and_zero_extent(self, tmp_path):
        p = tmp_path / "t.cfat"
        data = self.valid_bytes()
        p.write_bytes(data[:8] + bytes([5]) + data[9:])
        with pytest.raises(TensorFormatError):
            read_tensor(p)
        p.write_bytes(data[:9] + struct.pack("<3I", 2, 0, 2) + data[21:])
        with pytest.raises(TensorFormatError):
            read_tensor(p)

    def test_missing_file_is_a_data_error(self, tmp_path):
        with pytest.raises(DataError):
            read_tensor(tmp_path / "absent.cfat")

    def test_fuzzed_bytes_never_crash(self, tmp_path):
        rng = np.random.default_rng(2024)
        p = tmp_path / "fuzz.cfat"
        valid = self.valid_bytes()
        for trial in range(200):
            if trial % 2 == 0:
                size = int(rng.integers(0, 64))
                data = rng.integers(0, 256, size=size, endpoint=False).astype(np.uint8).tobytes()
            else:
                data = bytearray(valid)
                for _ in range(int(rng.integers(1, 6))):
                    data[int(rng.integers(len(data)))] = int(rng.integers(256))
                data = bytes(data[:int(rng.integers(1, len(data) + 1))])
            p.write_bytes(data)
            try:
                read_tensor(p)
            except CfaError:
                pass

    def test_huge_declared_shape_is_rejected_without_allocation(self, tmp_path):
        p = tmp_path / "t.cfat"
        header = b"CFAF" + struct.pack("<I", 1) + bytes([3])
        header += struct.pack("<3I", 2 ** 32 - 1, 2 ** 32 - 1, 2 ** 32 - 1)
        p.write_bytes(header + b"\x00" * 16)
        with pytest.raises(PayloadMismatchError):
            read_tensor(p)


class TestLoadManifest:
    def make_tensor(self, tmp_path, name, channels=3):
        write_tensor(np.zeros((channels, 2, 2), dtype=np.float32), tmp_path / name)
        return name

    def test_empty_manifest_is_valid(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("")
        man = load_manifest(p)
        assert man.records == []
        assert man.channels is None
        assert man.class_count == 0

    def test_counts_classes_and_samples(self, tmp_path):
        names = [self.make_tensor(tmp_path, f"t{i}.cfat") for i in range(3)]
        p = tmp_path / "m.csv"
        write_manifest(p, [f"{names[0]},0,base", f"{names[1]},0,base",
                           f"{names[2]},1,novel"])
        man = load_manifest(p)
        assert len(man.records) == 3
        assert man.class_count == 2
        assert man.channels == 3
        assert len(man.split_records("base")) == 2
        assert list(man.classes_in_split("novel")) == [1]

    def test_header_line_is_skipped(self, tmp_path):
        name = self.make_tensor(tmp_path, "t.cfat")
        p = tmp_path / "m.csv"
        write_manifest(p, [f"{name},0,base"], header=True)
        assert len(load_manifest(p).records) == 1

    def test_split_leak_rejected(self, tmp_path):
        a = self.make_tensor(tmp_path, "a.cfat")
        b = self.make_tensor(tmp_path, "b.cfat")
        p = tmp_path / "m.csv"
        write_manifest(p, [f"{a},0,base", f"{b},0,novel"])
        with pytest.raises(ManifestError):
            load_manifest(p)

    def test_channel_mismatch_rejected(self, tmp_path):
        a = self.make_tensor(tmp_path, "a.cfat", channels=3)
        b = self.make_tensor(tmp_path, "b.cfat", channels=4)
        p = tmp_path / "m.csv"
        write_manifest(p, [f"{a},0,base", f"{b},1,base"])
        with pytest.raises(ManifestError):
            load_manifest(p)

    def test_unknown_split_and_bad_ids_rejected(self, tmp_path):
        a = self.make_tensor(tmp_path, "a.cfat")
        p = tmp_path / "m.csv"
        write_manifest(p, [f"{a},0,test"])
        with pytest.raises(ManifestError):
            load_manifest(p)
        write_manifest(p, [f"{a},x,base"])
        with pytest.raises(ManifestError):
            load_manifest(p)
        write_manifest(p, [f"{a},-1,base"])
        with pytest.raises(ManifestError):
            load_manifest(p)
        write_manifest(p, [f"{a},0"])
        with pytest.raises(ManifestError):
            load_manifest(p)

    def test_paths_resolve_relative_to_manifest(self, tmp_path):
        sub = tmp_path / "data"
        sub.mkdir()
        self.make_tensor(sub, "t.cfat")
        p = tmp_path / "m.csv"
        write_manifest(p, ["data/t.cfat,0,base"])
        man = load_manifest(p)
        assert man.records[0].path == (sub / "t.cfat").resolve()

    def test_missing_manifest_is_a_data_error(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "absent.csv")

    def test_missing_referenced_tensor_is_a_data_error(self, tmp_path):
        p = tmp_path / "m.csv"
        write_manifest(p, ["ghost.cfat,0,base"])
        with pytest.raises(DataError):
            load_manifest(p)
