"""On-disk formats: tractograms, label tables, heatmaps, config files."""

import json
import struct

import numpy as np
import pytest

from swmparc.datasets import NON_SWM
from swmparc.errors import (
    BadMagicError,
    FileFormatError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from swmparc.evaluation import GridSpec, Heatmap
from swmparc.fileformats import (
    NON_SWM_TOKEN,
    TRACT_MAGIC,
    jsonable,
    read_config,
    read_heatmap,
    read_labels,
    read_tractogram,
    write_heatmap,
    write_heatmap_csv,
    write_json,
    write_labels,
    write_tractogram,
)

from helpers import random_polyline


def _f32_lines(rng, count):
    # pre-quantized to float32 so write/read round trips are bit-exact
    return [random_polyline(rng, int(rng.integers(2, 40)))
            .astype(np.float32).astype(np.float64) for _ in range(count)]


class TestTractogram:
    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(100)
        lines = _f32_lines(rng, 25)
        path = tmp_path / "t.tract"
        write_tractogram(path, lines)
        back = read_tractogram(path)
        assert len(back) == 25
        for a, b in zip(lines, back):
            assert a.tobytes() == b.tobytes()

    def test_empty_file_round_trip(self, tmp_path):
        path = tmp_path / "empty.tract"
        write_tractogram(path, [])
        assert read_tractogram(path) == []

    def test_variable_point_counts_survive(self, tmp_path):
        rng = np.random.default_rng(101)
        lines = _f32_lines(rng, 10)
        path = tmp_path / "t.tract"
        write_tractogram(path, lines)
        assert [len(s) for s in read_tractogram(path)] == [len(s) for s in lines]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.tract"
        path.write_bytes(b"WHAT" + b"\x00" * 20)
        with pytest.raises(BadMagicError):
            read_tractogram(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "short.tract"
        path.write_bytes(TRACT_MAGIC + b"\x01\x00")
        with pytest.raises(TruncatedFileError):
            read_tractogram(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "v9.tract"
        path.write_bytes(TRACT_MAGIC + struct.pack("<IQ", 9, 0))
        with pytest.raises(UnsupportedVersionError):
            read_tractogram(path)

    def test_truncated_payload(self, tmp_path):
        rng = np.random.default_rng(102)
        path = tmp_path / "t.tract"
        write_tractogram(path, _f32_lines(rng, 3))
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(TruncatedFileError, match="streamline 2"):
            read_tractogram(path)

    def test_trailing_bytes(self, tmp_path):
        rng = np.random.default_rng(103)
        path = tmp_path / "t.tract"
        write_tractogram(path, _f32_lines(rng, 2))
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(FileFormatError, match="trailing"):
            read_tractogram(path)

    def test_single_point_streamline_rejected(self, tmp_path):
        path = tmp_path / "t.tract"
        payload = struct.pack("<I", 1) + b"\x00" * 12
        path.write_bytes(TRACT_MAGIC + struct.pack("<IQ", 1, 1) + payload)
        with pytest.raises(FileFormatError, match="1 points"):
            read_tractogram(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_tractogram(tmp_path / "nope.tract")


class TestLabels:
    def test_round_trip_with_rejections(self, tmp_path):
        path = tmp_path / "l.csv"
        labels = np.array([0, 5, NON_SWM, 2, NON_SWM])
        write_labels(path, labels)
        assert np.array_equal(read_labels(path), labels)

    def test_token_appears_verbatim(self, tmp_path):
        path = tmp_path / "l.csv"
        write_labels(path, np.array([1, NON_SWM]))
        text = path.read_text()
        assert NON_SWM_TOKEN in text
        assert "-1" not in text

    def test_extended_columns(self, tmp_path):
        path = tmp_path / "l.csv"
        write_labels(path, np.array([2, NON_SWM, NON_SWM]),
                     stage_one=np.array([1, 1, 0]),
                     stage_two=np.array([2, 7, -1]))
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "index,label,stage_one,stage_two"
        assert rows[1] == f"0,2,1,2"
        assert rows[2] == f"1,{NON_SWM_TOKEN},1,7"
        assert rows[3] == f"2,{NON_SWM_TOKEN},0,"  # blank: never reached

    def test_extended_needs_both_vectors(self, tmp_path):
        with pytest.raises(ValueError):
            write_labels(tmp_path / "l.csv", np.array([1]),
                         stage_one=np.array([1]))

    def test_reader_still_reads_extended(self, tmp_path):
        path = tmp_path / "l.csv"
        write_labels(path, np.array([3, NON_SWM]),
                     stage_one=np.array([1, 0]), stage_two=np.array([3, -1]))
        assert np.array_equal(read_labels(path), [3, NON_SWM])

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "l.csv"
        path.write_text("id,cluster\n0,1\n")
        with pytest.raises(FileFormatError, match="header"):
            read_labels(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "l.csv"
        path.write_text("")
        with pytest.raises(FileFormatError, match="empty"):
            read_labels(path)

    def test_out_of_order_indices(self, tmp_path):
        path = tmp_path / "l.csv"
        path.write_text("index,label\n0,1\n2,1\n")
        with pytest.raises(FileFormatError, match="index 2"):
            read_labels(path)

    def test_bad_label_text(self, tmp_path):
        path = tmp_path / "l.csv"
        path.write_text("index,label\n0,purple\n")
        with pytest.raises(FileFormatError, match="purple"):
            read_labels(path)


def _heatmap(rng):
    values = np.round(rng.random((4, 3, 2)), 3).astype(np.float32)
    grid = GridSpec(origin=np.array([1.0, -2.0, 0.5]), voxel_size=2.0,
                    dims=(4, 3, 2))
    return Heatmap(grid=grid, values=values.astype(np.float64))


class TestHeatmapFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(104)
        heat = _heatmap(rng)
        path = tmp_path / "h.heat"
        write_heatmap(path, heat)
        back = read_heatmap(path)
        assert back.grid.same_lattice(heat.grid)
        assert back.values.tobytes() == heat.values.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "h.heat"
        path.write_bytes(b"HEAT" + b"\x00" * 40)
        with pytest.raises(BadMagicError):
            read_heatmap(path)

    def test_size_mismatch(self, tmp_path):
        rng = np.random.default_rng(105)
        path = tmp_path / "h.heat"
        write_heatmap(path, _heatmap(rng))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(TruncatedFileError):
            read_heatmap(path)

    def test_sparse_csv(self, tmp_path):
        grid = GridSpec(origin=[0, 0, 0], voxel_size=1.0, dims=(2, 2, 1))
        values = np.zeros((2, 2, 1))
        values[1, 0, 0] = 0.25
        path = tmp_path / "h.csv"
        write_heatmap_csv(path, Heatmap(grid=grid, values=values))
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "i,j,k,value"
        assert rows[1:] == ["1,0,0,0.25"]


class TestConfig:
    def test_parses_values_comments_blanks(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text(
            "# a comment\n"
            "epochs = 12\n"
            "\n"
            "learning_rate=0.5  # inline\n"
            "name = two words\n")
        assert read_config(path) == {
            "epochs": "12", "learning_rate": "0.5", "name": "two words"}

    def test_last_assignment_wins(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("seed = 1\nseed = 2\n")
        assert read_config(path) == {"seed": "2"}

    def test_missing_equals(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("epochs 12\n")
        with pytest.raises(FileFormatError, match="line 1"):
            read_config(path)

    def test_empty_key(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("= 3\n")
        with pytest.raises(FileFormatError, match="empty key"):
            read_config(path)


class TestJson:
    def test_numpy_types_become_plain(self):
        blob = jsonable({
            "a": np.int64(3),
            "b": np.float32(0.5),
            "c": np.arange(3),
            "d": [np.float64(1.5), {"e": np.array([[1, 2]])}],
        })
        assert json.loads(json.dumps(blob)) == {
            "a": 3, "b": 0.5, "c": [0, 1, 2], "d": [1.5, {"e": [[1, 2]]}]}

    def test_write_json_is_stable(self, tmp_path):
        path = tmp_path / "r.json"
        write_json(path, {"zeta": 1, "alpha": np.float64(2.0)})
        text = path.read_text()
        assert text.endswith("\n")
        assert text.index("alpha") < text.index("zeta")  # sorted keys
        assert json.loads(text) == {"zeta": 1, "alpha": 2.0}
