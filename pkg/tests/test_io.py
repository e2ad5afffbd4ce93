import json

import numpy as np
import pytest

from levyperron.models.fields import ExteriorDatum, GridFunction
from levyperron.models.lattice import Lattice
from levyperron.schemas.reports import BarrierReport
from levyperron.services import io
from levyperron.services.kernels import annulus_report


class TestWriters:
    def test_json_uses_flag_aliases_and_sorted_keys(self, tmp_path, kernel):
        path = io.write_json(tmp_path / "reports" / "annulus.json", [annulus_report(kernel, np.zeros(1), 0.5)])
        text = path.read_text(encoding="utf-8")
        row = json.loads(text)[0]
        assert row["pass_H3"] is True
        assert list(row) == sorted(row)
        assert text.endswith("\n")

    def test_json_accepts_numpy_payloads(self, tmp_path):
        path = io.write_json(tmp_path / "x.json", {"values": np.arange(3.0), "count": np.int64(4)})
        assert json.loads(path.read_text(encoding="utf-8")) == {"count": 4, "values": [0.0, 1.0, 2.0]}

    def test_table_formats_floats_and_lists(self, tmp_path):
        path = io.write_table(tmp_path / "t.csv", ["a", "b", "c"], [{"a": 0.1, "b": [1.0, 2.5], "c": "x"}])
        assert path.read_text(encoding="utf-8") == "a,b,c\n0.1,1.0;2.5,x\n"

    def test_report_table_keeps_scalar_columns(self, tmp_path):
        reports = [BarrierReport(kind="bump", epsilon=0.25, passed=True, failures=["y=[0.0]: value 1"])]
        header = io.write_report_table(tmp_path / "b.csv", reports).read_text(encoding="utf-8").splitlines()[0]
        assert "failures" not in header.split(",")
        assert header.split(",")[0] == "kind"

    def test_field_dump_puts_coordinates_first(self, tmp_path):
        points = np.array([[0.0, 1.0], [0.5, -1.0]])
        path = io.write_field(tmp_path / "f.csv", points, {"value": [1.5, 2.0], "tail_halfwidth": np.zeros(2)})
        assert path.read_text(encoding="utf-8") == "x1,x2,value,tail_halfwidth\n0.0,1.0,1.5,0.0\n0.5,-1.0,2.0,0.0\n"

    def test_field_columns_must_match_the_points(self, tmp_path):
        with pytest.raises(ValueError, match="column value"):
            io.write_field(tmp_path / "f.csv", np.zeros((3, 1)), {"value": [1.0, 2.0]})


class TestSolutionTables:
    @pytest.fixture
    def solution(self, tmp_path, model_lattice):
        w = GridFunction.from_field(model_lattice, lambda p: np.cos(p[:, 0]), ExteriorDatum.constant(0.0))
        n = model_lattice.interior_index.size
        path = io.write_solution(tmp_path / "solution.csv", w, np.zeros(n), [("a0", "b0")] * n)
        return path, w

    def test_solution_is_read_back_on_its_lattice(self, solution, model_lattice):
        path, w = solution
        back = io.read_solution(path, model_lattice, ExteriorDatum.constant(0.0))
        interior = model_lattice.interior_index
        np.testing.assert_array_equal(back.values[interior], w.values[interior])
        assert path.read_text(encoding="utf-8").splitlines()[0] == "x1,value,residual,a,b"

    def test_other_lattice_is_rejected(self, solution, interval):
        path, _ = solution
        with pytest.raises(ValueError, match="interior nodes"):
            io.read_solution(path, Lattice(interval, 0.1), ExteriorDatum.constant(0.0))

    def test_missing_solution(self, tmp_path, model_lattice):
        with pytest.raises(FileNotFoundError):
            io.read_solution(tmp_path / "none.csv", model_lattice, ExteriorDatum.constant(0.0))


class TestLoaders:
    def test_boundary_normals_are_normalized(self, tmp_path):
        path = tmp_path / "samples.csv"
        path.write_text("x1,n1\n-1.0,2.0\n1.0,-3.0\n", encoding="utf-8")
        samples = io.load_boundary_samples(path, 1)
        assert [float(s.normal[0]) for s in samples] == [1.0, -1.0]
        assert [float(s.point[0]) for s in samples] == [-1.0, 1.0]

    def test_zero_normal_is_rejected(self, tmp_path):
        path = tmp_path / "samples.csv"
        path.write_text("x1,n1\n-1.0,0.0\n", encoding="utf-8")
        with pytest.raises(ValueError, match="zero normal"):
            io.load_boundary_samples(path, 1)

    def test_non_numeric_entries_are_rejected(self, tmp_path):
        path = tmp_path / "samples.csv"
        path.write_text("x1,n1\n-1.0,up\n", encoding="utf-8")
        with pytest.raises(ValueError, match="non-numeric"):
            io.load_boundary_samples(path, 1)

    def test_table_kernel_from_csv(self, tmp_path, params):
        path = tmp_path / "profile.csv"
        path.write_text("z1,density\n-2.0,0.125\n-1.0,0.5\n1.0,0.5\n2.0,0.125\n", encoding="utf-8")
        kernel = io.load_table_kernel(path, params, 1, "tab")
        assert kernel.label == "tab"
        assert kernel(np.zeros(1), np.array([[1.0]]))[0] == pytest.approx(0.5)

    def test_table_kernel_column_count(self, tmp_path, params):
        path = tmp_path / "profile.csv"
        path.write_text("z1,z2,density\n1.0,0.0,0.5\n0.0,1.0,0.5\n", encoding="utf-8")
        with pytest.raises(ValueError, match="needs 2 columns"):
            io.load_table_kernel(path, params, 1, "tab")
