import textwrap
from pathlib import Path

import pytest

from levyperron.schemas.run_config import RunConfig, load_run_config
from levyperron.services.pipeline import build_problem

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

BASE = """
[problem]
sigma = {sigma}
lambda = 0.15
Lambda = 1.0
gamma = {gamma}
barrier_kind = "{barrier_kind}"

[problem.domain]
shape = "ball"
center = [0.0]
radius = 1.0

[[problem.kernels]]
name = "frac"
{kernel_extra}

[[problem.pairs]]
a = "a0"
b = "b0"
kernel = "{pair_kernel}"
c = {c}
f = -1.0
{pair_extra}

[grid]
h = 0.05
{tail}
"""


@pytest.fixture
def write_config(tmp_path):
    def write(**overrides) -> Path:
        values = {
            "sigma": 1.5,
            "gamma": 0.0,
            "barrier_kind": "uniform",
            "kernel_extra": "",
            "pair_kernel": "frac",
            "c": 0.0,
            "pair_extra": "",
            "tail": "",
        }
        values.update(overrides)
        path = tmp_path / "run.toml"
        path.write_text(textwrap.dedent(BASE.format(**values)), encoding="utf-8")
        return path

    return write


class TestShippedConfigs:
    def test_model_config(self):
        config = load_run_config(CONFIG_DIR / "model_1d.toml")
        assert isinstance(config, RunConfig)
        assert config.problem.params.sigma == 1.5
        assert config.problem.params.lambda_ == 0.15
        assert config.grid.h == pytest.approx(2.0 / 65.0)
        assert config.grid.quadrature.truncation == 8.0
        assert config.solver.start == "barrier"
        assert config.diagnostics.centers == [[0.0], [0.3], [0.95]]

    def test_isaacs_config_builds_a_two_by_two_table(self):
        problem = build_problem(load_run_config(CONFIG_DIR / "isaacs_2x2_1d.toml"))
        assert problem.a_labels == ["a0", "a1"]
        assert problem.b_labels == ["b0", "b1"]
        assert problem.gamma == 0.5
        assert [k.label for k in problem.kernels] == ["soft", "hard"]

    def test_one_sided_config_loads(self):
        problem = build_problem(load_run_config(CONFIG_DIR / "one_sided_1d.toml"))
        assert problem.pairs[0].kernel.label == "one_sided"


class TestValidation:
    def test_defaults_fill_the_optional_sections(self, write_config):
        config = load_run_config(write_config())
        assert config.solver.mode == "gauss-seidel"
        assert config.certify.truncation == 1e5
        assert config.diagnostics.base == 8.0

    def test_drift_below_order_one_is_rejected(self, write_config):
        with pytest.raises(ValueError, match="has a drift"):
            load_run_config(write_config(sigma=0.5, pair_extra="drift = [1.0]"))

    def test_degenerate_barrier_needs_gamma(self, write_config):
        with pytest.raises(ValueError, match="needs gamma > 0"):
            load_run_config(write_config(barrier_kind="degenerate"))

    def test_c_below_gamma_is_rejected(self, write_config):
        with pytest.raises(ValueError, match="below max"):
            load_run_config(write_config(gamma=0.5, c=0.25))

    def test_undeclared_kernel_is_rejected(self, write_config):
        with pytest.raises(ValueError, match="undeclared kernel"):
            load_run_config(write_config(pair_kernel="missing"))

    def test_unknown_keys_are_rejected(self, write_config):
        with pytest.raises(ValueError, match="Extra inputs"):
            load_run_config(write_config(tail="stepsize = 0.1"))

    def test_drift_dimension_must_match(self, write_config):
        with pytest.raises(ValueError, match="drift has length 2"):
            load_run_config(write_config(pair_extra="drift = [1.0, 0.0]"))

    def test_malformed_toml(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[problem\nsigma = 1", encoding="utf-8")
        with pytest.raises(ValueError, match="not valid TOML"):
            load_run_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_run_config(tmp_path / "absent.toml")

    def test_table_paths_resolve_against_the_config(self, write_config, tmp_path):
        config = load_run_config(write_config(kernel_extra='type = "table"\npath = "profile.csv"'))
        assert config.problem.kernels[0].path == str(tmp_path / "profile.csv")

    def test_table_kernel_needs_a_path(self, write_config):
        with pytest.raises(ValueError, match="needs a CSV path"):
            load_run_config(write_config(kernel_extra='type = "table"'))
