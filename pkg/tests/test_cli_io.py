import json
import math

import numpy as np
import pytest
from pydantic import ValidationError

from src.cli import EXIT_OK, EXIT_VALIDATION, build_parser, main
from src.model.params import TWO_PI
from src.recipes import Recipe
from src.run_config import AxisSpec, RunConfig, default_config, load_config, save_config
from src.spectra.psd import Normalization, Quantity, Spectrum, linear_window_grid
from src.storage import (
    ERROR_NAME,
    MANIFEST_NAME,
    read_heatmap,
    read_json,
    read_mask,
    read_spectrum,
    read_table,
    write_error,
    write_heatmap,
    write_manifest,
    write_mask,
    write_spectrum,
    write_table,
)
from src.sweep.axes import Axis, AxisName


@pytest.fixture
def config_data():
    return default_config().model_dump(mode="json")


def _write(path, data):
    with open(path, "w") as f:
        json.dump(data, f)
    return path


class TestConfig:
    def test_save_load_idempotent(self, tmp_path):
        config = default_config()
        save_config(config, tmp_path / "config.json")
        loaded = load_config(tmp_path / "config.json")
        assert loaded == config
        save_config(loaded, tmp_path / "again.json")
        assert (tmp_path / "config.json").read_text() == (tmp_path / "again.json").read_text()

    def test_unknown_key(self, config_data):
        config_data["params"]["finesse"] = 27_000
        with pytest.raises(ValidationError):
            RunConfig.model_validate(config_data)

    def test_schema_version(self, config_data):
        config_data["schema_version"] = "2"
        with pytest.raises(ValidationError):
            RunConfig.model_validate(config_data)

    def test_angle_strings(self, config_data):
        config_data["params"]["gamma"] = "-0.85pi"
        assert RunConfig.model_validate(config_data).params.gamma == pytest.approx(-0.85 * math.pi)

    def test_axis_spec_forms(self):
        axis = AxisSpec(name=AxisName.GAMMA, start="-pi", stop="0", num=5).to_axis()
        assert axis.values[0] == pytest.approx(-math.pi)
        assert len(axis) == 5
        explicit = AxisSpec(name=AxisName.ETA_LOOP, values=[0.1, 0.2]).to_axis()
        assert explicit.values == [0.1, 0.2]
        with pytest.raises(ValidationError):
            AxisSpec(name=AxisName.GAMMA, values=[0.0, 1.0], start=0.0, stop=1.0, num=2)
        with pytest.raises(ValidationError):
            AxisSpec(name=AxisName.GAMMA, start=0.0, stop=1.0)


class TestStorage:
    def test_absolute_spectrum_uses_hz(self, tmp_path):
        grid = linear_window_grid(TWO_PI * 1e6, TWO_PI * 1e3, 5)
        spec = Spectrum(grid, np.array([1.0, 2.0, 3.0, 2.0, 1.0]), Normalization.ABSOLUTE, Quantity.S_QQ)
        path = write_spectrum(spec, tmp_path / "S_QQ.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "# S_QQ, absolute, 5"
        assert lines[2] == "freq_hz,value"
        freq, value = (float(field) for field in lines[3].split(","))
        assert freq == pytest.approx(1e6 - 1e3)
        assert value == pytest.approx(TWO_PI)
        back = read_spectrum(path)
        np.testing.assert_allclose(back.values, spec.values, rtol=1e-14)
        np.testing.assert_allclose(back.grid.points, grid.points, rtol=1e-14)
        assert back.quantity is Quantity.S_QQ

    def test_normalized_spectrum_is_unscaled(self, tmp_path):
        grid = linear_window_grid(TWO_PI * 1e6, TWO_PI * 1e3, 3)
        spec = Spectrum(grid, np.array([0.5, 4.0, 0.5]), Normalization.SNL_HALF, Quantity.S_YDET)
        back = read_spectrum(write_spectrum(spec, tmp_path / "S_Ydet.csv"))
        np.testing.assert_array_equal(back.values, spec.values)
        assert back.normalization is Normalization.SNL_HALF

    def test_matrices_keep_unstable_cells(self, tmp_path):
        axis1 = Axis(name=AxisName.OMEGA_M_TAU, values=[0.1, 0.2])
        axis2 = Axis(name=AxisName.GAMMA, values=[-1.0, 0.0, 1.0])
        n_bar = np.array([[150.0, math.inf, 171.25], [1e6, 2.5, math.inf]])
        codes = np.array([[0, 1, 0], [0, 0, 2]])
        a1, a2, heat = read_heatmap(write_heatmap(n_bar, axis1, axis2, tmp_path / "heat.csv"))
        assert a1 == axis1 and a2 == axis2
        np.testing.assert_array_equal(heat, n_bar)
        _, _, mask = read_mask(write_mask(codes, axis1, axis2, tmp_path / "mask.csv"))
        np.testing.assert_array_equal(mask, codes)
        assert ",," in (tmp_path / "heat.csv").read_text()

    def test_table(self, tmp_path):
        columns = read_table(write_table({"x": [1.0, 2.0], "n_bar": [3.5, math.inf]}, tmp_path / "t.csv"))
        assert list(columns) == ["x", "n_bar"]
        assert columns["n_bar"][1] == math.inf

    def test_manifest_and_error(self, tmp_path):
        artifact = write_table({"x": [1.0, 2.0]}, tmp_path / "sub" / "t.csv")
        write_manifest(tmp_path, "sweep", {"a": 1}, [artifact], complete=False, summary={"n": 1})
        manifest = read_json(tmp_path / MANIFEST_NAME)
        assert manifest["artifacts"] == ["sub/t.csv"]
        assert manifest["complete"] is False
        assert set(manifest) == {"command", "timestamp", "complete", "config", "artifacts", "summary"}
        write_error(tmp_path, "sweep", ValueError("bad axis"))
        error = read_json(tmp_path / ERROR_NAME)
        assert error["type"] == "ValueError"
        assert error["message"] == "bad axis"


class TestCommands:
    def test_defaults(self, tmp_path):
        out = tmp_path / "defaults"
        assert main(["defaults", "--out", str(out)]) == EXIT_OK
        assert load_config(out / "config.json") == default_config()
        manifest = read_json(out / MANIFEST_NAME)
        assert manifest["command"] == "defaults"
        assert manifest["artifacts"] == ["config.json"]

    def test_invalid_config_writes_nothing(self, tmp_path, config_data):
        config_data["params"]["kappa_in"] = 2.0 * config_data["params"]["kappa"]
        out = tmp_path / "never"
        code = main(["simulate", "--config", str(_write(tmp_path / "bad.json", config_data)), "--out", str(out)])
        assert code == EXIT_VALIDATION
        assert not out.exists()

    def test_missing_block_records_error(self, tmp_path):
        out = tmp_path / "fit"
        assert main(["fit", "--out", str(out)]) == EXIT_VALIDATION
        error = read_json(out / ERROR_NAME)
        assert error["command"] == "fit"
        assert not (out / MANIFEST_NAME).exists()

    def test_bad_thread_count(self, tmp_path):
        assert main(["defaults", "--out", str(tmp_path / "x"), "--threads", "0"]) == EXIT_VALIDATION

    def test_unknown_recipe(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["reproduce", "no-such-recipe", "--out", str(tmp_path)])

    @pytest.mark.parametrize(
        "label, recipe",
        [
            ("fig3a", Recipe.DELAY_LINEWIDTH),
            ("fig3b", Recipe.RESONANT_MAP),
            ("fig4a", Recipe.STAGE_SPECTRA),
            ("figS4", Recipe.AREA_LINEARITY),
            ("resonant-map", Recipe.RESONANT_MAP),
        ],
    )
    def test_short_recipe_labels(self, tmp_path, label, recipe):
        args = build_parser().parse_args(["reproduce", label, "--out", str(tmp_path)])
        assert Recipe(args.recipe) is recipe

    @pytest.mark.slow
    def test_reproduce_resonant_map_by_label(self, tmp_path):
        out = tmp_path / "fig3b"
        assert main(["reproduce", "fig3b", "--out", str(out), "--resolution", "5"]) == EXIT_OK
        manifest = read_json(out / MANIFEST_NAME)
        assert "resonant_map_nbar.csv" in manifest["artifacts"]
        summary = manifest["summary"]
        assert 0.15 <= summary["argmin_omega_m_tau_over_pi"] <= 0.35
        assert -0.65 <= summary["argmin_gamma_over_pi"] <= -0.35

    @pytest.mark.slow
    def test_simulate_blocked_feedback(self, tmp_path, config_data):
        config_data["simulate"]["feedback_blocked"] = True
        config_data["simulate"]["n_points"] = 201
        out = tmp_path / "sim"
        code = main(["simulate", "--config", str(_write(tmp_path / "run.json", config_data)), "--out", str(out)])
        assert code == EXIT_OK
        manifest = read_json(out / MANIFEST_NAME)
        assert sorted(manifest["artifacts"]) == ["S_QQ.csv", "S_Ydet.csv"]
        assert manifest["summary"]["stability"]["verdict"] == "stable"
        assert manifest["summary"]["n_bar"] == pytest.approx(444.0, rel=0.25)
