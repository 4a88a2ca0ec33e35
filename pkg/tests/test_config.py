"""Configuration loading, validation, and flag overrides."""

import json

import pytest

from sweeprecon.config import (
    InrConfig,
    PipelineConfig,
    apply_overrides,
    load_config,
)
from sweeprecon.errors import UsageError


def write(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload, indent=2))
    return path


class TestDefaults:
    def test_round_numbers(self):
        config = PipelineConfig()
        assert config.phantom.radius_mm == 10.0
        assert config.phantom.length_mm == 150.0
        assert config.breathing.amplitude_mm == 8.0
        assert config.breathing.period_s == 4.0
        assert config.probe.image_width_px == 128
        assert config.gating.window == 10
        assert config.gating.tolerance == 0.2
        assert config.recon.grid_resolution_mm == 1.0
        assert config.mode == "breath_hold"

    def test_to_dict_serializes(self):
        config = PipelineConfig()
        payload = config.to_dict()
        # must survive a JSON round trip for the run manifest
        restored = json.loads(json.dumps(payload))
        assert restored["inr"]["epochs"] == config.inr.epochs
        assert restored["corruption"]["modes"] == list(config.corruption.modes)

    def test_slab_tracks_prediction_resolution(self):
        recon = PipelineConfig().recon
        assert recon.slab_thickness_mm == 2 * recon.prediction_resolution_mm

    def test_inr_build_carries_seed(self):
        cfg = InrConfig(epochs=7).build(seed=42)
        assert cfg.epochs == 7
        assert cfg.seed == 42

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            PipelineConfig(mode="shallow_breathing")


class TestLoad:
    def test_sections_applied(self, tmp_path):
        path = write(
            tmp_path,
            {
                "phantom": {"radius_mm": 7.5, "length_mm": 40.0},
                "inr": {"epochs": 3, "dtype": "float64"},
                "gating": {"window": 5},
                "mode": "free_breathing",
                "seed": 11,
                "out_dir": "elsewhere",
            },
        )
        config = load_config(path)
        assert config.phantom.radius_mm == 7.5
        assert config.inr.epochs == 3
        assert config.inr.dtype == "float64"
        assert config.gating.window == 5
        assert config.gating.tolerance == 0.2
        assert config.mode == "free_breathing"
        assert config.seed == 11
        assert config.out_dir == "elsewhere"

    def test_empty_object_is_defaults(self, tmp_path):
        assert load_config(write(tmp_path, {})) == PipelineConfig()

    def test_unknown_section_key_names_line(self, tmp_path):
        path = write(tmp_path, {"inr": {"epoch": 5}})
        with pytest.raises(UsageError, match=r"config\.json:3: unknown key 'epoch'"):
            load_config(path)

    def test_unknown_top_level_key(self, tmp_path):
        path = write(tmp_path, {"phanton": {}})
        with pytest.raises(UsageError, match="unknown key 'phanton'"):
            load_config(path)

    def test_scalar_section_rejected(self, tmp_path):
        path = write(tmp_path, {"inr": 5})
        with pytest.raises(UsageError, match="must be an object"):
            load_config(path)

    def test_bad_value_names_section(self, tmp_path):
        path = write(tmp_path, {"inr": {"epochs": 0}})
        with pytest.raises(UsageError, match="'inr'"):
            load_config(path)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "seed": ,\n}\n')
        with pytest.raises(UsageError, match=r"broken\.json:2"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(UsageError, match="cannot read"):
            load_config(tmp_path / "absent.json")

    def test_top_level_must_be_object(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]\n")
        with pytest.raises(UsageError, match="top level"):
            load_config(path)

    def test_corruption_modes_become_tuple(self, tmp_path):
        path = write(tmp_path, {"corruption": {"modes": ["dropout"]}})
        assert load_config(path).corruption.modes == ("dropout",)

    def test_bad_mode_value(self, tmp_path):
        path = write(tmp_path, {"mode": "sideways"})
        with pytest.raises(UsageError, match="mode"):
            load_config(path)


class TestOverrides:
    def test_flags_win(self):
        config = PipelineConfig(seed=1, out_dir="a", mode="breath_hold")
        updated = apply_overrides(
            config, seed=9, out_dir="b", mode="free_breathing"
        )
        assert updated.seed == 9
        assert updated.out_dir == "b"
        assert updated.mode == "free_breathing"
        # untouched sections survive
        assert updated.phantom == config.phantom

    def test_none_keeps_file_values(self):
        config = PipelineConfig(seed=5)
        assert apply_overrides(config) is config

    def test_bad_mode_flag(self):
        with pytest.raises(UsageError, match="--mode"):
            apply_overrides(PipelineConfig(), mode="held_breath")
