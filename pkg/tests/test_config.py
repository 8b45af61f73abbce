"""Tests for the JSON run configuration."""

from __future__ import annotations

import json

import pytest
from lsvx.config import (
    CACHE_ENV,
    LevyKind,
    OutputFormat,
    RunConfig,
    TaskKind,
    cache_dir,
    expansion_kind,
)
from lsvx.errors import ConfigError, ModelConditionError
from lsvx.expansions import ExpansionKind
from lsvx.generators import SVKind
from lsvx.oracles import Scheme

# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _doc(**sections) -> str:
    return json.dumps(sections)


MERTON = {"kind": "merton", "params": {"lam": 1.0, "m": -0.1, "delta": 0.2}}
CGMY = {"kind": "cgmy", "params": {"C": 1.0, "G": 5.0, "M": 10.0, "Y": 0.5}}
EXP_OU = {"kind": "exp_ou", "params": {"chi": 2.0, "theta": -1.6, "v": 0.3, "y0": -1.4}}


# ---------------------------------------------------------------------------
# Defaults and round trip
# ---------------------------------------------------------------------------


class TestDefaults:
    def test_defaults_validate(self):
        config = RunConfig()
        config.validate()
        assert config.model.levy.kind is LevyKind.KOU
        assert config.model.sv.kind is SVKind.HESTON
        assert config.task.kind is TaskKind.TAIL
        assert config.oracle.scheme is None
        assert config.oracle.mc_config().scheme is None
        assert config.output.formats == [OutputFormat.CSV, OutputFormat.DAT]

    def test_round_trip(self):
        config = RunConfig()
        again = RunConfig.from_json(config.to_json())
        assert again == config
        assert again.to_json() == config.to_json()

    def test_enums_stored_by_value(self):
        raw = json.loads(RunConfig().to_json())
        assert raw["task"]["kind"] == "tail"
        assert raw["model"]["sv"]["kind"] == "heston"
        assert raw["oracle"]["scheme"] is None
        assert raw["output"]["formats"] == ["csv", "dat"]

    def test_empty_document_gives_defaults(self):
        assert RunConfig.from_json("{}") == RunConfig()

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(_doc(task={"z_grid": [0.4], "order": 1}))
        config = RunConfig.load(path)
        assert config.task.z_grid == [0.4]
        assert config.task.order == 1

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            RunConfig.load(tmp_path / "absent.json")


# ---------------------------------------------------------------------------
# Schema errors
# ---------------------------------------------------------------------------


class TestSchema:
    def test_invalid_json(self):
        with pytest.raises(ConfigError, match="not valid JSON"):
            RunConfig.from_json("{not json")

    def test_top_level_must_be_object(self):
        with pytest.raises(ConfigError, match="must be a JSON object"):
            RunConfig.from_json("[1, 2]")

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown keys in 'config'"):
            RunConfig.from_json(_doc(extra={}))

    def test_unknown_section_key(self):
        with pytest.raises(ConfigError, match="unknown keys in 'task'"):
            RunConfig.from_json(_doc(task={"horizon": 1.0}))

    def test_unknown_enum_value(self):
        with pytest.raises(ConfigError, match="must be one of"):
            RunConfig.from_json(_doc(task={"kind": "bogus"}))

    def test_missing_levy_parameter(self):
        levy = {"kind": "kou", "params": {"lam": 1.0, "p": 0.6, "eta1": 5.0}}
        with pytest.raises(ConfigError, match="missing \\['eta2'\\]"):
            RunConfig.from_json(_doc(model={"levy": levy}))

    def test_integer_fields_reject_floats(self):
        with pytest.raises(ConfigError, match="must be an integer"):
            RunConfig.from_json(_doc(oracle={"paths": 10.5}))

    def test_bool_is_not_a_number(self):
        with pytest.raises(ConfigError, match="must be a number"):
            RunConfig.from_json(_doc(model={"sigma0": True}))

    def test_formats_must_be_list(self):
        with pytest.raises(ConfigError, match="must be a list"):
            RunConfig.from_json(_doc(output={"formats": "csv"}))

    def test_custom_sv_not_configurable(self):
        with pytest.raises(ConfigError, match="cannot be configured"):
            RunConfig.from_json(_doc(model={"sv": {"kind": "custom", "params": {}}}))


# ---------------------------------------------------------------------------
# Validation of expansion preconditions
# ---------------------------------------------------------------------------


class TestValidation:
    def test_order_range(self):
        with pytest.raises(ConfigError, match="1..4"):
            RunConfig.from_json(_doc(task={"order": 5}))

    def test_z_zero_rejected(self):
        with pytest.raises(ConfigError, match="z = 0"):
            RunConfig.from_json(_doc(task={"kind": "call", "z_grid": [0.0]}))

    def test_tail_needs_positive_z(self):
        with pytest.raises(ConfigError, match="z > 0"):
            RunConfig.from_json(_doc(task={"z_grid": [-0.3]}))

    def test_nonpositive_time_rejected(self):
        with pytest.raises(ConfigError, match="t_grid"):
            RunConfig.from_json(_doc(task={"t_grid": [0.01, 0.0]}))

    def test_epsilon_too_large_quotes_inequality(self):
        doc = _doc(model={"epsilon": 0.2}, task={"z_grid": [0.5], "order": 2})
        with pytest.raises(ModelConditionError, match="z₀/\\(n\\+1\\)"):
            RunConfig.from_json(doc)

    def test_epsilon_outside_unit_interval(self):
        with pytest.raises(ConfigError, match="\\(0, 1\\)"):
            RunConfig.from_json(_doc(model={"epsilon": 1.5}))

    def test_default_epsilon_per_grid_point(self):
        config = RunConfig.from_json(_doc(task={"z_grid": [0.5, 0.1], "order": 2}))
        assert config.epsilon_for(0.5) == pytest.approx(0.09)
        assert config.epsilon_for(0.1) == pytest.approx(0.9 * 0.1 / 3)

    def test_default_epsilon_checked_per_grid_point(self):
        doc = _doc(task={"kind": "call", "z_grid": [-0.5, -0.05, 0.3], "order": 3})
        config = RunConfig.from_json(doc)
        assert config.epsilon_for(-0.05) == pytest.approx(0.9 * 0.05 / 8)

    def test_density_requires_infinite_activity(self):
        doc = _doc(model={"levy": MERTON}, task={"kind": "density", "z_grid": [0.5]})
        with pytest.raises(ModelConditionError, match="infinite-activity"):
            RunConfig.from_json(doc)

    def test_density_with_cgmy(self):
        doc = _doc(model={"levy": CGMY}, task={"kind": "density", "z_grid": [0.5], "order": 2})
        config = RunConfig.from_json(doc)
        assert config.epsilon_for(0.5) == pytest.approx(0.5 / 6)

    def test_density_epsilon_must_stay_below_x(self):
        doc = _doc(
            model={"levy": CGMY, "epsilon": 0.4},
            task={"kind": "density", "z_grid": [0.3], "order": 1},
        )
        with pytest.raises(ModelConditionError, match="ε < \\|x\\|"):
            RunConfig.from_json(doc)

    def test_smile_needs_positive_kappa(self):
        with pytest.raises(ConfigError, match="kappa > 0"):
            RunConfig.from_json(_doc(task={"kind": "smile", "z_grid": [-0.1]}))

    def test_verify_rejects_unknown_criteria(self):
        with pytest.raises(ConfigError, match="unknown criteria \\[12\\]"):
            RunConfig.from_json(_doc(task={"kind": "verify", "criteria": [1, 12]}))

    def test_delta_must_stay_below_epsilon(self):
        doc = _doc(model={"epsilon": 0.05}, oracle={"delta": 0.05})
        with pytest.raises(ConfigError, match="oracle.delta"):
            RunConfig.from_json(doc)

    def test_scheme_reaches_monte_carlo(self):
        doc = _doc(
            model={"sv": EXP_OU},
            oracle={"scheme": "full_truncation_euler"},
        )
        config = RunConfig.from_json(doc)
        assert config.oracle.mc_config().scheme is Scheme.FULL_TRUNCATION_EULER
        again = RunConfig.from_json(config.to_json())
        assert again.oracle.scheme is Scheme.FULL_TRUNCATION_EULER

    def test_exact_ou_scheme_needs_exp_ou_model(self):
        with pytest.raises(ConfigError, match="exp_ou"):
            RunConfig.from_json(_doc(oracle={"scheme": "exact_ou"}))

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ConfigError, match="oracle.scheme"):
            RunConfig.from_json(_doc(oracle={"scheme": "milstein"}))


# ---------------------------------------------------------------------------
# Overrides and helpers
# ---------------------------------------------------------------------------


class TestOverrides:
    def test_overrides_apply(self):
        config = RunConfig().with_overrides(order=1, epsilon=0.05, seed=7, out="elsewhere")
        assert config.task.order == 1
        assert config.model.epsilon == 0.05
        assert config.epsilon_for(0.5) == 0.05
        assert config.oracle.seed == 7
        assert config.output.directory == "elsewhere"

    def test_none_overrides_keep_config(self):
        config = RunConfig()
        assert config.with_overrides() == config

    def test_overrides_are_revalidated(self):
        with pytest.raises(ConfigError):
            RunConfig().with_overrides(order=0)

    def test_mc_config_carries_oracle_section(self):
        config = RunConfig.from_json(_doc(oracle={"paths": 1000, "seed": 5, "workers": 2}))
        mc = config.oracle.mc_config()
        assert (mc.paths, mc.seed, mc.workers) == (1000, 5, 2)


class TestExpansionKind:
    @pytest.mark.parametrize(
        "task, z, expected",
        [
            (TaskKind.TAIL, 0.3, ExpansionKind.TAIL),
            (TaskKind.CALL, -0.3, ExpansionKind.CALL_OTM),
            (TaskKind.CALL, 0.3, ExpansionKind.CALL_ITM),
            (TaskKind.DENSITY, -0.3, ExpansionKind.DENSITY),
        ],
    )
    def test_mapping(self, task, z, expected):
        assert expansion_kind(task, z) is expected

    def test_no_family_for_smile(self):
        with pytest.raises(ConfigError, match="no expansion family"):
            expansion_kind(TaskKind.SMILE, 0.3)

    def test_nan_rejected(self):
        with pytest.raises(ConfigError):
            expansion_kind(TaskKind.CALL, float("nan"))


class TestCacheDir:
    def test_unset(self, monkeypatch):
        monkeypatch.delenv(CACHE_ENV, raising=False)
        assert cache_dir() is None

    def test_blank_disables(self, monkeypatch):
        monkeypatch.setenv(CACHE_ENV, "  ")
        assert cache_dir() is None

    def test_set(self, monkeypatch, tmp_path):
        monkeypatch.setenv(CACHE_ENV, str(tmp_path))
        assert cache_dir() == str(tmp_path)
