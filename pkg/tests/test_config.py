import pytest
import yaml

from mrrawnet.config import (
    CorpusConfig,
    EvalConfig,
    RunConfig,
    load_run_config,
    model_config_from,
    run_config_from_dict,
)
from mrrawnet.errors import ConfigError
from mrrawnet.model import ModelConfig


class TestModelConfig:
    def test_presets(self):
        assert model_config_from("micro") == ModelConfig.micro()
        assert model_config_from("baseline").variant == "rawnet3-baseline"

    def test_preset_with_overrides(self):
        cfg = model_config_from({"preset": "micro", "embed_dim": 16, "backbone": {"channels": 12}})
        assert cfg.embed_dim == 16 and cfg.backbone.channels == 12
        assert cfg.mrfe == ModelConfig.micro().mrfe

    def test_from_file(self, tmp_path):
        (tmp_path / "m.yaml").write_text("preset: micro\ndtype: float32\n")
        assert model_config_from("m.yaml", tmp_path).dtype == "float32"

    @pytest.mark.parametrize("value", [
        {"preset": "huge"}, {"preset": "micro", "colour": 1}, {"preset": "micro", "mrfe": {"x": 1}},
        {"preset": "micro", "backbone": 3}, 42])
    def test_errors(self, value):
        with pytest.raises(ConfigError):
            model_config_from(value)


class TestRunConfig:
    def test_defaults_validate(self):
        RunConfig().validate()

    def test_round_trip_through_yaml(self, tmp_path):
        cfg = run_config_from_dict({"model": "micro", "train": {"steps_per_epoch": 5}, "seed": 3})
        (tmp_path / "c.yaml").write_text(cfg.dump())
        again = load_run_config(tmp_path / "c.yaml")
        assert again == cfg
        assert again.dump() == cfg.dump()

    def test_dump_is_plain_yaml(self):
        data = yaml.safe_load(RunConfig().dump())
        assert data["model"]["backbone"]["channels"] == 8
        assert data["eval"]["durations"] == ["full", 5, 2, 1]

    @pytest.mark.parametrize("data, needle", [
        ({"modle": "micro"}, "modle"),
        ({"train": {"lr": 1}}, "lr"),
        ({"corpus": {"num_speakers": 1}}, "num_speakers"),
        ({"corpus": {"utts_per_speaker": 5, "train_per_speaker": 5}}, "train_per_speaker"),
        ({"eval": {"durations": ["full", "soon"]}}, "durations"),
        ({"seed": "zero"}, "seed"),
        ({"train": {"batch_size": 0}}, "batch_size"),
    ])
    def test_invalid(self, data, needle):
        with pytest.raises(ConfigError, match=needle):
            run_config_from_dict(data)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "nope.yaml")

    def test_bad_yaml(self, tmp_path):
        (tmp_path / "c.yaml").write_text("model: [unclosed\n")
        with pytest.raises(ConfigError, match="YAML"):
            load_run_config(tmp_path / "c.yaml")
        (tmp_path / "d.yaml").write_text("- a\n- b\n")
        with pytest.raises(ConfigError, match="mapping"):
            load_run_config(tmp_path / "d.yaml")

    def test_eval_durations(self):
        assert EvalConfig(["full", "2s", 1]).parsed() == [None, 2.0, 1.0]

    def test_corpus_bounds(self):
        with pytest.raises(ConfigError):
            CorpusConfig(min_duration=4, max_duration=3).validate()
