"""Tests for config parsing, presets and the key listing"""

import pytest

from config.schema import PRESETS, TrainConfig, config_help, config_keys, flatten, load_config, parse_config
from core.errors import ConfigError
from core.losses import build_plan


class TestParse:

    def test_defaults(self):
        config = TrainConfig()
        assert config.loss.critic_mode == "implicit"
        assert config.loss.augment.mu == "shift"
        assert config.loss.target_chain_name() == "shift"

    def test_dotted_and_nested_agree(self):
        flat = parse_config({"loss.M": 3, "augment.max_pad": 2})
        nested = parse_config({"loss": {"M": 3}, "augment": {"max_pad": 2}})
        assert flat == nested
        assert flat.loss.augment.max_pad == 2

    def test_unknown_keys_are_all_reported(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"train.totl_steps": 1, "loss.alhpa": 0.1})
        assert info.value.offenders == ["loss.alhpa", "train.totl_steps"]

    def test_invalid_values_name_the_key(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"loss.gamma": 1.5})
        assert any(o.startswith("loss.gamma=") for o in info.value.offenders)

    def test_unknown_transform(self):
        with pytest.raises(ConfigError):
            parse_config({"augment.mu": "shift+crop"})

    def test_explicit_critics_bootstrap_from_raw_states(self):
        config = parse_config({"loss.critic_mode": "explicit_y"})
        assert config.loss.target_chain_name() == "none"
        override = parse_config({"loss.critic_mode": "explicit_y", "augment.target": "shift"})
        assert override.loss.target_chain_name() == "shift"

    def test_nuisance_env_sets_region(self):
        config = parse_config({"env.name": "nuisance_channel", "env.size": 16, "env.nuisance_width": 8})
        assert config.loss.augment.region == [0, 16, 16, 24]

    def test_load_config_keeps_raw_bytes(self, tmp_path):
        path = tmp_path / "run.toml"
        text = 'preset = "drq"\n# comment\nseed = 9\n'
        path.write_text(text)
        config, raw = load_config(path)
        assert raw == text.encode()
        assert config.seed == 9 and config.loss.K == 2

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("seed = = 3\n")
        with pytest.raises(ConfigError):
            load_config(path)


class TestPresets:

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_every_preset_builds_a_plan(self, name):
        config = parse_config({"preset": name})
        plan = build_plan(config.loss)
        assert plan.nu

    def test_explicit_keys_override_preset(self):
        config = parse_config({"preset": "rad", "loss.M": 4})
        assert config.loss.M == 4 and config.loss.K == 1

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            parse_config({"preset": "dreamer"})

    def test_svea_uses_two_views(self):
        plan = build_plan(parse_config({"preset": "svea"}).loss)
        assert [chain.name for chain in plan.nu] == ["shift", "shift+overlay"]


class TestKeys:

    def test_flatten(self):
        assert flatten({"a": {"b": 1, "c": {"d": 2}}, "e": 3}) == {"a.b": 1, "a.c.d": 2, "e": 3}

    def test_augment_keys_are_top_level(self):
        keys = {key for key, _, _ in config_keys()}
        assert "augment.nu" in keys
        assert "loss.augment.nu" not in keys
        assert {"train.total_steps", "loss.alpha_tp", "env.name", "network.dtype"} <= keys

    def test_help_mentions_presets(self):
        text = config_help()
        assert "presets:" in text
        assert "drq_kl_fixed" in text
