"""Training configuration file parsing and validation."""

import pytest

from structssl.config import VARIANTS, ConfigError, TrainConfig, parse_config


def write_cfg(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


class TestDefaults:
    def test_empty_file_yields_training_protocol_defaults(self, tmp_path):
        cfg = parse_config(write_cfg(tmp_path, ""))
        assert cfg.epochs == 50
        assert cfg.batch_size == 64
        assert cfg.learning_rate == pytest.approx(1e-3)
        assert cfg.s == 8 and cfg.d == 8 and cfg.k == 2
        assert cfg.variant == "ZA"
        assert cfg.augmentations_per_image == 32
        assert cfg.probe_interval == 100

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        cfg = parse_config(write_cfg(tmp_path, "# a comment\n\nepochs=3\n  # more\n"))
        assert cfg.epochs == 3

    def test_variants_constant(self):
        assert VARIANTS == ("Z", "A", "ZA")


class TestParsing:
    def test_variant_key(self, tmp_path):
        cfg = parse_config(write_cfg(tmp_path, "variant=ZA\n"))
        assert cfg.variant == "ZA"

    def test_all_kebab_keys_accepted(self, tmp_path):
        text = ("epochs=2\nbatch-size=16\naugmentations-per-image=4\n"
                "learning-rate=0.01\nS=4\nD=4\nK=3\nvariant=Z\nseed=9\n"
                "probe-interval=50\ndataset=synth\nmax-iters=100\n"
                "probe-subset=200\ndeterministic=false\n")
        cfg = parse_config(write_cfg(tmp_path, text))
        assert cfg.batch_size == 16 and cfg.k == 3 and cfg.seed == 9
        assert cfg.max_iters == 100 and cfg.deterministic is False

    def test_unknown_key_rejected_with_line_number(self, tmp_path):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config(write_cfg(tmp_path, "epochs=2\nbogus=1\n"))

    def test_malformed_value_rejected_with_line_number(self, tmp_path):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config(write_cfg(tmp_path, "epochs=three\n"))

    def test_missing_equals_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config(write_cfg(tmp_path, "epochs 3\n"))

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="no such config"):
            parse_config(tmp_path / "absent.cfg")


class TestValidation:
    def test_zero_epochs_out_of_range(self, tmp_path):
        with pytest.raises(ConfigError, match="epochs"):
            parse_config(write_cfg(tmp_path, "epochs=0\n"))

    def test_batch_size_minimum_two(self, tmp_path):
        # negative pairing needs at least two distinct images
        with pytest.raises(ConfigError, match="batch"):
            parse_config(write_cfg(tmp_path, "batch-size=1\n"))

    def test_bad_variant(self, tmp_path):
        with pytest.raises(ConfigError, match="variant"):
            parse_config(write_cfg(tmp_path, "variant=AZ\n"))

    def test_nonpositive_lr(self, tmp_path):
        with pytest.raises(ConfigError, match="learning"):
            parse_config(write_cfg(tmp_path, "learning-rate=0\n"))

    def test_programmatic_config_validate(self):
        cfg = TrainConfig(epochs=1, batch_size=4)
        assert cfg.validate() is cfg
        with pytest.raises(ConfigError):
            TrainConfig(variant="X").validate()
