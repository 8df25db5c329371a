import sys
from pathlib import Path

import pytest

from analytic_diffusion.errors import ConfigError
from analytic_diffusion.utils.config_utils import CONFIG_KEYS, load_config, parse_assignments
from analytic_diffusion.utils.manifest_utils import (
    build_manifest,
    config_from_manifest,
    read_manifest,
    write_manifest,
)


def _make_config_file(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "run.env"
    path.write_text(text)
    return path


def test_defaults():
    config = load_config()
    assert config["schedule.T"] == 1000
    assert config["schedule.beta_start"] == pytest.approx(1e-4)
    assert config["denoiser.kind"] == ("optimal",)
    assert config["dataset.range"] == (-1.0, 1.0)
    assert config["perturb.clamp"] is True
    assert config["dataset.source"] is None
    assert set(config.values) == set(CONFIG_KEYS)


def test_file_values_and_precedence(tmp_path: Path):
    path = _make_config_file(tmp_path, "# comment\nsampler.steps=20\nsampler.count=3\n"
                                       "denoiser.kind=optimal, wiener\n")
    config = load_config(str(path), {"sampler.count": "7"})
    assert config["sampler.steps"] == 20
    assert config["sampler.count"] == 7
    assert config["denoiser.kind"] == ("optimal", "wiener")
    assert config.source == str(path)


def test_unknown_keys_and_bad_values(tmp_path: Path):
    with pytest.raises(ConfigError, match="Unknown configuration key"):
        load_config(str(_make_config_file(tmp_path, "sampler.stpes=3\n")))
    with pytest.raises(ConfigError, match="Invalid value for 'sampler.steps'"):
        load_config(None, {"sampler.steps": "ten"})
    with pytest.raises(ConfigError, match="two comma-separated"):
        load_config(None, {"sensitivity.pixel": "1,2,3"})
    with pytest.raises(ConfigError):
        load_config(None, {"perturb.clamp": "maybe"})
    with pytest.raises(ConfigError):
        load_config()["no.such.key"]


def test_missing_files_are_reported(tmp_path: Path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(str(tmp_path / "absent.env"))
    with pytest.raises(ConfigError, match="dataset.source"):
        load_config(None, {"dataset.source": str(tmp_path / "absent.adt")})


def test_require():
    config = load_config()
    assert config.require("schedule.T") == 1000
    with pytest.raises(ConfigError, match="required"):
        config.require("dataset.source")
    with pytest.raises(ConfigError):
        config.require("benchmark.external")


def test_parse_assignments():
    assert parse_assignments(["a.b=1", " c = x=y "]) == {"a.b": "1", "c": "x=y"}
    assert parse_assignments(None) == {}
    with pytest.raises(ConfigError, match="key=value"):
        parse_assignments(["novalue"])


def test_digest_tracks_values():
    base = load_config()
    assert base.digest() == load_config().digest()
    assert base.digest() != load_config(None, {"sampler.seed": "1"}).digest()
    assert base.with_overrides({"sampler.seed": "0"}).digest() == base.digest()


def test_manifest_round_trip(tmp_path: Path, dataset_file: Path):
    config = load_config(None, {"dataset.source": str(dataset_file), "sampler.steps": "5",
                                "denoiser.kind": "optimal,patch", "schedule.beta_end": "0.015"})
    entries = build_manifest("sample", config, seeds={"sampler": 3}, extra={"samples": 4})
    path = write_manifest(str(tmp_path), entries)
    read = read_manifest(path)
    assert read["command"] == "sample"
    assert read["seed.sampler"] == "3"
    assert read["config.sampler.steps"] == "5"
    assert read["samples"] == "4"
    assert not any(key.startswith(("time", "host")) for key in read)
    again = config_from_manifest(path)
    assert again.as_text() == config.as_text()
    assert again.digest() == read["config.hash"]
    assert config_from_manifest(path, {"sampler.steps": "6"})["sampler.steps"] == 6


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
