"""Tests for configuration loading."""

from __future__ import annotations

import os
from pathlib import Path
from unittest.mock import patch

from dynpriv.config import OUTPUT_DIR_ENV, Config


def _load(tmp_path: Path, text: str | None = None, overrides: dict | None = None) -> Config:
    path = tmp_path / "config.toml"
    if text is not None:
        path.write_text(text)
    with patch.dict(os.environ):
        os.environ.pop(OUTPUT_DIR_ENV, None)
        return Config.load(overrides, config_path=path)


class TestConfigLoad:
    def test_defaults_without_file(self, tmp_path: Path) -> None:
        config = _load(tmp_path)
        assert config.output_dir == Path("runs")
        assert config.workers == 1
        assert config.plots
        assert config.identification.settle_tol == 1e-12
        assert config.recovery.restarts == 1

    def test_toml_values(self, tmp_path: Path) -> None:
        config = _load(tmp_path, (
            'output_dir = "/tmp/dp-runs"\n'
            "workers = 4\n"
            "plots = false\n"
            "[identification]\n"
            "cond_threshold = 1e8\n"
            "max_periods = 500\n"
            "[recovery]\n"
            "restarts = 5\n"
            "tol = 1e-10\n"
        ))
        assert config.output_dir == Path("/tmp/dp-runs")
        assert config.workers == 4
        assert not config.plots
        assert config.identification.cond_threshold == 1e8
        assert config.identification.max_periods == 500
        assert config.recovery.restarts == 5
        assert config.recovery.tol == 1e-10

    def test_workers_floor(self, tmp_path: Path) -> None:
        assert _load(tmp_path, "workers = 0\n").workers == 1

    def test_overrides_win(self, tmp_path: Path) -> None:
        config = _load(tmp_path, "verbose = false\nworkers = 2\n", overrides={"verbose": True})
        assert config.verbose
        assert config.workers == 2

    def test_environment_output_dir(self, tmp_path: Path) -> None:
        path = tmp_path / "config.toml"
        path.write_text('output_dir = "/from/file"\n')
        with patch.dict(os.environ, {OUTPUT_DIR_ENV: str(tmp_path / "env")}):
            config = Config.load(config_path=path)
        assert config.output_dir == tmp_path / "env"

    def test_override_beats_environment(self, tmp_path: Path) -> None:
        with patch.dict(os.environ, {OUTPUT_DIR_ENV: "/from/env"}):
            config = Config.load({"output_dir": str(tmp_path)}, config_path=tmp_path / "none.toml")
        assert config.output_dir == tmp_path


def test_recovery_options() -> None:
    config = Config()
    config.recovery.restarts = 3
    opts = config.recovery.options(seed=9)
    assert opts.restarts == 3
    assert opts.seed == 9
    assert config.recovery.options(restarts=1).restarts == 1
