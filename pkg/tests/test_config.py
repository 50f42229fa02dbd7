# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
import json

import pytest

from resindesign import BASE_DIR
from resindesign.config import (
    CONFIG_ENV,
    Settings,
    load_settings,
    parse_override,
)
from resindesign.errors import InvalidParameters


@pytest.fixture(autouse=True)
def no_env_config(monkeypatch):
    monkeypatch.delenv(CONFIG_ENV, raising=False)


def test_defaults():
    s = load_settings()
    assert s == Settings()
    assert s.materials.E_crystal == 28000.0
    assert s.diffusion.timesteps == 1000
    assert s.data.ratios == (0.8, 0.1, 0.1)
    assert s.homogenization.spacing(64) == 1.0


def test_shipped_file_matches_defaults():
    assert load_settings(BASE_DIR / "config" / "default.toml") == Settings()


def test_toml_and_json_files(tmp_path):
    toml = tmp_path / "run.toml"
    toml.write_text(
        "[diffusion]\nepochs = 3\nchannel_mults = [1, 2]\n"
        "[data]\ntemps = [170.0]\n"
    )
    s = load_settings(toml)
    assert s.diffusion.epochs == 3
    assert s.diffusion.channel_mults == (1, 2)
    assert s.data.temps == (170.0,)

    path = tmp_path / "run.json"
    path.write_text(json.dumps({"materials": {"E_amorph": 200.0}}))
    assert load_settings(path).materials.E_amorph == 200.0


def test_unknown_keys_and_sections(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[diffusion]\nepoch = 3\n")
    with pytest.raises(InvalidParameters, match="epoch"):
        load_settings(bad)
    bad.write_text("[plotting]\ndpi = 3\n")
    with pytest.raises(InvalidParameters):
        load_settings(bad)
    with pytest.raises(InvalidParameters):
        load_settings(tmp_path / "settings.yaml")


def test_overrides_apply_in_order():
    s = load_settings(
        overrides=[
            "diffusion.epochs=5",
            "diffusion.epochs=7",
            "homogenization.diagonal=/",
            "data.temps=[150, 210]",
        ]
    )
    assert s.diffusion.epochs == 7
    assert s.homogenization.diagonal == "/"
    assert s.data.temps == (150, 210)


def test_override_syntax():
    assert parse_override("data.seed=3") == ("data", "seed", 3)
    assert parse_override("materials.formulation=plane-stress") == (
        "materials",
        "formulation",
        "plane-stress",
    )
    for text in ("data.seed", "seed=3", ".seed=3"):
        with pytest.raises(InvalidParameters):
            parse_override(text)


def test_overrides_are_validated():
    with pytest.raises(InvalidParameters):
        load_settings(overrides=["materials.nu_crystal=0.5"])
    with pytest.raises(InvalidParameters):
        load_settings(overrides=["validation.source=train"])
    with pytest.raises(InvalidParameters):
        load_settings(overrides=["diffusion.beta_end=0.00001"])


def test_environment_variable(tmp_path, monkeypatch):
    path = tmp_path / "env.toml"
    path.write_text("[validation]\nseed = 9\n")
    monkeypatch.setenv(CONFIG_ENV, str(path))
    assert load_settings().validation.seed == 9
