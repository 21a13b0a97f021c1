import json

import numpy as np
import pytest

from mvenhance.cli import (EXIT_CONFIG, ConfigError, load_config, main)
from mvenhance.container import canonical_json
from mvenhance.packet import load_packet


def _write_config(tmp_path, **overrides):
    cfg = {"format_version": 1, "seed": 3, "n_gaussians": 12, "image_size": 32,
           "n_views": 6}
    cfg.update(overrides)
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg))
    return p


def test_load_config_rejects_unknown_keys(tmp_path):
    p = _write_config(tmp_path, bogus_key=1)
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_load_config_rejects_wrong_version(tmp_path):
    p = _write_config(tmp_path, format_version=2)
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_load_config_seed_override(tmp_path):
    p = _write_config(tmp_path)
    assert load_config(str(p))["seed"] == 3
    assert load_config(str(p), seed_override=11)["seed"] == 11


def test_cli_config_error_exit_code(tmp_path):
    p = _write_config(tmp_path, bogus=1)
    assert main(["gen", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_cli_enhance_requires_checkpoint(tmp_path):
    p = _write_config(tmp_path)
    rc = main(["enhance", "--config", str(p), "--out", str(tmp_path / "o")])
    assert rc == EXIT_CONFIG


def test_cmd_gen_writes_artifacts_and_echo(tmp_path, capsys):
    p = _write_config(tmp_path)
    out = tmp_path / "gen"
    assert main(["gen", "--config", str(p), "--out", str(out)]) == 0
    assert (out / "scene.txt").exists()
    assert (out / "cameras.json").exists()
    echo = json.loads((out / "config_echo.json").read_text())
    assert echo["seed"] == 3 and echo["n_gaussians"] == 12


def test_cmd_gen_deterministic(tmp_path):
    p = _write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["gen", "--config", str(p), "--out", str(a)])
    main(["gen", "--config", str(p), "--out", str(b)])
    assert (a / "scene.txt").read_bytes() == (b / "scene.txt").read_bytes()
    assert (a / "cameras.json").read_bytes() == (b / "cameras.json").read_bytes()


def test_cmd_render_outputs(tmp_path):
    p = _write_config(tmp_path, n_views=2, severity=0.5)
    out = tmp_path / "r"
    assert main(["render", "--config", str(p), "--out", str(out)]) == 0
    assert (out / "clean_rgb_000.npz").exists()
    assert (out / "corrupted_cmap_001.npz").exists()
    assert (out / "clean_rgb_000.png").exists()


def test_cmd_pack_round_trip(tmp_path):
    p = _write_config(tmp_path, n_gaussians=10, image_size=32,
                      severities=[0.3, 0.6])
    out = tmp_path / "pk"
    assert main(["pack", "--config", str(p), "--out", str(out)]) == 0
    files = sorted(out.glob("packet_*.mvpk"))
    assert len(files) == 2
    pkt = load_packet(files[0])
    assert pkt.n_ref == 8 and pkt.n_target == 4


def test_canonical_json_stable():
    a = canonical_json({"b": 1, "a": [1.5, 2]})
    b = canonical_json({"a": [1.5, 2], "b": 1})
    assert a == b
