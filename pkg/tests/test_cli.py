import json
import logging

import pytest

from app.cli.binaural import build_parser, run_cli
from app.services import output_manager


@pytest.fixture(autouse=True)
def restore_root_handlers():
    """run_cli installs stdout handlers bound to the captured stream; drop them afterwards."""
    root = logging.getLogger()
    saved = list(root.handlers)
    level = root.level
    yield
    root.handlers[:] = saved
    root.setLevel(level)


@pytest.fixture
def scene_file(tmp_path):
    scene = {
        "room": {"dimensions": [5.0, 4.0, 3.0], "reflection_coefficient": 0.7, "target_t60": 0.3},
        "environments": [
            {"id": 1, "listener_position": [3.0, 2.0, 1.5], "source_position": [2.0, 1.5, 1.5]},
            {"id": 2, "listener_position": [3.0, 2.0, 1.5], "source_position": [0.8, 0.7, 1.5]},
        ],
        "hrtf": {"synthetic_order": 3, "ir_length": 32},
        "sh_order": 3,
        "rir_length": 0.2,
        "conditions": [
            {"name": "mixed", "direct_order": 3, "reverb_order": 1},
            {"name": "reference", "direct_order": 3, "reverb_order": 3},
        ],
        "signals": [
            {"name": "noise", "burst_length": 0.05, "fade_length": 0.005, "pause_length": 0.0, "repetitions": 1}
        ],
        "output_dir": "unused",
    }
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(scene))
    return path


def test_no_command_prints_help(capsys):
    assert run_cli([]) == 1
    assert "usage" in capsys.readouterr().out.lower()


def test_parser_knows_every_command():
    parser = build_parser()
    for command in ("simulate", "render", "analyze", "orientations", "run"):
        args = parser.parse_args([command, "--seed", "2"])
        assert args.command == command
        assert args.seed == 2


def test_simulate_writes_rirs(scene_file, tmp_path, capsys):
    out = tmp_path / "out"
    code = run_cli(["simulate", "--config", str(scene_file), "--out", str(out), "--log-level", "WARNING"])
    assert code == 0
    assert (out / "rirs" / "env1" / "sh_rir.direct.shrir").is_file()
    assert (out / "rirs" / "env2" / "sh_rir.reverberant.shrir").is_file()
    assert "SH room impulse responses" in capsys.readouterr().out


def test_run_single_environment(scene_file, tmp_path, capsys):
    out = tmp_path / "out"
    code = run_cli(["run", "--config", str(scene_file), "--out", str(out), "--environment", "2",
                    "--seed", "9", "--log-level", "WARNING"])
    assert code == 0
    rows = output_manager.read_table(out / "reports" / "manifest.tsv")
    assert [r["file"] for r in rows] == ["stimuli/env2/noise_mixed.wav", "stimuli/env2/noise_reference.wav"]
    assert "Total: 2 stimulus file(s)" in capsys.readouterr().out


def test_orientations(scene_file, tmp_path):
    out = tmp_path / "out"
    code = run_cli(["orientations", "--config", str(scene_file), "--out", str(out), "--condition", "mixed",
                    "--resolution", "120", "--log-level", "WARNING"])
    assert code == 0
    assert len(output_manager.list_outputs(out, "brirs")) == 3


def test_invalid_scene_file(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert run_cli(["analyze", "--config", str(path), "--log-level", "ERROR"]) == 2
    assert "Error:" in capsys.readouterr().err


def test_unknown_environment(scene_file, tmp_path):
    code = run_cli(["simulate", "--config", str(scene_file), "--out", str(tmp_path / "out"),
                    "--environment", "7", "--log-level", "ERROR"])
    assert code == 2


def test_hrtf_sources_are_exclusive(scene_file, tmp_path):
    code = run_cli(["render", "--config", str(scene_file), "--hrtf", str(scene_file), "--synthetic-hrtf", "3",
                    "--log-level", "ERROR"])
    assert code == 2


def test_synthetic_order_below_conditions(scene_file, tmp_path):
    code = run_cli(["render", "--config", str(scene_file), "--synthetic-hrtf", "1", "--log-level", "ERROR"])
    assert code == 2
