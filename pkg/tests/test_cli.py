import json
import os
import signal
import socket
import subprocess
import sys
import time

import numpy as np
import pytest
from click.testing import CliRunner

from icbs import fixtures
from icbs.cli import main
from icbs.figures import save_report_figures
from icbs.harness import run_experiment
from icbs.imgio import ppm_bytes, read_pgm, read_ppm
from icbs.scenario import save_scenario


@pytest.fixture(scope="module")
def scenario_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "mini.json"
    scn = fixtures.desk_scenario(n_frames=2, pixel_sigma=1.0,
                                 labels=["carton_red", "box_blue"])
    save_scenario(scn, str(path))
    return str(path)


@pytest.fixture
def runner():
    return CliRunner()


def test_run_writes_csv_summary_and_figures(runner, scenario_path, tmp_path):
    csv_path = str(tmp_path / "out.csv")
    result = runner.invoke(main, ["run", scenario_path, "--csv", csv_path])
    assert result.exit_code == 0, result.output
    assert os.path.exists(csv_path)
    assert os.path.exists(str(tmp_path / "out.summary.json"))
    assert os.path.exists(str(tmp_path / "out.accuracy.png"))
    assert os.path.exists(str(tmp_path / "out.distances.png"))
    with open(csv_path) as f:
        lines = f.read().splitlines()
    assert len(lines) == 1 + 2 * 2  # header + 2 objects x 2 frames
    summary = json.loads(open(str(tmp_path / "out.summary.json")).read())
    assert summary["predictions"] == 4


def test_run_no_figures_flag(runner, scenario_path, tmp_path):
    csv_path = str(tmp_path / "bare.csv")
    result = runner.invoke(main, ["run", scenario_path, "--csv", csv_path,
                                  "--no-figures"])
    assert result.exit_code == 0
    assert os.path.exists(csv_path)
    assert not os.path.exists(str(tmp_path / "bare.accuracy.png"))


def test_run_dump_frames(runner, scenario_path, tmp_path):
    dump = str(tmp_path / "frames")
    result = runner.invoke(main, ["run", scenario_path, "--dump-frames", dump])
    assert result.exit_code == 0
    assert sorted(os.listdir(dump))[0] == "rw_0000.depth.pgm"
    assert len(os.listdir(dump)) == 6  # 2 ticks x 3 images


def test_run_rejects_invalid_scenario(runner, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"name\": \"x\"}")
    result = runner.invoke(main, ["run", str(bad)])
    assert result.exit_code == 2


def test_render_writes_triple(runner, scenario_path, tmp_path):
    prefix = str(tmp_path / "shot")
    result = runner.invoke(main, ["render", scenario_path, "--tick", "1",
                                  "--out", prefix])
    assert result.exit_code == 0
    rgb = read_ppm(prefix + ".rgb.ppm")
    assert rgb.shape == (120, 160, 3)
    depth = read_pgm(prefix + ".depth.pgm")
    assert depth.max() > 0
    mask = read_pgm(prefix + ".mask.pgm")
    assert set(np.unique(mask)) >= {0, 1}


def test_render_tick_out_of_range(runner, scenario_path):
    result = runner.invoke(main, ["render", scenario_path, "--tick", "99"])
    assert result.exit_code == 2


def test_compare_identical_and_roi(runner, tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (32, 48, 3), dtype=np.uint8)
    a = tmp_path / "a.ppm"
    b = tmp_path / "b.ppm"
    a.write_bytes(ppm_bytes(img))
    other = img.copy()
    other[:16] = (255, 0, 0)
    b.write_bytes(ppm_bytes(other))
    same = runner.invoke(main, ["compare", str(a), str(a)])
    assert same.exit_code == 0
    assert json.loads(same.output)["distance"] == 0.0
    diff = runner.invoke(main, ["compare", str(a), str(b)])
    assert json.loads(diff.output)["distance"] > 0.1
    # ROI restricted to the untouched half
    roi = runner.invoke(main, ["compare", str(a), str(b), "--roi", "0,16,48,16"])
    assert json.loads(roi.output)["distance"] == 0.0
    bad = runner.invoke(main, ["compare", str(a), str(b), "--roi", "9,9"])
    assert bad.exit_code != 0


def test_serve_subprocess_round_trip(scenario_path, tmp_path):
    sock_path = str(tmp_path / "serve.sock")
    env = dict(os.environ)
    env["PYTHONPATH"] = os.pathsep.join(
        [os.path.join(os.path.dirname(__file__), "..", "src"),
         env.get("PYTHONPATH", "")])
    proc = subprocess.Popen(
        [sys.executable, "-m", "icbs.cli", "serve", "--socket", sock_path,
         "--scenario", scenario_path],
        env=env, stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    try:
        for _ in range(100):
            if os.path.exists(sock_path):
                break
            time.sleep(0.1)
        else:
            raise AssertionError("server socket never appeared")
        from icbs.protocol import WorldClient
        scn = fixtures.desk_scenario(n_frames=1, labels=["carton_red"])
        pose = scn.placements[0][1]
        with WorldClient(sock_path) as client:
            reply = client.spawn("carton_red", pose.to_list())
            assert reply["ok"]
            snap = client.snapshot()
            assert snap["ok"] and "frame" in snap
        proc.send_signal(signal.SIGTERM)
        proc.wait(timeout=10)
    finally:
        if proc.poll() is None:
            proc.kill()


def test_figures_written_for_real_report(tmp_path):
    scn = fixtures.desk_scenario(n_frames=2, pixel_sigma=2.0,
                                 label_corruption=0.5,
                                 labels=["carton_red", "box_blue"])
    report = run_experiment(scn)
    paths = save_report_figures(report, str(tmp_path / "r.csv"))
    for p in paths:
        assert os.path.getsize(p) > 1000
