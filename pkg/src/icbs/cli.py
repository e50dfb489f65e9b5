"""Command-line interface.

    icbs run <scenario.json>      full experiment; CSV, JSON summary, figures
    icbs render <scenario.json>   ground-truth frame triple for one tick
    icbs serve                    artificial-world protocol endpoint
    icbs compare <a.ppm> <b.ppm>  standalone histogram distance

Exit code 2 signals a scenario validation error.
"""

import json
import os
import signal
import sys

import click
import numpy as np

from . import fixtures
from .imgio import read_ppm, write_frame
from .loop import Query
from .model import Histogram, HistogramBinning
from .model import hellinger as histogram_distance
from .protocol import WorldServer
from .scenario import ScenarioError, load_scenario
from .world import WorldState


def _load(path: str):
    try:
        return load_scenario(path)
    except ScenarioError as exc:
        click.echo(f"scenario error: {exc}", err=True)
        sys.exit(2)


@click.group()
def main():
    """Belief-state perception sandbox: envision, compare, refine."""


@main.command()
@click.argument("scenario_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--iterations", type=int, default=3, show_default=True,
              help="Maximum compare rounds per frame.")
@click.option("--tau-match", type=float, default=0.45, show_default=True,
              help="Color distance threshold for a match verdict.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None,
              help="Write per-prediction rows here (plus summary and figures).")
@click.option("--dump-frames", type=click.Path(file_okay=False), default=None,
              help="Dump observed/expected frame triples per tick.")
@click.option("--no-figures", is_flag=True, help="Skip the report figures.")
def run(scenario_path, seed, iterations, tau_match, csv_path, dump_frames,
        no_figures):
    """Run the verification loop over a scenario's whole trajectory."""
    from .figures import save_report_figures
    from .harness import run_experiment, rng_stream, synthesize_rw

    scenario = _load(scenario_path)
    if seed is not None:
        scenario.seed = seed
    query = Query(max_iterations=iterations, tau_match=tau_match)
    report = run_experiment(scenario, query)

    if dump_frames:
        os.makedirs(dump_frames, exist_ok=True)
        rng_pixel = rng_stream(scenario.seed, "pixel")
        rng_jitter = rng_stream(scenario.seed, "jitter")
        for tick in range(len(scenario.trajectory)):
            frame = synthesize_rw(scenario, tick, rng_pixel, rng_jitter)
            write_frame(frame, os.path.join(dump_frames, f"rw_{tick:04d}"))

    if csv_path:
        with open(csv_path, "w", newline="") as f:
            f.write(report.to_csv())
        summary_path = (csv_path[:-4] if csv_path.endswith(".csv") else csv_path) \
            + ".summary.json"
        with open(summary_path, "w") as f:
            f.write(report.summary_json())
        written = [csv_path, summary_path]
        if not no_figures:
            written += save_report_figures(report, csv_path)
        for p in written:
            click.echo(f"wrote {p}")
    click.echo(report.summary_json(), nl=False)


@main.command()
@click.argument("scenario_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--tick", type=int, default=0, show_default=True,
              help="Trajectory index to render.")
@click.option("--out", "out_prefix", default="frame",
              help="Output prefix for the .rgb.ppm/.depth.pgm/.mask.pgm triple.")
def render(scenario_path, tick, out_prefix):
    """Render the ground-truth world at one trajectory tick."""
    from .harness import synthesize_rw

    scenario = _load(scenario_path)
    if not 0 <= tick < len(scenario.trajectory):
        click.echo(f"tick {tick} outside trajectory of length "
                   f"{len(scenario.trajectory)}", err=True)
        sys.exit(2)
    frame = synthesize_rw(scenario, tick)
    paths = write_frame(frame, out_prefix)
    for p in paths.values():
        click.echo(f"wrote {p}")


@main.command()
@click.option("--socket", "socket_path", required=True,
              type=click.Path(dir_okay=False),
              help="Unix socket path to listen on.")
@click.option("--scenario", "scenario_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Scenario providing the map and library (default: built-in desk).")
@click.option("--frame-dir", default=None, type=click.Path(file_okay=False),
              help="Directory for file-mode snapshot output.")
def serve(socket_path, scenario_path, frame_dir):
    """Serve the artificial-world command protocol until interrupted."""
    if scenario_path:
        scenario = _load(scenario_path)
        semantic_map, library = scenario.semantic_map, scenario.library
        intrinsics, camera = scenario.intrinsics, scenario.trajectory[0]
    else:
        semantic_map, library = fixtures.desk_map(), fixtures.desk_library()
        intrinsics = fixtures.desk_intrinsics()
        camera = fixtures.orbit_trajectory(1)[0]
    world = WorldState(semantic_map, library, camera_pose=camera,
                       intrinsics=intrinsics)
    server = WorldServer(world, socket_path, frame_dir=frame_dir)

    def _stop(signum, _frame):
        server.stop()

    signal.signal(signal.SIGTERM, _stop)
    signal.signal(signal.SIGINT, _stop)
    server.start()
    click.echo(f"serving on {socket_path}")
    server.serve_forever()


def _parse_roi(text):
    try:
        x, y, w, h = (int(v) for v in text.split(","))
        if w <= 0 or h <= 0:
            raise ValueError
        return x, y, w, h
    except ValueError:
        raise click.BadParameter("expected X,Y,W,H with positive size")


@main.command()
@click.argument("frame_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("frame_b", type=click.Path(exists=True, dir_okay=False))
@click.option("--roi", default=None,
              help="Pixel rectangle X,Y,W,H (default: whole image).")
@click.option("--bins", type=int, default=8, show_default=True,
              help="Histogram bins per color channel.")
def compare(frame_a, frame_b, roi, bins):
    """Histogram distance between two PPM images over a shared region."""
    images = [read_ppm(frame_a), read_ppm(frame_b)]
    binning = HistogramBinning(bins_per_channel=bins)
    hists = []
    for img in images:
        if roi:
            x, y, w, h = _parse_roi(roi)
            img = img[y:y + h, x:x + w]
            if img.size == 0:
                click.echo("ROI lies outside the image", err=True)
                sys.exit(2)
        chan = img.reshape(-1, 3).astype(np.int64) * bins // 256
        flat = (chan[:, 0] * bins + chan[:, 1]) * bins + chan[:, 2]
        hists.append(Histogram(np.bincount(flat, minlength=binning.total_bins),
                               binning))
    d = histogram_distance(hists[0], hists[1])
    click.echo(json.dumps({"distance": d}))


if __name__ == "__main__":
    main()
