import shutil
from pathlib import Path

import pytest

from tubempc_plots.common import FigureSpec, PlotError
from tubempc_plots.scaling import main as scaling_main
from tubempc_plots.scaling import plot_scaling
from tubempc_plots.timings import main as timings_main
from tubempc_plots.timings import plot_timings
from tubempc_plots.trajectory import main as trajectory_main
from tubempc_plots.trajectory import plot_trajectory

SAMPLES = Path(__file__).resolve().parents[1] / "sample_data"


def test_figure_spec_validation():
    with pytest.raises(PlotError):
        FigureSpec(inputs=["a.csv"], kind="pie_chart", output="o.png")
    with pytest.raises(PlotError):
        FigureSpec(inputs=[], kind="trajectory", output="o.png")


def test_trajectory_from_sample(tmp_path):
    out = tmp_path / "traj.png"
    min_clear = plot_trajectory(SAMPLES / "trace.csv", SAMPLES / "trace_meta.json", out)
    assert out.exists() and out.stat().st_size > 0
    assert min_clear is not None and min_clear > 0.0


def test_trajectory_byte_stable(tmp_path):
    a = tmp_path / "a.png"
    b = tmp_path / "b.png"
    plot_trajectory(SAMPLES / "trace.csv", SAMPLES / "trace_meta.json", a)
    plot_trajectory(SAMPLES / "trace.csv", SAMPLES / "trace_meta.json", b)
    assert a.read_bytes() == b.read_bytes()


def test_timings_single_and_grouped(tmp_path):
    single = tmp_path / "single.png"
    plot_timings([SAMPLES / "metrics_zoro.json"], single)
    assert single.stat().st_size > 0
    grouped = tmp_path / "grouped.png"
    plot_timings([SAMPLES / "metrics_zoro.json", SAMPLES / "metrics_nominal.json"],
                 grouped, labels=["tube", "nominal"])
    assert grouped.stat().st_size > 0


def test_timings_byte_stable(tmp_path):
    a = tmp_path / "a.png"
    b = tmp_path / "b.png"
    args = [SAMPLES / "metrics_zoro.json", SAMPLES / "metrics_nominal.json"]
    plot_timings(args, a, labels=["tube", "nominal"])
    plot_timings(args, b, labels=["tube", "nominal"])
    assert a.read_bytes() == b.read_bytes()


def test_scaling_curve(tmp_path):
    out = tmp_path / "scaling.png"
    plot_scaling(SAMPLES / "scaling.csv", out)
    assert out.stat().st_size > 0


def test_missing_column_names_it(tmp_path):
    broken = tmp_path / "broken.csv"
    lines = (SAMPLES / "trace.csv").read_text().splitlines()
    header = lines[0].replace("x1", "y_position")
    broken.write_text("\n".join([header] + lines[1:]) + "\n")
    with pytest.raises(PlotError, match="x1"):
        plot_trajectory(broken, SAMPLES / "trace_meta.json", tmp_path / "o.png")
    assert not (tmp_path / "o.png").exists()


def test_empty_trace_no_file_written(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text((SAMPLES / "trace.csv").read_text().splitlines()[0] + "\n")
    out = tmp_path / "o.png"
    with pytest.raises(PlotError, match="no data rows"):
        plot_trajectory(empty, SAMPLES / "trace_meta.json", out)
    assert not out.exists()


def test_cli_entry_points(tmp_path):
    out = tmp_path / "t.png"
    rc = trajectory_main(["--in", str(SAMPLES / "trace.csv"),
                          "--meta", str(SAMPLES / "trace_meta.json"),
                          "--out", str(out)])
    assert rc == 0 and out.exists()
    rc = timings_main(["--in", str(SAMPLES / "metrics_zoro.json"),
                       "--out", str(tmp_path / "w.png")])
    assert rc == 0
    rc = scaling_main(["--in", str(SAMPLES / "scaling.csv"),
                       "--out", str(tmp_path / "s.png")])
    assert rc == 0
    # bad input exits nonzero and reports the problem
    rc = trajectory_main(["--in", str(tmp_path / "missing.csv"),
                          "--meta", str(SAMPLES / "trace_meta.json"),
                          "--out", str(tmp_path / "x.png")])
    assert rc == 2
