import csv
import io
import json
import os
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from nearfield_osm import runner, synth
from nearfield_osm.runner import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_VALIDATION, main


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def rect_config(**over):
    doc = {
        "version": 1,
        "name": "rect",
        "scenarios": [{"preset": "rectangle-2d", "grid": {"ranges": [[-2, 2], [-2, 2]], "resolution": [24, 24]}}],
        "wavenumbers": [16],
        "n_waves": [32],
        "noise": {"delta": 0.2, "seed": 0},
    }
    doc.update(over)
    return doc


def small_3d_config(**over):
    doc = {
        "version": 1,
        "name": "small3d",
        "scenario": {
            "preset": "sphere-lshape-3d",
            "grid": {"ranges": [[-1.5, 1.5]] * 3, "resolution": [10, 10, 10]},
        },
        "wavenumbers": [6],
        "n_waves": [4, 8],
        "noise": {"delta": [0.2], "seed": 1},
        "quadrature": {"cells_per_wavelength": 6},
        "sweep_axis": "N",
    }
    doc.update(over)
    return doc


def summary(path):
    return list(csv.DictReader(path.open()))


def png_provenance(path):
    return json.loads(Image.open(path).text["provenance"])


# --- configuration and exit codes ----------------------------------------------


@pytest.mark.parametrize("name", runner.preset_names())
def test_presets_load(name):
    cfg = runner.load_config(name)
    assert cfg.name == name and cfg.scenarios


@pytest.mark.parametrize(
    "change",
    [
        {"wavenumbers": [65]},
        {"wavenumbers": [0]},
        {"n_waves": [1025]},
        {"noise": {"delta": -0.1}},
        {"powers": [0]},
        {"version": 2},
        {"scenarios": []},
        {"probe_sets": {"bad": [[1, 1, 0]]}},
        {"quadrature": {"cells_per_wavelength": 4}},
        {"validation": ["no_such_check"]},
        {"sweep_axis": "colour"},
        {"scenarios": [{"preset": "rectangle-2d", "grid": {"ranges": [[-2, 2], [-2, 2]], "resolution": [129, 10]}}]},
        {"scenarios": [{"file": "missing.json"}]},
    ],
)
def test_invalid_config_exit_code(tmp_path, change, capsys):
    path = write_config(tmp_path, rect_config(**change))
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_grid_limit_3d(tmp_path):
    doc = small_3d_config()
    doc["scenario"]["grid"]["resolution"] = [65, 10, 10]
    assert main(["simulate", "--config", write_config(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_missing_config_is_io_error(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_IO


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    path = write_config(tmp_path, rect_config())
    assert main(["simulate", "--config", path, "--out", str(blocker / "sub")]) == EXIT_IO


def test_scenario_file_reference(tmp_path):
    (tmp_path / "scene.json").write_text(json.dumps({"preset": "rectangle-2d", "k": 8}))
    cfg = runner.load_config(write_config(tmp_path, {"version": 1, "scenarios": [{"file": "scene.json"}]}))
    assert cfg.scenarios[0].k == 8.0 and cfg.all_wavenumbers() == (8.0,)


# --- simulate ------------------------------------------------------------------


def test_simulate_writes_clean_and_noisy(tmp_path):
    path = write_config(tmp_path, rect_config())
    out = tmp_path / "out"
    assert main(["simulate", "--config", path, "--out", str(out)]) == EXIT_OK
    files = sorted(p.name for p in (out / "data").iterdir())
    assert files == ["rectangle-2d_k16_N32_clean.nfcd", "rectangle-2d_k16_N32_d0.2_s0.nfcd"]
    noisy = synth.load(out / "data" / files[1])
    clean = synth.load(out / "data" / files[0])
    assert noisy.field.shape == (32, 64)
    rel = np.linalg.norm(noisy.field - clean.field) / np.linalg.norm(clean.field)
    assert rel == pytest.approx(0.2, abs=1e-12)
    prov = noisy.meta["provenance"]
    assert prov["seed"] == 0 and len(prov["config_sha256"]) == 64
    assert noisy.meta["noise"]["rng"] == "numpy.random.PCG64"
    assert noisy.meta["scenario"]["k"] == 16.0


def test_simulate_zero_noise_only_clean(tmp_path):
    path = write_config(tmp_path, rect_config(noise={"delta": 0}))
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_OK
    assert [p.name for p in (tmp_path / "o" / "data").iterdir()] == ["rectangle-2d_k16_N32_clean.nfcd"]


def test_simulate_rerun_is_byte_identical(tmp_path):
    path = write_config(tmp_path, rect_config())
    for d in ("a", "b"):
        assert main(["simulate", "--config", path, "--out", str(tmp_path / d), "--threads", "2"]) == 0
    for p in (tmp_path / "a" / "data").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / "data" / p.name).read_bytes()


def test_seed_override(tmp_path):
    path = write_config(tmp_path, rect_config())
    assert main(["simulate", "--config", path, "--out", str(tmp_path), "--seed", "9"]) == 0
    noisy = synth.load(tmp_path / "data" / "rectangle-2d_k16_N32_d0.2_s9.nfcd")
    assert noisy.meta["noise"]["seed"] == 9 and noisy.meta["provenance"]["seed"] == 9


def test_threads_from_environment(monkeypatch, tmp_path):
    from nearfield_osm import _parallel

    monkeypatch.setenv(_parallel.THREADS_ENV, "3")
    assert _parallel.resolve_threads(None) == 3
    assert _parallel.resolve_threads(2) == 2
    assert _parallel.resolve_threads(0) == (os.cpu_count() or 1)
    monkeypatch.delenv(_parallel.THREADS_ENV)
    assert _parallel.resolve_threads(None) == 1


# --- image ---------------------------------------------------------------------


def test_image_from_data_files_matches_direct(tmp_path):
    path = write_config(tmp_path, rect_config())
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "sim")]) == 0
    assert main(["image", "--config", path, "--out", str(tmp_path / "a"), "--data", str(tmp_path / "sim" / "data")]) == 0
    assert main(["image", "--config", path, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "images" / "rectangle-2d_k16_N32_d0.2_p2.csv").read_bytes()
    assert a == (tmp_path / "b" / "images" / "rectangle-2d_k16_N32_d0.2_p2.csv").read_bytes()


def test_image_rejects_mismatched_data(tmp_path):
    path = write_config(tmp_path, rect_config())
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "sim")]) == 0
    other = write_config(tmp_path, rect_config(n_waves=[32], scenarios=[{"preset": "rectangle-2d", "surface": {"radius": 3.0, "points": 32}}]), "o.json")
    rc = main(["image", "--config", other, "--out", str(tmp_path / "x"), "--data", str(tmp_path / "sim" / "data")])
    assert rc == EXIT_CONFIG


def test_fig1_preset_emits_heatmaps(tmp_path):
    out = tmp_path / "fig1"
    assert main(["image", "--config", "fig1-analog", "--out", str(out)]) == EXIT_OK
    pngs = sorted(p.name for p in (out / "images").glob("*.png"))
    for scene_name in ("kite-ellipse-2d", "rectangle-2d"):
        assert [p for p in pngs if p.startswith(scene_name)] == [
            f"{scene_name}_k16_N32_d0.02_p2.png",
            f"{scene_name}_k8_N32_d0.02_p2.png",
        ]
    img = Image.open(out / "images" / pngs[0])
    assert img.mode == "L" and img.size == (96, 96)
    assert np.asarray(img).max() == 255
    prov = png_provenance(out / "images" / pngs[0])
    assert prov["config_name"] == "fig1-analog" and prov["run"]["delta"] == 0.02
    rows = summary(out / "images" / "summary.csv")
    assert len(rows) == 4 and all(float(r["contrast_ratio"]) > 1 for r in rows)
    text = (out / "images" / pngs[0].replace(".png", ".csv")).read_text().splitlines()
    assert text[0].startswith("# provenance: ") and text[1] == "x,y,raw,normalized"
    assert max(float(r.split(",")[3]) for r in text[2:]) == 1.0


def test_3d_image_emits_slices_and_masks(tmp_path):
    path = write_config(tmp_path, small_3d_config())
    out = tmp_path / "o"
    assert main(["image", "--config", path, "--out", str(out)]) == EXIT_OK
    names = sorted(p.name for p in (out / "images").iterdir())
    assert names == sorted(
        [f"sphere-lshape-3d_k6_N{n}_d0.2_p2_standard{s}" for n in (4, 8) for s in (".csv", "_mask.npz", "_x2slice.png")]
        + ["summary.csv"]
    )
    with np.load(out / "images" / "sphere-lshape-3d_k6_N8_d0.2_p2_standard_mask.npz") as z:
        assert z["mask"].shape == (10, 10, 10) and z["mask"].any()
        assert json.loads(str(z["provenance"]))["seed"] == 1
    img = Image.open(out / "images" / "sphere-lshape-3d_k6_N8_d0.2_p2_standard_x2slice.png")
    assert img.size == (10, 10)


# --- sweep ---------------------------------------------------------------------


def test_p_sweep_three_heatmaps(tmp_path):
    path = write_config(tmp_path, rect_config(powers=[1, 2, 4], sweep_axis="p"))
    out = tmp_path / "o"
    assert main(["sweep", "--config", path, "--out", str(out)]) == EXIT_OK
    pngs = sorted(p.name for p in (out / "sweep_p").glob("*.png"))
    assert pngs == [f"rectangle-2d_k16_N32_d0.2_p{p}.png" for p in (1, 2, 4)]
    rows = summary(out / "sweep_p" / "summary.csv")
    assert [r["value"] for r in rows] == ["1", "2", "4"] and {r["axis"] for r in rows} == {"p"}


def test_sweep_axis_from_flag_and_probe_sweep(tmp_path):
    doc = small_3d_config(
        n_waves=[4],
        probe_sets={"m1": [[0, 1, 0]], "m3": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]},
    )
    out = tmp_path / "o"
    assert main(["sweep", "--config", write_config(tmp_path, doc), "--out", str(out), "--axis", "probes"]) == 0
    rows = summary(out / "sweep_probes" / "summary.csv")
    assert [r["value"] for r in rows] == ["m1", "m3"]


def test_sweep_needs_single_values_elsewhere(tmp_path):
    path = write_config(tmp_path, rect_config(powers=[1, 2], wavenumbers=[8, 16]))
    assert main(["sweep", "--config", path, "--out", str(tmp_path), "--axis", "p"]) == EXIT_CONFIG
    assert main(["sweep", "--config", path, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_sweep_rerun_identical(tmp_path):
    path = write_config(tmp_path, small_3d_config())
    for d in ("a", "b"):
        assert main(["sweep", "--config", path, "--out", str(tmp_path / d)]) == 0
    for p in (tmp_path / "a" / "sweep_N").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / "sweep_N" / p.name).read_bytes()


# --- validate ------------------------------------------------------------------


def test_validate_report(tmp_path, capsys):
    doc = {"version": 1, "scenarios": [{"preset": "rectangle-2d"}], "validation": ["kernel_limits", "green_identity_2d"]}
    out = tmp_path / "v"
    assert main(["validate", "--config", write_config(tmp_path, doc), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "validation_report.json").read_text())
    assert rep["passed"] is True
    assert [c["name"] for c in rep["checks"]] == ["kernel_limits", "green_identity_2d"]
    assert "config_sha256" in rep["provenance"]
    assert capsys.readouterr().out.count("[PASS]") == 2


def test_validate_failure_exit_code(tmp_path):
    doc = {
        "version": 1,
        "scenarios": [{"preset": "rectangle-2d"}],
        "validation": {"green_identity_2d": {"n": 16, "tol": 1e-12}},
    }
    out = tmp_path / "v"
    assert main(["validate", "--config", write_config(tmp_path, doc), "--out", str(out)]) == EXIT_VALIDATION
    assert json.loads((out / "validation_report.json").read_text())["passed"] is False


def test_validate_bad_parameters(tmp_path):
    doc = {"version": 1, "scenarios": [{"preset": "rectangle-2d"}], "validation": {"kernel_limits": {"bogus": 1}}}
    assert main(["validate", "--config", write_config(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_CONFIG


# --- provenance and console script ----------------------------------------------


def test_digest_depends_on_config():
    a = runner.ExperimentConfig.from_dict(rect_config())
    b = runner.ExperimentConfig.from_dict(rect_config(wavenumbers=[8]))
    assert a.digest() == runner.ExperimentConfig.from_dict(rect_config()).digest()
    assert a.digest() != b.digest()
    assert a.with_seed(3).digest() != a.digest()


def test_atomic_write_leaves_no_temp_files(tmp_path):
    runner.atomic_write(tmp_path / "sub" / "f.bin", b"abc")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.bin"]
    assert (tmp_path / "sub" / "f.bin").read_bytes() == b"abc"


def test_console_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "nearfield_osm.runner", "simulate", "--config", str(tmp_path / "none.json")],
        capture_output=True,
        text=True,
    )
    assert res.returncode == EXIT_IO
    res = subprocess.run([sys.executable, "-m", "nearfield_osm.runner", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for verb in ("simulate", "image", "validate", "sweep"):
        assert verb in res.stdout


def test_csv_bytes_parse():
    from nearfield_osm import imaging
    from nearfield_osm.scene import SamplingGrid

    g = SamplingGrid(((0.0, 1.0), (0.0, 1.0)), (2, 2))
    f = imaging.normalize(imaging.IndicatorField(g.points, np.array([1.0, 2.0, 3.0, 4.0]), 2, g))
    raw = runner.csv_bytes(f, {"a": 1}).decode()
    body = io.StringIO(raw.split("\n", 1)[1])
    rows = list(csv.DictReader(body))
    assert [float(r["normalized"]) for r in rows] == [0.25, 0.5, 0.75, 1.0]
