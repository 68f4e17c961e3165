import json
import shutil

import numpy as np
import pytest

from orthovis import files
from orthovis.cli import iou, main
from orthovis.fit import silhouette_distance

SYNTH = ["synth", "--teeth-per-jaw", "4", "--size", "96", "--subdivisions", "3", "--seed", "2"]


@pytest.fixture(scope="module")
def case_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("case")
    assert main(SYNTH + ["--out", str(d)]) == 0
    return d


def fit_args(case_dir, out, *extra):
    return ["fit", "--case", str(case_dir), "--size", "96", "--out", str(out), *extra]


def test_synth_writes_case(case_dir):
    names = {p.name for p in case_dir.iterdir()}
    assert {"series", "target.png", "mouth_label.png", "true_pose.json", "initial_pose.json"} <= names
    assert sorted(p.name for p in (case_dir / "series").iterdir()) == ["stage_000.obj", "stage_001.obj"]


def test_synth_is_deterministic(case_dir, tmp_path):
    assert main(SYNTH + ["--out", str(tmp_path)]) == 0
    for name in ("target.png", "mouth_label.png", "true_pose.json", "series/stage_001.obj"):
        assert (tmp_path / name).read_bytes() == (case_dir / name).read_bytes()


def test_fit_from_truth_converges(case_dir, tmp_path):
    rc = main(fit_args(case_dir, tmp_path, "--initial-pose", str(case_dir / "true_pose.json")))
    assert rc == 0
    d = json.loads((tmp_path / "fit.json").read_text())
    assert d["converged"] is True and d["iterations_run"] == 1
    assert len(d["loss_trace"]) == 1
    overlay = files.read_rgb(tmp_path / "overlay.png")
    assert overlay.shape == (96, 96, 3)
    target = files.read_gray(case_dir / "target.png")
    assert np.array_equal(overlay[..., 0], target)
    assert np.array_equal(overlay[..., 1], target)


def test_fit_single_iteration(case_dir, tmp_path):
    assert main(fit_args(case_dir, tmp_path, "--max-iterations", "1")) == 1
    d = json.loads((tmp_path / "fit.json").read_text())
    assert d["iterations_run"] == 1 and d["converged"] is False
    assert main(fit_args(case_dir, tmp_path, "--max-iterations", "1", "--allow-nonconverged",
                         "--no-trace")) == 0
    assert "loss_trace" not in json.loads((tmp_path / "fit.json").read_text())


def test_fit_missing_target(case_dir, tmp_path, capsys):
    missing = tmp_path / "nope.png"
    rc = main(fit_args(case_dir, tmp_path, "--target", str(missing)))
    assert rc != 0
    assert str(missing) in capsys.readouterr().err


def test_fit_size_mismatch(case_dir, tmp_path, capsys):
    rc = main(["fit", "--case", str(case_dir), "--size", "128", "--out", str(tmp_path)])
    assert rc != 0 and "--size" in capsys.readouterr().err


def test_config_file_and_override(case_dir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("max-iterations = 2\nallow_nonconverged = on\nsize = 96\n")
    assert main(["fit", "--case", str(case_dir), "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "fit.json").read_text())["iterations_run"] == 2
    assert main(["fit", "--case", str(case_dir), "--config", str(cfg), "--max-iterations", "3",
                 "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "fit.json").read_text())["iterations_run"] == 3
    cfg.write_text("[pipeline]\nmax_iterations = 1\nallow-nonconverged = on\nsize = 96\n")
    assert main(["fit", "--case", str(case_dir), "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "fit.json").read_text())["iterations_run"] == 1
    cfg.write_text("bogus = 1\n")
    assert main(["fit", "--case", str(case_dir), "--config", str(cfg)]) != 0


def test_render_writes_six_files_matching_target(case_dir, tmp_path):
    out = tmp_path / "render"
    rc = main(["render", "--case", str(case_dir), "--pose", str(case_dir / "true_pose.json"),
               "--size", "96", "--out", str(out)])
    assert rc == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted(f"stage_{i}_{k}.png" for i in (0, 1) for k in ("silhouette", "mask", "depth"))
    label = files.read_mask(case_dir / "mouth_label.png")
    s0 = files.read_gray(out / "stage_0_silhouette.png")
    assert silhouette_distance(s0, files.read_gray(case_dir / "target.png"), label) < 1e-3
    depth = files.read_gray(out / "stage_0_depth.png")
    assert np.array_equal(files.read_mask(out / "stage_0_mask.png") != 0, depth > 0)
    out2 = tmp_path / "again"
    main(["render", "--case", str(case_dir), "--pose", str(case_dir / "true_pose.json"),
          "--size", "96", "--out", str(out2)])
    for p in out.iterdir():
        assert p.read_bytes() == (out2 / p.name).read_bytes()


def test_render_surfaces_loader_error(case_dir, tmp_path, capsys):
    series = tmp_path / "series"
    shutil.copytree(case_dir / "series", series)
    text = (series / "stage_001.obj").read_text().replace("o tooth_11", "o tooth_18")
    (series / "stage_001.obj").write_text(text)
    rc = main(["render", "--series", str(series), "--pose", str(case_dir / "true_pose.json"),
               "--mouth-label", str(case_dir / "mouth_label.png"), "--size", "96",
               "--out", str(tmp_path / "r")])
    assert rc != 0 and "tooth set mismatch" in capsys.readouterr().err


@pytest.fixture
def composite_inputs(tmp_path, rng):
    face = rng.integers(0, 256, (60, 80, 3)) / 255.0
    files.write_rgb(tmp_path / "face.png", face)
    files.write_json(tmp_path / "rect.json", {"x0": 30, "y0": 10, "side": 32})
    label = np.zeros((32, 32))
    label[8:24, 4:28] = 1
    files.write_mask(tmp_path / "label.png", label)
    return tmp_path, face, label


def composite(d, generated, *extra):
    return main(["composite", "--face", str(d / "face.png"), "--rect", str(d / "rect.json"),
                 "--mouth-label", str(d / "label.png"), "--generated", str(generated),
                 "--out", str(d / "out"), *extra])


def test_composite_identity(composite_inputs):
    d, face, _ = composite_inputs
    files.write_rgb(d / "gen.png", face[10:42, 30:62])
    assert composite(d, d / "gen.png", "--color-transfer", "off") == 0
    assert np.array_equal(files.read_rgb(d / "out" / "result.png"), face)


def test_composite_zero_mask(composite_inputs, rng):
    d, face, _ = composite_inputs
    files.write_mask(d / "label.png", np.zeros((32, 32)))
    files.write_rgb(d / "gen.png", rng.uniform(size=(32, 32, 3)))
    assert composite(d, d / "gen.png") == 0
    assert np.array_equal(files.read_rgb(d / "out" / "result.png"), face)


def test_composite_random_outside_untouched(composite_inputs, rng):
    d, face, label = composite_inputs
    files.write_rgb(d / "gen.png", rng.uniform(size=(32, 32, 3)))
    teeth = np.zeros((32, 32))
    teeth[10:20, 6:26] = 1
    files.write_mask(d / "teeth.png", teeth)
    assert composite(d, d / "gen.png", "--teeth-mask", str(d / "teeth.png"),
                     "--generated-teeth-mask", str(d / "teeth.png")) == 0
    out = files.read_rgb(d / "out" / "result.png")
    outside = np.ones((60, 80), bool)
    outside[10:42, 30:62] = False
    assert np.array_equal(out[outside], face[outside])
    crop_outside_label = np.zeros((60, 80), bool)
    crop_outside_label[10:42, 30:62] = label == 0
    assert np.array_equal(out[crop_outside_label], face[crop_outside_label])


def test_composite_size_mismatch(composite_inputs, capsys):
    d, face, _ = composite_inputs
    files.write_rgb(d / "gen.png", face[:20, :20])
    assert composite(d, d / "gen.png") != 0
    assert "must match" in capsys.readouterr().err


def _strips(tmp_path):
    a = np.zeros((30, 30))
    b = np.zeros((30, 30))
    a[:, 5:15] = 1
    b[:, 10:20] = 1
    files.write_gray(tmp_path / "a.png", a)
    files.write_gray(tmp_path / "b.png", b)
    return a, b


def test_metrics(tmp_path, capsys):
    a, b = _strips(tmp_path)
    out = tmp_path / "m.json"
    assert main(["metrics", "--a", str(tmp_path / "a.png"), "--b", str(tmp_path / "a.png"),
                 "--out", str(out)]) == 0
    m = json.loads(out.read_text())
    assert m == {"silhouette_distance": 0.0, "iou": 1.0}
    assert "iou 1" in capsys.readouterr().out
    main(["metrics", "--a", str(tmp_path / "a.png"), "--b", str(tmp_path / "b.png"), "--out", str(out)])
    # 10-px strips overlapping by 5 columns: 5 / 15 of the union.
    assert json.loads(out.read_text())["iou"] == pytest.approx(150 / 450)


def test_iou_cases():
    a = np.zeros((10, 10))
    b = np.zeros((10, 10))
    a[:5] = 1
    b[5:] = 1
    assert iou(a, b) == 0.0
    assert iou(a, a) == 1.0
    assert iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0


def test_metrics_size_mismatch(tmp_path):
    _strips(tmp_path)
    files.write_gray(tmp_path / "c.png", np.zeros((10, 10)))
    assert main(["metrics", "--a", str(tmp_path / "a.png"), "--b", str(tmp_path / "c.png"),
                 "--out", str(tmp_path / "m.json")]) != 0


def test_case_outputs_default_inside_case(case_dir):
    assert main(["fit", "--case", str(case_dir), "--size", "96", "--max-iterations", "1",
                 "--allow-nonconverged"]) == 0
    assert main(["render", "--case", str(case_dir), "--size", "96"]) == 0
    assert (case_dir / "fit" / "fit.json").is_file()
    assert (case_dir / "render" / "stage_1_depth.png").is_file()


def test_size_flag_validated():
    with pytest.raises(SystemExit):
        main(["fit", "--size", "32"])
