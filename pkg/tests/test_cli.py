import json

import numpy as np
import pytest

from gwkit import (
    Mask,
    RasterImage,
    SolverConfig,
    gw_solve,
    load_feature_batch,
    load_image,
    load_matrix,
    save_image,
    save_mask,
    save_residual,
)
from gwkit.cli import EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK, EXIT_PARTIAL, main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    payload = json.loads(captured.out) if captured.out.strip() else None
    return code, payload, captured.err


@pytest.fixture
def two_point_csvs(tmp_path):
    (tmp_path / "x.csv").write_text("0\n1\n")
    (tmp_path / "y.csv").write_text("0\n2\n")
    return tmp_path / "x.csv", tmp_path / "y.csv"


# --- gw ---


def test_gw_two_point_fixture(capsys, two_point_csvs, tmp_path):
    x, y = two_point_csvs
    out = tmp_path / "plan.csv"
    code, payload, _ = run(
        capsys, "gw", "--x", str(x), "--y", str(y), "--epsilon", "0.01", "--out", str(out)
    )
    assert code == EXIT_OK
    assert payload["schema_version"] == 1
    assert payload["converged"] is True
    assert abs(payload["transport_cost"] - 0.5) <= 5e-2
    np.testing.assert_allclose(load_matrix(out), payload["coupling"], atol=1e-12)


def test_gw_cli_matches_library(capsys, two_point_csvs):
    x, y = two_point_csvs
    code, payload, _ = run(capsys, "gw", "--x", str(x), "--y", str(y), "--epsilon", "0.01")
    library = gw_solve(
        load_feature_batch(x), load_feature_batch(y), cfg=SolverConfig(epsilon=0.01)
    )
    assert code == EXIT_OK
    assert payload["transport_cost"] == pytest.approx(library.transport_cost, rel=1e-12)
    assert payload["outer_iterations"] == library.outer_iterations


# --- sinkhorn ---


def test_sinkhorn_solve_and_exit_codes(capsys, tmp_path):
    cost = tmp_path / "cost.csv"
    cost.write_text("0,1\n1,0\n")
    code, payload, _ = run(capsys, "sinkhorn", "--cost", str(cost), "--epsilon", "10")
    assert code == EXIT_OK
    assert payload["converged"] is True
    np.testing.assert_allclose(
        payload["coupling"],
        [[0.26248959373947, 0.23751040626053], [0.23751040626053, 0.26248959373947]],
        atol=1e-9,
    )
    # starved iteration budget reports numerical failure
    lopsided = cost.parent / "lopsided.csv"
    lopsided.write_text("0,3\n1,0\n")
    code, payload, _ = run(
        capsys,
        "sinkhorn",
        "--cost",
        str(lopsided),
        "--epsilon",
        "1",
        "--max-sinkhorn",
        "1",
        "--tol",
        "1e-14",
    )
    assert code == EXIT_NUMERICAL
    assert payload["converged"] is False


def test_sinkhorn_forced_standard_underflow_exit(capsys, tmp_path):
    cost = tmp_path / "cost.csv"
    cost.write_text("800,801\n0,1\n")
    code, payload, err = run(
        capsys, "sinkhorn", "--cost", str(cost), "--epsilon", "1", "--log-domain", "off"
    )
    assert code == EXIT_NUMERICAL
    assert payload is None
    assert "log-domain" in err


# --- face search / blend ---


SQUARE = {
    "right_eye": [0.0, 0.0],
    "left_eye": [2.0, 0.0],
    "mouth_left": [2.0, 2.0],
    "mouth_right": [0.0, 2.0],
    "nose": [1.0, 1.0],
}


def test_face_search(capsys, tmp_path):
    (tmp_path / "q.json").write_text(json.dumps({"frame_id": "q", **SQUARE}))
    entries = []
    for i, shift in enumerate((0.4, 0.1, 0.9)):
        pts = dict(SQUARE)
        pts["nose"] = [1.0 + shift, 1.0]
        entries.append({"frame_id": f"f{i}", **pts})
    (tmp_path / "db.json").write_text(json.dumps(entries))
    code, payload, _ = run(
        capsys,
        "face-search",
        "--query",
        str(tmp_path / "q.json"),
        "--database",
        str(tmp_path / "db.json"),
        "--top-m",
        "2",
    )
    assert code == EXIT_OK
    assert [m["frame_id"] for m in payload["matches"]] == ["f1", "f0"]
    assert payload["incomplete"] is False


def test_face_blend_identity(capsys, tmp_path):
    rng = np.random.default_rng(80)
    generated = RasterImage(rng.integers(0, 256, (6, 6, 3)).astype(np.uint8))
    candidate = RasterImage(rng.integers(0, 256, (6, 6, 3)).astype(np.uint8))
    save_image(generated, tmp_path / "g.png")
    save_image(candidate, tmp_path / "c.png")
    code, payload, _ = run(
        capsys,
        "face-blend",
        "--generated",
        str(tmp_path / "g.png"),
        "--candidates",
        str(tmp_path / "c.png"),
        "--alpha",
        "0",
        "--beta",
        "1",
        "--lambdas",
        "1.0",
        "--out",
        str(tmp_path / "o.png"),
    )
    assert code == EXIT_OK and payload["clamped"] == 0
    np.testing.assert_array_equal(
        load_image(tmp_path / "o.png").pixels, generated.pixels
    )


# --- compose / fuse / metrics ---


def test_compose_residual(capsys, tmp_path):
    frame = RasterImage(np.full((8, 8, 3), 100, dtype=np.uint8))
    save_image(frame, tmp_path / "f.png")
    save_residual(np.full((4, 4, 3), -30, dtype=np.int16), tmp_path / "r.png")
    (tmp_path / "crops.json").write_text(json.dumps({
        "frame_id": "f1",
        "parts": [{"index": 2, "x": 2, "y": 2, "w": 4, "h": 4}],
    }))
    code, payload, _ = run(
        capsys,
        "compose",
        "--frame",
        str(tmp_path / "f.png"),
        "--crops",
        str(tmp_path / "crops.json"),
        "--residual",
        f"2={tmp_path / 'r.png'}",
        "--out",
        str(tmp_path / "o.png"),
    )
    assert code == EXIT_OK
    assert payload["parts"] == [2] and payload["clamp_counts"]["residual_2"] == 0
    out = load_image(tmp_path / "o.png").pixels
    assert np.all(out[2:6, 2:6] == 70) and out[0, 0, 0] == 100


def test_fuse_ones_mask_bit_exact(capsys, tmp_path):
    rng = np.random.default_rng(81)
    fg = RasterImage(rng.integers(0, 256, (8, 8, 3)).astype(np.uint8))
    bg = RasterImage(rng.integers(0, 256, (8, 8, 3)).astype(np.uint8))
    save_image(fg, tmp_path / "f.png")
    save_image(bg, tmp_path / "b.png")
    save_mask(Mask(np.ones((8, 8), np.uint8)), tmp_path / "ones.png")
    code, payload, _ = run(
        capsys,
        "fuse",
        "--fg",
        str(tmp_path / "f.png"),
        "--bg",
        str(tmp_path / "b.png"),
        "--mask",
        str(tmp_path / "ones.png"),
        "--out",
        str(tmp_path / "o.png"),
    )
    assert code == EXIT_OK
    np.testing.assert_array_equal(load_image(tmp_path / "o.png").pixels, fg.pixels)


def test_metrics_identical_images(capsys, tmp_path):
    rng = np.random.default_rng(82)
    image = RasterImage(rng.integers(0, 256, (16, 16, 3)).astype(np.uint8))
    save_image(image, tmp_path / "a.png")
    code, payload, _ = run(
        capsys, "metrics", "--ref", str(tmp_path / "a.png"), "--test", str(tmp_path / "a.png")
    )
    assert code == EXIT_OK
    assert payload == {"schema_version": 1, "ssim": 1.0, "psnr": "inf"}


def test_metrics_twelve_significant_digits(capsys, tmp_path):
    rng = np.random.default_rng(83)
    a = rng.integers(0, 224, (16, 16, 3)).astype(np.uint8)
    save_image(RasterImage(a), tmp_path / "a.png")
    save_image(RasterImage((a + 16).astype(np.uint8)), tmp_path / "b.png")
    code = main(
        ["metrics", "--ref", str(tmp_path / "a.png"), "--test", str(tmp_path / "b.png")]
    )
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert '"psnr": 24.0484039556' in out


# --- loss ---


def test_loss_command(capsys, tmp_path):
    scores = tmp_path / "scores.csv"
    scores.write_text(
        "spatial,,0.5,0.5\n"
        "temporal,,0.5,0.5\n"
        + "".join(f"local,{p},0.5,0.5\n" for p in range(1, 6))
    )
    code, payload, _ = run(capsys, "loss", "--scores", str(scores))
    assert code == EXIT_OK
    assert payload["spatial"] == pytest.approx(-1.3862943611198906)
    assert payload["temporal"] == pytest.approx(-1.3862943611198906)
    assert payload["local_refinement"] == pytest.approx(-6.931471805599453)
    assert payload["combined"] == pytest.approx(-1.3862943611198906 * 2 - 6.931471805599453)
    code, payload, _ = run(
        capsys,
        "loss",
        "--scores",
        str(scores),
        "--gw-value",
        "0.125",
        "--w-spatial",
        "0",
        "--w-temporal",
        "0",
        "--w-local",
        "0",
    )
    assert payload["combined"] == pytest.approx(0.125)


# --- pipeline ---


def test_pipeline_partial_failure_exit(capsys, tmp_path):
    rng = np.random.default_rng(84)
    fg = RasterImage(rng.integers(0, 256, (8, 8, 3)).astype(np.uint8))
    bg = RasterImage(rng.integers(0, 256, (8, 8, 3)).astype(np.uint8))
    save_image(fg, tmp_path / "fg.png")
    save_image(bg, tmp_path / "bg.png")
    save_mask(Mask(np.ones((8, 8), np.uint8)), tmp_path / "mask.png")
    good = {"frame_id": "good", "foreground": "fg.png", "background": "bg.png", "mask": "mask.png"}
    bad = dict(good, frame_id="bad", mask="absent.png")
    (tmp_path / "manifest.json").write_text(json.dumps([good, bad]))
    code, payload, err = run(
        capsys,
        "pipeline",
        "--manifest",
        str(tmp_path / "manifest.json"),
        "--out-dir",
        str(tmp_path / "out"),
    )
    assert code == EXIT_PARTIAL
    assert payload["n_failed"] == 1
    assert (tmp_path / "out" / "good.png").is_file()
    assert (tmp_path / "out" / "report.json").is_file()
    np.testing.assert_array_equal(
        load_image(tmp_path / "out" / "good.png").pixels, fg.pixels
    )


# --- config and error handling ---


def test_unknown_flag_exits_one(capsys):
    code = main(["gw", "--bogus"])
    err = capsys.readouterr().err
    assert code == EXIT_INPUT
    assert "usage" in err


def test_no_subcommand_exits_one(capsys):
    assert main([]) == EXIT_INPUT


def test_missing_file_exits_one(capsys, tmp_path):
    code = main(["gw", "--x", str(tmp_path / "nope.csv"), "--y", str(tmp_path / "nope.csv")])
    err = capsys.readouterr().err
    assert code == EXIT_INPUT
    assert "not found" in err


def test_config_file_precedence(capsys, tmp_path, monkeypatch):
    cost = tmp_path / "cost.csv"
    cost.write_text("0,1\n1,0\n")
    config = tmp_path / "gwkit.conf"
    config.write_text("# defaults\nepsilon = 10\nmax_sinkhorn = 500\n")

    code, from_file, _ = run(
        capsys, "--config", str(config), "sinkhorn", "--cost", str(cost)
    )
    assert code == EXIT_OK and from_file["epsilon"] == 10.0

    # flag overrides file
    code, flagged, _ = run(
        capsys, "--config", str(config), "sinkhorn", "--cost", str(cost), "--epsilon", "5"
    )
    assert flagged["epsilon"] == 5.0

    # GWKIT_CONFIG supplies the default config path
    monkeypatch.setenv("GWKIT_CONFIG", str(config))
    code, from_env, _ = run(capsys, "sinkhorn", "--cost", str(cost))
    assert from_env["epsilon"] == 10.0
    monkeypatch.delenv("GWKIT_CONFIG")

    bad = tmp_path / "bad.conf"
    bad.write_text("nonsense\n")
    code = main(["--config", str(bad), "sinkhorn", "--cost", str(cost)])
    capsys.readouterr()
    assert code == EXIT_INPUT


def test_config_rejects_unknown_keys(capsys, tmp_path):
    cost = tmp_path / "cost.csv"
    cost.write_text("0,1\n1,0\n")
    config = tmp_path / "gwkit.conf"
    config.write_text("mystery = 1\n")
    code = main(["--config", str(config), "sinkhorn", "--cost", str(cost)])
    err = capsys.readouterr().err
    assert code == EXIT_INPUT
    assert "mystery" in err
