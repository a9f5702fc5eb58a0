import json

import numpy as np
import pytest

from gwkit import Mask, RasterImage, save_image, save_mask, save_residual


def rgb(h, w, value=0):
    return RasterImage(np.full((h, w, 3), value, dtype=np.uint8))


def random_rgb(rng, h, w, low=0, high=256):
    return RasterImage(rng.integers(low, high, size=(h, w, 3)).astype(np.uint8))


@pytest.fixture
def golden_pipeline(tmp_path):
    """Three crafted frames with known candidates and residuals.

    Returns (manifest_path, expected) where expected maps frame ids to the
    final composed pixels, built by plain per-pixel arithmetic independent of
    the pipeline implementation.
    """
    rng = np.random.default_rng(20240817)
    size = 24
    face_rect = (4, 4, 8, 8)  # x, y, w, h
    hand_rect = (14, 13, 6, 5)
    alpha, beta, lambdas = 0.5, 0.5, (0.25, 0.75)

    root = tmp_path / "assets"
    face_dir = root / "faces"
    face_dir.mkdir(parents=True)

    database = []
    db_points = {
        "cand_a": {"right_eye": [0.0, 0.0], "left_eye": [2.0, 0.0],
                   "mouth_left": [2.0, 2.0], "mouth_right": [0.0, 2.0], "nose": [1.0, 1.0]},
        "cand_b": {"right_eye": [0.0, 0.0], "left_eye": [2.0, 0.2],
                   "mouth_left": [2.1, 2.0], "mouth_right": [0.0, 2.2], "nose": [1.0, 1.2]},
        "cand_c": {"right_eye": [0.0, 0.0], "left_eye": [1.0, 1.0],
                   "mouth_left": [2.5, 2.0], "mouth_right": [-0.5, 2.4], "nose": [1.3, 0.9]},
    }
    candidate_px = {}
    for name, pts in db_points.items():
        database.append({"frame_id": name, **pts})
        px = rng.integers(0, 256, size=(face_rect[3], face_rect[2], 3)).astype(np.uint8)
        candidate_px[name] = px
        save_image(RasterImage(px), face_dir / f"{name}.png")
    (root / "db.json").write_text(json.dumps(database))

    manifest = []
    expected = {}
    for idx, fid in enumerate(["frame_a", "frame_b", "frame_c"]):
        fg = rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8)
        bg = rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8)
        mask = (rng.random((size, size)) < 0.6).astype(np.uint8)
        face_res = rng.integers(-255, 256, size=(face_rect[3], face_rect[2], 3)).astype(np.int16)
        hand_res = rng.integers(-255, 256, size=(hand_rect[3], hand_rect[2], 3)).astype(np.int16)

        save_image(RasterImage(fg), root / f"{fid}_fg.png")
        save_image(RasterImage(bg), root / f"{fid}_bg.png")
        save_mask(Mask(mask), root / f"{fid}_mask.png")
        save_residual(face_res, root / f"{fid}_res1.png")
        save_residual(hand_res, root / f"{fid}_res2.png")
        (root / f"{fid}_crops.json").write_text(json.dumps({
            "frame_id": fid,
            "parts": [
                {"index": 1, "x": face_rect[0], "y": face_rect[1], "w": face_rect[2], "h": face_rect[3]},
                {"index": 2, "x": hand_rect[0], "y": hand_rect[1], "w": hand_rect[2], "h": hand_rect[3]},
            ],
        }))
        # per-frame query landmarks: each frame closest to a different candidate
        query = dict(db_points[["cand_a", "cand_b", "cand_c"][idx]])
        query["nose"] = [query["nose"][0] + 0.05 * (idx + 1), query["nose"][1]]
        (root / f"{fid}_lm.json").write_text(json.dumps({"frame_id": fid, **query}))

        manifest.append({
            "frame_id": fid,
            "foreground": f"{fid}_fg.png",
            "background": f"{fid}_bg.png",
            "mask": f"{fid}_mask.png",
            "crops": f"{fid}_crops.json",
            "landmarks": f"{fid}_lm.json",
            "face_database": "db.json",
            "face_dir": "faces",
            "residuals": {"1": f"{fid}_res1.png", "2": f"{fid}_res2.png"},
        })

        # --- independent composition of the expected frame ---
        # similarity ranking by plain arithmetic over the five vectors
        def field(pts):
            re, le = np.array(pts["right_eye"]), np.array(pts["left_eye"])
            ml, mr = np.array(pts["mouth_left"]), np.array(pts["mouth_right"])
            no = np.array(pts["nose"])
            iod = np.hypot(*(le - re))
            return np.stack([le - re, ml - le, mr - ml, re - mr, no - (re + le) / 2]) / iod

        qf = field(query)
        sims = {
            name: 1.0 / (1e-8 + sum(np.hypot(*(qf[i] - field(pts)[i])) for i in range(5)))
            for name, pts in db_points.items()
        }
        ranked = sorted(sims, key=lambda name: (-sims[name], name))[:2]

        x0, y0, w0, h0 = face_rect
        face = fg[y0:y0 + h0, x0:x0 + w0].astype(np.float64)
        acc = np.zeros_like(face)
        for lam, name in zip(lambdas, ranked):
            acc += lam * candidate_px[name]
        blended = np.clip(np.floor(alpha * acc + beta * face + 0.5), 0, 255)
        face_final = np.clip(blended.astype(np.int64) + face_res, 0, 255).astype(np.uint8)

        x1, y1, w1, h1 = hand_rect
        hand = fg[y1:y1 + h1, x1:x1 + w1].astype(np.int64)
        hand_final = np.clip(hand + hand_res, 0, 255).astype(np.uint8)

        composed = fg.copy()
        composed[y0:y0 + h0, x0:x0 + w0] = face_final
        composed[y1:y1 + h1, x1:x1 + w1] = hand_final
        expected[fid] = np.where(mask[:, :, None] == 1, composed, bg)

    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest))
    return manifest_path, expected, {"alpha": alpha, "beta": beta, "lambdas": lambdas}
