"""Acceptance gate: one test per criterion, summarized as PASS/FAIL lines by conftest."""

import inspect
import json
import os
import random
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import brute_viou, random_pair, random_viou_case, raster_iou
from stgkit import decoder
from stgkit.decoder import (
    QueryLayout,
    SpaceHeadParams,
    attention,
    attention_weights,
    decode_tube,
    decoder_parameters,
    deinterleave_queries,
    dual_cross_attention,
    interleave_queries,
    query_positions,
)
from stgkit.geometry import BBox, TimeSpan, Tube, box_giou, box_iou
from stgkit.gradcheck import run_suite
from stgkit.losses import LossWeights, giou_loss, l1_loss, space_loss
from stgkit.metrics import GroundingSample, Prediction, evaluate_stvg, viou
from stgkit.unistg import (
    CaptionRecord,
    Detection,
    MockServiceClient,
    Rejection,
    SynthesisConfig,
    annotate_boxes,
    filter_boxes,
    refine_time_boundary,
    synthesize_dataset,
)

SYNTH = Path(__file__).parent / "fixtures" / "synth"


@pytest.mark.criterion("Geometry oracle: IoU vs 64x64 raster on 1000 pairs within 0.01, GIoU <= IoU, < 5 s")
def test_geometry_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        a, b = random_pair(rng)
        worst = max(worst, abs(box_iou(a, b) - raster_iou(a, b, rng)))
        assert box_giou(a, b) <= box_iou(a, b)
    elapsed = time.perf_counter() - t0
    assert worst < 0.01, f"worst raster disagreement {worst:.4f}"
    assert elapsed < 5.0, f"took {elapsed:.2f} s"


@pytest.mark.criterion("Metric oracle: vIoU vs brute force to 1e-12 on 200 samples, perfect fixture = 100s")
def test_metric_oracle():
    rng = random.Random(99)
    for k in range(200):
        pred, gt, p_corners, g_corners, n_grid = random_viou_case(rng, k)
        assert abs(viou(pred, gt) - brute_viou(p_corners, g_corners, n_grid)) <= 1e-12

    grid = tuple(float(t) for t in range(20))
    box = BBox(0.5, 0.5, 0.4, 0.4)
    gts = [
        GroundingSample("a", 20.0, "x", TimeSpan(2, 5), Tube(2, [box] * 4), grid),
        GroundingSample("b", 20.0, "y", TimeSpan(5, 7), Tube(5, [BBox(0.3, 0.6, 0.2, 0.5)] * 3), grid),
    ]
    report = evaluate_stvg([Prediction(g.id, g.gt_span, g.gt_tube) for g in gts], gts)
    assert (report.m_tIoU, report.m_vIoU, report.vIoU_at[0.3], report.vIoU_at[0.5]) == (100.0, 100.0, 100.0, 100.0)


@pytest.mark.criterion("Loss defaults: (1, 1, 3, 1) and l1=0.2, giou_loss=0.688696 -> space_loss 1.288696")
def test_loss_defaults():
    w = LossWeights()
    assert (w.lambda_time, w.lambda_space, w.lambda_l1, w.lambda_giou) == (1.0, 1.0, 3.0, 1.0)
    pred, gt = Tube(0, [BBox(0.5, 0.5, 0.4, 0.4)]), Tube(0, [BBox(0.6, 0.6, 0.4, 0.4)])
    l1, gl = l1_loss(pred, gt), giou_loss(pred, gt)
    # hand-derived: intersection 0.09, union 0.23, enclosure 0.25
    exact_giou_loss = 1.0 - (0.09 / 0.23 - 0.02 / 0.25)
    assert abs(l1 - 0.2) <= 1e-9
    assert abs(gl - exact_giou_loss) <= 1e-9
    assert abs(space_loss(pred, gt) - (3.0 * 0.2 + exact_giou_loss)) <= 1e-9
    # the quoted figures are six-decimal roundings of the exact chain
    assert (round(gl, 6), round(space_loss(pred, gt), 6)) == (0.688696, 1.288696)


@pytest.mark.criterion("Gradient suite: analytic vs finite differences < 1e-4 on 100 seeds, < 60 s")
def test_gradient_suite():
    t0 = time.perf_counter()
    results = run_suite(range(100), LossWeights())
    elapsed = time.perf_counter() - t0
    names = {r.name for r in results}
    assert len(names) >= 2 and len(results) == 100 * len(names)
    worst = max(results, key=lambda r: r.rel_error)
    assert worst.rel_error < 1e-4, f"{worst.name} seed {worst.seed}: {worst.rel_error:.3e}"
    assert elapsed < 60.0, f"took {elapsed:.1f} s"


@pytest.mark.criterion("Interleave structure: N_v x (S+1) x D, queries at index S, exact inverse")
def test_interleave_structure():
    rng = np.random.default_rng(5)
    for n_v in range(1, 5):
        for s in range(1, 5):
            for d in (1, 2, 5, 8):
                v, q = rng.normal(size=(n_v, s, d)), rng.normal(size=(n_v, 1, d))
                h = interleave_queries(v, q)
                assert h.shape == (n_v, s + 1, d)
                assert np.array_equal(h[:, s, :], q[:, 0, :])
                assert np.array_equal(h[:, :s, :], v)
                flat = h.reshape(-1, d)
                assert np.array_equal(flat[list(query_positions(QueryLayout(n_v, s, d)))], q[:, 0, :])
                v2, q2 = deinterleave_queries(h)
                assert np.array_equal(v2, v) and np.array_equal(q2, q)


@pytest.mark.criterion("Parameter-freeness: decode path outside the space head has no parameters")
def test_parameter_freeness():
    dim = 6
    params = SpaceHeadParams.init(dim, seed=0)
    names = decoder_parameters(params)
    assert names and all(k.startswith("space_head.") for k in names)
    assert sum(np.asarray(a).size for a in names.values()) == dim * dim + dim + dim * 4 + 4
    for fn in (attention, attention_weights, dual_cross_attention):
        assert all(p.annotation == "np.ndarray" for p in inspect.signature(fn).parameters.values())
    assert not [n for n, v in vars(decoder).items() if isinstance(v, np.ndarray)]
    # decode_tube's only learnable input is the space head
    assert [p for p in inspect.signature(decode_tube).parameters if "param" in p] == ["params"]


def det(side, score, cx=0.5):
    return Detection(0, BBox(cx, 0.5, side, side), score)


@pytest.mark.criterion("Pipeline rules: 0.3 drop, >3 box discard, [0.5, 2.0] area ratio, [2, 120] s gate, 40% corpus")
def test_pipeline_rules(tmp_path):
    # confidence threshold: 0.3 survives, 0.25 does not
    fixture = tmp_path / "m.json"
    fixture.write_text(json.dumps({"entries": [{
        "endpoint": "/detect", "request": {"video_ref": "v", "frame_index": 0, "prompt": "p"},
        "response": {"detections": [
            {"box_xyxy": [0.1, 0.1, 0.3, 0.3], "score": 0.3},
            {"box_xyxy": [0.4, 0.4, 0.6, 0.6], "score": 0.25},
        ]},
    }]}))
    kept = annotate_boxes("v", [0], "p", MockServiceClient(fixture))[0]
    assert [d.score for d in kept] == [0.3]

    # frame discard: three boxes keep the frame, four drop it
    three = [det(0.2, 0.9), det(0.1, 0.5, 0.1), det(0.1, 0.4, 0.9)]
    four = three + [det(0.1, 0.3, 0.7)]
    assert filter_boxes([(0, three)]) == Tube(0, [BBox(0.5, 0.5, 0.2, 0.2)])
    assert filter_boxes([(0, four)]) == Rejection.COMPLEX_SCENE

    # area ratio: 1.96 accepted, 2.25 rejected
    assert isinstance(filter_boxes([(0, [det(0.2, 0.9)]), (1, [det(0.28, 0.9)])]), Tube)
    assert filter_boxes([(0, [det(0.2, 0.9)]), (1, [det(0.3, 0.9)])]) == Rejection.AREA_INSTABILITY

    # duration gate
    def frames(*ts):
        return [(t, [det(0.2, 0.9)]) for t in ts]

    assert refine_time_boundary(frames(0.0, 2.0), TimeSpan(0, 5)) == TimeSpan(0, 2)
    assert refine_time_boundary(frames(0.0, 120.0), TimeSpan(0, 130)) == TimeSpan(0, 120)
    assert refine_time_boundary(frames(1.0, 2.5), TimeSpan(0, 5)) == Rejection.DURATION_TOO_SHORT
    assert refine_time_boundary(frames(0.0, 130.0), TimeSpan(0, 140)) == Rejection.DURATION_TOO_LONG

    # authored corpus
    with open(SYNTH / "corpus.jsonl") as fh:
        corpus = [CaptionRecord.from_json(json.loads(line)) for line in fh]
    cfg = SynthesisConfig(n_frames=16)
    with MockServiceClient(SYNTH / "mock_services.json") as client:
        _, stats = synthesize_dataset(corpus, client, cfg)
    assert stats.total == 10
    assert stats.rejection_rate == pytest.approx(0.4)


def run_cli(*args, hash_seed):
    env = dict(os.environ, PYTHONHASHSEED=str(hash_seed))
    proc = subprocess.run(
        [sys.executable, "-m", "stgkit.cli", *args], capture_output=True, env=env, check=True
    )
    return proc.stdout


@pytest.mark.criterion("Determinism: synth (mock) and decode-demo (fixed seed) byte-identical across runs")
def test_determinism(tmp_path):
    outputs = []
    for run in range(2):
        out, stats = tmp_path / f"out{run}.jsonl", tmp_path / f"stats{run}.json"
        run_cli(
            "synth", "--corpus", str(SYNTH / "corpus.jsonl"), "--config", str(SYNTH / "config.json"),
            "--out", str(out), "--stats", str(stats), hash_seed=run,
        )
        demo = run_cli("decode-demo", "--span", "from 2.40s to 5.60s", "--seed", "7", hash_seed=run)
        outputs.append((out.read_bytes(), stats.read_bytes(), demo))
    assert outputs[0] == outputs[1]
    assert outputs[0][0] and outputs[0][2]
