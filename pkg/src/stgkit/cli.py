"""``stgkit`` command line: evaluation, synthesis, decode demo, gradient checks.

Exit codes: 0 ok, 1 check failure, 2 schema error, 3 id mismatch,
4 service error, 5 span parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import gradcheck
from .decoder import (
    FrameFeatures,
    QueryLayout,
    SpaceHeadParams,
    decode_tube,
    deinterleave_queries,
    interleave_queries,
    stub_text_embed,
    stub_vision_embed,
)
from .geometry import BBox, TimeSpan, Tube
from .losses import LossWeights
from .metrics import (
    EvaluationError,
    GroundingSample,
    IdMismatchError,
    Prediction,
    evaluate_stvg,
    rec_accuracy,
    recall_at_1,
)
from .sequencing import SpanParseError, parse_span_text, sample_frames, timespan_to_frame_range
from .unistg.pipeline import (
    CaptionRecord,
    SynthesisConfig,
    synthesize_dataset,
    tube_to_json,
    write_outputs,
)
from .unistg.services import HttpServiceClient, MockServiceClient, ServiceError

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_SCHEMA = 2
EXIT_ID_MISMATCH = 3
EXIT_SERVICE = 4
EXIT_PARSE = 5

log = logging.getLogger("stgkit")


class SchemaError(ValueError):
    def __init__(self, path: str | Path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def read_jsonl(path: str | Path, parse: Callable[[dict[str, Any]], Any]) -> list[Any]:
    """Parse every non-blank line of ``path`` with ``parse``; errors carry the line number."""
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("record is not a JSON object")
                items.append(parse(obj))
            except (ValueError, KeyError, TypeError) as exc:
                raise SchemaError(path, lineno, f"{type(exc).__name__}: {exc}") from exc
    return items


def _span(obj: dict[str, Any]) -> TimeSpan:
    return TimeSpan(float(obj["start_s"]), float(obj["end_s"]))


def _tube(obj: dict[str, Any] | None) -> Tube | None:
    if obj is None:
        return None
    return Tube(int(obj["start_frame"]), [BBox.from_seq(b) for b in obj["boxes"]])


def _gt_sample(n_frames: int) -> Callable[[dict[str, Any]], GroundingSample]:
    def parse(obj: dict[str, Any]) -> GroundingSample:
        duration = float(obj["duration_s"])
        stamps = obj.get("frame_timestamps")
        if stamps is None:
            stamps = sample_frames(duration, n_frames).timestamps
        tube = _tube(obj["tube"])
        if tube is None:
            raise ValueError("ground truth needs a tube")
        return GroundingSample(
            id=str(obj["id"]),
            duration_s=duration,
            caption=str(obj.get("caption", "")),
            gt_span=_span(obj["span"]),
            gt_tube=tube,
            frame_timestamps=tuple(float(t) for t in stamps),
        )

    return parse


def _prediction(obj: dict[str, Any]) -> Prediction:
    return Prediction(id=str(obj["id"]), span=_span(obj["span"]), tube=_tube(obj.get("tube")))


def _id_span(obj: dict[str, Any]) -> tuple[str, TimeSpan]:
    return str(obj["id"]), _span(obj["span"])


def _id_box(obj: dict[str, Any]) -> tuple[str, BBox]:
    return str(obj["id"]), BBox.from_seq(obj["box"])


def _pair_by_id(preds: list[tuple[str, Any]], gts: list[tuple[str, Any]]) -> list[Any]:
    """Predictions reordered to ground-truth order; raises on any id disagreement."""
    pred_ids = [i for i, _ in preds]
    by_id = dict(preds)
    gt_ids = [i for i, _ in gts]
    bad = sorted(
        {i for i in pred_ids if pred_ids.count(i) > 1}
        | (set(gt_ids) ^ set(pred_ids))
    )
    if bad:
        raise IdMismatchError(f"prediction ids do not match ground truth: {bad}", bad)
    return [by_id[i] for i in gt_ids]


def _write_json(path: str | None, payload: dict[str, Any]) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _pct(mapping: dict[float, float]) -> dict[str, float]:
    return {f"{k:g}": round(v, 1) for k, v in sorted(mapping.items())}


def cmd_eval_stvg(args: argparse.Namespace) -> int:
    gts = read_jsonl(args.gt, _gt_sample(args.frames))
    preds = read_jsonl(args.pred, _prediction)
    report = evaluate_stvg(preds, gts, args.thresholds or (0.3, 0.5))
    print(report.format_table())
    _write_json(args.out, report.to_dict())
    return EXIT_OK


def cmd_eval_vtg(args: argparse.Namespace) -> int:
    gts = read_jsonl(args.gt, _id_span)
    preds = _pair_by_id(read_jsonl(args.pred, _id_span), gts)
    recall = recall_at_1(preds, [s for _, s in gts], args.thresholds or (0.5, 0.7))
    for m, v in sorted(recall.items()):
        print(f"R@1 IoU={m:g}: {v:.1f}")
    _write_json(args.out, {"recall_at_1": _pct(recall), "n_samples": len(gts)})
    return EXIT_OK


def cmd_eval_rec(args: argparse.Namespace) -> int:
    gts = read_jsonl(args.gt, _id_box)
    preds = _pair_by_id(read_jsonl(args.pred, _id_box), gts)
    thresholds = args.thresholds or (0.5,)
    acc = {t: rec_accuracy(preds, [b for _, b in gts], t) for t in thresholds}
    for t, v in sorted(acc.items()):
        print(f"Acc@{t:g}: {v:.1f}")
    _write_json(args.out, {"accuracy": _pct(acc), "n_samples": len(gts)})
    return EXIT_OK


def _load_config(args: argparse.Namespace) -> SynthesisConfig:
    data: dict[str, Any] = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
        base = Path(args.config).parent
        if data.get("mock_fixture_path"):
            data["mock_fixture_path"] = str(base / data["mock_fixture_path"])
    if args.mock_fixtures:
        data["mock_fixture_path"] = args.mock_fixtures
    if args.frames is not None:
        data["n_frames"] = args.frames
    return SynthesisConfig.from_dict(data)


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        cfg = _load_config(args)
    except (OSError, ValueError, TypeError) as exc:
        log.error("bad config: %s", exc)
        return EXIT_SCHEMA
    corpus = read_jsonl(args.corpus, CaptionRecord.from_json)
    if cfg.mock_fixture_path:
        client = MockServiceClient(cfg.mock_fixture_path, retries=cfg.retries)
    else:
        client = HttpServiceClient(
            cfg.analyzer_url, cfg.detector_url, timeout_s=cfg.timeout_s, retries=cfg.retries
        )
    with client:
        outcomes, stats = synthesize_dataset(corpus, client, cfg)
    write_outputs(outcomes, stats, args.out, args.stats)
    print(
        f"emitted {stats.emitted}/{stats.total} records; "
        f"rejection rate {100 * stats.rejection_rate:.1f}%"
    )
    for reason, count in stats.rejections.items():
        if count:
            print(f"  {reason}: {count}")
    return EXIT_OK


def _caption_tokens(caption: str) -> list[int]:
    return list(caption.encode("utf-8")) or [0]


def cmd_decode_demo(args: argparse.Namespace) -> int:
    try:
        span = parse_span_text(args.span)
    except SpanParseError as exc:
        log.error("%s", exc)
        return EXIT_PARSE
    if span.end_s > args.duration:
        log.error("span %s exceeds video duration %ss", args.span, args.duration)
        return EXIT_PARSE
    n_frames = args.frames
    grid = sample_frames(args.duration, n_frames)
    layout = QueryLayout(n_frames, args.tokens_per_frame, args.dim)
    first, last = timespan_to_frame_range(span, grid)

    visual = np.stack([stub_vision_embed(f, layout, args.seed) for f in range(n_frames)])
    # one query token per frame; ids past the byte vocabulary keep them distinct from text
    queries = stub_text_embed([256 + f for f in range(n_frames)], args.dim, args.seed)[:, None, :]
    # the LLM is out of scope: its last layer is taken to be the identity on H
    hidden_visual, hidden_queries = deinterleave_queries(interleave_queries(visual, queries))
    features = {
        f: FrameFeatures(hidden_visual[f], hidden_queries[f]) for f in range(first, last + 1)
    }
    text = stub_text_embed(_caption_tokens(args.caption), args.dim, args.seed)
    params = SpaceHeadParams.init(args.dim, args.seed)
    tube = decode_tube((first, last), features, text, text, params)
    print(
        json.dumps(
            {
                "span": {"start_s": span.start_s, "end_s": span.end_s},
                "frame_range": [first, last],
                "frame_timestamps": [grid[f] for f in range(first, last + 1)],
                "tube": tube_to_json(tube),
            },
            indent=2,
        )
    )
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if not args.tolerance > 0:
        log.error("tolerance must be positive")
        return EXIT_SCHEMA
    weights = LossWeights(lambda_l1=args.lambda_l1, lambda_giou=args.lambda_giou)
    seeds = range(args.seed, args.seed + args.n_seeds)
    results = gradcheck.run_suite(seeds, weights, fault=args.inject_fault)
    worst = max(results, key=lambda r: r.rel_error)
    failed = [r for r in results if not r.passed(args.tolerance)]
    by_name: dict[str, float] = {}
    for r in results:
        by_name[r.name] = max(by_name.get(r.name, 0.0), r.rel_error)
    for name, err in by_name.items():
        status = "PASS" if err < args.tolerance else "FAIL"
        print(f"{status} {name}: max relative error {err:.3e} over {len(seeds)} seeds")
    if failed:
        print(
            f"{len(failed)}/{len(results)} checks failed; worst {worst.name} "
            f"seed={worst.seed} rel_error={worst.rel_error:.3e} (tolerance {args.tolerance:g})"
        )
        return EXIT_CHECK_FAILED
    print(f"all {len(results)} checks passed (tolerance {args.tolerance:g})")
    return EXIT_OK


def _thresholds(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stgkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, help_text in (
        ("eval-stvg", cmd_eval_stvg, "m_tIoU / m_vIoU / vIoU@R for tube predictions"),
        ("eval-vtg", cmd_eval_vtg, "R@1 at temporal IoU thresholds"),
        ("eval-rec", cmd_eval_rec, "box accuracy at IoU thresholds"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--gt", required=True)
        p.add_argument("--pred", required=True)
        p.add_argument("--out", help="write the JSON report here")
        p.add_argument("--thresholds", type=_thresholds)
        p.add_argument("--frames", type=int, default=64, help="grid size when GT omits frame_timestamps")
        p.set_defaults(func=func)

    p = sub.add_parser("synth", help="synthesize STVG records from a caption corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats")
    p.add_argument("--config")
    p.add_argument("--mock-fixtures")
    p.add_argument("--frames", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("decode-demo", help="decode a tube from stub features")
    p.add_argument("--span", required=True, help="e.g. 'from 2.00s to 5.00s'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--tokens-per-frame", type=int, default=4)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--caption", default="a man in red feeds a dog")
    p.set_defaults(func=cmd_decode_demo)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--n-seeds", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--lambda-l1", type=float, default=3.0)
    p.add_argument("--lambda-giou", type=float, default=1.0)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("STGKIT_LOG", "WARNING").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else "WARNING",
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        log.error("schema error: %s", exc)
        return EXIT_SCHEMA
    except IdMismatchError as exc:
        log.error("id mismatch: %s", exc)
        return EXIT_ID_MISMATCH
    except EvaluationError as exc:
        log.error("invalid evaluation input: %s", exc)
        return EXIT_SCHEMA
    except ServiceError as exc:
        log.error("service error: %s", exc)
        return EXIT_SERVICE
    except SpanParseError as exc:
        log.error("%s", exc)
        return EXIT_PARSE
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
