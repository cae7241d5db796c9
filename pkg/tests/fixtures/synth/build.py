"""Regenerate the mock synthesis corpus: ``python tests/fixtures/synth/build.py``.

Ten caption records on a 16-frame grid. Four are built to be rejected
(no object, too short, complex scene, unstable area); the other six
exercise subject fallback, low-score drops, tie breaking and gap holding.
"""

import json
from pathlib import Path

from stgkit.sequencing import sample_frames, timespan_to_frame_range
from stgkit.geometry import TimeSpan

HERE = Path(__file__).parent
N_FRAMES = 16


def box(cx, cy, w, h):
    return [round(cx - w / 2, 6), round(cy - h / 2, 6), round(cx + w / 2, 6), round(cy + h / 2, 6)]


def det(b, score, label="obj"):
    return {"box_xyxy": b, "score": score, "label": label}


# id, duration, caption, raw span, analyzer objects, {prompt: {frame: [detections]}}
RECORDS = []


def record(rid, duration, caption, raw, objects, detections):
    RECORDS.append((rid, duration, caption, raw, objects, detections))


steady = box(0.5, 0.5, 0.3, 0.4)

# subject found on frames 3..9 of raw frames 2..10 -> refined [6, 18]
record("v01", 32, "a man in red feeds a dog", (4, 20), ["man in red", "dog"],
       {"man in red": {f: [det(box(0.4 + 0.01 * f, 0.5, 0.3, 0.4), 0.9, "man")] for f in range(3, 10)}})

# subject never detected; falls back to the second object
record("v02", 32, "a woman walks past a parked car", (0, 16), ["woman", "car"],
       {"woman": {},
        "car": {f: [det(box(0.6, 0.6, 0.2, 0.2), 0.8, "car")] for f in range(1, 8)}})

# frame 5 holds four boxes (complex scene) and is dropped; the tube holds frame 4's box
v03 = {f: [det(steady, 0.85, "child")] for f in range(2, 9)}
v03[5] = [det(box(0.2 + 0.15 * k, 0.5, 0.1, 0.2), 0.9, "child") for k in range(4)]
record("v03", 32, "a child runs across the playground", (4, 16), ["child"], {"child": v03})

# 0.25 detections are dropped; a 0.3 detection is kept
v04 = {f: [det(steady, 0.7, "cat"), det(box(0.1, 0.1, 0.05, 0.05), 0.25, "cat")] for f in range(4, 9)}
v04[9] = [det(steady, 0.3, "cat")]
v04[3] = [det(box(0.3, 0.3, 0.2, 0.2), 0.25, "cat")]
record("v04", 32, "a cat jumps onto the sofa", (6, 20), ["cat", "sofa"], {"cat": v04})

# equal top scores: the larger box wins
v05 = {f: [det(box(0.3, 0.3, 0.2, 0.2), 0.6, "dog"), det(box(0.6, 0.6, 0.3, 0.3), 0.6, "dog")]
       for f in range(0, 6)}
record("v05", 32, "a dog chases a ball", (0, 12), ["dog", "ball"], {"dog": v05})

# longer video on a 4 s grid
record("v06", 64, "a person opens the door", (8, 40), ["person", "door"],
       {"person": {f: [det(box(0.5, 0.45, 0.25 + 0.01 * f, 0.5), 0.95, "person")] for f in range(3, 9)}})

# nothing localizable
record("v07", 32, "the weather becomes cloudy", (0, 10), [], {})

# only one frame with a detection -> zero-length refined span
record("v08", 32, "a bird lands on the fence", (4, 14), ["bird"],
       {"bird": {5: [det(box(0.5, 0.2, 0.1, 0.1), 0.8, "bird")]}})

# every frame is a complex scene
record("v09", 32, "a crowd gathers in the square", (2, 12), ["crowd"],
       {"crowd": {f: [det(box(0.1 + 0.2 * k, 0.5, 0.1, 0.3), 0.7, "person") for k in range(5)]
                  for f in range(1, 7)}})

# area jumps from 0.04 to 0.09 between adjacent frames
v10 = {f: [det(box(0.5, 0.5, 0.2, 0.2), 0.9, "car")] for f in range(2, 5)}
v10.update({f: [det(box(0.5, 0.5, 0.3, 0.3), 0.9, "car")] for f in range(5, 8)})
record("v10", 32, "a car drives toward the camera", (4, 14), ["car"], {"car": v10})


def main():
    corpus, entries = [], []
    for rid, duration, caption, (s, e), objects, detections in RECORDS:
        video_ref = f"videos/{rid}.mp4"
        corpus.append({"id": rid, "video_ref": video_ref, "duration_s": duration,
                       "caption": caption, "raw_span": {"start_s": s, "end_s": e}})
        entries.append({"endpoint": "/analyze", "request": {"caption": caption},
                        "response": {"objects": objects}})
        grid = sample_frames(duration, N_FRAMES)
        first, last = timespan_to_frame_range(TimeSpan(s, e), grid)
        for prompt, per_frame in detections.items():
            for f in range(first, last + 1):
                entries.append({
                    "endpoint": "/detect",
                    "request": {"video_ref": video_ref, "frame_index": f, "prompt": prompt},
                    "response": {"detections": per_frame.get(f, [])},
                })
    with open(HERE / "corpus.jsonl", "w") as fh:
        for row in corpus:
            fh.write(json.dumps(row) + "\n")
    with open(HERE / "mock_services.json", "w") as fh:
        json.dump({"entries": entries}, fh, indent=1)
        fh.write("\n")
    with open(HERE / "config.json", "w") as fh:
        json.dump({"n_frames": N_FRAMES, "mock_fixture_path": "mock_services.json",
                   "max_in_flight_requests": 1}, fh, indent=2)
        fh.write("\n")


if __name__ == "__main__":
    main()
