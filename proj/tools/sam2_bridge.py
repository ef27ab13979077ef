#!/usr/bin/env python3
"""SAM2 worker for plantseg.

Reads one JSON request per line on stdin and answers with one JSON line on
stdout. Images arrive as raw HxWx3 uint8 RGB files, coarse masks as raw
256x256 float32 logits; predicted masks are written as raw HxW uint8 files.

Requests:
  {"op": "load", "checkpoint": path, "config": name, "device": "cpu", "multimask": true}
  {"op": "set_image", "path": path, "height": h, "width": w}
  {"op": "predict", "box": [x0, y0, x1, y1], "mask_input": path|null, "output": path}
  {"op": "shutdown"}
"""

import json
import sys
import traceback

import numpy as np

state = {"predictor": None, "multimask": True, "shape": None}


def load(req):
    try:
        from sam2.build_sam import build_sam2
        from sam2.sam2_image_predictor import SAM2ImagePredictor
    except ImportError as exc:
        raise RuntimeError(f"the sam2 package is not installed ({exc}); pip install sam2") from exc
    model = build_sam2(req["config"], req["checkpoint"], device=req.get("device", "cpu"))
    state["predictor"] = SAM2ImagePredictor(model)
    state["multimask"] = bool(req.get("multimask", True))
    return {"model": {"config": req["config"], "checkpoint": req["checkpoint"]}}


def set_image(req):
    h, w = int(req["height"]), int(req["width"])
    image = np.fromfile(req["path"], dtype=np.uint8).reshape(h, w, 3)
    state["predictor"].set_image(image)
    state["shape"] = (h, w)
    return {}


def predict(req):
    mask_input = None
    if req.get("mask_input"):
        mask_input = np.fromfile(req["mask_input"], dtype=np.float32).reshape(1, 256, 256)
    masks, scores, _ = state["predictor"].predict(
        box=np.asarray(req["box"], dtype=np.float32),
        mask_input=mask_input,
        multimask_output=state["multimask"],
    )
    best = int(np.argmax(scores))
    mask = (masks[best] > 0).astype(np.uint8)
    assert mask.shape == state["shape"], (mask.shape, state["shape"])
    mask.tofile(req["output"])
    return {"score": float(scores[best]), "candidate": best, "num_candidates": int(len(scores))}


HANDLERS = {"load": load, "set_image": set_image, "predict": predict}


def main():
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        op = req.get("op")
        if op == "shutdown":
            break
        try:
            if op not in HANDLERS:
                raise ValueError(f"unknown op {op!r}")
            if op != "load" and state["predictor"] is None:
                raise RuntimeError("model not loaded")
            reply = {"ok": True, **HANDLERS[op](req)}
        except Exception as exc:  # reported to the caller, which raises
            traceback.print_exc(file=sys.stderr)
            reply = {"ok": False, "error": str(exc)}
        print(json.dumps(reply), flush=True)


if __name__ == "__main__":
    main()
