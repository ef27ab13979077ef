#!/usr/bin/env python3
"""Writes tiny random DinoV2 checkpoints plus reference outputs from
transformers, used by tests/vit_test.cpp.

    python3 tools/make_vit_fixture.py tests/fixtures/vit
"""
import argparse
import json
import pathlib

import numpy as np
import torch
from transformers import Dinov2Config, Dinov2Model, Dinov2WithRegistersConfig, Dinov2WithRegistersModel

MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def test_image(h, w):
    # same formula is rebuilt in the C++ test
    y, x, c = np.meshgrid(np.arange(h), np.arange(w), np.arange(3), indexing="ij")
    return ((y * 7 + x * 13 + c * 29 + (x * y) % 17) % 256).astype(np.uint8)


def pixel_values(img):
    v = (img.astype(np.float32) / 255.0 - MEAN) / STD
    return torch.from_numpy(v.transpose(2, 0, 1)[None].copy())


def randomize(model, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("norm1.weight") or name.endswith("norm2.weight") or name == "layernorm.weight":
                p.copy_(1.0 + 0.1 * torch.randn(p.shape, generator=g))
            else:
                p.copy_(0.2 * torch.randn(p.shape, generator=g))


def common():
    return dict(hidden_size=32, num_hidden_layers=2, num_attention_heads=4, mlp_ratio=2,
                patch_size=14, image_size=56, layer_norm_eps=1e-6)


def dump(model, out, sizes):
    out.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(out, safe_serialization=True)
    cases = []
    with torch.no_grad():
        for h, w in sizes:
            tokens = model(pixel_values=pixel_values(test_image(h, w))).last_hidden_state
            skip = 1 + getattr(model.config, "num_register_tokens", 0)
            cases.append({"height": h, "width": w, "tokens": tokens[0, skip:].tolist()})
    (out / "golden.json").write_text(json.dumps({"cases": cases}))


def timm_state_dict(model):
    sd = model.state_dict()
    out = {
        "cls_token": sd["embeddings.cls_token"],
        "pos_embed": sd["embeddings.position_embeddings"],
        "patch_embed.proj.weight": sd["embeddings.patch_embeddings.projection.weight"],
        "patch_embed.proj.bias": sd["embeddings.patch_embeddings.projection.bias"],
        "norm.weight": sd["layernorm.weight"],
        "norm.bias": sd["layernorm.bias"],
    }
    if "embeddings.register_tokens" in sd:
        out["reg_token"] = sd["embeddings.register_tokens"]
    for i in range(model.config.num_hidden_layers):
        p = f"encoder.layer.{i}."
        b = f"blocks.{i}."
        for kind in ("weight", "bias"):
            out[b + f"attn.qkv.{kind}"] = torch.cat(
                [sd[p + f"attention.attention.{n}.{kind}"] for n in ("query", "key", "value")])
            out[b + f"attn.proj.{kind}"] = sd[p + f"attention.output.dense.{kind}"]
            for n in ("norm1", "norm2", "mlp.fc1", "mlp.fc2"):
                out[b + f"{n}.{kind}"] = sd[p + f"{n}.{kind}"]
        out[b + "ls1.gamma"] = sd[p + "layer_scale1.lambda1"]
        out[b + "ls2.gamma"] = sd[p + "layer_scale2.lambda1"]
    return {"model": {k: v.clone() for k, v in out.items()}}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", type=pathlib.Path)
    args = ap.parse_args()

    plain = Dinov2Model(Dinov2Config(**common())).eval()
    randomize(plain, 1)
    dump(plain, args.out / "plain", [(70, 98), (42, 56), (56, 56)])

    reg = Dinov2WithRegistersModel(Dinov2WithRegistersConfig(**common(), num_register_tokens=2)).eval()
    randomize(reg, 2)
    dump(reg, args.out / "reg", [(70, 98), (42, 28)])
    torch.save(timm_state_dict(reg), args.out / "reg_timm.pth")


if __name__ == "__main__":
    main()
