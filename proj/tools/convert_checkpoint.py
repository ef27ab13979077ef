#!/usr/bin/env python3
"""Converts a timm-style DinoV2 checkpoint (e.g. the Pl@ntNet fine-tuned
ViT) into the directory layout the C++ encoder reads: config.json +
model.safetensors with Hugging Face Dinov2 tensor names.

    python3 tools/convert_checkpoint.py plantnet.pth weights/plantnet-dinov2
"""
import argparse
import json
import math
import pathlib
import sys

import torch
from safetensors.torch import save_file


def load_state_dict(path):
    if path.suffix == ".safetensors":
        from safetensors.torch import load_file
        return load_file(str(path))
    obj = torch.load(str(path), map_location="cpu", weights_only=False)
    for key in ("model", "state_dict", "model_state_dict"):
        if isinstance(obj, dict) and key in obj and isinstance(obj[key], dict):
            obj = obj[key]
    # drop DataParallel / wrapper prefixes
    return {k.removeprefix("module.").removeprefix("backbone."): v for k, v in obj.items()}


def convert(sd, heads):
    out = {}

    def take(src, dst):
        if src not in sd:
            sys.exit(f"missing tensor '{src}' in checkpoint")
        out[dst] = sd[src].float().contiguous()

    take("cls_token", "embeddings.cls_token")
    take("pos_embed", "embeddings.position_embeddings")
    take("patch_embed.proj.weight", "embeddings.patch_embeddings.projection.weight")
    take("patch_embed.proj.bias", "embeddings.patch_embeddings.projection.bias")
    take("norm.weight", "layernorm.weight")
    take("norm.bias", "layernorm.bias")
    registers = 0
    if "reg_token" in sd:
        take("reg_token", "embeddings.register_tokens")
        registers = sd["reg_token"].shape[1]
    hidden = sd["cls_token"].shape[-1]
    out["embeddings.mask_token"] = torch.zeros(1, hidden)

    layers = 0
    while f"blocks.{layers}.attn.qkv.weight" in sd:
        b, p = f"blocks.{layers}.", f"encoder.layer.{layers}."
        for kind in ("weight", "bias"):
            q, k, v = sd[b + f"attn.qkv.{kind}"].float().chunk(3, dim=0)
            out[p + f"attention.attention.query.{kind}"] = q.contiguous()
            out[p + f"attention.attention.key.{kind}"] = k.contiguous()
            out[p + f"attention.attention.value.{kind}"] = v.contiguous()
            take(b + f"attn.proj.{kind}", p + f"attention.output.dense.{kind}")
            for n in ("norm1", "norm2", "mlp.fc1", "mlp.fc2"):
                take(b + f"{n}.{kind}", p + f"{n}.{kind}")
        take(b + "ls1.gamma", p + "layer_scale1.lambda1")
        take(b + "ls2.gamma", p + "layer_scale2.lambda1")
        layers += 1
    if layers == 0:
        sys.exit("no transformer blocks found (expected keys like blocks.0.attn.qkv.weight)")
    if "blocks.0.mlp.w12.weight" in sd:
        sys.exit("SwiGLU checkpoints are not supported")

    patch = sd["patch_embed.proj.weight"].shape[-1]
    side = math.isqrt(sd["pos_embed"].shape[1] - 1)
    config = {
        "model_type": "dinov2",
        "hidden_size": hidden,
        "num_hidden_layers": layers,
        "num_attention_heads": heads or hidden // 64,
        "mlp_ratio": sd["blocks.0.mlp.fc1.weight"].shape[0] / hidden,
        "patch_size": patch,
        "image_size": side * patch,
        "num_register_tokens": registers,
        "layer_norm_eps": 1e-6,
        "hidden_act": "gelu",
        "use_swiglu_ffn": False,
    }
    return out, config


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("checkpoint", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--heads", type=int, default=0, help="attention heads (default hidden/64)")
    args = ap.parse_args()
    tensors, config = convert(load_state_dict(args.checkpoint), args.heads)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    save_file(tensors, str(args.out_dir / "model.safetensors"))
    (args.out_dir / "config.json").write_text(json.dumps(config, indent=2))
    print(f"wrote {len(tensors)} tensors, {config['num_hidden_layers']} blocks, dim {config['hidden_size']}")


if __name__ == "__main__":
    main()
