"""Builds a tiny random GPT-2 with HF `transformers`, writes it in the tensor
archive layout, and freezes its reference logits.

Outputs (tests/data/):
  ref_tiny.archive      tensor archive (per-head-split Q/K/V/O)
  ref_tiny.config.json  model config sidecar
  ref_tiny.logits.json  {"tokens": [[...]], "logits": [[[...]]]}

Run from the repository root:  python3 tests/oracle/make_reference_model.py
"""
import json
import pathlib
import struct

import numpy as np
import torch
from transformers import GPT2Config, GPT2LMHeadModel

ROOT = pathlib.Path(__file__).resolve().parents[2]
OUT = ROOT / "tests" / "data"

LAYERS, HEADS, D_MODEL, D_MLP, VOCAB, POSITIONS = 2, 4, 32, 128, 64, 16


def write_archive(path, tensors):
    header = {}
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        header[name] = {"dtype": "f32", "shape": list(arr.shape),
                        "data_offsets": [offset, offset + len(data)]}
        offset += len(data)
        blobs.append(data)
    raw = json.dumps(header, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for b in blobs:
            f.write(b)


def export(model):
    sd = {k: v.detach().numpy().astype(np.float32) for k, v in model.state_dict().items()}
    d, h = D_MODEL, HEADS
    dh = d // h
    t = {
        "W_E": sd["transformer.wte.weight"],
        "W_pos": sd["transformer.wpe.weight"],
        "ln_final.w": sd["transformer.ln_f.weight"],
        "ln_final.b": sd["transformer.ln_f.bias"],
        "W_U": sd["lm_head.weight"].T.copy(),
    }
    for layer in range(LAYERS):
        p = f"transformer.h.{layer}."
        qkv_w = sd[p + "attn.c_attn.weight"]  # [d, 3d]
        qkv_b = sd[p + "attn.c_attn.bias"]    # [3d]
        proj_w = sd[p + "attn.c_proj.weight"]  # [d, d]
        for i, name in enumerate("QKV"):
            w = qkv_w[:, i * d:(i + 1) * d].reshape(d, h, dh).transpose(1, 0, 2)
            b = qkv_b[i * d:(i + 1) * d].reshape(h, dh)
            t[f"layer{layer}.W_{name}"] = w.copy()
            t[f"layer{layer}.b_{name}"] = b.copy()
        t[f"layer{layer}.W_O"] = proj_w.reshape(h, dh, d).copy()
        t[f"layer{layer}.b_O"] = sd[p + "attn.c_proj.bias"]
        t[f"layer{layer}.ln1.w"] = sd[p + "ln_1.weight"]
        t[f"layer{layer}.ln1.b"] = sd[p + "ln_1.bias"]
        t[f"layer{layer}.ln2.w"] = sd[p + "ln_2.weight"]
        t[f"layer{layer}.ln2.b"] = sd[p + "ln_2.bias"]
        t[f"layer{layer}.W_1"] = sd[p + "mlp.c_fc.weight"]
        t[f"layer{layer}.b_1"] = sd[p + "mlp.c_fc.bias"]
        t[f"layer{layer}.W_2"] = sd[p + "mlp.c_proj.weight"]
        t[f"layer{layer}.b_2"] = sd[p + "mlp.c_proj.bias"]
    return t


def main():
    torch.manual_seed(1234)
    cfg = GPT2Config(n_layer=LAYERS, n_head=HEADS, n_embd=D_MODEL, n_inner=D_MLP,
                     vocab_size=VOCAB, n_positions=POSITIONS, bos_token_id=0,
                     eos_token_id=0, tie_word_embeddings=False,
                     resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0)
    model = GPT2LMHeadModel(cfg).eval()
    # Default init (std 0.02) leaves every nonlinearity near-linear; widen it.
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "ln_" in name and name.endswith("weight"):
                p.copy_(1.0 + 0.2 * torch.randn_like(p))
            elif "ln_" in name:
                p.copy_(0.2 * torch.randn_like(p))
            else:
                p.copy_(0.35 * torch.randn_like(p))

    write_archive(OUT / "ref_tiny.archive", export(model))
    (OUT / "ref_tiny.config.json").write_text(json.dumps({
        "num_layers": LAYERS, "num_heads": HEADS, "d_model": D_MODEL,
        "d_head": D_MODEL // HEADS, "d_mlp": D_MLP, "vocab_size": VOCAB,
        "max_positions": POSITIONS, "layernorm_epsilon": cfg.layer_norm_epsilon,
    }, indent=1) + "\n")

    gen = torch.Generator().manual_seed(99)
    tokens = torch.randint(0, VOCAB, (3, 12), generator=gen)
    with torch.no_grad():
        logits = model(tokens).logits
    (OUT / "ref_tiny.logits.json").write_text(json.dumps({
        "tokens": tokens.tolist(),
        "logits": [[[float(x) for x in row] for row in sample] for sample in logits],
    }))
    print("wrote reference model fixture")


if __name__ == "__main__":
    main()
