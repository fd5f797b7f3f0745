#!/usr/bin/env python3
"""Regenerates tests/fixtures/gpt2_tiny: a tiny seeded checkpoint in the
GPT-2 naming convention plus reference forward-pass outputs computed by an
independent implementation (HuggingFace transformers). The C++ model tests
compare against these frozen values.

Deterministic for the fixed seed; needs `transformers` + `torch` (offline).
"""

import json
import os
import sys


def main() -> int:
    import torch
    from transformers import GPT2Config, GPT2LMHeadModel

    torch.manual_seed(31337)
    cfg = GPT2Config(
        vocab_size=128, n_positions=16, n_embd=32, n_layer=2, n_head=4,
        n_inner=None, activation_function="gelu_new", resid_pdrop=0.0,
        embd_pdrop=0.0, attn_pdrop=0.0, layer_norm_epsilon=1e-5,
        bos_token_id=0, eos_token_id=0,
    )
    model = GPT2LMHeadModel(cfg)
    model.eval()
    outdir = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                          "tests", "fixtures", "gpt2_tiny")
    os.makedirs(outdir, exist_ok=True)
    model.save_pretrained(outdir, safe_serialization=True)
    gen_cfg = os.path.join(outdir, "generation_config.json")
    if os.path.exists(gen_cfg):
        os.remove(gen_cfg)
    os.chmod(os.path.join(outdir, "model.safetensors"), 0o644)

    tokens = [3, 14, 1, 59, 26, 5, 35, 89]
    with torch.no_grad():
        out = model(torch.tensor([tokens]), output_hidden_states=True)
    logits = out.logits[0]
    hs = out.hidden_states  # [embedding, after block 0, after final norm]
    expected = {
        "tokens": tokens,
        "logits_final": logits[-1].tolist(),
        "logits_argmax": [int(r.argmax()) for r in logits],
        "hidden_emb": hs[0][0].tolist(),
        "hidden_block0_out": hs[1][0].tolist(),
        "hidden_final_norm": hs[-1][0].tolist(),
    }
    with open(os.path.join(outdir, "expected.json"), "w") as f:
        json.dump(expected, f)
    print(f"wrote fixture to {outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
