#!/usr/bin/env python3
"""Independent reference run for the GPT-2 forward-pass check.

Runs HuggingFace transformers' GPT-2 on "Hello world" and prints the argmax
token id of the final position's logits. Export it so the gated model test
pins the comparison:

    export LATENTSCOPE_GPT2_ARGMAX=$(python3 scripts/verify_gpt2_forward.py)

Needs `transformers` + `torch` and either network access or a populated
LATENTSCOPE_GPT2_DIR / HF cache.
"""

import os
import sys


def main() -> int:
    import torch
    from transformers import GPT2LMHeadModel, GPT2Tokenizer

    source = os.environ.get("LATENTSCOPE_GPT2_DIR", "openai-community/gpt2")
    tokenizer = GPT2Tokenizer.from_pretrained(source)
    model = GPT2LMHeadModel.from_pretrained(source)
    model.eval()
    ids = tokenizer.encode("Hello world", return_tensors="pt")
    assert ids[0].tolist() == [15496, 995], ids
    with torch.no_grad():
        logits = model(ids).logits
    print(int(logits[0, -1].argmax()))
    return 0


if __name__ == "__main__":
    sys.exit(main())
