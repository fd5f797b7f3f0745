#!/usr/bin/env python3
"""Download the GPT-2 small (124M) checkpoint files used by the acceptance
suite and the checkpoint-gated tests.

Fetches model.safetensors, config.json, vocab.json, and merges.txt into
fixtures/gpt2/ (or a directory of your choice), then point the tests at it:

    python3 scripts/fetch_gpt2.py [--dest fixtures/gpt2]
    export LATENTSCOPE_GPT2_DIR=$PWD/fixtures/gpt2
    ctest --test-dir build

Needs network access and either `huggingface_hub` or plain `urllib`.
"""

import argparse
import os
import sys

REPO = "openai-community/gpt2"
FILES = ["model.safetensors", "config.json", "vocab.json", "merges.txt"]


def fetch_with_hub(dest: str) -> None:
    from huggingface_hub import hf_hub_download

    for name in FILES:
        path = hf_hub_download(repo_id=REPO, filename=name, local_dir=dest)
        print(f"fetched {name} -> {path}")


def fetch_with_urllib(dest: str) -> None:
    import urllib.request

    base = f"https://huggingface.co/{REPO}/resolve/main/"
    for name in FILES:
        target = os.path.join(dest, name)
        print(f"fetching {base + name} ...")
        urllib.request.urlretrieve(base + name, target)
        print(f"  -> {target} ({os.path.getsize(target)} bytes)")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    default_dest = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                "fixtures", "gpt2")
    parser.add_argument("--dest", default=default_dest)
    args = parser.parse_args()
    os.makedirs(args.dest, exist_ok=True)
    try:
        fetch_with_hub(args.dest)
    except ImportError:
        fetch_with_urllib(args.dest)
    missing = [f for f in FILES if not os.path.exists(os.path.join(args.dest, f))]
    if missing:
        print(f"missing after fetch: {missing}", file=sys.stderr)
        return 1
    print(f"\nall files in {args.dest}")
    print(f"export LATENTSCOPE_GPT2_DIR={os.path.abspath(args.dest)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
