#!/usr/bin/env python3
"""Regenerates tests/fixtures/bpe: a small dense byte-level BPE vocabulary
trained on deterministic text, saved in the standard vocab.json/merges.txt
layout, plus reference encodings frozen from the trainer's own tokenizer.
The C++ tokenizer tests and acceptance criterion 4 compare against these.

Deterministic for the fixed seeds; needs the `tokenizers` package.
"""

import json
import os
import random
import sys
import tempfile


def main() -> int:
    from tokenizers import Tokenizer, models, trainers, pre_tokenizers, decoders

    random.seed(1234)
    words = ("the quick brown fox jumps over lazy dog time year people way day man "
             "thing woman life child world school state family student group country "
             "problem hand part place case week company system program question work "
             "government number night point home water room mother area money story "
             "fact month lot right study book eye job word business issue side kind "
             "head house service friend father power hour game line end member law car "
             "city community name president team minute idea body information back "
             "parent face others level office door health person art war history party "
             "result change morning reason research girl guy moment air teacher force "
             "education don't it's can't I'll they're we've").split()
    lines = []
    for _ in range(4000):
        n = random.randint(4, 14)
        sent = " ".join(random.choice(words) for _ in range(n))
        if random.random() < 0.3:
            sent += " " + str(random.randint(0, 99999))
        lines.append(sent.capitalize() + random.choice([".", "!", "?", ",", ";"]))
    text = "\n".join(lines) + "\nHello world Hello world Hello world\n" * 50

    with tempfile.NamedTemporaryFile("w", suffix=".txt", delete=False) as f:
        f.write(text)
        corpus = f.name

    tok = Tokenizer(models.BPE())
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False, use_regex=True)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(vocab_size=800, min_frequency=2, show_progress=False,
                                  initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
                                  special_tokens=["<|endoftext|>"])
    tok.train([corpus], trainer)
    os.unlink(corpus)

    outdir = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                          "tests", "fixtures", "bpe")
    os.makedirs(outdir, exist_ok=True)
    tok.model.save(outdir)

    cases = [
        "",
        "Hello world",
        "The quick brown fox jumps over the lazy dog.",
        "don't it's   we've I'll they're",
        "  leading and trailing  ",
        "tabs\tand\nnewlines\r\nmixed   runs",
        "numbers 123 45678 0",
        "punct!!! ?? (mixed) [brackets] {braces} @#$%",
        "naïve café résumé — em—dash … ellipsis",
        "Ελληνικά κείμενο and Русский текст",
        "日本語のテキスト 中文文本 한국어",
        "mixed42together then42 apart 42then",
        "a  b   c    d",
        "'s 't 're 've 'm 'll 'd 'S 'T",
        "ULTRA CAPS lower MiXeD",
        "emoji 🙂 test ♥ snow☃man",
    ]
    out = []
    for c in cases:
        enc = tok.encode(c)
        assert tok.decode(enc.ids) == c
        out.append({"text": c, "ids": enc.ids})
    # long mixed-content stress case
    random.seed(99)
    frag = ["word", "The", "hello", "don't", "42", "3.14", " ", "  ", "\t", "\n", "—", "…",
            "κείμενο", "текст", "文本", "!", "?!", "(x)", "e.g.", "U.S.A.", "x=1;", "🙂",
            "MiXeD", "snow☃man", "0x1F", "a,b", "end."]
    blob = "".join(random.choice(frag) for _ in range(600))
    enc = tok.encode(blob)
    assert tok.decode(enc.ids) == blob
    out.append({"text": blob, "ids": enc.ids})
    with open(os.path.join(outdir, "cases.json"), "w") as f:
        json.dump(out, f, ensure_ascii=False, indent=1)
    print(f"wrote fixture to {outdir} ({len(out)} cases)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
