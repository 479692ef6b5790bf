"""Freezes reference GPT-2 tokenizations for tests/data/tokenizer_oracle.jsonl.

The reference is the HF `tokenizers` byte-level BPE loaded from data/gpt2/.
Run from the repository root:  python3 tests/oracle/make_tokenizer_oracle.py
"""
import json
import pathlib
import random

from tokenizers import Tokenizer, models, pre_tokenizers

ROOT = pathlib.Path(__file__).resolve().parents[2]
ASSETS = ROOT / "data" / "gpt2"
POOLS = ROOT / "data" / "pools"
OUT = ROOT / "tests" / "data" / "tokenizer_oracle.jsonl"

FRAGMENTS = [
    "Hello", "world", "don't", "I'm", "we'll", "they've", "she'd", "it's", "you're",
    "DON'T", "1732", "3.14159", "(CEO)", "e-mail", "naïve", "café", "Ünïcödé", "日本語",
    "中文测试", "🙂", "👍🏽", "\t", "\n", "\n\n", "   ", "  ", "\r\n", "--", "...", "?!",
    "$100", "#hashtag", "@user", "https://example.com/a?b=c", "C++", "x86_64", "Ω", "ß",
    "ﬁ", "١٢٣", "Ⅻ", "½", " ", " ", "　", "'s", "'t", "'re", "'ve", "'m",
    "'ll", "'d", "'S", "''", "<|endoftext|>", "the", "The", "THE", "lasted", "year",
]


def load():
    bpe = models.BPE.from_file(str(ASSETS / "encoder.json"), str(ASSETS / "vocab.bpe"))
    tok = Tokenizer(bpe)
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    return tok


def task_prompts(rng):
    names = json.loads((POOLS / "ioi_names.json").read_text())
    places = json.loads((POOLS / "ioi_places.json").read_text())
    objects = json.loads((POOLS / "ioi_objects.json").read_text())
    nouns = json.loads((POOLS / "greater_than_nouns.json").read_text())
    words = json.loads((POOLS / "acronym_words.json").read_text())
    out = []
    for _ in range(60):
        a, b = rng.sample(names, 2)
        out.append(f"Then, {b} and {a} went to the {rng.choice(places)}. "
                   f"{b} gave a {rng.choice(objects)} to")
    for _ in range(60):
        xx = rng.randint(11, 17)
        yy = rng.randint(2, 98)
        out.append(f"The {rng.choice(nouns)} lasted from the year {xx}{yy:02d} to the year {xx}")
    for _ in range(60):
        ws = rng.sample(words, 3)
        out.append("The " + " ".join(ws) + " (" + ws[0][0] + ws[1][0])
    return out


def random_prompts(rng, count):
    out = []
    for _ in range(count):
        k = rng.randint(1, 8)
        parts = [rng.choice(FRAGMENTS) for _ in range(k)]
        seps = [rng.choice([" ", "", "  ", "\n", " "]) for _ in range(k)]
        out.append("".join(p + s for p, s in zip(parts, seps)))
    return out


def main():
    rng = random.Random(20240611)
    tok = load()
    prompts = task_prompts(rng)
    prompts += random_prompts(rng, 500 - len(prompts))
    assert len(prompts) == 500
    with OUT.open("w") as f:
        for p in prompts:
            f.write(json.dumps({"text": p, "ids": tok.encode(p).ids}, ensure_ascii=False) + "\n")
    print("wrote", OUT, len(prompts))


if __name__ == "__main__":
    main()
