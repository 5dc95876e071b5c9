#!/usr/bin/env python3
"""Regenerates the bundled toy corpus under data/corpus (deterministic)."""
import pathlib
import random

ROOT = pathlib.Path(__file__).resolve().parents[2] / "data" / "corpus"

SUBJECTS = ["the river", "a small boat", "the old mill", "the keeper", "a gray heron",
            "the north wind", "the village bell", "a quiet reader", "the garden wall",
            "the night train"]
VERBS = ["waits beside", "drifts toward", "leans against", "listens to", "returns to",
         "circles above", "follows", "remembers"]
OBJECTS = ["the stone bridge", "the morning fog", "the long field", "the harbor lights",
           "the winter road", "the open window", "the tall pines", "the market square"]
ENDINGS = ["before the rain.", "when the day is done.", "as the lamps come on.",
           "without a sound.", "while the tide turns.", "and then is still."]

KEYS = ["width", "depth", "rate", "count", "limit", "offset", "scale", "seed"]


def sentence(rng):
    return " ".join([rng.choice(SUBJECTS).capitalize(), rng.choice(VERBS),
                     rng.choice(OBJECTS), rng.choice(ENDINGS)])


def prose(rng, min_bytes):
    parts = []
    while len(" ".join(parts).encode()) < min_bytes:
        parts.append(sentence(rng))
    return " ".join(parts)


def notes(rng, min_bytes):
    parts = []
    while len(" ".join(parts).encode()) < min_bytes:
        k = rng.choice(KEYS)
        parts.append(f"set {k} = {rng.randint(1, 64)}; check {k} < {rng.randint(65, 512)};")
    return " ".join(parts)


def main():
    rng = random.Random(20240422)
    ROOT.mkdir(parents=True, exist_ok=True)
    stories = [prose(rng, rng.randint(300, 700)) for _ in range(35)]
    # Short entries exercise both filter rules: under 200 characters, and
    # 200+ characters but under 256 byte-level tokens.
    stories += [sentence(rng) for _ in range(3)]
    stories += [prose(rng, 210)[:230] for _ in range(2)]
    config = [notes(rng, rng.randint(300, 600)) for _ in range(15)]
    config += ["set rate = 3; check rate < 9;"]
    (ROOT / "stories.txt").write_text("\n".join(stories) + "\n")
    (ROOT / "notes.txt").write_text("\n".join(config) + "\n")


if __name__ == "__main__":
    main()
