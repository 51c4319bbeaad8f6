"""Tags tests/data/tagger_sentences.txt with the Python implementation of
the Brill tagger shipped in TextBlob (pattern's find_tags with lexicon,
morphology and context rules) and writes the frozen reference tags used by
the C++ tagger agreement test.

    pip install textblob
    python3 scripts/make_tagger_reference.py
"""
import os
import sys

from textblob import _text
from textblob.en import lexicon

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SRC = os.path.join(ROOT, "tests", "data", "tagger_sentences.txt")
DST = os.path.join(ROOT, "tests", "data", "tagger_reference.tsv")


def main():
    lexicon.load()
    with open(SRC, encoding="utf-8") as f, open(DST, "w", encoding="utf-8") as out:
        for line in f:
            tokens = line.split()
            if not tokens:
                continue
            tagged = _text.find_tags(
                tokens,
                lexicon=lexicon,
                morphology=lexicon.morphology,
                context=lexicon.context,
                entities=None,
                default=("NN", "NNP", "CD"),
                language="en",
            )
            for word, tag in tagged:
                out.write(f"{word}\t{tag}\n")
            out.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
