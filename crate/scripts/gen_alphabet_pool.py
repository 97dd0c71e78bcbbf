"""Regenerates crates/core/data/alphabet_pool.txt.

The pool stands in for a model vocabulary: English words, pseudo-words,
years, CJK ideographs and two-character symbol pairs. Output is sorted
and deduplicated so the file is stable across runs.
"""
import builtins
import itertools
import pathlib

from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS

BANNED = set(",:;\n\r\t ")

tokens = set()
tokens.update(w for w in ENGLISH_STOP_WORDS if len(w) > 1)
tokens.update(n for n in dir(builtins) if not n.startswith("_"))
tokens.update(str(y) for y in range(1900, 2031))

onsets = "b d f g h k l m n p r s t v z ch sh th tr st".split()
vowels = "a e i o u ai ou".split()
codas = ["", "n", "s", "t", "ll", "x"]
for o1, v1, o2, v2, c in itertools.product(onsets, vowels, onsets[:6], vowels[:3], codas[:3]):
    tokens.add(o1 + v1 + o2 + v2 + c)
    if len(tokens) > 2400:
        break

tokens.update(chr(c) for c in range(0x4E00, 0x4E00 + 3000))

symbols = "!#$%&*+-/<=>?@^_|~()[]{}"
tokens.update(a + b for a in symbols for b in symbols)

clean = sorted(t for t in tokens if t and not (set(t) & BANNED))
out = pathlib.Path(__file__).resolve().parent.parent / "crates/core/data/alphabet_pool.txt"
out.write_text("\n".join(clean) + "\n", encoding="utf-8")
print(len(clean), "tokens ->", out)
