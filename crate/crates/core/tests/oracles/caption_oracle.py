"""Freeze reference caption scores for the 20-image fixture.

Requires pycocoevalcap (BLEU, ROUGE-L, CIDEr-D) and nltk (METEOR, run with a
Snowball stemmer and an empty synonym source so only exact and stem matches
count). Tokens are produced here independently and passed to the scorers as
space-joined strings.

    python3 caption_oracle.py ../fixtures/metrics/captions20.json > ../fixtures/metrics/captions20_oracle.json
"""

import json
import re
import sys

from nltk.stem.snowball import SnowballStemmer
from nltk.translate.meteor_score import meteor_score
from pycocoevalcap.bleu.bleu import Bleu
from pycocoevalcap.cider.cider import Cider
from pycocoevalcap.rouge.rouge import Rouge


def tokenize(text):
    return re.sub(r"[^\w\s]|_", " ", text.lower()).split()


class NoSynonyms:
    def synsets(self, *_args, **_kwargs):
        return []


def main(path):
    items = json.load(open(path))
    res, gts, tokens = {}, {}, {}
    for it in items:
        cand = tokenize(it["candidate"])
        refs = [tokenize(r) for r in it["references"]]
        res[it["id"]] = [" ".join(cand)]
        gts[it["id"]] = [" ".join(r) for r in refs]
        tokens[it["id"]] = {"candidate": cand, "references": refs}

    bleu, _ = Bleu(4).compute_score(gts, res, verbose=0)
    rouge, _ = Rouge().compute_score(gts, res)
    cider, _ = Cider().compute_score(gts, res)

    stemmer = SnowballStemmer("english")
    meteors = [
        meteor_score(tokens[k]["references"], tokens[k]["candidate"], stemmer=stemmer, wordnet=NoSynonyms())
        for k in res
    ]
    out = {
        "BLEU-1": bleu[0],
        "BLEU-2": bleu[1],
        "BLEU-3": bleu[2],
        "BLEU-4": bleu[3],
        "ROUGE-L": rouge,
        "CIDEr-D": cider,
        "METEOR": sum(meteors) / len(meteors),
        "tokens": tokens,
    }
    json.dump(out, sys.stdout, indent=1)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main(sys.argv[1])
