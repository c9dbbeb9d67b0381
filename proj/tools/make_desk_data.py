#!/usr/bin/env python3
# Copyright 2026 The Polfuse Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Regenerates the synthetic data under data/desk/.

The lexicons only mimic the LIWC and MRC file formats; their word lists are
made up. The corpus carries three independent planted signals:
  * class tokens (seen by the embedding channel),
  * word order of fixed pairs (seen as dependency bigrams by the stub parser),
  * positive vs negative emotion words (seen by the lexicon channel).
Each signal agrees with the label 90% of the time.
"""

import argparse
import json
import pathlib
import random

EN_LIWC = """
function pronoun ppron i we you shehe they ipron article prep auxverb adverb conj
negate verb adj compare interrog number quant affect posemo negemo anx anger sad
social family friend female male cogproc insight cause discrep tentat certain
differ percept see hear feel bio body health sexual ingest drives affiliation
achieve power reward risk focuspast focuspresent focusfuture relativ motion space
time work leisure home money relig death informal swear netspeak assent nonflu
filler allpunc period comma colon semic qmark exclam dash quote apostro parenth
otherp sixltr dic wc analytic clout authentic tone
""".split()

PT_LIWC = """
funct pronoun ppron i we you shehe they ipron article verb auxverb past present
future adverb preps conj negate quant number swear social family friend humans
affect posemo negemo anx anger sad cogmech insight cause discrep tentat certain
inhib incl excl percept see hear feel bio body health sexual ingest relativ motion
space time work achieve leisure home money relig death assent nonfl filler
""".split()

EN_MRC = ["nlet", "nphon", "nsyl", "kf_freq", "fam", "conc", "imag", "meanc", "aoa"]
PT_MRC = ["nlet", "freq", "fam", "conc", "imag", "aoa"]

POSITIVE = ["happy", "joy", "love", "wonderful", "great", "hope", "proud", "glad"]
NEGATIVE = ["sad", "hate", "angry", "awful", "terrible", "fear", "worried", "bitter"]

EN_WORDS = {
    "i": ["i", "me", "my"], "we": ["we", "us", "our"], "you": ["you", "your"],
    "shehe": ["she", "he", "her", "his"], "they": ["they", "them", "their"],
    "article": ["a", "an", "the"], "prep": ["in", "on", "of", "to", "with"],
    "auxverb": ["is", "was", "have", "will"], "negate": ["not", "never", "no"],
    "conj": ["and", "but", "or"], "number": ["one", "two", "three"],
    "family": ["mother", "father", "famil*"], "friend": ["friend*", "buddy"],
    "work": ["job", "work*", "office"], "money": ["money", "cash", "tax*"],
    "relig": ["church", "god", "faith"], "death": ["death", "dead", "kill*"],
    "home": ["home", "house"], "time": ["today", "now", "year*"],
    "power": ["power*", "govern*", "law"], "cause": ["because", "since"],
    "tentat": ["maybe", "perhaps"], "certain": ["always", "certain*"],
    "swear": ["damn"], "assent": ["yes", "ok"],
}
PT_WORDS = {
    "i": ["eu", "meu", "minha"], "we": ["nos", "nosso"], "you": ["voce"],
    "article": ["o", "a", "os", "as"], "preps": ["de", "em", "para"],
    "negate": ["nao", "nunca"], "conj": ["e", "mas", "ou"],
    "posemo": ["feliz", "amor", "bom", "otimo"], "negemo": ["triste", "odio", "ruim"],
    "work": ["trabalh*", "emprego"], "money": ["dinheiro", "imposto*"],
    "relig": ["igreja", "deus"], "death": ["morte", "morto"],
    "family": ["familia", "mae", "pai"], "time": ["hoje", "agora", "ano"],
}


def write_liwc(path, categories, words, extra):
    index = {c: i + 1 for i, c in enumerate(categories)}
    entries = {}
    for cat, ws in list(words.items()) + list(extra.items()):
        for w in ws:
            entries.setdefault(w, []).append(index[cat])
    lines = ["%"]
    lines += [f"{index[c]}\t{c}" for c in categories]
    lines.append("%")
    for w in sorted(entries):
        lines.append(w + "\t" + ",".join(str(i) for i in sorted(set(entries[w]))))
    path.write_text("\n".join(lines) + "\n")


def write_mrc(path, dims, words, rng):
    lines = ["word," + ",".join(dims)]
    for w in sorted(words):
        values = [str(len(w))] + [str(rng.randint(100, 700)) for _ in dims[1:]]
        lines.append(w + "," + ",".join(values))
    path.write_text("\n".join(lines) + "\n")


def make_corpus(n, seed):
    rng = random.Random(seed)
    filler = [f"w{i:03d}" for i in range(150)]
    class_tokens = {0: ["vexil", "quorna", "bramid", "tulsk", "ferrow"],
                    1: ["plimsa", "drovic", "yantle", "corzin", "mewlat"]}
    pairs = [("north", "gate"), ("river", "stone"), ("amber", "field"), ("silver", "road")]
    emotion = {0: NEGATIVE, 1: POSITIVE}
    labels = ["hyperpartisan", "neutral"]
    docs = []
    for i in range(n):
        y = i % 2
        def signal():
            return y if rng.random() < 0.9 else 1 - y
        units = [[rng.choice(filler)] for _ in range(20)]
        s = signal()
        units += [[rng.choice(class_tokens[s])] for _ in range(2)]
        s = signal()
        for _ in range(2):
            a, b = rng.choice(pairs)
            units.append([a, b] if s == 0 else [b, a])
        s = signal()
        units += [[rng.choice(emotion[s])] for _ in range(2)]
        rng.shuffle(units)
        text = " ".join(w for u in units for w in u)
        docs.append({"id": f"desk-{i:04d}", "text": text, "label": labels[y]})
    rng.shuffle(docs)
    return docs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "desk"))
    ap.add_argument("--docs", type=int, default=400)
    ap.add_argument("--seed", type=int, default=2026)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(args.seed)

    assert len(EN_LIWC) == 92 and len(PT_LIWC) == 64, (len(EN_LIWC), len(PT_LIWC))
    write_liwc(out / "en_liwc.dic", EN_LIWC, EN_WORDS,
               {"posemo": POSITIVE, "negemo": NEGATIVE, "affect": POSITIVE + NEGATIVE,
                "anger": ["angry", "hate"], "sad": ["sad"], "anx": ["fear", "worried"]})
    en_vocab = {w.rstrip("*") for ws in EN_WORDS.values() for w in ws} | set(POSITIVE) | set(NEGATIVE)
    write_mrc(out / "en_mrc.csv", EN_MRC, en_vocab, rng)
    write_liwc(out / "pt_liwc.dic", PT_LIWC, PT_WORDS, {"affect": ["feliz", "triste"]})
    pt_vocab = {w.rstrip("*") for ws in PT_WORDS.values() for w in ws}
    write_mrc(out / "pt_mrc.csv", PT_MRC, pt_vocab, rng)

    with open(out / "corpus.jsonl", "w") as f:
        for d in make_corpus(args.docs, args.seed):
            f.write(json.dumps(d) + "\n")


if __name__ == "__main__":
    main()
