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

"""Reads one document on stdin and prints its spaCy parse as CoNLL-U.

Used by the "en_core_web_sm" / "pt_core_news_sm" / "spacy:<name>" parser
adapters:  python3 tools/spacy_conllu.py en_core_web_sm < doc.txt
"""

import sys


def main():
    if len(sys.argv) != 2:
        sys.exit("usage: spacy_conllu.py <pipeline>")
    try:
        import spacy
    except ImportError:
        sys.exit("spacy is not installed (pip install spacy && python -m spacy download " + sys.argv[1] + ")")
    nlp = spacy.load(sys.argv[1])
    doc = nlp(sys.stdin.read())
    out = []
    for sent in doc.sents:
        toks = [t for t in sent if not t.is_space]
        ids = {t.i: n + 1 for n, t in enumerate(toks)}
        for t in toks:
            head = 0 if t.head.i == t.i else ids.get(t.head.i, 0)
            out.append("\t".join([str(ids[t.i]), t.text, t.lemma_ or "_", t.pos_ or "_", t.tag_ or "_", "_",
                                  str(head), t.dep_.lower() or "dep", "_", "_"]))
        out.append("")
    sys.stdout.write("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
