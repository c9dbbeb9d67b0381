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

"""Fills a polfuse embedding cache with Hugging Face transformer outputs.

extract-features writes <cache dir>/requests.jsonl when the configured
embedder cannot run in process. Each request holds the whitespace tokens of
one document. This script embeds every token as the last hidden state of its
first word piece, pads to max_len, writes the .emb files next to the
request file and merges them into index.json.

  python3 tools/hf_embed.py runs/t1/cache/<fingerprint>/base/requests.jsonl \\
      --model bert-base-uncased
"""

import argparse
import json
import os
import pathlib
import struct
import sys

MAGIC = b"PFEMB\x00\x00\x01"


def write_emb(path, rows, cols, data, mask):
    tmp = path.with_suffix(".emb.tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", rows, cols))
        f.write(struct.pack(f"<{rows * cols}f", *data))
        f.write(bytes(mask))
    os.replace(tmp, path)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("requests", type=pathlib.Path)
    ap.add_argument("--model", required=True, help="model name or local path")
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--device", default="cpu")
    args = ap.parse_args()

    import torch
    from transformers import AutoModel, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(args.model)
    model = AutoModel.from_pretrained(args.model).to(args.device).eval()
    cache_dir = args.requests.parent
    index_path = cache_dir / "index.json"
    index = json.loads(index_path.read_text()) if index_path.exists() else {"version": 1, "entries": {}}

    requests = [json.loads(line) for line in args.requests.read_text().splitlines() if line.strip()]
    for start in range(0, len(requests), args.batch_size):
        batch = requests[start:start + args.batch_size]
        words = [r["tokens"] or ["[PAD]"] for r in batch]
        enc = tokenizer(words, is_split_into_words=True, truncation=True, padding=True, return_tensors="pt")
        with torch.no_grad():
            hidden = model(**{k: v.to(args.device) for k, v in enc.items()}).last_hidden_state.cpu()
        for b, r in enumerate(batch):
            max_len = r["max_len"]
            dim = hidden.shape[-1]
            first = {}
            for pos, w in enumerate(enc.word_ids(b)):
                if w is not None and w not in first:
                    first[w] = pos
            data = [0.0] * (max_len * dim)
            mask = [0] * max_len
            for w in range(min(len(r["tokens"]), max_len)):
                if w not in first:
                    break  # truncated by the model's own length limit
                data[w * dim:(w + 1) * dim] = hidden[b, first[w]].tolist()
                mask[w] = 1
            write_emb(cache_dir / r["file"], max_len, dim, data, mask)
            index["entries"][r["key"]] = r["file"]
        print(f"{min(start + args.batch_size, len(requests))}/{len(requests)}", file=sys.stderr)

    tmp = index_path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(index, indent=1) + "\n")
    os.replace(tmp, index_path)


if __name__ == "__main__":
    main()
