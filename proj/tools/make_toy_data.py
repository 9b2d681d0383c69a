#!/usr/bin/env python3
# Copyright 2026 The clinenc Authors.
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
"""Writes the small synthetic corpora and tasks used by the shipped configs."""

import argparse
import json
import pathlib
import random

BIOMED = ("protein kinase binds receptor gene expression pathway cell assay inhibitor "
          "enzyme mutation sequence ligand membrane signaling").split()
CLINICAL = ("patient admitted reports pain denies fever history discharge note vitals "
            "stable follow clinic daily dose").split()
DRUGS = "aspirin heparin insulin warfarin metformin".split()
PROBLEMS = "sepsis anemia asthma stroke pneumonia".split()
FILLER = "the a was with on for and of".split()


def sentence(rng, words, n):
    return " ".join(rng.choice(words + FILLER) for _ in range(n))


def corpus(rng, n_docs):
    rows = []
    for _ in range(n_docs):
        rows.append({"source": "biomed", "text": sentence(rng, BIOMED, rng.randint(8, 40))})
        rows.append({"source": "clinical",
                     "text": sentence(rng, CLINICAL + DRUGS + PROBLEMS, rng.randint(8, 40))})
    return rows


def ner_record(rng):
    tokens, tags = [], []
    for _ in range(rng.randint(3, 8)):
        r = rng.random()
        if r < 0.25:
            tokens.append(rng.choice(DRUGS))
            tags.append("B-DRUG")
        elif r < 0.45:
            tokens += [rng.choice(PROBLEMS), "syndrome"]
            tags += ["B-PROBLEM", "I-PROBLEM"]
        else:
            tokens.append(rng.choice(CLINICAL + FILLER))
            tags.append("O")
    return {"tokens": tokens, "tags": tags}


def cls_record(rng):
    label = rng.randint(0, 1)
    words = BIOMED if label == 0 else CLINICAL
    return {"text": sentence(rng, words, rng.randint(4, 12)), "label": label}


def write(path, rows):
    with open(path, "w") as f:
        for r in rows:
            f.write(json.dumps(r) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=pathlib.Path)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--docs", type=int, default=200)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    write(args.out / "corpus.jsonl", corpus(rng, args.docs))
    for split, n in (("train", 160), ("val", 40), ("test", 40)):
        write(args.out / f"ner_{split}.jsonl", [ner_record(rng) for _ in range(n)])
        write(args.out / f"cls_{split}.jsonl", [cls_record(rng) for _ in range(n)])
    write(args.out / "ner_predictions.jsonl",
          [{"true": r["tags"], "pred": r["tags"]} for r in (ner_record(rng) for _ in range(10))])


if __name__ == "__main__":
    main()
