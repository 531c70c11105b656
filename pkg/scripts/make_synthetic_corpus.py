#!/usr/bin/env python3
"""Generate a synthetic QA corpus plus paraphrase/judgment/classification
files so the full workbench can be exercised without any private data.

Questions are bags of pseudo-words with a few topic anchors; paraphrases
shuffle word order and swap synonyms so retrieval is non-trivial.
"""

from __future__ import annotations

import argparse
import itertools
import json
from pathlib import Path

import numpy as np

TOPICS = {
    "gastro": ["stomach", "nausea", "reflux", "digest", "bowel"],
    "cardio": ["heart", "chest", "pressure", "pulse", "artery"],
    "derm": ["skin", "rash", "itch", "eczema", "mole"],
    "neuro": ["headache", "dizzy", "migraine", "tremor", "numb"],
}
FILLER = ["".join(p) for p in itertools.product("lmnopqrs", repeat=3)]
SYNONYMS = {"stomach": "belly", "heart": "cardiac", "skin": "dermal", "headache": "cephalalgia"}


def build(out_dir: Path, n_records: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    topics = list(TOPICS)
    records = []
    for i in range(n_records):
        topic = topics[int(rng.integers(0, len(topics)))]
        anchors = list(rng.choice(TOPICS[topic], size=2, replace=False))
        filler = [FILLER[int(p)] for p in rng.choice(len(FILLER), size=6, replace=False)]
        words = anchors + filler
        rng.shuffle(words)
        records.append(
            {
                "id": f"s{i:05d}",
                "question": " ".join(words),
                "answer": f"advice about {topic}",
                "category": topic,
                "source": "synthetic",
                "style": "informal" if i % 3 else "formal",
            }
        )

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "corpus.jsonl", "w", encoding="utf-8") as handle:
        for rec in records:
            handle.write(json.dumps(rec, ensure_ascii=False) + "\n")

    with open(out_dir / "paraphrases.jsonl", "w", encoding="utf-8") as handle:
        for rec in records[: max(10, n_records // 5)]:
            words = rec["question"].split()
            rng.shuffle(words)
            words = [SYNONYMS.get(w, w) for w in words]
            if len(words) > 3:
                words = words[:-1]  # drop one word: paraphrases are not verbatim
            handle.write(
                json.dumps({"prime_id": rec["id"], "paraphrase": " ".join(words)}) + "\n"
            )

    grades = ["similar_question", "similar_topic", "different_topic"]
    with open(out_dir / "judgments.jsonl", "w", encoding="utf-8") as handle:
        for rec in records[:30]:
            grade = grades[int(rng.integers(0, 3))]
            handle.write(json.dumps({"query_id": rec["id"], "grade": grade}) + "\n")

    with open(out_dir / "labeled.jsonl", "w", encoding="utf-8") as handle:
        for rec in records:
            label = 1 if rec["category"] == "gastro" else 0
            handle.write(
                json.dumps({"text": rec["question"], "label": label, "origin_id": rec["id"]})
                + "\n"
            )
    print(f"wrote corpus/paraphrases/judgments/labeled under {out_dir}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", type=Path, default=Path("data/synthetic"))
    parser.add_argument("--n-records", type=int, default=400)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    build(args.out_dir, args.n_records, args.seed)


if __name__ == "__main__":
    main()
