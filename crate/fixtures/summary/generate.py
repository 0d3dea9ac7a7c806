#!/usr/bin/env python3
"""Builds the summary fixture corpus.

Writes manifest.csv, docs/, scripted.jsonl and expected.json next to this
script. Each corpus x country cell is split over two documents whose evidence
sentences carry the cell's helpful/harmful/neither counts. Documents also
contain filler sentences that the filter must drop, reference sections and
footnote markers that ingestion must strip, and (for transcripts)
questioner turns that must never reach the classifier.

Run from any directory; output is deterministic.
"""

import csv
import json
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent

# (corpus_kind, country) -> (helpful, harmful, neither)
CELLS = {
    ("ERKU", "AU"): (7, 94, 117),
    ("ERKU", "UK"): (159, 86, 603),
    ("INQUIRY_SUBMISSION", "AU"): (78, 203, 279),
    ("INQUIRY_SUBMISSION", "UK"): (118, 26, 240),
    ("INQUIRY_TRANSCRIPT", "AU"): (17, 35, 36),
    ("INQUIRY_TRANSCRIPT", "UK"): (11, 2, 41),
}

SHORT = {"ERKU": "erku", "INQUIRY_SUBMISSION": "sub", "INQUIRY_TRANSCRIPT": "hearing"}
CATEGORIES = ["government", "charity", "professional_body", "research_group"]

HELPFUL = [
    "Evidence item {n} in {doc} shows that e-cigarettes help adult smokers quit tobacco",
    "Finding {n} in {doc} indicates that switching to vaping reduces exposure to toxicants",
    "Study {n} cited in {doc} found that ENDS use is associated with higher quit rates",
]
HARMFUL = [
    "Evidence item {n} in {doc} shows that e-cigarettes expose young people to nicotine addiction",
    "Finding {n} in {doc} indicates that vaping acts as a gateway into tobacco smoking",
    "Study {n} cited in {doc} found that ENDS aerosol contains harmful chemicals",
]
NEITHER = [
    "Evidence item {n} in {doc} describes how e-cigarettes are sold in retail outlets",
    "Research item {n} in {doc} notes that further data on vaping is being collected",
    "Report {n} cited in {doc} lists the agencies that regulate ENDS products",
]
FILLER = [
    "The committee met to consider the matters raised in the terms of reference.",
    "Tobacco control remains a priority for public health agencies.",
    "Submissions were received from a wide range of organisations.",
    "The hearing was adjourned for a short break.",
]
QUESTIONS = [
    "Can you tell the committee what the research says about e-cigarettes?",
    "Is there evidence that vaping affects young people?",
]


def response(label, rng):
    reasoning = {
        "helpful": "The sentence presents evidence that ENDS benefit public health.",
        "harmful": "The sentence presents evidence that ENDS are harmful.",
        "neither": "The sentence does not make a clear evidentiary claim about harm or benefit.",
    }[label]
    style = rng.randrange(3)
    if style == 0:
        return f"Reasoning: {reasoning}\nAnswer: {label}"
    if style == 1:
        return f"Reasoning: {reasoning}\n\nAnswer: {label.capitalize()}."
    return f"Reasoning: {reasoning} Answer: **{label}**"


def main():
    rng = random.Random(20240601)
    docs_dir = HERE / "docs"
    docs_dir.mkdir(exist_ok=True)
    manifest = []
    scripted = []
    expected = {"cells": [], "n_evidence": 0}

    for (kind, country), (h, m, n) in CELLS.items():
        labels = ["helpful"] * h + ["harmful"] * m + ["neither"] * n
        rng.shuffle(labels)
        half = (len(labels) + 1) // 2
        expected["cells"].append(
            {"corpus": kind, "country": country, "helpful": h, "harmful": m, "neither": n}
        )
        expected["n_evidence"] += len(labels)
        for part, chunk in enumerate([labels[:half], labels[half:]], start=1):
            doc_id = f"{SHORT[kind]}-{country.lower()}-{part:02d}"
            sentences = []
            for i, label in enumerate(chunk):
                template = rng.choice({"helpful": HELPFUL, "harmful": HARMFUL, "neither": NEITHER}[label])
                text = template.format(n=i + 1, doc=doc_id) + "."
                scripted.append({"sentence_text": text, "response_text": response(label, rng)})
                sentences.append(text)
                if rng.random() < 0.15:
                    sentences.append(rng.choice(FILLER))

            if kind == "INQUIRY_TRANSCRIPT":
                path = f"docs/{doc_id}.turns.tsv"
                lines = []
                for i in range(0, len(sentences), 3):
                    lines.append(f"questioner\tCHAIR\t{rng.choice(QUESTIONS)}")
                    lines.append(f"witness\tWitness {country}\t{' '.join(sentences[i:i + 3])}")
                body = "\n".join(lines) + "\n"
            else:
                path = f"docs/{doc_id}.txt"
                paragraphs = [f"Submission {doc_id}", ""]
                for i in range(0, len(sentences), 4):
                    para = sentences[i:i + 4]
                    # A footnote marker after the first full stop of some paragraphs.
                    if rng.random() < 0.3:
                        para = [para[0] + "[" + str(rng.randrange(1, 40)) + "]"] + para[1:]
                    paragraphs.append(" ".join(para))
                    paragraphs.append("")
                paragraphs += [
                    "References",
                    f"Smith J. A review of the evidence on e-cigarettes for {doc_id}. 2019.",
                    "Jones K. Vaping research update. 2020.",
                ]
                body = "\n".join(paragraphs) + "\n"
                if part == 2:
                    body = body.replace("\n", "\r\n")
            (HERE / path).write_bytes(body.encode("utf-8"))
            manifest.append(
                {
                    "id": doc_id,
                    "country": country,
                    "corpus_kind": kind,
                    "org_name": f"Organisation {doc_id}",
                    "org_category": CATEGORIES[len(manifest) % len(CATEGORIES)],
                    "source_path": path,
                }
            )

    with open(HERE / "manifest.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=list(manifest[0].keys()), lineterminator="\n")
        w.writeheader()
        w.writerows(manifest)
    with open(HERE / "scripted.jsonl", "w", encoding="utf-8") as f:
        for s in scripted:
            f.write(json.dumps(s, ensure_ascii=False) + "\n")
    with open(HERE / "expected.json", "w", encoding="utf-8") as f:
        json.dump(expected, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
