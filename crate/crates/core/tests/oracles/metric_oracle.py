"""Brute-force reference counts for entity and entity-type-region scoring.

Writes tests/fixtures/metric_cases.json. Each case lists sentences with
their gold spans and a prediction list; `expected` is [tp, predicted, gold].

A gold entity counts as found when at least one prediction satisfies every
condition against it: same sentence, same start, same end, same type, and
for the region task, the region rule. Each gold entity is found at most
once, so tp is the number of found gold entities.
"""
import json
import random
import sys
from pathlib import Path

TYPES = ["LOC", "MISC", "ORG", "PER"]
WORDS = ["Ann", "Bo", "Cy", "Dee", "Eve", "Fay", "Gus"]


def iou(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area = lambda r: (r[2] - r[0]) * (r[3] - r[1])
    return inter / (area(a) + area(b) - inter)


def rand_box(rng):
    x1, y1 = rng.randint(0, 8), rng.randint(0, 8)
    return [x1, y1, x1 + rng.randint(1, 6), y1 + rng.randint(1, 6)]


def spans_for(rng, n):
    out, i = [], 0
    while i < n:
        if rng.random() < 0.35:
            end = min(n, i + rng.randint(1, 3))
            out.append([i, end])
            i = end
        else:
            i += 1
    return out


def make_case(rng, regions):
    sentences = []
    for k in range(rng.randint(1, 3)):
        n = rng.randint(1, 8)
        image = regions and rng.random() < 0.8
        gold = []
        for s, e in spans_for(rng, n):
            boxes = []
            if image and rng.random() < 0.6:
                boxes = [rand_box(rng) for _ in range(rng.randint(1, 2))]
            gold.append([s, e, rng.choice(TYPES), boxes])
        words = [rng.choice(WORDS) for _ in range(n)]
        sentences.append({"id": f"s{k}", "words": words, "image": image, "gold": gold})
    pred = []
    for _ in range(rng.randint(0, 8)):
        sent = rng.choice(sentences)
        n = len(sent["words"])
        if sent["gold"] and rng.random() < 0.7:
            s, e, t, boxes = rng.choice(sent["gold"])
            if rng.random() < 0.2:
                t = rng.choice(TYPES)
            if rng.random() < 0.15:
                e = min(n, e + 1) if rng.random() < 0.5 else max(s + 1, e - 1)
        else:
            s = rng.randint(0, n - 1)
            e = rng.randint(s + 1, n)
            t, boxes = rng.choice(TYPES), []
        region = None
        if regions and rng.random() < 0.6:
            if boxes and rng.random() < 0.6:
                b = list(rng.choice(boxes))
                shift = rng.choice([0, 0, 1, 2, 3])
                region = [b[0] + shift, b[1], b[2] + shift, b[3]]
            else:
                region = rand_box(rng)
        pred.append([sent["id"], s, e, t, region])
    return sentences, pred


def region_ok(sentence, boxes, region):
    if region is not None and not sentence["image"]:
        return False
    if not boxes:
        return region is None
    return region is not None and any(iou(g, region) > 0.5 for g in boxes)


def count(sentences, pred, regions):
    by_id = {s["id"]: s for s in sentences}
    found = 0
    total_gold = 0
    for s in sentences:
        for gs, ge, gt, boxes in s["gold"]:
            total_gold += 1
            for pid, ps, pe, pt, region in pred:
                conditions = [
                    pid == s["id"],
                    ps == gs,
                    pe == ge,
                    pt == gt,
                    (not regions) or region_ok(by_id[pid], boxes, region),
                ]
                if all(conditions):
                    found += 1
                    break
    return [found, len(pred), total_gold]


def seen_unseen(rng):
    def sentence(k, prefix):
        n = rng.randint(2, 7)
        words = [rng.choice(WORDS) for _ in range(n)]
        gold = [[s, e, rng.choice(TYPES), []] for s, e in spans_for(rng, n)]
        return {"id": f"{prefix}{k}", "words": words, "image": False, "gold": gold}

    train = [sentence(k, "tr") for k in range(30)]
    test = [sentence(k, "te") for k in range(30)]
    seen = {" ".join(s["words"][a:b]) for s in train for a, b, _, _ in s["gold"]}
    pred = []
    for s in test:
        for a, b, t, _ in s["gold"]:
            if rng.random() < 0.7:
                pred.append([s["id"], a, b, t if rng.random() < 0.8 else rng.choice(TYPES), None])
        if rng.random() < 0.5:
            a = rng.randint(0, len(s["words"]) - 1)
            pred.append([s["id"], a, a + 1, rng.choice(TYPES), None])
    part = {True: [0, 0, 0], False: [0, 0, 0]}
    gold_of = {}
    for s in test:
        for a, b, t, _ in s["gold"]:
            is_seen = " ".join(s["words"][a:b]) in seen
            part[is_seen][2] += 1
            gold_of[(s["id"], a, b, t)] = is_seen
    hit = set()
    words = {s["id"]: s["words"] for s in test}
    for pid, a, b, t, _ in pred:
        key = (pid, a, b, t)
        if key in gold_of and key not in hit:
            hit.add(key)
            part[gold_of[key]][0] += 1
            part[gold_of[key]][1] += 1
        elif key in gold_of:
            part[gold_of[key]][1] += 1
        else:
            part[" ".join(words[pid][a:b]) in seen][1] += 1
    return {"train": train, "test": test, "pred": pred, "seen": part[True], "unseen": part[False]}


def main():
    rng = random.Random(20240611)
    out = {"ner": [], "gmner": []}
    for task, regions in (("ner", False), ("gmner", True)):
        for _ in range(1000):
            sentences, pred = make_case(rng, regions)
            out[task].append({"sentences": sentences, "pred": pred, "expected": count(sentences, pred, regions)})
    out["seen_unseen"] = seen_unseen(rng)
    path = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent.parent / "fixtures" / "metric_cases.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(out, separators=(",", ":")) + "\n")


if __name__ == "__main__":
    main()
