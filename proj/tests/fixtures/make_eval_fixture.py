#!/usr/bin/env python3
"""Writes the re-scoring fixture under tests/fixtures/eval and its golden report.

The golden numbers are computed here from first principles so that the C++
pipeline is checked against an implementation it shares nothing with.
"""

import itertools
import json
import math
import random
import string
from collections import Counter
from pathlib import Path

from PIL import Image

OUT = Path(__file__).resolve().parent / "eval"
SIZE = 64

CAPTIONS = {
    "fc_001": ["A large clearing appeared in the north of the image.",
               "forest loss covers 12.0 percent of the area indicating moderate change"],
    "fc_002": ["There is no visible change between the two images.",
               "the forest remains intact with no visible clearing"],
    "fc_003": ["Several small patches of trees were removed near the centre.",
               "the loss is scattered with a patch count of 7 and the largest patch covers 0.9 percent of the image"],
    "fc_004": ["A road was cut through the forest from west to east.",
               "most of the forest loss is located in the west of the image"],
    "fc_005": ["Most of the southern forest has been cleared for farmland.",
               "a major clearing removed 31.6 percent of the forest mainly in the south"],
    "fc_006": ["Two patches of forest were lost in the east.",
               "forest loss covers 4.1 percent of the area indicating minor change"],
}
SPLITS = {"train": ["fc_001", "fc_002", "fc_003"], "val": ["fc_004"], "test": ["fc_005", "fc_006"]}

NOISY_CAPTIONS = {
    "fc_001": "a large clearing appeared in the north",
    "fc_002": "there is no change in the images",
    "fc_003": "small patches of trees were removed in the centre of the image",
    "fc_004": "a road cut through the forest",
    "fc_005": "most of the forest in the south has been cleared",
    "fc_006": "forest loss covers 4.1 percent of the area",
}


def tokens(text):
    out = []
    for word in text.lower().split():
        word = word.strip(string.punctuation)
        if word:
            out.append(word)
    return out


def gt_mask(rng):
    m = [[0] * SIZE for _ in range(SIZE)]
    for _ in range(rng.randint(0, 3)):
        h, w = rng.randint(3, 20), rng.randint(3, 20)
        r, c = rng.randint(0, SIZE - h), rng.randint(0, SIZE - w)
        for y in range(r, r + h):
            for x in range(c, c + w):
                m[y][x] = 1
    return m


def perturb(mask, rng):
    m = [row[:] for row in mask]
    for _ in range(200):
        y, x = rng.randrange(SIZE), rng.randrange(SIZE)
        m[y][x] = 1 - m[y][x]
    return m


def save_mask(mask, path):
    img = Image.new("L", (SIZE, SIZE))
    img.putdata([255 if v else 0 for row in mask for v in row])
    img.save(path)


# --- metrics ---------------------------------------------------------------

def ngram_counts(toks, n):
    return Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))


def bleu(cands, refs):
    match = [0] * 4
    total = [0] * 4
    c_len = r_len = 0
    for cand, group in zip(cands, refs):
        for n in range(1, 5):
            counts = ngram_counts(cand, n)
            best = Counter()
            for r in group:
                for g, k in ngram_counts(r, n).items():
                    best[g] = max(best[g], k)
            match[n - 1] += sum(min(k, best[g]) for g, k in counts.items())
            total[n - 1] += max(0, len(cand) - n + 1)
        c_len += len(cand)
        r_len += min((abs(len(r) - len(cand)), len(r)) for r in group)[1]
    if c_len == 0:
        return [0.0] * 4
    bp = math.exp(1 - r_len / c_len) if c_len < r_len else 1.0
    out = []
    for n in range(1, 5):
        if any(match[k] == 0 for k in range(n)):
            out.append(0.0)
        else:
            out.append(bp * math.exp(sum(math.log(match[k] / total[k]) for k in range(n)) / n))
    return out


def lcs(a, b):
    dp = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a)):
        for j in range(len(b)):
            dp[i + 1][j + 1] = dp[i][j] + 1 if a[i] == b[j] else max(dp[i][j + 1], dp[i + 1][j])
    return dp[-1][-1]


def rouge_l(cand, group, beta=1.2):
    best = 0.0
    for r in group:
        if not cand or not r:
            continue
        l = lcs(cand, r)
        if l == 0:
            continue
        p, rc = l / len(cand), l / len(r)
        best = max(best, (1 + beta ** 2) * p * rc / (rc + beta ** 2 * p))
    return best


def alignment(cand, ref):
    best = (0, 0)
    options = [[j for j, w in enumerate(ref) if w == t] + [None] for t in cand]
    for choice in itertools.product(*options):
        used = [j for j in choice if j is not None]
        if len(set(used)) != len(used):
            continue
        m = len(used)
        chunks, prev = 0, None
        for i, j in enumerate(choice):
            if j is None:
                prev = None
                continue
            if prev is None or prev != (i - 1, j - 1):
                chunks += 1
            prev = (i, j)
        if m > best[0] or (m == best[0] and m > 0 and chunks < best[1]):
            best = (m, chunks)
    return best


def meteor(cand, group):
    best = 0.0
    for r in group:
        m, chunks = alignment(cand, r)
        if m == 0:
            continue
        p, rc = m / len(cand), m / len(r)
        f = 10 * p * rc / (rc + 9 * p)
        best = max(best, f * (1 - 0.5 * (chunks / m) ** 3))
    return best


def cider_d(cands, refs, sigma=6.0):
    df = Counter()
    for group in refs:
        seen = set()
        for r in group:
            for n in range(1, 5):
                seen.update(ngram_counts(r, n))
        df.update(seen)
    log_n = math.log(len(refs))

    def vec(toks, n):
        return {g: k * (log_n - math.log(max(1, df[g]))) for g, k in ngram_counts(toks, n).items()}

    scores = []
    for cand, group in zip(cands, refs):
        acc = 0.0
        for r in group:
            pen = math.exp(-((len(cand) - len(r)) ** 2) / (2 * sigma ** 2))
            for n in range(1, 5):
                h, v = vec(cand, n), vec(r, n)
                nh = math.sqrt(sum(x * x for x in h.values()))
                nv = math.sqrt(sum(x * x for x in v.values()))
                if nh == 0 or nv == 0:
                    continue
                dot = sum(min(x, v[g]) * v[g] for g, x in h.items() if g in v)
                acc += dot / (nh * nv) * pen / 4
        scores.append(acc / len(group) * 10)
    return scores


def seg(gts, preds):
    tp = fp = fn = tn = 0
    for g, p in zip(gts, preds):
        for gr, pr in zip(g, p):
            for a, b in zip(gr, pr):
                tp += a and b
                fp += (not a) and b
                fn += a and (not b)
                tn += (not a) and (not b)
    ious = {}
    if tn + fp + fn:
        ious["iou_nc"] = 100 * tn / (tn + fp + fn)
    if tp + fp + fn:
        ious["iou_c"] = 100 * tp / (tp + fp + fn)
    miou = sum(ious.values()) / len(ious) if ious else 100.0
    return {"miou": miou, "iou_nc": ious.get("iou_nc"), "iou_c": ious.get("iou_c"),
            "confusion": {"tp": tp, "fp": fp, "fn": fn, "tn": tn}}


def report(ids, gts, preds, cands, refs):
    b = bleu(cands, refs)
    n = len(ids)
    s = seg([gts[i] for i in ids], [preds[i] for i in ids])
    cider = cider_d(cands, refs)
    return {
        "n_pairs": n,
        "seg": {k: s[k] for k in ("miou", "iou_nc", "iou_c")},
        "confusion": s["confusion"],
        "cap": {"b1": b[0], "b2": b[1], "b3": b[2], "b4": b[3],
                "meteor_lite": sum(meteor(c, r) for c, r in zip(cands, refs)) / n,
                "rouge_l": sum(rouge_l(c, r) for c, r in zip(cands, refs)) / n,
                "cider_d": sum(cider) / n},
    }


def table(dataset_id, model, rep):
    def cell(v, scale=1.0):
        return "-" if v is None else f"{v * scale:.2f}"
    head = "{:<16} | {:<10} | {:>6} | {:>6} | {:>6} | {:>6} | {:>6} | {:>6} | {:>6} | {:>6} | {:>7} | {:>7}\n"
    s, c = rep["seg"], rep["cap"]
    out = head.format("Dataset", "Model", "mIoU", "IoU_nc", "IoU_c", "B1", "B2", "B3", "B4",
                      "METEOR", "ROUGE_L", "CIDEr-D")
    out += head.format(dataset_id, model, cell(s["miou"]), cell(s["iou_nc"]), cell(s["iou_c"]),
                       *(cell(c[k], 100.0) for k in ("b1", "b2", "b3", "b4", "meteor_lite", "rouge_l", "cider_d")))
    out += f"pairs: {rep['n_pairs']}\n"
    return out


def main():
    rng = random.Random(20240611)
    for sub in ("A", "B", "label", "pred_perfect", "pred_noisy"):
        (OUT / sub).mkdir(parents=True, exist_ok=True)
    ids = list(CAPTIONS)
    gts, noisy = {}, {}
    for pid in ids:
        gts[pid] = gt_mask(rng)
        noisy[pid] = perturb(gts[pid], rng)
        for sub, colour in (("A", (30, 110, 40)), ("B", (120, 100, 70))):
            Image.new("RGB", (SIZE, SIZE), colour).save(OUT / sub / f"{pid}.png")
        save_mask(gts[pid], OUT / "label" / f"{pid}.png")
        save_mask(gts[pid], OUT / "pred_perfect" / f"{pid}.png")
        save_mask(noisy[pid], OUT / "pred_noisy" / f"{pid}.png")

    manifest = {
        "id": "forest-change-fixture",
        "root": ".",
        "entries": [{"pair_id": pid, "a": f"A/{pid}.png", "b": f"B/{pid}.png", "mask": f"label/{pid}.png",
                     "captions": [{"text": CAPTIONS[pid][0], "origin": "human"},
                                  {"text": CAPTIONS[pid][1], "origin": "rule_extent"}]} for pid in ids],
        "splits": SPLITS,
    }
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    perfect = {pid: CAPTIONS[pid][0] for pid in ids}
    (OUT / "captions_perfect.json").write_text(json.dumps(perfect, indent=2) + "\n")
    (OUT / "captions_noisy.json").write_text(
        json.dumps([{"pair_id": pid, "caption": NOISY_CAPTIONS[pid]} for pid in ids], indent=2) + "\n")

    refs_all = {pid: [tokens(t) for t in CAPTIONS[pid]] for pid in ids}
    golden = {}
    for split in ("all", "test"):
        sel = ids if split == "all" else SPLITS[split]
        refs = [refs_all[p] for p in sel]
        golden[f"perfect_{split}"] = report(sel, gts, gts, [tokens(perfect[p]) for p in sel], refs)
        golden[f"noisy_{split}"] = report(sel, gts, noisy, [tokens(NOISY_CAPTIONS[p]) for p in sel], refs)
    (OUT / "golden.json").write_text(json.dumps(golden, indent=2, sort_keys=True) + "\n")
    (OUT / "golden_noisy_all.txt").write_text(table("forest-change-fixture", "external", golden["noisy_all"]))


if __name__ == "__main__":
    main()
