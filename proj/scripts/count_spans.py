#!/usr/bin/env python3
"""Independent span counter for column files: word gold pred.

Usage: count_spans.py FILE
"""
import sys
from collections import Counter


def spans(tags):
    out, cur = [], None
    for i, tag in enumerate(tags + ["O"]):
        kind, _, typ = tag.partition("-")
        cont = kind == "I" and cur is not None and cur[0] == typ
        if cur is not None and not cont:
            out.append((cur[0], cur[1], i - 1))
            cur = None
        if kind in ("B", "I") and not cont:
            cur = (typ, i)
    return out


def sentences(path):
    block = []
    for line in open(path, encoding="utf-8"):
        cols = line.split()
        if not cols:
            if block:
                yield block
            block = []
        else:
            block.append(cols)
    if block:
        yield block


def main(path):
    gold_n, pred_n, hit = Counter(), Counter(), Counter()
    tokens = same = repaired = 0
    for block in sentences(path):
        gold = [c[1] for c in block]
        pred = [c[2] for c in block]
        tokens += len(block)
        same += sum(g == p for g, p in zip(gold, pred))
        for i, tag in enumerate(pred):
            if tag.startswith("I-"):
                prev = pred[i - 1] if i else "O"
                if prev == "O" or prev[2:] != tag[2:]:
                    repaired += 1
        g, p = set(spans(gold)), set(spans(pred))
        gold_n.update(s[0] for s in g)
        pred_n.update(s[0] for s in p)
        hit.update(s[0] for s in g & p)
    G, P, C = sum(gold_n.values()), sum(pred_n.values()), sum(hit.values())
    print(f"GOLD {G}\nPRED {P}\nCORRECT {C}\nTOKENS {tokens}\nCORRECT_TOKENS {same}\nREPAIRED_PRED {repaired}")
    for t in sorted(set(gold_n) | set(pred_n)):
        print(f"TYPE {t} {gold_n[t]} {pred_n[t]} {hit[t]}")
    prec, rec = C / P, C / G
    print(f"P {prec:.15f}\nR {rec:.15f}\nF1 {2 * prec * rec / (prec + rec):.15f}\nACC {same / tokens:.15f}")


if __name__ == "__main__":
    main(sys.argv[1])
