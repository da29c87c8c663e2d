#!/usr/bin/env python3
"""Builds the 50-caption concept fixture.

Captions are composed from noun-phrase slots whose concept is known when the
slot is generated, so the gold annotations do not depend on any chunker. The
vocabulary comes from a naive BPE trainer that recounts every pair each round,
and token indices come from a separate encoder written here.

Outputs (next to this script):
  concept_captions.txt   one caption per line
  concept_vocab.bpe      50-merge vocabulary trained on the captions
  concept_gold.jsonl     one record per caption
"""

import json
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))
ROOT = os.path.dirname(os.path.dirname(HERE))
MERGES = 50


def load_bank(path):
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.split("#", 1)[0].strip().lower()
            if line:
                out.append(line)
    return out


BANK = load_bank(os.path.join(ROOT, "data", "bank.txt"))

OPENERS = ["", "a photo of ", "a picture of ", "there is ", "this image shows ", "A rendering of ", "a drawing of "]
CONNECTORS = [" and ", " next to ", " above ", " with ", " near ", " behind ", " on ", ", "]
DETS = ["a ", "the ", "this ", "some ", "two ", "every "]
ADJS = ["red", "green", "blue", "small", "large", "bright", "dark", "colorful", "glorious"]
HEADS = ["circle", "square", "triangle", "cross", "diamond", "ring", "ellipse", "hexagon", "dog", "cat", "car",
         "person", "bird", "boat", "tree", "bus", "road", "sign", "photo", "background", "shape", "object",
         "canvas", "circles", "dogs"]
# (modifier, head): the modifier is a noun, so the pair forms the compound.
COMPOUNDS = [("street", "sign"), ("road", "sign"), ("tree", "house"), ("dog", "house"), ("house", "cat"),
             ("station", "bus")]


def word_byte(ch):
    return ch.isascii() and ch.isalnum() or not ch.isascii()


def noun_phrase(rng, need_det):
    """Returns (words, gold) where words is a list of strings joined by single
    spaces and gold is None or (concept, index of first concept word)."""
    words = []
    if need_det or rng.random() < 0.7:
        words.append(rng.choice(DETS).strip())
    for _ in range(rng.choice([0, 0, 1, 1, 2])):
        words.append(rng.choice(ADJS))
    if rng.random() < 0.2:
        mod, head = rng.choice(COMPOUNDS)
        first = len(words)
        words += [mod, head]
        concept = mod + " " + head
    else:
        head = rng.choice(HEADS)
        first = len(words)
        words.append(head)
        concept = head
    gold = (concept, first) if concept in BANK else None
    return words, gold


def make_caption(rng):
    text = rng.choice(OPENERS)
    gold = []  # (concept, begin, end, word spans)
    n = rng.choice([1, 2, 2, 3])
    for i in range(n):
        # A determiner is needed wherever the previous word could be a noun.
        need_det = i > 0 and text.endswith(", ")
        words, g = noun_phrase(rng, need_det)
        spans = []
        for w in words:
            spans.append((len(text), len(text) + len(w)))
            text += w + " "
        text = text[:-1]
        if g:
            concept, first = g
            ws = spans[first:]
            gold.append((concept, ws[0][0], ws[-1][1], ws))
        if i + 1 < n:
            text += rng.choice(CONNECTORS)
    if rng.random() < 0.5:
        text += "."
    if rng.random() < 0.3:
        text = text[0].upper() + text[1:]
    return text, gold


def pre_tokenize(text):
    chunks, i = [], 0
    while i < len(text):
        if word_byte(text[i]):
            j = i
            while j < len(text) and word_byte(text[j]):
                j += 1
            chunks.append((i, j))
            i = j
        else:
            chunks.append((i, i + 1))
            i += 1
    return chunks


def train_naive(corpus, merges):
    words = {}
    base = set()
    for t in corpus:
        base.update(t)
        for b, e in pre_tokenize(t):
            if word_byte(t[b]):
                words[t[b:e]] = words.get(t[b:e], 0) + 1
    segs = {w: list(w) for w in words}
    out = []
    while len(out) < merges:
        counts = {}
        for w, f in words.items():
            s = segs[w]
            for a, b in zip(s, s[1:]):
                counts[(a, b)] = counts.get((a, b), 0) + f
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        out.append(best)
        for w in segs:
            s, merged, i = segs[w], [], 0
            while i < len(s):
                if i + 1 < len(s) and (s[i], s[i + 1]) == best:
                    merged.append(s[i] + s[i + 1])
                    i += 2
                else:
                    merged.append(s[i])
                    i += 1
            segs[w] = merged
    return sorted(base), out


def encode_spans(text, merges):
    """Token spans of text, excluding [BOS]/[EOS]."""
    rank = {p: r for r, p in enumerate(merges)}
    spans = []
    for b, e in pre_tokenize(text):
        syms = [(text[i], i, i + 1) for i in range(b, e)]
        while True:
            cands = [(rank[(x[0], y[0])], k) for k, (x, y) in enumerate(zip(syms, syms[1:])) if (x[0], y[0]) in rank]
            if not cands:
                break
            r = min(cands)[0]
            pair = merges[r]
            merged, k = [], 0
            while k < len(syms):
                if k + 1 < len(syms) and (syms[k][0], syms[k + 1][0]) == pair:
                    merged.append((syms[k][0] + syms[k + 1][0], syms[k][1], syms[k + 1][2]))
                    k += 2
                else:
                    merged.append(syms[k])
                    k += 1
            syms = merged
        spans += [(s, t) for _, s, t in syms]
    return spans


def escape(s):
    out = ""
    for ch in s.encode("utf-8"):
        if 0x20 < ch < 0x7F and ch != ord("%"):
            out += chr(ch)
        else:
            out += "%%%02X" % ch
    return out


def main():
    rng = random.Random(20240611)
    captions, golds = [], []
    seen = set()
    while len(captions) < 50:
        text, gold = make_caption(rng)
        if text in seen:
            continue
        seen.add(text)
        captions.append(text)
        golds.append(gold)
    # Hand-written edge cases replace the last few generated captions.
    edge = [
        ("a circle and a circle", [("circle", 2, 8), ("circle", 15, 21)]),
        ("hello world", []),
        ("the street sign next to a road sign", [("street sign", 4, 15)]),
    ]
    for i, (text, gold) in enumerate(edge):
        captions[-len(edge) + i] = text
        words = []
        for concept, b, e in gold:
            ws, pos = [], b
            for w in concept.split(" "):
                ws.append((pos, pos + len(w)))
                pos += len(w) + 1
            words.append((concept, b, e, ws))
        golds[-len(edge) + i] = words

    base, merges = train_naive(captions, MERGES)
    with open(os.path.join(HERE, "concept_captions.txt"), "w", encoding="utf-8", newline="\n") as f:
        for c in captions:
            f.write(c + "\n")
    with open(os.path.join(HERE, "concept_vocab.bpe"), "w", encoding="utf-8", newline="\n") as f:
        f.write("SZBPE v1\nbase %d\n" % len(base))
        for s in base:
            f.write(escape(s) + "\n")
        f.write("merges %d\n" % len(merges))
        for a, b in merges:
            f.write(escape(a) + " " + escape(b) + "\n")
    with open(os.path.join(HERE, "concept_gold.jsonl"), "w", encoding="utf-8", newline="\n") as f:
        for text, gold in zip(captions, golds):
            spans = encode_spans(text, merges)
            concepts = []
            for concept, b, e, ws in gold:
                toks = [k + 1 for k, (s, t) in enumerate(spans)
                        if any(s < we and ws_ < t for ws_, we in ws)]
                concepts.append({"concept": concept, "id": BANK.index(concept), "span": [b, e], "tokens": toks})
            f.write(json.dumps({"caption": text, "concepts": concepts}, separators=(",", ":"), ensure_ascii=False))
            f.write("\n")


if __name__ == "__main__":
    main()
