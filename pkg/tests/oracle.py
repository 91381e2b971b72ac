"""Brute-force reference for mock-backend correctness bits.

Deliberately shares no code with the harness: the shuffle, prompt text,
tokenization and attention mass are all recomputed here from the written
rules, for the unformatted (``none``) context and the base template.
"""

import hashlib
import random

BASE_HEAD = (
    "Write a high-quality answer for the given question using only the provided "
    "search results (some of which might be irrelevant).\n\n"
)


def distractor_order(items, seed, sample_id):
    h = hashlib.sha256(f"{seed}|{sample_id}".encode()).digest()
    rng = random.Random(int.from_bytes(h[:8], "big"))
    out = list(items)
    i = len(out) - 1
    while i > 0:
        j = rng.randrange(i + 1)
        out[i], out[j] = out[j], out[i]
        i -= 1
    return out


def qa_cell_bit(sample, position, seed, profile, tau, edges=(0.2, 0.8)):
    gold = [d for d in sample.documents if d.is_gold][0]
    others = distractor_order([d for d in sample.documents if not d.is_gold], seed, sample.id)
    docs = others[:position] + [gold] + others[position:]

    prefix = BASE_HEAD
    for k, d in enumerate(docs):
        if k:
            prefix += "\n"
        prefix += f"Document [{k + 1}]: "
        if k == position:
            break
        prefix += d.text
    rest = gold.text
    for k in range(position + 1, len(docs)):
        rest += "\n" + f"Document [{k + 1}]: " + docs[k].text
    rest += "\n\nQuestion: " + sample.question + "\nAnswer:"

    a = len(prefix.split())
    b = a + len(gold.text.split())
    T = a + len(rest.split())

    raw = []
    for t in range(T):
        x = t / (T - 1)
        if x < edges[0]:
            raw.append(profile[0])
        elif x < edges[1]:
            raw.append(profile[1])
        else:
            raw.append(profile[2])
    mass = sum(raw[a:b]) / sum(raw)
    return mass >= tau


def qa_bits(dataset, positions, seeds, profile, tau):
    return {
        (s.id, p, seed): qa_cell_bit(s, p, seed, profile, tau)
        for s in dataset
        for p in positions
        for seed in seeds
    }
