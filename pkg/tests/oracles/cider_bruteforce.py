"""Brute-force CIDEr reference used to freeze test constants.

Written independently of mofg.metrics: dense vectors over the full n-gram
vocabulary of the corpus, plain loops, no shared helpers. Run directly to
print the frozen values.
"""

import math
import re


def words(s):
    return re.findall(r"\w+|[^\w\s]", s.lower())


def grams(ws, n):
    return [tuple(ws[i : i + n]) for i in range(len(ws) - n + 1)]


def cider_bruteforce(hyps, refs, n_max=4, sigma=6.0):
    H = [words(h) for h in hyps]
    R = [words(r) for r in refs]
    N = len(refs)
    per_pair = [0.0] * N
    for n in range(1, n_max + 1):
        vocab = sorted({g for doc in H + R for g in grams(doc, n)})
        df = {g: sum(1 for r in R if g in grams(r, n)) for g in vocab}
        idf = {g: math.log(N) - math.log(max(1, df[g])) for g in vocab}
        for p in range(N):
            vh = [grams(H[p], n).count(g) * idf[g] for g in vocab]
            vr = [grams(R[p], n).count(g) * idf[g] for g in vocab]
            nh = math.sqrt(sum(x * x for x in vh))
            nr = math.sqrt(sum(x * x for x in vr))
            if nh == 0 or nr == 0:
                continue
            cos = sum(a * b for a, b in zip(vh, vr)) / (nh * nr)
            pen = math.exp(-((len(H[p]) - len(R[p])) ** 2) / (2 * sigma**2))
            per_pair[p] += 10.0 * cos * pen / n_max
    return sum(per_pair) / N, per_pair


CASES = {
    # one matching n-gram ("red"), present in only one reference
    "two_pair_unique": (["my red hat", "one green car"], ["a red cat", "a blue dog"]),
    # shared-vocabulary corpus with a length gap
    "three_pair_mixed": (
        ["the image looks fake .", "the center region looks real .", "the image looks real"],
        ["the image looks fake . the center region has unnatural texture .",
         "the center region looks fake . it has unnatural texture .",
         "the image looks real ."],
    ),
}

if __name__ == "__main__":
    for name, (h, r) in CASES.items():
        mean, pairs = cider_bruteforce(h, r)
        print(name, repr(mean), [repr(x) for x in pairs])
    print("closed form two_pair_unique:", repr(1.25 / math.sqrt(6)))
