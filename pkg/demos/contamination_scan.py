"""Contamination analysis on a synthetic corpus with planted leaks.

Run: python demos/contamination_scan.py
"""

from qwenkit import Rng, TokenSeq, filter_corpus, lcs_len, normalize
from qwenkit.decontam import MODE_TEST_NGRAM, MODE_TRAIN_LCS, format_report

# Normalization strips punctuation and symbols, lowercases, and splits on
# whitespace; both criteria operate on these word tokens.
print("normalize('Hello, World! 2+2=4?') ->",
      normalize("Hello, World! 2+2=4?").tokens, "\n")

# Build 60 training documents from one word pool and two small "benchmarks"
# from a disjoint pool, then paste verbatim benchmark excerpts into four
# training documents. Disjoint pools make the expected verdicts unambiguous.
rng = Rng(7)
train_pool = [f"word{i}" for i in range(120)]
bench_pool = [f"term{i}" for i in range(120)]


def pick(pool, n):
    return tuple(pool[int(v % len(pool))] for v in rng.uint64s(n))


bench_a = [TokenSeq(pick(bench_pool, 18), f"a{i}") for i in range(3)]
bench_b = [TokenSeq(pick(bench_pool, 18), f"b{i}") for i in range(2)]
samples = bench_a + bench_b

planted = {5, 19, 33, 47}
train = []
for i in range(60):
    words = list(pick(train_pool, 50))
    if i in planted:
        excerpt = samples[i % len(samples)].tokens
        words[8 : 8 + len(excerpt)] = excerpt
    train.append(TokenSeq(tuple(words), f"doc{i:02d}"))

# Train-side rule: drop a training document when its longest common
# subsequence with any benchmark sample reaches 13 tokens AND 60% of the
# shorter sequence. Both thresholds matter: a long document sharing only
# scattered words stays in.
kept, removed, report = filter_corpus(train, {"benchA": bench_a, "benchB": bench_b},
                                      MODE_TRAIN_LCS)
print("train-side scan:")
print(format_report(report, "text"))
print("removed docs:", sorted(d.source_id for d in removed))
for doc in removed:
    best = max(lcs_len(doc, s) for s in samples)
    print(f"  {doc.source_id}: longest shared subsequence {best} of {len(doc)} tokens")

# Test-side rule: a benchmark sample sharing any contiguous 13 normalized
# tokens with training is flagged. The planted excerpts came verbatim from
# four distinct samples, so exactly those four are contaminated.
kept_t, removed_t, report_t = filter_corpus(train,
                                            {"benchA": bench_a, "benchB": bench_b},
                                            MODE_TEST_NGRAM)
print("\ntest-side scan:")
print(format_report(report_t, "text"))
print("contaminated samples:", sorted(s.source_id for s in removed_t))
