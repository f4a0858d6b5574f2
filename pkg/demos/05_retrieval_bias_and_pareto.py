# Retrieval metrics with gender balance: caption neutralization, Recall@K,
# Bias@K (signed and absolute), two-stage re-ranking, and the recall/bias
# Pareto frontier.
#
# Run: python demos/05_retrieval_bias_and_pareto.py

import numpy as np

from massrank import (
    CandidateRecord,
    ParetoPoint,
    QueryRecord,
    RetrievalDataset,
    ScoreMatrix,
    bias_at_k,
    classify_caption,
    default_lexicon,
    neutralize_caption,
    pareto_frontier,
    recall_at_k,
)

lex = default_lexicon()

print("=== caption gender classification and neutralization ===")
captions = [
    "A man riding a snowboard down a hill",
    "A woman and her dog on the beach",
    "Two people shaking hands",
    "A man and a woman cutting a cake",
]
for cap in captions:
    label = classify_caption(cap, lex)
    print(f"[{label:9}] {cap}")
    print(f"            -> {neutralize_caption(cap, lex)}")

print()
print("=== a tiny retrieval pool with gendered images ===")
rng = np.random.default_rng(0)
# 12 candidate images: 5 'masculine', 3 'feminine', 4 neutral.
genders = ["masculine"] * 5 + ["feminine"] * 3 + ["neutral"] * 4
cands = tuple(CandidateRecord(f"img{j:02d}", g) for j, g in enumerate(genders))
queries = tuple(
    QueryRecord(f"q{i}", frozenset({f"img{(3 * i) % 12:02d}"})) for i in range(6)
)
ds = RetrievalDataset("text-to-image", queries, cands)

# A biased scorer: masculine images get a +0.5 bump regardless of query.
bump = np.array([0.5 if g == "masculine" else 0.0 for g in genders])
base = rng.uniform(0, 1, (len(queries), len(cands)))
gold_boost = np.zeros_like(base)
for i, q in enumerate(queries):
    for j, c in enumerate(cands):
        if c.id in q.gold:
            gold_boost[i, j] = 0.8
biased = ScoreMatrix(tuple(q.id for q in queries), tuple(c.id for c in cands),
                     base + bump + gold_boost)
fair = ScoreMatrix(biased.queries, biased.candidates, base + gold_boost)

for name, matrix in (("biased scorer", biased), ("debiased scorer", fair)):
    print(f"{name:16} recall@3 = {recall_at_k(matrix, ds, 3):.3f}"
          f"   bias@3 = {bias_at_k(matrix, ds, 3):+.3f}"
          f"   |bias|@3 = {bias_at_k(matrix, ds, 3, absolute=True):.3f}")

print()
print("=== two-stage: shortlist with the biased scorer, re-rank fair ===")
two_stage = (biased, 6)
print(f"two-stage recall@3 = {recall_at_k(fair, ds, 3, two_stage):.3f}"
      f"   bias@3 = {bias_at_k(fair, ds, 3, two_stage=two_stage):+.3f}")
print("(candidates outside the shortlist can never be retrieved)")

print()
print("=== Pareto frontier over operating points ===")
points = [
    ParetoPoint("itc", 0.52, 0.19),
    ParetoPoint("itm", 0.55, 0.23),
    ParetoPoint("tl", 0.49, 0.11),
    ParetoPoint("mass", 0.64, 0.12),
    ParetoPoint("clip-clip", 0.41, 0.07),
]
frontier = {p.label for p in pareto_frontier(points)}
for p in points:
    marker = "*" if p.label in frontier else " "
    print(f" {marker} {p.label:10} recall={p.recall:.2f}  |bias|={abs(p.bias):.2f}")
print("(* = not dominated in recall and |bias|)")
