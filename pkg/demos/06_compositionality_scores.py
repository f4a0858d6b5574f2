# Two-image / two-caption compositionality scoring: text, image, and group
# metrics with tag breakdowns, plus the chance-level sanity check.
#
# Run: python demos/06_compositionality_scores.py

import numpy as np

from massrank import ScoreMatrix, WinogroundSample, winoground_scores, winoground_tag_breakdown

print("=== one sample, worked by hand ===")
# Gold pairing is (i0,c0) and (i1,c1).  The scorer below gets the text
# side right for i0 but confuses the images for c1.
matrix = ScoreMatrix(
    ("i0", "i1"), ("c0", "c1"),
    np.array([[0.9, 0.4],
              [0.3, 0.5]]),
)
sample = WinogroundSample("demo", "i0", "i1", "c0", "c1")
got = winoground_scores(matrix, [sample])
print("scores s(i,c):", dict(zip(["s00", "s01", "s10", "s11"], matrix.values.ravel())))
print("text  correct (s00>s01 and s11>s10):", bool(got["text"]))
print("image correct (s00>s10 and s11>s01):", bool(got["image"]))
print("group correct (both)               :", bool(got["group"]))

print()
print("=== tag breakdown ===")
rng = np.random.default_rng(3)
n = 200
queries = tuple(f"i{j}" for j in range(2 * n))
cands = tuple(f"c{j}" for j in range(2 * n))
values = rng.uniform(0, 1, (2 * n, 2 * n))
# Make diagonal pairs clearly win for the first half (the "easy" samples).
for j in range(n // 2):
    values[2 * j, 2 * j] += 2.0
    values[2 * j + 1, 2 * j + 1] += 2.0
matrix = ScoreMatrix(queries, cands, values)
samples = [
    WinogroundSample(
        f"s{j}", f"i{2*j}", f"i{2*j+1}", f"c{2*j}", f"c{2*j+1}",
        tags=frozenset() if j < n // 2 else frozenset({"Visually Difficult"}),
    )
    for j in range(n)
]
for name, stats in winoground_tag_breakdown(matrix, samples).items():
    print(f"{name:20} n={stats['n']:4}  text={stats['text']:.3f}"
          f"  image={stats['image']:.3f}  group={stats['group']:.3f}")
print('("No-Tag" is the empty-tag subset; "Rest" is its complement)')

print()
print("=== chance level for a random scorer ===")
total = 20_000
correct = {"text": 0, "image": 0, "group": 0}
for start in range(0, total, 500):
    b = 500
    q = tuple(f"i{j}" for j in range(2 * b))
    c = tuple(f"c{j}" for j in range(2 * b))
    m = ScoreMatrix(q, c, rng.uniform(0, 1, (2 * b, 2 * b)))
    batch = [WinogroundSample(f"s{j}", f"i{2*j}", f"i{2*j+1}", f"c{2*j}", f"c{2*j+1}")
             for j in range(b)]
    got = winoground_scores(m, batch)
    for key in correct:
        correct[key] += got[f"{key}_correct"]
print(f"text  ~ 1/4: {correct['text'] / total:.4f}")
print(f"image ~ 1/4: {correct['image'] / total:.4f}")
print(f"group ~ 1/6: {correct['group'] / total:.4f}")
