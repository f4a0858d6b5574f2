# The failure mode the debiased score exists to fix, reproduced exactly.
#
# Each constructed instance has two captions: caption A rides a strong
# language prior (its first token is likely under *every* image), caption B
# actually matches image B.  Mean token probability (TL) prefers A; the
# per-token log-ratio score (MASS) strips the prior and prefers B.  The
# construction guarantees the disagreement -- no tolerance, no sampling.
#
# Run: python demos/04_language_prior_failure.py

from massrank import (
    BiasedFamilySpec,
    ScoreMatrix,
    exact_conditional,
    exact_pmi,
    export_family,
    make_biased_family,
    mass_score,
    pairwise_ranking_accuracy,
    tl_score,
)
from massrank.toy import FAMILY_CAPTION_A, FAMILY_CAPTION_B

instances = make_biased_family(BiasedFamilySpec(prior_strength=0.9, n_instances=100, seed=7))

model, foil = instances[0]
img_b = foil.image
print("=== one instance, image B ===")
for name, caption in (("A (prior-backed foil)", FAMILY_CAPTION_A),
                      ("B (image-matched)    ", FAMILY_CAPTION_B)):
    cond = exact_conditional(model, img_b, caption)
    print(f"caption {name}: TL prob-mean = {tl_score(cond, 'prob-mean').value:.4f}"
          f"   exact PMI = {exact_pmi(model, img_b, caption):+.4f}")
print("TL ranks the foil higher; PMI ranks the true caption higher.")

print()
print("=== all 100 instances through the metric suite ===")
table, foils = export_family(instances)
queries, candidates = table.image_ids(), table.text_ids()
mass_entries, tl_entries = {}, {}
for image in queries:
    for text in candidates:
        cond = table.conditional(image, text)
        mass_entries[(image, text)] = mass_score(cond, table.conditional("null", text)).value
        tl_entries[(image, text)] = tl_score(cond, "prob-mean").value
mass_matrix = ScoreMatrix.from_entries(mass_entries, queries, candidates)
tl_matrix = ScoreMatrix.from_entries(tl_entries, queries, candidates)
print("pairwise ranking accuracy, MASS        :",
      pairwise_ranking_accuracy(mass_matrix, foils))
print("pairwise ranking accuracy, TL prob-mean:",
      pairwise_ranking_accuracy(tl_matrix, foils))
