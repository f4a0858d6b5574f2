# Walkthrough of the four similarity families and what each one consumes.
#
# Run: python demos/01_similarity_functions.py

import math

import numpy as np

from massrank import decompose_loglik, itc_score, itm_score, itm_score_vqa, mass_score, tl_score

print("=== 1. Embedding cosine (dual encoders) ===")
image_emb = np.array([0.2, 0.7, 0.1])
text_emb = np.array([0.25, 0.6, 0.15])
print("itc_score:", itc_score(image_emb, text_emb))
print("scaling the text embedding does not matter:", itc_score(image_emb, 10 * text_emb).value)

print()
print("=== 2. Matching classifier (logit or yes/no log-probs) ===")
print("itm_score(logit=1.3)   :", itm_score(1.3))
print("itm_score_vqa(yes, no) :", itm_score_vqa(math.log(0.8), math.log(0.2)))

print()
print("=== 3. Token likelihood (captioning model) ===")
# Per-token conditional log-probs for a 4-token caption.
cond = np.log([0.5, 0.9, 0.08, 0.6])
print("prob-mean   :", tl_score(cond, "prob-mean").value)
print("logprob-mean:", tl_score(cond, "logprob-mean").value)

print()
print("=== 4. Marginal-corrected log-ratio (the debiased score) ===")
# The same caption's text-only (marginal) log-probs.  Token 2 is very
# likely *regardless of the image* -- a language-prior token -- so the
# correction cancels it out of the comparison.
marginal = np.log([0.4, 0.92, 0.02, 0.5])
score = mass_score(cond, marginal)
print("mass_score  :", score.value)
per_token = cond - marginal
print("per-token log-ratios:", np.round(per_token, 4))
print("  -> token 2 (prior-driven, ratio ~1) contributes almost nothing;")
print("     token 3 (image-grounded) dominates the score.")

print()
print("=== Likelihood decomposition ===")
linguistic, association = decompose_loglik(cond, marginal)
print(f"linguistic (text-only) log-likelihood : {linguistic:+.4f}")
print(f"association (image-driven) part       : {association:+.4f}")
print(f"sum == total conditional log-likelihood: {linguistic + association:+.4f}"
      f" vs {float(np.sum(cond)):+.4f}")
