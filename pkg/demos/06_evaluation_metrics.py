"""Tour of the evaluation battery on synthetic inputs: Frechet feature
distance, BLEU, cosine alignment, Hamming coherence, rank AUROC.

Run:  python3 demos/06_evaluation_metrics.py
"""

import numpy as np

from crossgen import toydata as td
from crossgen.evalkit import (auroc, bleu, classification_report,
                              frechet_distance, gaussian_frechet,
                              hamming_distance, train_classifier)

rng = np.random.default_rng(0)

# Frechet distance between Gaussian samples; with equal covariances the
# population value is just the squared mean shift.
a = rng.normal(size=(2000, 4))
b = rng.normal(size=(2000, 4)) + np.array([1.0, 0, 0, 0])
print(f"frechet(N(0,I), N(e1,I)) ~ {frechet_distance(a, b):.3f}  (population 1.0)")
print(f"frechet of a set against itself: {frechet_distance(a, a):.2e}")
mu, s1, s2 = np.zeros(3), np.eye(3), 4.0 * np.eye(3)
print(f"closed form gaussian_frechet(N(0,I), N(0,4I)) = {gaussian_frechet(mu, s1, mu, s2):.3f}"
      "  (exact: 3*(1-2)^2 = 3)")

# BLEU with clipping, geometric mean and brevity penalty.
print("\nbleu('a b c d' vs 'a b c e'):",
      [round(v, 4) for v in bleu("abcd", ["abce"], max_n=2)], " (0.75, sqrt(0.5))")
lab = np.array([1, 0, 1, 0, 0], dtype=np.uint8)
r1 = td.render_report(lab, 3)
r2 = td.render_report(lab, 40)
print("same labels, two styles:", [round(v, 3) for v in bleu(list(r1), [list(r2)])])

# Hamming distance between label vectors extracted from two modalities.
print("\nhamming([1,0,1,0,0], [1,1,1,0,1]) =",
      hamming_distance([1, 0, 1, 0, 0], [1, 1, 1, 0, 1]))

# Rank-based AUROC is exact at small n, including ties.
print("auroc perfect ranking:", auroc([0.9, 0.7, 0.3, 0.1], [1, 1, 0, 0]))
print("auroc all ties:       ", auroc([0.5] * 6, [1, 0, 1, 0, 1, 0]))

# The classifier backbone: trains on views, reports AUROC/F1, and its
# penultimate layer provides the features behind the Frechet metric.
ds = td.generate_dataset(seed=21, n=600, positive_rates=[0.5] * 5)
tr, te = ds.subset("train"), ds.subset("test")
model, report = train_classifier(
    np.stack([r.view_a for r in tr]), np.stack([r.labels for r in tr]),
    np.stack([r.view_a for r in te]), np.stack([r.labels for r in te]),
    seed=21, epochs=30)
print(f"\nclassifier on real toy data: macro-F1 {report['f1']['macro']:.3f}, "
      f"micro AUROC {report['auroc']['micro']:.3f}")
feats = model.features(np.stack([r.view_a for r in te]))
print("feature matrix for FID:", feats.shape)
