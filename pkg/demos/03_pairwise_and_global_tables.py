"""Pairwise AVG/BST tables and a global table on synthetic data.

Everything goes through ExperimentConfig, the same object the CLI builds.
Outputs land in ./runs/demo03 (CSV, JSON and text per table, plus one
manifest per cell).  Takes a couple of minutes on one core.
"""

from marketrec.data import SyntheticSpec
from marketrec.experiments import ExperimentConfig, run_global, run_pairwise
from marketrec.training import TrainConfig

spec = SyntheticSpec(markets=("de", "jp", "in"), users_per_market=80, items_per_market=120,
                     interactions_per_user=30, divergence=0.3)

cfg = ExperimentConfig(
    synthetic=spec,
    targets=("de", "in"),
    sources=("de", "jp", "in"),
    methods=("GMF", "GMF++", "MA-GMF++", "NMF++", "MA-NMF++"),
    train=TrainConfig(epochs=8),
    out_dir="runs/demo03",
)

pw = run_pairwise(cfg)
# AVG: mean over every source.  BST: the source with the best validation score.
print(pw.avg.render())
print(pw.bst.render())
for r in pw.significance[:4]:
    print(f"  {r.model_a} vs {r.model_b} on {r.market}: p={r.p:.3g} significant={r.significant}")

# The global setting trains one model on every market, no downsampling.
# Re-running resumes: finished cells are read back from their manifests.
g = run_global(cfg)
print(g.table.render())
print("cell manifest:", g.cell.manifest)
