"""MAML and FOREC on top of NMF++, then a training-time comparison.

The timing part writes timing.csv, timing.dat and a gnuplot script under
./runs/demo04/benchmark; ``gnuplot timing.gp`` there draws the bar chart.
"""

from marketrec.data import SyntheticSpec, generate_synthetic_markets, make_pairwise, split_markets
from marketrec.evaluation import evaluate
from marketrec.experiments import ExperimentConfig, run_benchmark
from marketrec.models import Model, ModelConfig, warm_start_nmf
from marketrec.training import FreezeMask, MamlConfig, TrainConfig, forec_adapt, train, train_maml

spec = SyntheticSpec(markets=("de", "jp", "in"), users_per_market=80, items_per_market=120,
                     interactions_per_user=30)
interactions, reg = generate_synthetic_markets(spec, seed=0)
splits = split_markets(interactions, reg, seed=0)
data = make_pairwise(splits["in"], splits["de"], seed=0)
gid = reg.market_id("in")
tcfg = TrainConfig(epochs=8, seed=1)


def score(model):
    return evaluate(model, splits["in"].test, data.index, gid, "in").mean_ndcg


def fresh(kind):
    return Model(ModelConfig(kind, False, data.n_users, data.n_items, data.n_markets), seed=1)


gmf, _ = train(fresh("gmf"), data, tcfg)
mlp, _ = train(fresh("mlp"), data, tcfg)
nmf, rec = train(warm_start_nmf(gmf, mlp), data, tcfg)  # towers copied from the donors
print(f"NMF++  nDCG@10 {score(nmf):.4f}  {rec.seconds:.2f}s")

# Each market is a task: adapt on a support batch, step on the query loss.
maml, rec = train_maml(nmf, data, MamlConfig(meta_epochs=8, seed=1))
print(f"MAML   nDCG@10 {score(maml):.4f}  {rec.seconds:.2f}s")

# FOREC: fork, freeze item embeddings and MLP layers, fine-tune on the target only.
in_local = int(data.index.encode_markets([gid])[0])
target_only = data.subset_market(in_local)  # same index space as the MAML model
forec, rec = forec_adapt(maml, target_only, FreezeMask.forec_default(), tcfg)
print(f"FOREC  nDCG@10 {score(forec):.4f}  {rec.seconds:.2f}s  frozen={sorted(FreezeMask.forec_default().frozen)}")

# Timing over the full pipeline, minimum of two interleaved repeats.
bench = run_benchmark(ExperimentConfig(
    synthetic=spec, targets=("in",), sources=("de",),
    methods=("NMF++", "MA-NMF++", "MAML"), train=TrainConfig(epochs=4),
    maml=MamlConfig(meta_epochs=4), repeats=2, out_dir="runs/demo04",
))
for r in bench.rows:
    print(f"{r['method']:9s} {r['seconds']:.2f}s")
print("MAML / NMF++ =", round(bench.seconds("MAML", "in") / bench.seconds("NMF++", "in"), 1))
print("gnuplot script:", bench.script)
