#!/usr/bin/env python3
"""End-to-end experiment on synthetic data.

For each seed: generate a dataset, split it 80/20 per class, train the three
fusion heads, fit the three-view embedding on the train side, and score the
test side four ways (overhead-only, ground-only, multimodal, and multimodal
with the ground view replaced by retrieval). Prints mean ± std over seeds.
"""

import argparse
import tempfile
from pathlib import Path


from urbanfuse import synth
from urbanfuse.aggregation import aggregate
from urbanfuse.embedding import fit_embedding, training_views
from urbanfuse.evaluation import average_reports, evaluate, format_mean_std
from urbanfuse.fusion import TrainConfig, create_model, predict, train
from urbanfuse.io import stratified_split
from urbanfuse.retrieval import build_index, predict_missing


def run_seed(seed: int, workdir: Path, k_neighbors: int):
    manifest = synth.generate(synth.SynthConfig(seed=seed), workdir / f"seed{seed}")
    split = stratified_split(manifest, seed=seed)
    train_records, test_records = split.partition(manifest)
    k = manifest.num_classes

    heads = {}
    for mode, dims in (
        ("overhead_only", (0, manifest.dim_overhead)),
        ("ground_only", (manifest.dim_ground, 0)),
        ("multimodal", (manifest.dim_ground, manifest.dim_overhead)),
    ):
        head = create_model(mode, k, dims[0], dims[1], seed=seed)
        head, _ = train(head, manifest, split, TrainConfig(seed=seed))
        heads[mode] = head

    reports = {}
    for mode, head in heads.items():
        preds, truths = [], []
        for rec in test_records:
            if mode != "overhead_only" and rec.n_views == 0:
                continue
            ground = aggregate(rec.ground_views) if mode != "overhead_only" else None
            preds.append(predict(head, overhead=rec.overhead, ground=ground)[0])
            truths.append(rec.label)
        reports[mode] = evaluate(preds, truths, k)

    ground, overhead, labels, ids = training_views(train_records)
    emb = fit_embedding(ground, overhead, labels, k)
    index = build_index(emb, ground, labels, ids)
    preds = [
        predict_missing(heads["multimodal"], emb, index, rec.overhead, k=k_neighbors)[0]
        for rec in test_records
    ]
    reports["retrieved_ground"] = evaluate(preds, [r.label for r in test_records], k)
    return reports


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", default="1,2,3,4,5", help="comma-separated seeds")
    parser.add_argument("--k", type=int, default=1, help="retrieval neighbors for the missing-ground run")
    parser.add_argument("--workdir", default=None, help="where to write datasets (default: temp dir)")
    args = parser.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    with tempfile.TemporaryDirectory() as tmp:
        workdir = Path(args.workdir) if args.workdir else Path(tmp)
        per_mode = {}
        for seed in seeds:
            print(f"seed {seed} ...")
            for mode, report in run_seed(seed, workdir, args.k).items():
                per_mode.setdefault(mode, []).append(report)

    print(f"\ntest-set accuracy over {len(seeds)} split(s):")
    print(f"{'model':<20} {'OA':>16} {'AA':>16}")
    for mode in ("overhead_only", "ground_only", "multimodal", "retrieved_ground"):
        avg = average_reports(per_mode[mode])
        print(f"{mode:<20} {format_mean_std(avg.oa_mean, avg.oa_std):>16} "
              f"{format_mean_std(avg.aa_mean, avg.aa_std):>16}")


if __name__ == "__main__":
    main()
