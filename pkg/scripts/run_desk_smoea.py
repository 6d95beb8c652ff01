"""End-to-end desk-scale demo: train a small CNN on synthetic data, prune
it with the evolutionary pipeline, and compare against random masks at the
same per-layer retained rates.

    python3 scripts/run_desk_smoea.py --seed 1
"""

import argparse
import json

from smoea.data import SyntheticParams, generate_synthetic
from smoea.evolution import EvolutionConfig
from smoea.network import build_toy_cnn, count_flops, count_params
from smoea.pipeline import (
    FineTuneConfig,
    GroupPlan,
    baseline_prune,
    finetune,
    smoea_prune,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--generations", type=int, default=25)
    ap.add_argument("--population", type=int, default=40)
    ap.add_argument("--json", action="store_true", help="dump the full report")
    args = ap.parse_args()

    dataset = generate_synthetic(SyntheticParams(seed=args.seed))
    net = build_toy_cnn(seed=args.seed)
    train_cfg = FineTuneConfig(
        lr=0.01, epochs=8, milestones=(4, 6), batch_size=32, seed=args.seed
    )
    print("training baseline ...")
    net = finetune(net, dataset, train_cfg)

    evo = EvolutionConfig(
        population_size=args.population, elite_size=15,
        generations=args.generations, seed=args.seed,
    )
    group_ft = FineTuneConfig(
        lr=0.01, epochs=4, milestones=(2, 3), batch_size=32, seed=args.seed
    )
    plan = GroupPlan(1, [1, 1, 1, 1])
    print("pruning with evolved knee-point masks ...")
    pruned, report = smoea_prune(net, dataset, plan, evo, group_ft,
                                 calibration_size=64)

    print("pruning with random masks at the same retained rates ...")
    _, rand_accs = baseline_prune(
        net, dataset, plan, report.retained_rates(), "random", group_ft,
        seed=args.seed,
    )

    print()
    print(f"baseline accuracy        {report.baseline_accuracy:.4f}")
    print(f"evolved-prune accuracy   {report.final_accuracy:.4f}")
    print(f"random-prune accuracy    {rand_accs[-1]:.4f}")
    print(f"parameters               {report.params_before} -> {report.params_after} "
          f"({100.0 * report.params_after / report.params_before:.1f}%)")
    print(f"flops                    {report.flops_before} -> {report.flops_after}")
    for row in report.layers:
        print(f"  conv {row['ordinal']}: kept {row['retained_count']}/"
              f"{row['num_filters']} filters "
              f"(knee error {row['knee']['error']:.4g})")
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))


if __name__ == "__main__":
    main()
