"""Group-wise progressive pruning: reverse-order group pruning driven by
per-layer evolution with interleaved fine-tuning, plus the random / l2 /
geometric-median baseline criteria and a uniform-retention sweep.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import network as N
from .data import Dataset
from .evolution import (
    EvolutionConfig,
    EvolutionResult,
    evolve_subnetwork,
    knee_point,
    mask_hex,
)
from .exceptions import ArgumentError, DataError, PlanError
from .network import FilterMask, Network
from .objectives import EvaluationContext
from . import tensor as T


@dataclass
class GroupPlan:
    """First pruned conv ordinal plus per-group block counts."""

    l0: int
    block_counts: list[int]

    def __post_init__(self):
        if self.l0 < 1:
            raise PlanError("l0 must be >= 1")
        if any(b < 1 for b in self.block_counts):
            raise PlanError("block counts must be positive")


@dataclass
class FineTuneConfig:
    lr: float = 0.01
    epochs: int = 160
    milestones: tuple[int, ...] = (50, 100)
    batch_size: int = 64
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        ms = tuple(self.milestones)
        if list(ms) != sorted(set(ms)):
            raise ArgumentError("milestones must be strictly increasing")
        if self.epochs > 0 and any(m >= self.epochs for m in ms):
            raise ArgumentError("milestones must be < epochs")
        self.milestones = ms


# short schedule so full pruning runs finish in minutes; the 160-epoch
# schedule above remains the paper-scale default of FineTuneConfig()
DESK_FINETUNE = FineTuneConfig(lr=0.01, epochs=6, milestones=(3, 5), batch_size=32)


def lr_at(cfg: FineTuneConfig, epoch: int) -> float:
    """Learning rate for a 0-based epoch: divided by 10 at each milestone."""
    drops = sum(1 for m in cfg.milestones if epoch >= m)
    return cfg.lr / (10.0 ** drops)


@dataclass
class PruneReport:
    params_before: int = 0
    params_after: int = 0
    flops_before: int = 0
    flops_after: int = 0
    baseline_accuracy: float = 0.0
    final_accuracy: float = 0.0
    layers: list[dict] = field(default_factory=list)
    stages: list[dict] = field(default_factory=list)
    events: list[str] = field(default_factory=list)

    def retained_rates(self) -> dict[int, float]:
        return {row["ordinal"]: row["retained_rate"] for row in self.layers}

    def to_dict(self) -> dict:
        return {
            "params_before": self.params_before,
            "params_after": self.params_after,
            "remained_parameter_pct": 100.0 * self.params_after / self.params_before
            if self.params_before
            else 100.0,
            "flops_before": self.flops_before,
            "flops_after": self.flops_after,
            "baseline_accuracy": self.baseline_accuracy,
            "final_accuracy": self.final_accuracy,
            "layers": self.layers,
            "stages": self.stages,
            "events": self.events,
        }


# ---------------------------------------------------------------------------
# grouping


def group_layers(plan: GroupPlan, num_convs: int) -> list[list[int]]:
    """Group g holds ordinals l0-1 + sum(B_i, i<g) + 1..B_g, ascending."""
    groups = []
    start = plan.l0
    for b in plan.block_counts:
        groups.append(list(range(start, start + b)))
        start += b
    if groups and groups[-1][-1] > num_convs:
        raise PlanError(
            f"plan covers conv {groups[-1][-1]} but network has {num_convs} convs"
        )
    return groups


# ---------------------------------------------------------------------------
# training / evaluation


def evaluate_accuracy(net: Network, images: np.ndarray, labels: np.ndarray,
                      batch_size: int = 256) -> float:
    if images.shape[0] == 0:
        raise DataError("empty evaluation split")
    correct = 0
    for i in range(0, images.shape[0], batch_size):
        logits, _ = N.forward(net, images[i : i + batch_size])
        correct += int((logits.argmax(axis=1) == labels[i : i + batch_size]).sum())
    return correct / images.shape[0]


def _clone(net: Network) -> Network:
    return Network(copy.deepcopy(net.layers), net.input_shape)


def finetune_with_history(
    net: Network, dataset: Dataset, cfg: FineTuneConfig
) -> tuple[Network, list[float]]:
    """Momentum SGD over softmax cross-entropy with the step lr schedule.

    Shuffle order is fixed by cfg.seed; returns the tuned network and the
    mean training loss per epoch.
    """
    dataset.require_nonempty()
    net = _clone(net)
    param_positions = [
        i for i, lay in enumerate(net.layers) if lay.kind in ("conv", "dense")
    ]
    velocity = {i: None for i in param_positions}
    rng = np.random.default_rng(cfg.seed)
    x, y = dataset.train_images, dataset.train_labels
    losses = []
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        order = rng.permutation(x.shape[0])
        epoch_loss = 0.0
        nbatch = 0
        for i in range(0, x.shape[0], cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            logits, inputs, records = N.forward_cached(net, x[idx])
            loss, grad = T.softmax_cross_entropy(logits, y[idx])
            grads = N.backward(net, inputs, records, grad)
            for pos in param_positions:
                lay = net.layers[pos]
                gw, gb = grads[pos]
                if velocity[pos] is None:
                    velocity[pos] = [np.zeros_like(gw), np.zeros_like(gb)]
                if lay.kind == "conv":
                    params = [lay.params.weights, lay.params.bias]
                else:
                    params = [lay.weights, lay.bias]
                new_p, velocity[pos] = T.sgd_update(
                    params, [gw, gb], lr, cfg.momentum, velocity[pos]
                )
                if lay.kind == "conv":
                    lay.params.weights, lay.params.bias = new_p
                else:
                    lay.weights, lay.bias = new_p
            epoch_loss += loss
            nbatch += 1
        losses.append(epoch_loss / max(nbatch, 1))
    return net, losses


def finetune(net: Network, dataset: Dataset, cfg: FineTuneConfig) -> Network:
    return finetune_with_history(net, dataset, cfg)[0]


def calibration_batch(dataset: Dataset, size: int, seed: int) -> np.ndarray:
    """Fixed seeded subset of the training images used for feature-map
    reconstruction; makes the evolution deterministic."""
    dataset.require_nonempty()
    n = dataset.train_images.shape[0]
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=min(size, n), replace=False)
    return dataset.train_images[np.sort(idx)]


def _layer_seed(base_seed: int, ordinal: int) -> int:
    return int(np.random.SeedSequence((base_seed, ordinal)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# the main framework


def smoea_prune(
    net: Network,
    dataset: Dataset,
    plan: GroupPlan,
    evo: EvolutionConfig,
    ft: FineTuneConfig,
    calibration_size: int = 128,
) -> tuple[Network, PruneReport]:
    """Prune groups in reverse order; inside a group, evolve each block's
    mask on the current network state, then compact and fine-tune before
    moving to the next (earlier) group."""
    report = PruneReport(
        params_before=N.count_params(net),
        flops_before=N.count_flops(net),
        baseline_accuracy=evaluate_accuracy(net, dataset.test_images, dataset.test_labels)
        if dataset.test_images.size
        else float("nan"),
    )
    groups = group_layers(plan, net.num_convs)
    calib = calibration_batch(dataset, calibration_size, evo.seed)
    current = net
    for g in range(len(groups) - 1, -1, -1):
        masks: dict[int, FilterMask] = {}
        for l in groups[g]:
            _, captured = N.forward(current, calib, capture={l})
            sub = N.extract_subnetwork(current, l)
            ctx = EvaluationContext.build(sub, captured[l], evo.alpha_mode)
            layer_cfg = replace(evo, seed=_layer_seed(evo.seed, l))
            result = evolve_subnetwork(ctx, layer_cfg)
            knee = knee_point(result.front)
            mask = FilterMask(knee.genes.astype(np.uint8), l)
            current = N.apply_mask(current, mask)
            masks[l] = mask
            report.events.append(f"evolve layer {l}")
            report.layers.append(
                {
                    "ordinal": l,
                    "num_filters": int(mask.bits.shape[0]),
                    "retained_count": mask.retained,
                    "retained_rate": mask.retained / mask.bits.shape[0],
                    "knee": {
                        "filter_pct": knee.objectives.filter_pct,
                        "error": knee.objectives.error,
                    },
                    "front": [
                        {
                            "filter_pct": ind.objectives.filter_pct,
                            "error": ind.objectives.error,
                            "retained_count": ind.retained,
                            "mask_hex": mask_hex(ind.genes),
                        }
                        for ind in result.front
                    ],
                }
            )
        current = N.compact(current, masks)
        current = finetune(current, dataset, ft)
        acc = (
            evaluate_accuracy(current, dataset.test_images, dataset.test_labels)
            if dataset.test_images.size
            else float("nan")
        )
        report.events.append(f"finetune group {g + 1}")
        report.stages.append(
            {"group": g + 1, "layers": groups[g], "accuracy": acc}
        )
    report.layers.sort(key=lambda row: row["ordinal"])
    report.params_after = N.count_params(current)
    report.flops_after = N.count_flops(current)
    report.final_accuracy = (
        evaluate_accuracy(current, dataset.test_images, dataset.test_labels)
        if dataset.test_images.size
        else float("nan")
    )
    return current, report


# ---------------------------------------------------------------------------
# baselines


def baseline_mask(
    weights: np.ndarray,
    retain_fraction: float,
    criterion: str,
    rng: np.random.Generator,
) -> FilterMask:
    """Mask for one conv layer by a heuristic criterion.

    random: uniform subset. l2: keep the largest-norm filters. fpgm: prune
    the filters with the smallest summed distance to all others (the most
    replaceable ones). Ties prune the lower filter index first.
    """
    if not 0 < retain_fraction <= 1:
        raise ArgumentError(f"retain_fraction must be in (0, 1], got {retain_fraction}")
    n = weights.shape[0]
    keep = max(1, round(retain_fraction * n))
    bits = np.zeros(n, dtype=np.uint8)
    if criterion == "random":
        bits[rng.choice(n, size=keep, replace=False)] = 1
    elif criterion == "l2":
        norms = np.sqrt((weights.reshape(n, -1) ** 2).sum(axis=1))
        order = np.argsort(norms, kind="stable")  # ascending: prune front
        bits[order[n - keep :]] = 1
    elif criterion == "fpgm":
        flat = weights.reshape(n, -1)
        diff = flat[:, None, :] - flat[None, :, :]
        dist_sums = np.sqrt((diff ** 2).sum(axis=2)).sum(axis=1)
        order = np.argsort(dist_sums, kind="stable")
        bits[order[n - keep :]] = 1
    else:
        raise ArgumentError(f"unknown criterion {criterion!r}")
    return FilterMask(bits, 0)


def baseline_prune(
    net: Network,
    dataset: Dataset,
    plan: GroupPlan,
    rates: dict[int, float],
    criterion: str,
    ft: FineTuneConfig,
    seed: int = 0,
) -> tuple[Network, list[float]]:
    """Same reverse-group prune/fine-tune protocol as the evolved pipeline,
    with per-layer masks chosen by a baseline criterion at the given rates."""
    groups = group_layers(plan, net.num_convs)
    current = net
    accuracies = []
    for g in range(len(groups) - 1, -1, -1):
        masks: dict[int, FilterMask] = {}
        for l in groups[g]:
            rng = np.random.default_rng(np.random.SeedSequence((seed, l)))
            mask = baseline_mask(current.conv(l).params.weights, rates[l], criterion, rng)
            mask = FilterMask(mask.bits, l)
            current = N.apply_mask(current, mask)
            masks[l] = mask
        current = N.compact(current, masks)
        current = finetune(current, dataset, ft)
        if dataset.test_images.size:
            accuracies.append(
                evaluate_accuracy(current, dataset.test_images, dataset.test_labels)
            )
    return current, accuracies


# ---------------------------------------------------------------------------
# uniform-retention sweep


def sweep_uniform_retention(
    net: Network,
    dataset: Dataset,
    fractions: list[float],
    evo: EvolutionConfig,
    ft: FineTuneConfig,
    layers: list[int] | None = None,
    calibration_size: int = 128,
) -> list[dict]:
    """Evolve each target layer once, then for each fraction pick the front
    member with the closest retention (ties toward lower error), prune all
    layers at once, fine-tune and record accuracy."""
    if layers is None:
        layers = list(range(1, net.num_convs + 1))
    for f in fractions:
        if not 0 < f <= 1:
            raise ArgumentError(f"fraction {f} outside (0, 1]")
    calib = calibration_batch(dataset, calibration_size, evo.seed)
    fronts: dict[int, EvolutionResult] = {}
    for l in layers:
        _, captured = N.forward(net, calib, capture={l})
        sub = N.extract_subnetwork(net, l)
        ctx = EvaluationContext.build(sub, captured[l], evo.alpha_mode)
        fronts[l] = evolve_subnetwork(ctx, replace(evo, seed=_layer_seed(evo.seed, l)))
    params_before = N.count_params(net)
    baseline_acc = evaluate_accuracy(net, dataset.test_images, dataset.test_labels)
    rows = []
    for f in fractions:
        if f == 1.0:
            rows.append(
                {"fraction": 1.0, "remained_params_pct": 100.0, "accuracy": baseline_acc}
            )
            continue
        current = net
        masks = {}
        for l in layers:
            members = fronts[l].front
            best = min(
                members,
                key=lambda ind: (abs(ind.objectives.filter_pct - f), ind.objectives.error),
            )
            mask = FilterMask(best.genes.astype(np.uint8), l)
            current = N.apply_mask(current, mask)
            masks[l] = mask
        current = N.compact(current, masks)
        current = finetune(current, dataset, ft)
        rows.append(
            {
                "fraction": f,
                "remained_params_pct": 100.0 * N.count_params(current) / params_before,
                "accuracy": evaluate_accuracy(
                    current, dataset.test_images, dataset.test_labels
                ),
            }
        )
    return rows
