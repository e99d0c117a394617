"""AP@k (fraction of action points within k pixels) and the output quantile."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .batching import batch_for
from .decoder import ActionSample, HeatmapPair, extract_action
from .foldworld import Dataset
from .tensor import ContractError

# the reference thresholds 5/10/50 px at 224 px scaled to a 32 px image
DEFAULT_THRESHOLDS = (1, 2, 8)


def ap_at_k(pred: ActionSample, gt: ActionSample, k: float) -> float:
    d = np.linalg.norm(pred.points() - gt.points(), axis=1)
    return float(np.mean(d <= k))


def quantile(prob: np.ndarray, gt_pos: tuple[int, int]) -> float:
    """Mid-rank of the ground-truth pixel's probability among all pixels."""
    prob = np.asarray(prob)
    r, c = gt_pos
    if not (0 <= r < prob.shape[0] and 0 <= c < prob.shape[1]):
        raise ContractError(f"ground-truth pixel {gt_pos} outside the {prob.shape} map")
    p = prob[r, c]
    below = np.count_nonzero(prob < p)
    ties = np.count_nonzero(prob == p)
    return (below + 0.5 * ties) / prob.size


def step_quantile(maps: HeatmapPair, gt: ActionSample) -> float:
    vals = [quantile(maps.pick, gt.pick_left), quantile(maps.pick, gt.pick_right),
            quantile(maps.place, gt.place_left), quantile(maps.place, gt.place_right)]
    return float(np.mean(vals))


def evaluate(model, dataset: Dataset, thresholds=DEFAULT_THRESHOLDS, nms_radius: float = 3.0,
             batch_size: int = 16) -> dict:
    """Greedy-decode every step and aggregate AP@k and the quantile (in percent).

    ``by_scenario`` splits by episode scenario; ``ambiguous_steps`` covers only
    the steps whose correct action depends on history.
    """
    items = dataset.step_index()
    if not items:
        raise ContractError("cannot evaluate on an empty dataset")
    groups: dict[str, list[tuple[dict, float]]] = defaultdict(list)
    rows = []
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        batch = batch_for(dataset, chunk, model.ctx, model.vocab, model.arch.max_text_len)
        for (e, s), maps in zip(chunk, model.heatmaps(batch)):
            ep = dataset.episodes[e]
            gt = ep.steps[s].action
            pred = extract_action(maps, nms_radius)
            aps = {str(k): ap_at_k(pred, gt, k) for k in thresholds}
            q = step_quantile(maps, gt)
            rows.append((aps, q))
            groups[ep.scenario].append((aps, q))
            if ep.steps[s].ambiguous:
                groups["ambiguous_steps"].append((aps, q))

    def summarize(entries):
        return {"ap": {str(k): float(np.mean([a[str(k)] for a, _ in entries])) for k in thresholds},
                "quantile_pct": 100.0 * float(np.mean([q for _, q in entries])),
                "n_steps": len(entries)}

    report = summarize(rows)
    report["by_scenario"] = {name: summarize(v) for name, v in sorted(groups.items())}
    return report
