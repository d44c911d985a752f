"""Gradient-weighted channel importance, ranking, and channel selection.

For a chosen class logit, per-channel weights are the gradient of that logit
w.r.t. a target activation tensor, averaged over the feature axis; the raw
relevance map is the ReLU of weight times mean activation, averaged over
frames into one score per channel.

Two target layers are supported. "input" (default) attributes against the
normalized feature tensor, where the channel axis is explicit and has not yet
been mixed by any channel-to-channel projection. "spatial" attributes against
the spatial-block output; its channel tokens sit downstream of dense
channel-mixing maps, which empirically smears planted-channel evidence across
tokens at small scale, so it is kept only for comparison runs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import Tape
from .errors import DataError, NumericalError
from .model import ModelConfig, forward, wrap_params

TARGET_LAYERS = ("input", "spatial")


@dataclass
class ChannelReport:
    scores: np.ndarray            # (C,), non-negative
    ranking: list[int]            # channel indices, descending score
    provenance: dict

    def top_k(self, k: int) -> list[int]:
        if not (1 <= k <= len(self.ranking)):
            raise DataError(f"k={k} out of range 1..{len(self.ranking)}")
        return self.ranking[:k]


def grad_cam_channels(params: dict[str, np.ndarray], cfg: ModelConfig,
                      sample: np.ndarray, target_class: int,
                      target_layer: str = "input",
                      weight_by_frame_attention: bool = False) -> np.ndarray:
    """Per-channel relevance of one sample for one class logit."""
    if not (0 <= target_class < cfg.classes):
        raise DataError(f"target class {target_class} out of range")
    if target_layer not in TARGET_LAYERS:
        raise DataError(f"unknown attribution target layer {target_layer!r}")
    tape = Tape()
    logits, aux = forward(tape, wrap_params(params), cfg, sample)
    target = tape.reshape(tape.slice_last(logits, target_class,
                                          target_class + 1), ())
    tape.backward(target)
    chosen = aux["input"] if target_layer == "input" else aux["spatial_out"]
    act = chosen.data[0]
    grad = chosen.grad[0]
    if target_layer == "input":
        act = np.swapaxes(act, -1, -2)       # (F, 2f, C) -> (F, C, 2f)
        grad = np.swapaxes(grad, -1, -2)
    if not (np.all(np.isfinite(act)) and np.all(np.isfinite(grad))):
        raise NumericalError("non-finite activations or gradients")
    channel_weight = grad.mean(axis=-1)      # (F, C)
    channel_act = act.mean(axis=-1)
    relevance = np.maximum(channel_weight * channel_act, 0.0)
    if weight_by_frame_attention:
        frame_w = aux["temporal_weights"].data[0]        # (F,)
        return (relevance * frame_w[:, None]).sum(axis=0)
    return relevance.mean(axis=0)


def rank_channels(params: dict[str, np.ndarray], cfg: ModelConfig,
                  values: np.ndarray, labels: np.ndarray,
                  target_layer: str = "input",
                  weight_by_frame_attention: bool = False) -> ChannelReport:
    """Mean per-channel score over samples, each conditioned on its true class."""
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if values.ndim != 4 or values.shape[0] == 0:
        raise DataError("rank_channels needs a non-empty (N, F, 2f, C) array")
    if values.shape[0] != labels.shape[0]:
        raise DataError("values and labels disagree on sample count")
    total = np.zeros(cfg.channels)
    for i in range(values.shape[0]):
        total += grad_cam_channels(params, cfg, values[i], int(labels[i]),
                                   target_layer, weight_by_frame_attention)
    scores = total / values.shape[0]
    # stable argsort on negated scores: ties fall back to channel index order
    ranking = [int(i) for i in np.argsort(-scores, kind="stable")]
    return ChannelReport(scores, ranking, provenance={
        "n_samples": int(values.shape[0]),
        "conditioning": "true_class",
        "target_layer": target_layer,
        "frame_aggregation": ("temporal_attention"
                              if weight_by_frame_attention else "mean"),
    })


def select_channels(values: np.ndarray, ranking: list[int], k: int
                    ) -> tuple[np.ndarray, dict[int, int]]:
    """Keep the top-k ranked channels, in ranking order.

    Returns the reduced array (channel axis length k) and the old -> new
    index mapping.
    """
    c = values.shape[-1]
    if sorted(ranking) != list(range(c)):
        raise DataError("ranking must be a permutation of all channel indices")
    if not (1 <= k <= c):
        raise DataError(f"k={k} out of range 1..{c}")
    keep = ranking[:k]
    return values[..., keep], {old: new for new, old in enumerate(keep)}


def write_channel_report(out_dir: str | Path, report: ChannelReport,
                         channel_names: list[str],
                         top_ks: list[int] = ()) -> None:
    """Emit channel_scores.csv and one topk_<k>.json per requested k."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rank_of = {ch: pos for pos, ch in enumerate(report.ranking)}
    with open(out / "channel_scores.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel_name", "score", "rank"])
        for ch, name in enumerate(channel_names):
            writer.writerow([name, f"{report.scores[ch]:.10g}", rank_of[ch]])
    for k in top_ks:
        picked = report.top_k(k)
        (out / f"topk_{k}.json").write_text(json.dumps({
            "k": k,
            "indices": picked,
            "channels": [channel_names[i] for i in picked],
            "provenance": report.provenance,
        }, indent=1))


def read_ranking_csv(path: str | Path) -> list[int]:
    """Recover the full channel ranking from a channel_scores.csv file."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append((int(row["rank"]), len(rows)))
    if not rows:
        raise DataError(f"{path}: empty ranking file")
    ranking = [0] * len(rows)
    for rank, channel in rows:
        if not (0 <= rank < len(rows)):
            raise DataError(f"{path}: rank {rank} out of range")
        ranking[rank] = channel
    return ranking
