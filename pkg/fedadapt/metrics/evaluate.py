from typing import Dict, Sequence

import torch
import torch.nn.functional as F

from fedadapt.core import tensor as T
from fedadapt.data.datamodules import Batch, collate_examples
from fedadapt.data.datasets import DomainDataset, Example
from fedadapt.metrics.wer import WerBreakdown, edit_distance
from fedadapt.models.conformer import SpeechModel, decode_greedy


def frame_loss(model: SpeechModel, batch: Batch) -> torch.Tensor:
    """Mean frame cross-entropy over every non-padding frame of ``batch``."""
    logits = model(batch.features, batch.lengths)
    vocab = logits.shape[-1]
    return T.softmax_xent(
        logits.reshape(-1, vocab), batch.alignment.reshape(-1), batch.valid.reshape(-1)
    )


def batch_loss(model: SpeechModel, examples: Sequence[Example]) -> torch.Tensor:
    return frame_loss(model, collate_examples(examples, model.dtype))


@torch.no_grad()
def evaluate(model: SpeechModel, dataset: DomainDataset, batch_size: int = 64) -> Dict[str, float]:
    """Corpus WER (pooled), mean frame loss and frame accuracy of ``model`` on ``dataset``."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    totals = WerBreakdown()
    loss_sum, correct, frames = 0.0, 0, 0
    for start in range(0, len(dataset), batch_size):
        batch = collate_examples(dataset.examples[start : start + batch_size], model.dtype)
        logits = model(batch.features, batch.lengths)
        valid = batch.valid
        per_frame = F.cross_entropy(
            logits.reshape(-1, logits.shape[-1]), batch.alignment.reshape(-1), reduction="none"
        )
        loss_sum += float(per_frame[valid.reshape(-1)].double().sum())
        correct += int((logits.argmax(-1) == batch.alignment)[valid].sum())
        frames += int(valid.sum())
        for i, length in enumerate(batch.lengths.tolist()):
            hyp = decode_greedy(logits[i, :length], blank=model.cfg.vocab_size)
            totals = totals + edit_distance(batch.tokens[i], hyp)

    return {
        "wer": totals.wer,
        "loss": loss_sum / frames,
        "frame_accuracy": correct / frames,
        "substitutions": totals.substitutions,
        "deletions": totals.deletions,
        "insertions": totals.insertions,
        "reference_length": totals.reference_length,
    }
