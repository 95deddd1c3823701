"""LightningModules for the two centralized pre-training stages."""
from typing import List

import torch
import torch.nn as nn
from pytorch_lightning import LightningModule

from fedadapt.core import tensor as T
from fedadapt.data.datamodules import Batch
from fedadapt.data.ssl import RandomProjectionQuantizer, make_ssl_batch
from fedadapt.metrics.evaluate import frame_loss
from fedadapt.metrics.wer import WerBreakdown, edit_distance
from fedadapt.models.conformer import SpeechModel, decode_greedy
from fedadapt.models.layers.Normalization import uniform_weight, zeros


class LitSslEncoder(LightningModule):
    """Encoder pre-training by predicting quantizer codes of masked frames.

    The prediction head and the mask vector live here, not in ``model``, so the
    encoder checkpoint holds nothing but the encoder.
    """

    def __init__(
        self,
        model: SpeechModel,
        lr: float = 1e-3,
        mask_prob: float = 0.15,
        span_len: int = 3,
        codebook_size: int = 16,
        codebook_dim: int = 8,
        seed: int = 0,
    ):
        super().__init__()
        self.save_hyperparameters(ignore=["model"])
        self.model = model
        self.lr = lr
        self.mask_prob = mask_prob
        self.span_len = span_len
        dtype = model.dtype
        cfg = model.cfg
        self.quantizer = RandomProjectionQuantizer(cfg.d_in, codebook_dim, codebook_size, seed)
        self.mask_vector = nn.Parameter(torch.zeros(cfg.d_in, dtype=dtype))
        head_generator = torch.Generator().manual_seed(seed + 1)
        self.head_w = uniform_weight((cfg.d, codebook_size), cfg.d, head_generator, dtype)
        self.head_b = zeros(codebook_size, dtype)
        self.mask_generator = torch.Generator().manual_seed(seed)
        self.last_mask_fraction = 0.0

    def ssl_loss(self, batch: Batch) -> torch.Tensor:
        mask = torch.zeros(batch.features.shape[:2], dtype=torch.bool)
        labels = torch.zeros(batch.features.shape[:2], dtype=torch.long)
        rows, fractions = [], []
        for i, length in enumerate(batch.lengths.tolist()):
            ssl = make_ssl_batch(
                batch.features[i, :length],
                self.mask_prob,
                self.span_len,
                self.quantizer,
                self.mask_generator,
                self.mask_vector,
            )
            rows.append(ssl.features)
            fractions.append(ssl.mask_fraction)
            mask[i, :length] = ssl.mask
            labels[i, :length] = ssl.dense_labels()
        # rebuilt row by row so gradients reach the mask vector
        masked = torch.stack(
            [torch.cat([row, batch.features[i, row.shape[0] :]], dim=0) for i, row in enumerate(rows)]
        )
        self.last_mask_fraction = sum(fractions) / len(fractions)
        h = self.model.encoder(masked, batch.lengths)
        logits = T.linear(h, self.head_w, self.head_b)
        return T.softmax_xent(
            logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), mask.reshape(-1)
        )

    @torch.no_grad()
    def fixed_mask_loss(self, batch: Batch, seed: int = 0) -> float:
        """SSL loss on ``batch`` with masks drawn from a fresh ``seed`` stream."""
        generator = self.mask_generator
        self.mask_generator = torch.Generator().manual_seed(seed)
        try:
            return float(self.ssl_loss(batch))
        finally:
            self.mask_generator = generator

    def training_step(self, batch: Batch, batch_idx: int):
        loss = self.ssl_loss(batch)
        self.log("train/ssl_loss", loss, prog_bar=True, batch_size=len(batch))
        self.log("train/mask_fraction", self.last_mask_fraction, batch_size=len(batch))
        return loss

    def configure_optimizers(self):
        return torch.optim.Adam([p for p in self.parameters() if p.requires_grad], lr=self.lr)


class LitFrameDecoder(LightningModule):
    """Decoder (and optional adapter) training on a frozen encoder base."""

    def __init__(self, model: SpeechModel, lr: float = 3e-3):
        super().__init__()
        self.save_hyperparameters(ignore=["model"])
        self.model = model
        self.lr = lr
        self._val_totals: List[WerBreakdown] = []

    def training_step(self, batch: Batch, batch_idx: int):
        loss = frame_loss(self.model, batch)
        self.log("train/loss", loss, prog_bar=True, batch_size=len(batch))
        return loss

    def validation_step(self, batch: Batch, batch_idx: int):
        logits = self.model(batch.features, batch.lengths)
        total = WerBreakdown()
        for i, length in enumerate(batch.lengths.tolist()):
            hyp = decode_greedy(logits[i, :length], blank=self.model.cfg.vocab_size)
            total = total + edit_distance(batch.tokens[i], hyp)
        self._val_totals.append(total)

    def on_validation_epoch_end(self):
        if not self._val_totals:
            return
        pooled = WerBreakdown()
        for total in self._val_totals:
            pooled = pooled + total
        self._val_totals.clear()
        self.log("val/wer", pooled.wer, prog_bar=True)

    def configure_optimizers(self):
        trainable = [p for p in self.model.parameters() if p.requires_grad]
        return torch.optim.Adam(trainable, lr=self.lr)
