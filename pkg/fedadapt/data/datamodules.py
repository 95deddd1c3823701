from dataclasses import dataclass
from functools import partial
from typing import List, Optional, Sequence

import torch
from pytorch_lightning import LightningDataModule
from torch.utils.data import DataLoader

from fedadapt.core.utils import get_logger
from fedadapt.data.datasets import DomainDataset, Example

log = get_logger(__name__)


@dataclass
class Batch:
    features: torch.Tensor  # [B, T, d_in], zero padded
    lengths: torch.Tensor  # [B]
    alignment: torch.Tensor  # [B, T], padding frames hold 0 and are masked out
    tokens: List[List[int]]

    def __len__(self):
        return self.features.shape[0]

    @property
    def valid(self) -> torch.Tensor:
        frames = self.features.shape[1]
        return torch.arange(frames)[None, :] < self.lengths[:, None]


def collate_examples(examples: Sequence[Example], dtype: torch.dtype = torch.float64) -> Batch:
    """Pads a list of examples to the longest one."""
    if not examples:
        raise ValueError("cannot collate an empty list of examples")
    frames = max(ex.num_frames for ex in examples)
    d_in = examples[0].features.shape[-1]
    features = torch.zeros(len(examples), frames, d_in, dtype=dtype)
    alignment = torch.zeros(len(examples), frames, dtype=torch.long)
    for i, ex in enumerate(examples):
        features[i, : ex.num_frames] = ex.features.to(dtype)
        alignment[i, : ex.num_frames] = torch.as_tensor(ex.alignment, dtype=torch.long)
    lengths = torch.as_tensor([ex.num_frames for ex in examples], dtype=torch.long)
    return Batch(features, lengths, alignment, [list(ex.tokens) for ex in examples])


class SpeechDataModule(LightningDataModule):
    """
    LightningDataModule over in-memory domain corpora.

    Training batches are drawn by a seeded sampler so a stage rerun with the same
    seed sees the same batches in the same order.
    """

    def __init__(
        self,
        train_set: DomainDataset,
        val_set: Optional[DomainDataset] = None,
        batch_size: int = 32,
        seed: int = 0,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        if len(train_set) == 0:
            raise ValueError("training corpus is empty")
        self.train_set = train_set
        self.val_set = val_set
        self.batch_size = min(batch_size, len(train_set))
        self.seed = seed
        self.dtype = dtype

    def _loader(self, dataset: DomainDataset, shuffle: bool) -> DataLoader:
        return DataLoader(
            dataset,
            batch_size=self.batch_size,
            shuffle=shuffle,
            generator=torch.Generator().manual_seed(self.seed) if shuffle else None,
            collate_fn=partial(collate_examples, dtype=self.dtype),
            num_workers=0,
            drop_last=shuffle,
        )

    def train_dataloader(self):
        return self._loader(self.train_set, shuffle=True)

    def val_dataloader(self):
        if self.val_set is None:
            return []
        return self._loader(self.val_set, shuffle=False)
