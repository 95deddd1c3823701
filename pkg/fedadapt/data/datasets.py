"""Synthetic two-domain sequence corpora.

Each token owns a Gaussian cluster mean in feature space, with one extra cluster
(index V) for blank/silence frames. An utterance is a run of token frames,
separated by blank frames where needed, padded with blanks to its length. A
domain applies an orthogonal rotation and a bias to every mean and reweights
the token prior, so a model fitted on one domain degrades on another.
"""
import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch.utils.data import Dataset

from fedadapt.core.errors import DatasetError
from fedadapt.core.utils import get_logger

log = get_logger(__name__)

FIXTURE_MAGIC = b"FADD"
FIXTURE_VERSION = 1


@dataclass(frozen=True)
class DomainSpec:
    vocab_size: int = 12
    d_in: int = 16
    t_min: int = 8
    t_max: int = 32
    noise_scale: float = 0.3
    rotation_strength: float = 0.0
    bias_scale: float = 0.0
    prior_shift: float = 0.0
    means_seed: int = 1234
    transform_seed: int = 4321
    max_run: int = 3
    blank_prob: float = 0.3
    domain_id: str = "source"

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise DatasetError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.d_in < 1:
            raise DatasetError(f"d_in must be >= 1, got {self.d_in}")
        if not 1 <= self.t_min <= self.t_max:
            raise DatasetError(f"need 1 <= t_min <= t_max, got [{self.t_min}, {self.t_max}]")
        if self.noise_scale < 0 or self.max_run < 1 or not 0.0 <= self.blank_prob <= 1.0:
            raise DatasetError("noise_scale >= 0, max_run >= 1 and blank_prob in [0, 1] required")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Example:
    features: torch.Tensor  # [T, d_in]
    tokens: List[int]
    alignment: List[int]  # per-frame label, blank = vocab_size

    @property
    def num_frames(self) -> int:
        return int(self.features.shape[0])


class DomainDataset(Dataset):
    def __init__(self, examples: Sequence[Example], spec: DomainSpec):
        self.examples = list(examples)
        self.spec = spec

    @property
    def domain_id(self) -> str:
        return self.spec.domain_id

    def __len__(self):
        return len(self.examples)

    def __getitem__(self, idx: int) -> Example:
        return self.examples[idx]

    def subset(self, indices: Sequence[int]) -> "DomainDataset":
        return DomainDataset([self.examples[i] for i in indices], self.spec)

    def digest(self) -> str:
        h = hashlib.sha256()
        for ex in self.examples:
            h.update(np.asarray(ex.tokens, dtype="<i4").tobytes())
            h.update(np.asarray(ex.alignment, dtype="<i4").tobytes())
            h.update(ex.features.numpy().astype("<f8").tobytes())
        return h.hexdigest()


def cluster_means(spec: DomainSpec) -> torch.Tensor:
    """[V + 1, d_in] source-domain means, shared by every domain with the same means_seed."""
    generator = torch.Generator().manual_seed(spec.means_seed)
    return torch.randn(spec.vocab_size + 1, spec.d_in, generator=generator, dtype=torch.float64)


def domain_transform(spec: DomainSpec) -> Tuple[Optional[torch.Tensor], Optional[torch.Tensor], torch.Tensor]:
    """Rotation, bias and token prior of a domain.

    The rotation is exp(strength * S) for a fixed random skew-symmetric S of unit
    spectral norm, so strength 0 is the identity and the shift grows smoothly.
    """
    generator = torch.Generator().manual_seed(spec.transform_seed)
    a = torch.randn(spec.d_in, spec.d_in, generator=generator, dtype=torch.float64)
    bias_dir = torch.randn(spec.d_in, generator=generator, dtype=torch.float64)
    prior_dir = torch.randn(spec.vocab_size, generator=generator, dtype=torch.float64)

    rotation = None
    if spec.rotation_strength != 0.0:
        skew = (a - a.T) / 2.0
        skew = skew / torch.linalg.matrix_norm(skew, ord=2)
        rotation = torch.linalg.matrix_exp(spec.rotation_strength * skew)
    bias = spec.bias_scale * bias_dir if spec.bias_scale != 0.0 else None
    prior = torch.softmax(spec.prior_shift * prior_dir, dim=0)
    return rotation, bias, prior


def _alignment(
    spec: DomainSpec, prior: torch.Tensor, generator: torch.Generator
) -> Tuple[List[int], List[int]]:
    blank = spec.vocab_size
    num_frames = int(torch.randint(spec.t_min, spec.t_max + 1, (1,), generator=generator))
    tokens: List[int] = []
    frames: List[int] = []
    while True:
        token = int(torch.multinomial(prior, 1, generator=generator))
        run = int(torch.randint(1, spec.max_run + 1, (1,), generator=generator))
        gap_draw = float(torch.rand(1, generator=generator, dtype=torch.float64))
        # a repeated token needs a blank in between or greedy decoding merges them
        gap = 1 if (tokens and tokens[-1] == token) or gap_draw < spec.blank_prob else 0
        if tokens and len(frames) + gap + run > num_frames:
            break
        if not tokens and run > num_frames:
            break
        frames.extend([blank] * (gap if tokens else 0) + [token] * run)
        tokens.append(token)
    frames.extend([blank] * (num_frames - len(frames)))
    return tokens, frames


def generate_domain(spec: DomainSpec, n_examples: int, seed: int) -> DomainDataset:
    spec.validate()
    if n_examples < 1:
        raise DatasetError(f"n_examples must be >= 1, got {n_examples}")
    means = cluster_means(spec)
    rotation, bias, prior = domain_transform(spec)
    if rotation is not None:
        means = means @ rotation.T
    if bias is not None:
        means = means + bias

    generator = torch.Generator().manual_seed(seed)
    examples = []
    for _ in range(n_examples):
        tokens, alignment = _alignment(spec, prior, generator)
        features = means[torch.as_tensor(alignment, dtype=torch.long)]
        if spec.noise_scale > 0:
            noise = torch.randn(features.shape, generator=generator, dtype=torch.float64)
            features = features + spec.noise_scale * noise
        examples.append(Example(features=features, tokens=tokens, alignment=alignment))
    log.debug(f"Generated {n_examples} examples for domain <{spec.domain_id}>")
    return DomainDataset(examples, spec)


def save_fixture(dataset: DomainDataset, path: Union[str, Path]) -> str:
    """Writes a corpus fixture and returns its sha256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps({"spec": dataset.spec.to_dict(), "n": len(dataset)}, sort_keys=True).encode()
    chunks = [FIXTURE_MAGIC, struct.pack("<II", FIXTURE_VERSION, len(header)), header]
    for ex in dataset.examples:
        chunks.append(struct.pack("<II", ex.num_frames, len(ex.tokens)))
        chunks.append(np.asarray(ex.tokens, dtype="<i4").tobytes())
        chunks.append(np.asarray(ex.alignment, dtype="<i4").tobytes())
        chunks.append(ex.features.numpy().astype("<f8").tobytes())
    data = b"".join(chunks)
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_fixture(path: Union[str, Path]) -> DomainDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset fixture not found: {path}")
    data = path.read_bytes()
    if data[:4] != FIXTURE_MAGIC:
        raise DatasetError(f"{path} is not a fedadapt dataset fixture")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != FIXTURE_VERSION:
        raise DatasetError(f"unsupported fixture version {version}")
    offset = 12
    header = json.loads(data[offset : offset + header_len])
    offset += header_len
    spec = DomainSpec(**header["spec"])
    examples = []
    for _ in range(header["n"]):
        num_frames, num_tokens = struct.unpack_from("<II", data, offset)
        offset += 8
        tokens = np.frombuffer(data, dtype="<i4", count=num_tokens, offset=offset).tolist()
        offset += 4 * num_tokens
        alignment = np.frombuffer(data, dtype="<i4", count=num_frames, offset=offset).tolist()
        offset += 4 * num_frames
        values = np.frombuffer(data, dtype="<f8", count=num_frames * spec.d_in, offset=offset)
        offset += 8 * num_frames * spec.d_in
        features = torch.from_numpy(values.reshape(num_frames, spec.d_in).astype(np.float64))
        examples.append(Example(features=features, tokens=tokens, alignment=alignment))
    return DomainDataset(examples, spec)
