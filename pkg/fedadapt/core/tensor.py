"""Dense tensor primitives with reverse-mode differentiation.

Values are ``torch.Tensor`` objects and the tape is torch's autograd graph. The
functions here are the only primitives the conformer-lite model and the
optimizers use, and each one checks its operand shapes up front so that a
mismatch surfaces as a :class:`ShapeError` naming both shapes rather than a
backend error deep inside a layer.

Broadcasting is limited to scalar-vs-tensor and equal shapes, with the single
exception of :func:`linear`, whose bias is added to every row.
"""
from typing import Callable, Dict, Iterable, Optional, Sequence, Union

import einops
import torch
import torch.nn.functional as F

from fedadapt.core.errors import FedAdaptError, ShapeError

DTYPES: Dict[int, torch.dtype] = {64: torch.float64, 32: torch.float32}

Scalar = Union[int, float]
Operand = Union[torch.Tensor, Scalar]

UNARY_KINDS = ("relu", "sigmoid", "swish")
BINARY_KINDS = ("add", "mul", "scale")


def get_dtype(precision: int = 64) -> torch.dtype:
    if precision not in DTYPES:
        raise ValueError(f"precision must be one of {sorted(DTYPES)}, got {precision}")
    return DTYPES[precision]


def tensor(
    data, requires_grad: bool = False, dtype: Optional[torch.dtype] = None
) -> torch.Tensor:
    """Creates a leaf tensor, float64 unless told otherwise."""
    out = torch.as_tensor(data, dtype=dtype or torch.float64).clone()
    out.requires_grad_(requires_grad)
    return out


def _is_scalar(x: Operand) -> bool:
    return not isinstance(x, torch.Tensor) or x.dim() == 0


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Matrix product contracting the last axis of ``a`` with the first of ``b``.

    ``a`` may carry leading batch axes ([..., m, k]); ``b`` is always [k, n].
    """
    if a.dim() < 2 or b.dim() != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape, detail="inner extents must match")
    return a @ b


def bmm(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Batched matrix product [B, m, k] x [B, k, n]."""
    if a.dim() != 3 or b.dim() != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError("bmm", a.shape, b.shape)
    return torch.bmm(a, b)


def linear(x: torch.Tensor, w: torch.Tensor, b: Optional[torch.Tensor] = None) -> torch.Tensor:
    """``x @ w + b`` with ``b`` added row-wise."""
    out = matmul(x, w)
    if b is None:
        return out
    if b.dim() != 1 or b.shape[0] != w.shape[1]:
        raise ShapeError("linear", w.shape, b.shape, detail="bias must match output extent")
    return out + b


def elementwise(kind: str, *operands: Operand) -> torch.Tensor:
    """Applies one element-wise primitive.

    Unary kinds take one tensor. ``add`` and ``mul`` take two operands which are
    either equal in shape or one is a scalar. ``scale`` multiplies a tensor by a
    python scalar.
    """
    if kind in UNARY_KINDS:
        if len(operands) != 1:
            raise ValueError(f"{kind} takes exactly one operand, got {len(operands)}")
        (x,) = operands
        if kind == "relu":
            return torch.relu(x)
        if kind == "sigmoid":
            return torch.sigmoid(x)
        return x * torch.sigmoid(x)

    if kind in BINARY_KINDS:
        if len(operands) != 2:
            raise ValueError(f"{kind} takes exactly two operands, got {len(operands)}")
        x, y = operands
        if kind == "scale":
            if not isinstance(y, (int, float)):
                raise ValueError("scale expects a python scalar factor")
            return x * y
        if not (_is_scalar(x) or _is_scalar(y)) and x.shape != y.shape:
            raise ShapeError(kind, x.shape, y.shape, detail="only scalar or equal-shape broadcasting")
        return x + y if kind == "add" else x * y

    raise ValueError(f"{kind} is not a recognized element-wise op, use one of {UNARY_KINDS + BINARY_KINDS}")


def activation(name: str) -> Callable[[torch.Tensor], torch.Tensor]:
    if name not in UNARY_KINDS:
        raise ValueError(f"{name} is not a recognized nonlinearity, use one of {UNARY_KINDS}")
    return lambda x: elementwise(name, x)


def layernorm(
    x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5
) -> torch.Tensor:
    """Zero-mean unit-variance over the last axis, then ``gain * x + bias``."""
    d = x.shape[-1]
    if d < 1 or gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layernorm", x.shape, gain.shape, bias.shape)
    return F.layer_norm(x, (d,), gain, bias, eps)


def masked_softmax(scores: torch.Tensor, key_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Softmax over the last axis; positions where ``key_mask`` is False get zero weight."""
    if key_mask is not None:
        if key_mask.shape != scores.shape[:1] + scores.shape[-1:]:
            raise ShapeError("masked_softmax", scores.shape, key_mask.shape)
        scores = scores.masked_fill(~key_mask[:, None, :], float("-inf"))
    return torch.softmax(scores, dim=-1)


def depthwise_conv1d(
    x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Per-channel 1-D convolution over time with 'same' zero padding.

    Args:
        x: [B, T, d]
        weight: [d, k]
        bias: [d]
    """
    if x.dim() != 3 or weight.dim() != 2 or weight.shape[0] != x.shape[-1]:
        raise ShapeError("depthwise_conv1d", x.shape, weight.shape)
    d, k = weight.shape
    x = einops.rearrange(x, "b t d -> b d t")
    x = F.pad(x, ((k - 1) // 2, k // 2))
    out = F.conv1d(x, weight.unsqueeze(1), bias, groups=d)
    return einops.rearrange(out, "b d t -> b t d")


def softmax_xent(
    logits: torch.Tensor,
    labels: Union[Sequence[int], torch.Tensor],
    mask: Union[Sequence[bool], torch.Tensor, None] = None,
) -> torch.Tensor:
    """Mean cross-entropy over the masked rows of ``logits`` [n, V]."""
    if logits.dim() != 2:
        raise ShapeError("softmax_xent", logits.shape, detail="logits must be [n, V]")
    n, vocab = logits.shape
    labels = torch.as_tensor(labels, dtype=torch.long)
    mask = torch.ones(n, dtype=torch.bool) if mask is None else torch.as_tensor(mask, dtype=torch.bool)
    if labels.shape != (n,) or mask.shape != (n,):
        raise ShapeError("softmax_xent", logits.shape, labels.shape, mask.shape)
    if not bool(mask.any()):
        raise ValueError("softmax_xent: mask selects no positions")
    selected = labels[mask]
    if bool((selected < 0).any()) or bool((selected >= vocab).any()):
        raise ValueError(f"softmax_xent: labels must lie in [0, {vocab})")
    return F.cross_entropy(logits[mask], selected, reduction="mean")


def backward(loss: torch.Tensor, inputs: Optional[Iterable[torch.Tensor]] = None) -> None:
    """Back-propagates a scalar loss.

    Gradients accumulate into ``.grad``; callers reset them. Every tensor listed in
    ``inputs`` that the loss does not reach receives a zero gradient.
    """
    if loss.dim() != 0:
        raise ShapeError("backward", loss.shape, detail="loss must be a scalar")
    if not loss.requires_grad:
        raise FedAdaptError("backward: loss is not attached to a gradient tape")
    loss.backward()
    for leaf in inputs or ():
        if leaf.requires_grad and leaf.grad is None:
            leaf.grad = torch.zeros_like(leaf)
