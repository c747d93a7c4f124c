"""Shared torch helpers for the networks"""
import hashlib
import logging
from typing import Iterable, Iterator, List, Sequence, Tuple, TypeVar

import numpy as np
import torch
import torch.nn as nn
from tqdm import tqdm

from ..config import TrainingHyper
from ..errors import InvalidInput

logger = logging.getLogger(__name__)

T = TypeVar("T")

_progress_disabled = False


def set_progress_enabled(enabled: bool) -> None:
    """Turns every training and ingestion progress bar on or off"""
    global _progress_disabled
    _progress_disabled = not enabled


def progress(iterable: Iterable[T], desc: str, **kwargs) -> tqdm:
    """Wraps ``iterable`` in a progress bar

    Bars are hidden after :func:`set_progress_enabled` is given False and whenever
    stderr is not a terminal.
    """
    disable = True if _progress_disabled else None
    return tqdm(iterable, desc=desc, disable=disable, **kwargs)


def select_device() -> torch.device:
    """Returns the CUDA device if available, otherwise the CPU"""
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")


def seed_everything(seed: int) -> None:
    """Seeds torch and requests deterministic kernels where they exist"""
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    torch.backends.cudnn.benchmark = False


def make_generator(seed: int) -> torch.Generator:
    """Returns a seeded CPU generator"""
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def xavier_init(module: nn.Module) -> None:
    """Xavier-uniform initialization of every weight matrix, zero biases"""
    for name, p in module.named_parameters():
        if p.dim() > 1:
            nn.init.xavier_uniform_(p)
        elif name.endswith("bias"):
            nn.init.zeros_(p)


def make_optimizer(
    parameters, hyper: TrainingHyper
) -> Tuple[torch.optim.Optimizer, torch.optim.lr_scheduler.LambdaLR]:
    """Returns Adam with a learning rate decaying linearly to
    ``lr_final_ratio`` of its initial value over ``hyper.steps`` updates
    """
    optimizer = torch.optim.Adam(parameters, lr=hyper.learning_rate)
    total = max(hyper.steps, 1)

    def _decay(step: int) -> float:
        progress = min(step, total) / total
        return 1.0 - (1.0 - hyper.lr_final_ratio) * progress

    return optimizer, torch.optim.lr_scheduler.LambdaLR(optimizer, _decay)


def optimizer_step(
    loss: torch.Tensor,
    model: nn.Module,
    optimizer: torch.optim.Optimizer,
    scheduler: torch.optim.lr_scheduler.LambdaLR,
    grad_clip: float,
) -> None:
    """Backpropagates, clips the gradient norm and steps the optimizer and the
    learning rate schedule
    """
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if grad_clip > 0:
        nn.utils.clip_grad_norm_(
            [p for p in model.parameters() if p.requires_grad], grad_clip
        )
    optimizer.step()
    scheduler.step()


class BatchSampler:
    """Endless sampler of index batches from seeded epoch permutations"""

    def __init__(self, n_items: int, batch_size: int, seed: int):
        if n_items < 1:
            raise InvalidInput("Cannot sample batches from an empty corpus")
        self._n_items = n_items
        self._batch_size = min(batch_size, n_items)
        self._generator = make_generator(seed)
        self._queue: List[int] = []

    def __iter__(self) -> Iterator[List[int]]:
        return self

    def __next__(self) -> List[int]:
        while len(self._queue) < self._batch_size:
            self._queue.extend(
                torch.randperm(self._n_items, generator=self._generator).tolist()
            )
        batch, self._queue = (
            self._queue[: self._batch_size],
            self._queue[self._batch_size :],
        )
        return batch


def pad_sequences(
    arrays: Sequence[np.ndarray], multiple: int = 1, value: float = 0.0
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Stacks ``[T_i x D]`` arrays into a ``[B x T x D]`` tensor

    ``T`` is the longest length rounded up to ``multiple``.

    :return: Tuple of the padded batch and the int64 lengths
    """
    lengths = torch.tensor([a.shape[0] for a in arrays], dtype=torch.int64)
    max_len = int(lengths.max())
    max_len = -(-max_len // multiple) * multiple
    batch = torch.full(
        (len(arrays), max_len) + tuple(arrays[0].shape[1:]), value, dtype=torch.float32
    )
    for i, a in enumerate(arrays):
        batch[i, : a.shape[0]] = torch.from_numpy(np.asarray(a, dtype=np.float32))
    return batch, lengths


def length_mask(lengths: torch.Tensor, max_len: int) -> torch.Tensor:
    """Returns a ``[B x max_len]`` boolean mask of valid positions"""
    positions = torch.arange(max_len, device=lengths.device)
    return positions.unsqueeze(0) < lengths.unsqueeze(1)


def state_dict_checksum(module: nn.Module) -> str:
    """Returns the sha256 of all parameter and buffer bytes in key order"""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def count_parameters(module: nn.Module) -> int:
    """Returns the number of trainable parameters"""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
