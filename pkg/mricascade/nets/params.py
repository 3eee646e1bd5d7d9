from __future__ import annotations

from collections.abc import Mapping
from typing import Callable, Iterable, Iterator, Optional, Union

import torch

from .configs import NetError

TensorItems = Union[Mapping[str, torch.Tensor], Iterable[tuple[str,
                                                              torch.Tensor]]]


class ParameterStore(Mapping[str, torch.Tensor]):
    """Ordered, name-addressed tensors of one network.

    Stores are treated as values: every operation returns a new store and the
    tensors handed out must not be modified in place.
    """

    __slots__ = ("_entries", )

    def __init__(self, entries: TensorItems):
        items = entries.items() if isinstance(entries, Mapping) else entries
        store: dict[str, torch.Tensor] = {}
        for name, tensor in items:
            if name in store:
                raise NetError(f"duplicate tensor name {name!r}")
            if not isinstance(tensor, torch.Tensor):
                raise NetError(f"{name!r} is not a tensor")
            tensor = tensor.detach()
            if tensor.is_floating_point() and not torch.isfinite(tensor).all():
                raise NetError(f"tensor {name!r} has non-finite values")
            store[name] = tensor
        self._entries = store

    def __getitem__(self, name: str) -> torch.Tensor:
        try:
            return self._entries[name]
        except KeyError:
            raise KeyError(f"no tensor named {name!r}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        return f"ParameterStore({len(self)} tensors, {self.numel()} values)"

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: tuple(t.shape) for name, t in self._entries.items()}

    @property
    def dtype(self) -> Optional[torch.dtype]:
        first = next(iter(self._entries.values()), None)
        return None if first is None else first.dtype

    @property
    def device(self) -> torch.device:
        first = next(iter(self._entries.values()), None)
        return torch.device("cpu") if first is None else first.device

    def numel(self) -> int:
        return sum(t.numel() for t in self._entries.values())

    def map(self, fn: Callable[[str, torch.Tensor],
                               torch.Tensor]) -> "ParameterStore":
        return ParameterStore((name, fn(name, t))
                              for name, t in self._entries.items())

    def to(self, dtype: Optional[torch.dtype] = None,
           device: Optional[torch.device] = None) -> "ParameterStore":
        return self.map(lambda _, t: t.to(device=device, dtype=dtype))

    def zeros_like(self) -> "ParameterStore":
        return self.map(lambda _, t: torch.zeros_like(t))

    def replace(self, updates: Mapping[str, torch.Tensor]) -> "ParameterStore":
        """Swap some tensors; names and shapes must already exist."""
        for name, tensor in updates.items():
            if name not in self._entries:
                raise NetError(f"unknown tensor name {name!r}")
            if tuple(tensor.shape) != tuple(self._entries[name].shape):
                raise NetError(
                    f"shape mismatch for {name!r}: {tuple(tensor.shape)} "
                    f"vs {tuple(self._entries[name].shape)}")
        return ParameterStore(
            (name, updates.get(name, t)) for name, t in self._entries.items())

    def select(self, prefix: str) -> "ParameterStore":
        return ParameterStore((name, t) for name, t in self._entries.items()
                              if name.startswith(prefix))

    def check_aligned(self, other: "ParameterStore") -> None:
        if list(self) != list(other):
            missing = sorted(set(self) ^ set(other))
            raise NetError(f"stores are not name-aligned: {missing[:5]}")
        for name, tensor in self._entries.items():
            if tensor.shape != other[name].shape:
                raise NetError(f"shape mismatch for {name!r}: "
                               f"{tuple(tensor.shape)} vs {tuple(other[name].shape)}")

    def equal(self, other: "ParameterStore") -> bool:
        """Bit-exact equality of names, shapes, dtypes and values."""
        if list(self) != list(other):
            return False
        return all(t.dtype == other[n].dtype and torch.equal(t, other[n])
                   for n, t in self._entries.items())

    def as_dict(self) -> dict[str, torch.Tensor]:
        return dict(self._entries)
