from dataclasses import MISSING, fields, replace
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple, TypeVar, Union, get_args, get_origin, get_type_hints

import torch

from exceptions import ShapeError

G = TypeVar("G", bound="TensorGroup")


def _child_prefix(prefix: str, key: str) -> str:
    return f"{prefix}{key}." if key else prefix


def _is_group_list(value: Any) -> bool:
    return isinstance(value, list) and all(isinstance(item, TensorGroup) for item in value)


def _is_tensor_hint(hint: Any) -> bool:
    if hint is torch.Tensor:
        return True
    return get_origin(hint) is Union and torch.Tensor in get_args(hint)


class TensorGroup:
    """
    Mixin for dataclasses whose fields are tensors, nested tensor groups or
    lists of tensor groups.

    Field metadata ``{"key": ...}`` overrides the serialized key of a field. An
    empty key flattens a nested group into its parent's namespace; list items
    are keyed ``{key}.{index}``.
    """

    def _children(self) -> Iterator[Tuple[str, str, Any]]:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (torch.Tensor, TensorGroup)) or (isinstance(value, list) and _is_group_list(value)):
                yield f.metadata.get("key", f.name), f.name, value

    def named_tensors(self, prefix: str = "") -> Dict[str, torch.Tensor]:
        """Flatten to a key -> tensor mapping."""
        out: Dict[str, torch.Tensor] = {}
        for key, _, value in self._children():
            if isinstance(value, torch.Tensor):
                out[f"{prefix}{key}"] = value
            elif isinstance(value, TensorGroup):
                out.update(value.named_tensors(_child_prefix(prefix, key)))
            else:
                for i, item in enumerate(value):
                    out.update(item.named_tensors(_child_prefix(prefix, f"{key}.{i}")))
        return out

    def parameters(self) -> List[torch.Tensor]:
        return list(self.named_tensors().values())

    def map_tensors(self: G, fn: Callable[[torch.Tensor], torch.Tensor]) -> G:
        """Return a copy with ``fn`` applied to every tensor."""
        changes = {}
        for _, name, value in self._children():
            if isinstance(value, torch.Tensor):
                changes[name] = fn(value)
            elif isinstance(value, TensorGroup):
                changes[name] = value.map_tensors(fn)
            else:
                changes[name] = [item.map_tensors(fn) for item in value]
        return replace(self, **changes)

    def clone(self: G, requires_grad: bool = False) -> G:
        return self.map_tensors(lambda t: t.detach().clone().requires_grad_(requires_grad))

    def to(self: G, dtype: torch.dtype) -> G:
        return self.map_tensors(lambda t: t.detach().to(dtype))

    def load_named(self: G, named: Dict[str, torch.Tensor], prefix: str = "") -> G:
        """Return a copy whose tensors are taken from ``named`` (shapes must match)."""
        changes = {}
        for key, name, value in self._children():
            if isinstance(value, TensorGroup):
                changes[name] = value.load_named(named, _child_prefix(prefix, key))
                continue
            if isinstance(value, list):
                changes[name] = [item.load_named(named, _child_prefix(prefix, f"{key}.{i}"))
                                 for i, item in enumerate(value)]
                continue
            full = f"{prefix}{key}"
            if full not in named:
                raise ShapeError(f"Missing tensor {full!r}")
            loaded = named[full].to(value.dtype)
            if tuple(loaded.shape) != tuple(value.shape):
                raise ShapeError(f"Tensor {full!r} has shape {tuple(loaded.shape)}, expected {tuple(value.shape)}")
            changes[name] = loaded
        return replace(self, **changes)

    @classmethod
    def from_named(cls, named: Dict[str, torch.Tensor], prefix: str = "", **extra: Any):
        """
        Build an instance from a flat key -> tensor mapping.

        Nested groups are resolved from the field annotations; scalar fields
        come from ``extra`` or their defaults.
        """
        hints = get_type_hints(cls)
        kwargs: Dict[str, Any] = dict(extra)
        for f in fields(cls):
            if f.name in kwargs:
                continue
            hint = hints[f.name]
            key = f.metadata.get("key", f.name)
            if isinstance(hint, type) and issubclass(hint, TensorGroup):
                kwargs[f.name] = hint.from_named(named, _child_prefix(prefix, key))
            elif _is_tensor_hint(hint):
                full = f"{prefix}{key}"
                if full in named:
                    kwargs[f.name] = named[full]
                elif f.default is MISSING:
                    raise ShapeError(f"Missing tensor {full!r}")
        return cls(**kwargs)

    def state_equal(self, other: Optional["TensorGroup"]) -> bool:
        """Bitwise equality of every tensor."""
        if other is None:
            return False
        mine, theirs = self.named_tensors(), other.named_tensors()
        if mine.keys() != theirs.keys():
            return False
        return all(torch.equal(mine[k], theirs[k]) for k in mine)
