"""Operator tuples: finitely supported families of square complex matrices.

An :class:`OperatorTuple` holds the coefficient family ``(x_i)`` of an
element ``sum_i U_i (x) x_i`` whose tensor norms the package estimates.
Optionally one index is flagged as carrying the unit coefficient instead
of a free unitary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matkit
from .errors import InputError


@dataclass(frozen=True)
class OperatorTuple:
    """An ordered family of ``k x k`` complex matrices.

    ``unit_index`` (optional) marks the single coefficient attached to
    the unit element rather than a free unitary.
    """

    k: int
    items: tuple[np.ndarray, ...]
    unit_index: int | None = None

    def __len__(self) -> int:
        return len(self.items)

    @property
    def n(self) -> int:
        return len(self.items)


def operator_tuple(items, unit_index: int | None = None) -> OperatorTuple:
    """Validate and build an :class:`OperatorTuple`."""
    mats = tuple(matkit.as_cmatrix(x, f"tuple item {i}") for i, x in enumerate(items))
    if not mats:
        raise InputError("an operator tuple needs at least one item", code="E_DIM")
    k = mats[0].shape[0]
    for i, x in enumerate(mats):
        if x.shape != (k, k):
            raise InputError(
                f"tuple item {i} has shape {x.shape}, expected ({k}, {k})", code="E_DIM")
    if unit_index is not None:
        unit_index = int(unit_index)
        if not 0 <= unit_index < len(mats):
            raise InputError(
                f"unit_index {unit_index} out of range for {len(mats)} items",
                code="E_INDEX")
    return OperatorTuple(k=k, items=mats, unit_index=unit_index)


def tuple_scale(t: OperatorTuple) -> float:
    """max(1, largest ||x_i||): the scale used in relative tolerances."""
    return max(1.0, max(matkit.op_norm(x) for x in t.items))
