from __future__ import annotations

import pytest

from multimodel.buffer_pool import BufferPool
from multimodel.models import ArrayMeta, CellSchema, ValueType


@pytest.fixture
def pool():
    # plenty of room: most tests don't want eviction in the way
    return BufferPool(64 << 20)


def cell_schema(d: int = 2, attrs=(("value", "float"),)) -> CellSchema:
    return CellSchema(
        dim_names=tuple(f"dim{i}" for i in range(d)),
        attr_names=tuple(n for n, _ in attrs),
        attr_types=tuple(ValueType.parse(t) for _, t in attrs),
    )


def array_meta(size, tile_size, layout="dense", attrs=(("value", "float"),), seed=None):
    return ArrayMeta(cell_schema(len(size), attrs), tuple(size), tuple(tile_size),
                     layout=layout, seed=seed)
