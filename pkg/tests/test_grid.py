import numpy as np
import pytest

from declab.grid import CapPartition, DyadicSquare, cap_level_for, square_at


def test_square_bounds_and_side():
    sq = DyadicSquare(3, 2, 5)
    assert sq.side == 0.125
    assert sq.bounds == (0.25, 0.375, 0.625, 0.75)
    assert sq.corner == (0.25, 0.625)
    assert sq.center == (0.3125, 0.6875)


def test_square_index_validation():
    with pytest.raises(ValueError):
        DyadicSquare(2, 4, 0)
    with pytest.raises(ValueError):
        DyadicSquare(-1, 0, 0)


def test_caps_tile_unit_square_exactly():
    # every point owned by exactly one cap, boundary points included
    level = 3
    caps = list(CapPartition.full(level))
    rng = np.random.default_rng(5)
    pts = np.vstack([
        rng.uniform(0, 1, size=(200, 2)),
        np.array([[0.0, 0.0], [1.0, 1.0], [0.5, 1.0], [1.0, 0.25],
                  [0.375, 0.625]]),
    ])
    for t, s in pts:
        owners = [sq for sq in caps if sq.contains(t, s)]
        assert len(owners) == 1
        assert owners[0] == square_at(level, t, s)


def test_half_open_convention():
    sq = DyadicSquare(2, 1, 1)
    assert sq.contains(0.25, 0.25)
    assert not sq.contains(0.5, 0.3)      # right edge belongs to the next cap
    assert not sq.contains(0.3, 0.5)
    top_right = DyadicSquare(2, 3, 3)
    assert top_right.contains(1.0, 1.0)   # global boundary is closed


def test_contains_square_and_subdivide():
    parent = DyadicSquare(1, 0, 1)
    kids = parent.subdivide()
    assert len(kids) == 4
    assert all(parent.contains_square(k) for k in kids)
    assert not parent.contains_square(DyadicSquare(2, 3, 3))
    assert not parent.contains_square(DyadicSquare(0, 0, 0))


def test_partition_assign_unique_and_outside():
    region = DyadicSquare(1, 0, 0)
    part = CapPartition.of_region(3, region)
    assert len(part) == 16
    idx = part.assign([0.1, 0.9], [0.2, 0.9])
    assert idx[0] >= 0 and idx[1] == -1


def test_partition_rejects_duplicates_and_mixed_levels():
    with pytest.raises(ValueError):
        CapPartition(2, (DyadicSquare(2, 0, 0), DyadicSquare(2, 0, 0)))
    with pytest.raises(ValueError):
        CapPartition(2, (DyadicSquare(1, 0, 0),))


def test_cap_level_examples():
    assert cap_level_for(16) == 2
    assert cap_level_for(64) == 3
    assert cap_level_for(256) == 4
    assert cap_level_for(1024) == 5
    assert cap_level_for(100) == 4      # ceil(log2 10)
    with pytest.raises(ValueError):
        cap_level_for(0.5)
