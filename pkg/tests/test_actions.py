import numpy as np
import pytest

from hapsits.actions import available_actions, decode, decode_joint, handoff_mask, out_of_rsu_range
from hapsits.config import ScenarioConfig
from hapsits.scenario import CavState


def test_decode_table():
    assert [decode(u) for u in range(4)] == [(0, 0), (1, 0), (2, 0), (2, 1)]
    assert decode_joint([3, 0, 1]) == ([2, 0, 1], [1, 0, 0])
    with pytest.raises(ValueError):
        decode(4)


def test_caching_only_with_rsu():
    for u in range(4):
        x, y = decode(u)
        assert y == 0 or x == 2


def cav(pos, cfg):
    return CavState(0, pos, 0 if pos < 200.0 else 1)


def test_masks():
    cfg = ScenarioConfig()
    cavs = [cav(90.0, cfg), cav(250.0, cfg)]
    assert available_actions(cavs, cfg).all()
    assert not available_actions(cavs, cfg, "worsu")[:, 2:].any()
    assert not available_actions(cavs, cfg, "wohaps")[:, 1].any()
    assert not available_actions(cavs, cfg.replace(f_haps=0.0))[:, 1].any()
    with pytest.raises(ValueError):
        available_actions(cavs, cfg, "nope")


def test_handoff_range():
    cfg = ScenarioConfig()
    near, edge, far = cav(140.0, cfg), cav(150.0, cfg), cav(190.0, cfg)
    assert not out_of_rsu_range(near, cfg) and not out_of_rsu_range(edge, cfg)
    assert out_of_rsu_range(far, cfg)
    assert handoff_mask(far, cfg).tolist() == [True, True, False, False]
    table = available_actions([near, far], cfg, handoff=True)
    assert table[0].all() and table[1].tolist() == [True, True, False, False]
    assert np.all(table.any(axis=1))
