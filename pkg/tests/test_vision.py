import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from mofg.data import DataConfig, gen_forensic_set
from mofg.errors import ConfigError
from mofg.numerics import Rng
from mofg.vision import GlobalEncoder, LocalEncoder, VisionConfig, VisionTowers, patchify, unpatchify


def test_patch_count_at_full_scale():
    assert patchify(torch.zeros(448, 448, 3), 14).shape == (1024, 14 * 14 * 3)


def test_patch_rows_are_raster_ordered():
    img = torch.arange(4 * 4 * 3, dtype=torch.float32).reshape(4, 4, 3)
    p = patchify(img, 2)
    assert torch.equal(p[1], img[0:2, 2:4].reshape(-1))
    assert torch.equal(p[2], img[2:4, 0:2].reshape(-1))


@given(st.sampled_from([(8, 2), (8, 4), (12, 3), (6, 6)]), st.integers(1, 3), st.integers(0, 2**16))
def test_unpatchify_round_trip(sizes, batch, seed):
    side, p = sizes
    img = torch.from_numpy(Rng(seed).uniform((batch, side, side, 3)))
    assert torch.equal(unpatchify(patchify(img, p), p), img)


def test_patchify_errors():
    with pytest.raises(ConfigError):
        patchify(torch.zeros(10, 10, 3), 3)
    with pytest.raises(ConfigError):
        patchify(torch.zeros(8, 6, 3), 2)
    with pytest.raises(ConfigError):
        VisionConfig(image_size=10, patch_size=3)


def test_local_encoder_is_patch_local():
    cfg = VisionConfig()
    enc = LocalEncoder(cfg, Rng(0))
    img = torch.from_numpy(Rng(1).uniform((64, 64, 3))).float()
    base = enc(img)
    img2 = img.clone()
    img2[0:8, 8:16] += 0.1  # patch 1 only
    changed = (enc(img2) - base).abs().amax(dim=-1) > 0
    assert changed.tolist() == [i == 1 for i in range(cfg.n_tokens)]


def test_global_encoder_mixes_every_row():
    cfg = VisionConfig()
    enc = GlobalEncoder(cfg, Rng(0))
    img = torch.from_numpy(Rng(1).uniform((64, 64, 3))).float()
    img2 = img.clone()
    img2[0:8, 0:8] += 0.2
    diff = (enc(img2) - enc(img)).abs().amax(dim=-1)
    assert bool((diff > 1e-6).all())


def test_checkerboard_invisible_globally_visible_locally():
    ds = gen_forensic_set(8, 0, DataConfig())
    fake = next(ex for ex in ds if ex.label == "fake")
    towers = VisionTowers(VisionConfig(), seed=0)
    # averaging every 2x2 block removes the checkerboard and leaves flat regions intact
    img = torch.from_numpy(fake.image)
    pooled = torch.nn.functional.avg_pool2d(img.permute(2, 0, 1)[None], 2)[0].permute(1, 2, 0)
    clean = pooled.repeat_interleave(2, 0).repeat_interleave(2, 1)
    g_fake, l_fake = towers.encode(img)
    g_clean, l_clean = towers.encode(clean)
    assert torch.allclose(g_fake, g_clean, atol=1e-5)
    assert (l_fake - l_clean).abs().max() > 0.5


def test_towers_are_frozen_and_deterministic():
    a, b = VisionTowers(VisionConfig(), 4), VisionTowers(VisionConfig(), 4)
    assert all(not p.requires_grad for p in a.parameters())
    img = np.full((64, 64, 3), 0.5, dtype=np.float32)
    for x, y in zip(a.encode(img), b.encode(img)):
        assert torch.equal(x, y)
