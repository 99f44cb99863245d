import pytest
import torch

from mofg.data import gen_caption_set, gen_forensic_set
from mofg.errors import ConfigError
from mofg.model import MoFModel
from mofg.text import build_vocab
from mofg.train import (AdapterSetting, Schedule, Stage, TrainConfig, encode_dataset, frozen_names, stage1_align,
                        stage2_ground, train_protocol)
from mofg.vision import VisionConfig


def test_train_config_rules():
    with pytest.raises(ConfigError):
        TrainConfig(stage=Stage.ALIGN, lm_frozen=False)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    assert TrainConfig.align().lm_frozen
    assert TrainConfig.ground().to_dict()["stage"] == "ground"
    with pytest.raises(ConfigError):
        AdapterSetting.parse("half")


@pytest.fixture(scope="module")
def small():
    vcfg = VisionConfig(image_size=16, patch_size=4, d_glo=16, d_loc=8, mixing_depth=1)
    from mofg.model import LMConfig

    lcfg = LMConfig(d_lm=16, n_layers=1, n_heads=2, d_ff=32)
    from mofg.data import DataConfig

    dcfg = DataConfig(image_size=16, patch_size=4)
    caps, forensic = gen_caption_set(24, 1, dcfg), gen_forensic_set(24, 0, dcfg)
    vocab = build_vocab([t for ex in caps + forensic for t in (ex.question, ex.answer)])
    return vcfg, lcfg, vocab, caps, forensic


def snapshot(model):
    return {k: v.clone() for k, v in model.state_dict().items()}


def changed(a, b):
    return {k for k in a if not torch.equal(a[k], b[k])}


def test_stage_freezing(small):
    vcfg, lcfg, vocab, caps, forensic = small
    model = MoFModel(vcfg, lcfg, len(vocab), "simof", 0)
    sched = Schedule(epochs=1, batch_size=8)
    c, f = encode_dataset(model, caps, vocab), encode_dataset(model, forensic, vocab)
    s0 = snapshot(model)
    stage1_align(model, c, sched.stage_config(Stage.ALIGN, model.fusion))
    s1 = snapshot(model)
    assert changed(s0, s1) == {"adapter.weight", "adapter.bias"}
    stage2_ground(model, f, sched.stage_config(Stage.GROUND, model.fusion, adapter_frozen=True))
    s2 = snapshot(model)
    moved = changed(s1, s2)
    assert not any(k.startswith(("adapter.", "vision.")) for k in moved) and moved
    with pytest.raises(ConfigError):
        stage1_align(model, c, sched.stage_config(Stage.GROUND, model.fusion))


def test_frozen_names_global_only(small):
    vcfg, lcfg, vocab, *_ = small
    model = MoFModel(vcfg, lcfg, len(vocab), "global_only", 0)
    names = frozen_names(model, TrainConfig.ground(fusion="global_only"))
    assert {"adapter.weight", "adapter.bias"} <= names


def test_training_is_deterministic(small):
    vcfg, lcfg, vocab, caps, forensic = small
    states = []
    for _ in range(2):
        model = MoFModel(vcfg, lcfg, len(vocab), "simof", 0)
        f = encode_dataset(model, forensic, vocab)
        c = encode_dataset(model, caps, vocab)
        res = train_protocol(model, "full", Schedule(epochs=1, batch_size=8), f, c)
        states.append((snapshot(model), res.ground.losses))
    assert states[0][1] == states[1][1]
    assert not changed(states[0][0], states[1][0])


def test_protocol_settings(small):
    vcfg, lcfg, vocab, caps, forensic = small
    sched = Schedule(epochs=1, batch_size=8)
    model = MoFModel(vcfg, lcfg, len(vocab), "simof", 0)
    f = encode_dataset(model, forensic, vocab)
    assert train_protocol(model, "joint_only", sched, f).align is None
    with pytest.raises(ConfigError):
        train_protocol(model, "full", sched, f, None)
    model = MoFModel(vcfg, lcfg, len(vocab), "simof", 0)
    seen = {}
    res = train_protocol(model, "no_prealign", sched, f, after_align=lambda m: seen.update(snapshot(m)))
    assert res.align is not None and res.align.steps == 3
    assert torch.equal(seen["adapter.weight"], model.adapter.weight)
