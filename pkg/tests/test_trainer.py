import dataclasses

import numpy as np
import pytest

from facediff import trainer
from facediff.denoiser import MICRO
from facediff.facegen import ALL_MODALITIES, Modality
from facediff.trainer import TrainConfig


def micro_cfg(**kw):
    base = dict(variant="M3_FULL", iters=4, batch=2, seed=0, model=MICRO, T=25)
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError, match="variant"):
        micro_cfg(variant="M7_BOGUS")
    with pytest.raises(ValueError, match="batch"):
        micro_cfg(batch=0)
    with pytest.raises(ValueError, match="p_uncond"):
        micro_cfg(p_uncond=0.6)
    with pytest.raises(ValueError, match="uni_modality"):
        micro_cfg(variant="UNI_SINGLE")


def test_model_flags_per_variant():
    assert trainer.model_flags(micro_cfg(variant="M2_DECOR_ONLY"))[1:] \
        == (True, False, 0)
    assert trainer.model_flags(micro_cfg(variant="M3_FULL"))[1:] \
        == (True, True, 0)
    assert trainer.model_flags(micro_cfg(variant="M4_MULTI_NOSURR"))[1:] \
        == (False, True, 0)
    assert trainer.model_flags(micro_cfg(variant="M5_MULTI_SURR"))[1:] \
        == (True, True, 0)
    assert trainer.model_flags(micro_cfg(variant="M6_FULL_EAM"))[1:] \
        == (True, True, MICRO.K)
    mods, *_ = trainer.model_flags(
        micro_cfg(variant="UNI_SINGLE", uni_modality="sketch"))
    assert mods == (Modality.SKETCH,)


def test_variants_only_differ_where_expected():
    m3 = trainer.build_model(micro_cfg(variant="M3_FULL"))
    m6 = trainer.build_model(micro_cfg(variant="M6_FULL_EAM"))
    assert not any(n.startswith(("eam.", "head.aux"))
                   for n in m3.store.names())
    assert any(n.startswith("eam.") for n in m6.store.names())
    m4 = trainer.build_model(micro_cfg(variant="M4_MULTI_NOSURR"))
    assert not any(n.startswith("surrogate.") for n in m4.store.names())


def test_training_is_bit_deterministic():
    def final_hash():
        state = trainer.init_state(micro_cfg())
        for _ in range(3):
            trainer.train_step(state)
        return state.model.store.state_hash()

    assert final_hash() == final_hash()


def test_loss_decreases_on_average():
    state = trainer.init_state(micro_cfg(iters=60, batch=4, lr=1e-3))
    losses = [trainer.train_step(state)[0] for _ in range(60)]
    assert np.mean(losses[-15:]) < np.mean(losses[:15])


def test_modality_draw_frequencies():
    state = trainer.init_state(micro_cfg(iters=400, batch=1))
    labels = [trainer.train_step(state)[1] for _ in range(400)]
    for m in ALL_MODALITIES:
        frac = labels.count(m.name.lower()) / len(labels)
        assert abs(frac - 0.25) < 0.08, (m, frac)


def test_uncond_fraction_matches_p_uncond():
    state = trainer.init_state(micro_cfg(p_uncond=0.3))
    n_empty = 0
    n = 600
    for _ in range(n):
        _, cs, _, _ = trainer._draw_sample(state, None)
        n_empty += int(len(cs.active) == 0)
    assert abs(n_empty / n - 0.3) < 0.06


def test_adam_zero_grad_is_noop_on_params():
    state = trainer.init_state(micro_cfg())
    state.model.store.zero_grads()
    before = state.model.store.state_hash()
    state.opt.step(state.model.store)
    assert state.model.store.state_hash() == before


def test_checkpoint_roundtrip_bitwise(tmp_path):
    state = trainer.init_state(micro_cfg())
    for _ in range(2):
        trainer.train_step(state)
    ckpt = tmp_path / "ckpt"
    trainer.save_checkpoint(ckpt, state)
    back = trainer.load_checkpoint(ckpt)
    assert back.model.store.state_hash() == state.model.store.state_hash()
    assert back.iteration == state.iteration
    assert back.opt.t == state.opt.t
    for n in state.opt.m:
        assert np.array_equal(back.opt.m[n], state.opt.m[n])
        assert np.array_equal(back.opt.v[n], state.opt.v[n])
    assert back.rng.bit_generator.state == state.rng.bit_generator.state


def test_checkpoint_detects_corruption(tmp_path):
    state = trainer.init_state(micro_cfg())
    ckpt = tmp_path / "ckpt"
    trainer.save_checkpoint(ckpt, state)
    victim = ckpt / "head.base.W.mdlt"
    raw = bytearray(victim.read_bytes())
    raw[-1] ^= 0xFF
    victim.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="hash"):
        trainer.load_checkpoint(ckpt)


def test_resume_reproduces_unbroken_run(tmp_path):
    cfg = micro_cfg(iters=6)
    unbroken = trainer.run(cfg, tmp_path / "a", log_every=1)

    cfg_short = dataclasses.replace(cfg, iters=3)
    trainer.run(cfg_short, tmp_path / "b")
    mid = tmp_path / "b" / "ckpt_final"
    resumed = trainer.run(cfg, tmp_path / "b2", resume_from=mid)

    a = trainer.load_checkpoint(unbroken)
    b = trainer.load_checkpoint(resumed)
    assert a.model.store.state_hash() == b.model.store.state_hash()
    assert a.rng.bit_generator.state == b.rng.bit_generator.state


def test_run_writes_loss_csv_and_periodic_checkpoints(tmp_path, monkeypatch):
    monkeypatch.setattr(trainer, "CHECKPOINT_EVERY", 2)
    trainer.run(micro_cfg(iters=5), tmp_path / "run")
    lines = (tmp_path / "run" / "loss.csv").read_text().splitlines()
    assert lines[0] == "iter,loss,modality"
    assert len(lines) == 6
    assert (tmp_path / "run" / "ckpt_000002").is_dir()
    assert (tmp_path / "run" / "ckpt_000004").is_dir()
    assert (tmp_path / "run" / "ckpt_final").is_dir()


def test_parallel_baseline_trains_four_models(tmp_path):
    cfg = micro_cfg(iters=1, batch=1)
    out = trainer.train_parallel_baseline(cfg, tmp_path)
    assert set(out) == set(ALL_MODALITIES)
    for m, ckpt in out.items():
        model = trainer.load_model(ckpt)
        assert model.modalities == (m,)
