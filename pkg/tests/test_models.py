import pytest
import torch
from conftest import VARIANTS, adapted_model, randomize_adapters
from torch.func import functional_call

from fedadapt.core.config import ModelConfig
from fedadapt.core.errors import CheckpointError, FreezePolicyError, ShapeError
from fedadapt.federated.optimizers import AdamState
from fedadapt.models import (
    Adapter,
    AdapterSpec,
    AdapterVariant,
    FreezePolicy,
    ParameterTree,
    SpeechModel,
    adapter_forward,
    build_encoder,
    decode_greedy,
    set_freeze,
)
from fedadapt.models.checkpoint import attach_decoder, load_checkpoint, restore_model, save_checkpoint


def test_adapter_hand_example():
    adapter = Adapter(2, AdapterSpec("seq_end", 1, "relu", internal_residual=False))
    with torch.no_grad():
        adapter.w_down.copy_(torch.tensor([[1.0], [0.0]]))
        adapter.w_up.copy_(torch.tensor([[1.0, 1.0]]))
    h = torch.tensor([[2.0, -3.0]], dtype=torch.float64)
    assert torch.equal(adapter_forward(adapter, h), torch.tensor([[2.0, 2.0]], dtype=torch.float64))


def test_adapter_identity_and_zero_at_init():
    h = torch.randn(5, 8, dtype=torch.float64)
    residual = Adapter(8, AdapterSpec("seq_end", 3))
    assert torch.equal(residual(h), h)
    plain = Adapter(8, AdapterSpec("seq_end", 3, internal_residual=False))
    with torch.no_grad():
        plain.w_up.zero_()
    assert torch.equal(plain(h), torch.zeros_like(h))
    with pytest.raises(ShapeError):
        residual(torch.zeros(5, 7, dtype=torch.float64))


def test_adapter_spec_validation():
    with pytest.raises(ValueError):
        AdapterSpec("seq_end", 0)
    with pytest.raises(ValueError):
        AdapterSpec("seq_middle", 4)
    with pytest.raises(ValueError):
        AdapterSpec("seq_end", 4, "tanh")
    spec = AdapterSpec("parallel_both", 4)
    assert spec.variant is AdapterVariant.PARALLEL_BOTH
    assert AdapterSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        SpeechModel(ModelConfig(d=8), AdapterSpec("seq_end", 8))


def test_adapter_param_count_closed_form():
    cfg = ModelConfig(d_in=4, d=8, layers=3, ffm_mult=2, kernel=3)
    tree, encoder = build_encoder(cfg, AdapterSpec("seq_both", 4))
    assert len(encoder.adapters()) == 6
    assert sum(tree[p].numel() for p in tree.adapter_paths()) == 6 * (2 * 8 * 4 + 4 + 8) == 456
    assert AdapterSpec("seq_end", 256).instance_count(17) * AdapterSpec("seq_end", 256).param_count(512) == 4_469_504


@pytest.mark.parametrize("variant", VARIANTS)
def test_placement_count_and_paths(tiny_cfg, variant):
    model = adapted_model(tiny_cfg, variant)
    per_layer = 2 if variant.endswith("both") else 1
    assert len(model.encoder.adapters()) == tiny_cfg.layers * per_layer
    tree = ParameterTree(model)
    base = ParameterTree(SpeechModel(tiny_cfg, None, seed=0))
    assert set(base.paths()) == set(tree.paths()) - set(tree.adapter_paths())
    assert all("/adapter_" in p for p in tree.adapter_paths())


def test_no_adapters_means_baseline_paths(tiny_cfg):
    tree, _ = build_encoder(tiny_cfg, None)
    assert tree.adapter_paths() == []
    assert "encoder/layer01/ffm2/w1" in tree
    assert tree.paths() == sorted(tree.paths())


@pytest.mark.parametrize("variant", VARIANTS)
def test_identity_at_insertion_is_bitwise(tiny_cfg, tiny_model, variant):
    model = adapted_model(tiny_cfg, variant)
    generator = torch.Generator().manual_seed(5)
    for _ in range(10):
        x = torch.randn(1 + int(torch.randint(12, (1,), generator=generator)), tiny_cfg.d_in, generator=generator, dtype=torch.float64)
        assert torch.equal(model(x), tiny_model(x))


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("frames", [1, 2, 7, 32])
def test_encoder_shape_preserved(tiny_cfg, variant, frames):
    model = adapted_model(tiny_cfg, variant)
    randomize_adapters(model)
    out = model.encoder(torch.randn(frames, tiny_cfg.d_in, dtype=torch.float64))
    assert out.shape == (frames, tiny_cfg.d)
    assert model(torch.randn(frames, tiny_cfg.d_in, dtype=torch.float64)).shape == (frames, tiny_cfg.vocab_size + 1)


def test_padded_batch_matches_single_utterances(tiny_cfg):
    model = adapted_model(tiny_cfg, "parallel_both")
    randomize_adapters(model)
    generator = torch.Generator().manual_seed(1)
    lengths = [5, 3, 7]
    singles = [torch.randn(n, tiny_cfg.d_in, generator=generator, dtype=torch.float64) for n in lengths]
    batch = torch.zeros(3, 7, tiny_cfg.d_in, dtype=torch.float64)
    for i, x in enumerate(singles):
        batch[i, : x.shape[0]] = x
    out = model(batch, lengths)
    for i, x in enumerate(singles):
        assert torch.allclose(out[i, : x.shape[0]], model(x), atol=1e-12)


def test_adapters_change_output_once_trained(tiny_cfg, tiny_model):
    model = adapted_model(tiny_cfg, "seq_end")
    randomize_adapters(model)
    x = torch.randn(6, tiny_cfg.d_in, dtype=torch.float64)
    assert not torch.equal(model(x), tiny_model(x))


@pytest.mark.parametrize("variant", VARIANTS)
def test_gradients_match_finite_differences(variant):
    cfg = ModelConfig(d_in=3, d=4, layers=2, ffm_mult=2, kernel=3, vocab_size=3)
    model = adapted_model(cfg, variant, bottleneck=2, seed=4)
    randomize_adapters(model, seed=4)
    names = [name for name, _ in model.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_(True) for _, p in model.named_parameters())
    x = torch.randn(5, cfg.d_in, dtype=torch.float64, generator=torch.Generator().manual_seed(9))

    def loss(*values):
        logits = functional_call(model, dict(zip(names, values)), (x,))
        return (logits.sin()).sum()

    assert torch.autograd.gradcheck(loss, params, eps=1e-6, atol=1e-6, rtol=1e-4)


def test_decode_greedy():
    blank = 2

    def one_hot(labels):
        return torch.nn.functional.one_hot(torch.tensor(labels), 3).double()

    assert decode_greedy(one_hot([blank, 0, 0, blank, 1])) == [0, 1]
    assert decode_greedy(one_hot([blank, blank])) == []
    assert decode_greedy(one_hot([0, blank, 0])) == [0, 0]


def test_freeze_policies(tiny_cfg):
    model = adapted_model(tiny_cfg, "seq_both")
    tree = ParameterTree(model)
    set_freeze(tree, FreezePolicy.ALL_TRAINABLE)
    assert tree.trainable_count() == tree.total_count()

    set_freeze(tree, "freeze_encoder_base")
    decoder = sum(p.numel() for k, p in tree.leaves().items() if k.startswith("decoder/"))
    adapters = sum(tree[p].numel() for p in tree.adapter_paths())
    assert tree.trainable_count() == decoder + adapters

    set_freeze(tree, FreezePolicy.FREEZE_ALL_BUT_ADAPTERS)
    assert set(tree.trainable_paths()) == set(tree.adapter_paths())
    assert tree.trainable_count() + tree.frozen_count() == tree.total_count()
    assert all(tree.is_frozen(p) for p in tree.frozen_paths())


def test_path_lookup_follows_the_module(tiny_cfg):
    model = SpeechModel(tiny_cfg, None, seed=0)
    tree = ParameterTree(model)
    leaves = tree.leaves()
    assert all(tree[path] is leaf for path, leaf in leaves.items())
    assert "decoder/w" in tree and tree["decoder/w"] is model.decoder.w
    assert "encoder/no_such_leaf" not in tree
    with pytest.raises(KeyError):
        tree["encoder/no_such_leaf"]
    # adapters inserted after the tree was built are visible without rebuilding it
    model.encoder.insert_adapters(AdapterSpec("seq_end", 2))
    assert tree.adapter_paths() and all(path in tree for path in tree.adapter_paths())


def test_freeze_all_but_adapters_needs_adapters(tiny_model):
    with pytest.raises(FreezePolicyError):
        set_freeze(ParameterTree(tiny_model), FreezePolicy.FREEZE_ALL_BUT_ADAPTERS)


def test_client_copy_shares_frozen_leaves(tiny_cfg):
    tree = ParameterTree(adapted_model(tiny_cfg, "parallel_end"))
    set_freeze(tree, FreezePolicy.FREEZE_ALL_BUT_ADAPTERS)
    copy = tree.client_copy()
    for path in tree.frozen_paths():
        assert copy[path] is tree[path]
    for path in tree.trainable_paths():
        assert copy[path] is not tree[path]
        assert torch.equal(copy[path], tree[path])


def test_checkpoint_round_trip(tmp_path, tiny_cfg):
    model = adapted_model(tiny_cfg, "seq_both", seed=3)
    randomize_adapters(model)
    tree = ParameterTree(model)
    set_freeze(tree, FreezePolicy.FREEZE_ALL_BUT_ADAPTERS)
    state = AdamState.for_tree(tree, 2e-4)
    state.t = 4

    path = tmp_path / "model.ckpt"
    digest = save_checkpoint(path, model, state.state_dict(), metadata={"note": "x"})
    ckpt = load_checkpoint(path)
    restored = restore_model(ckpt)
    restored_tree = ParameterTree(restored)

    assert restored_tree.digest() == tree.digest()
    assert restored_tree.frozen_paths() == tree.frozen_paths()
    assert restored.adapter_spec == model.adapter_spec
    assert ckpt.metadata == {"note": "x"}
    assert ckpt.optimizer["t"] == 4
    assert set(ckpt.optimizer["m"]) == set(tree.trainable_paths())
    # re-encoding the restored model reproduces the same bytes
    assert save_checkpoint(tmp_path / "again.ckpt", restored, state.state_dict(), metadata={"note": "x"}) == digest


def test_checkpoint_float32_round_trip(tmp_path, tiny_cfg):
    model = SpeechModel(tiny_cfg, None, seed=1, dtype=torch.float32)
    save_checkpoint(tmp_path / "f32.ckpt", model)
    restored = restore_model(load_checkpoint(tmp_path / "f32.ckpt"), dtype=torch.float32)
    for (k, a), (_, b) in zip(ParameterTree(model).leaves().items(), ParameterTree(restored).leaves().items()):
        assert torch.equal(a, b), k


def test_checkpoint_errors(tmp_path, tiny_model):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.ckpt")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    good = tmp_path / "good.ckpt"
    save_checkpoint(good, tiny_model)
    good.write_bytes(good.read_bytes()[:-5])
    with pytest.raises(CheckpointError):
        load_checkpoint(good)


def test_attach_decoder_to_encoder_checkpoint(tmp_path, tiny_cfg):
    encoder_only = SpeechModel(tiny_cfg, None, seed=2, with_decoder=False)
    save_checkpoint(tmp_path / "enc.ckpt", encoder_only)
    ckpt = load_checkpoint(tmp_path / "enc.ckpt")
    assert not ckpt.has_decoder
    model = attach_decoder(restore_model(ckpt))
    reference = SpeechModel(tiny_cfg, None, seed=2)
    assert ParameterTree(model).digest() == ParameterTree(reference).digest()
