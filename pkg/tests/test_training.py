import struct

import numpy as np
import pytest

from pivotgen import corpus as C
from pivotgen import model as M
from pivotgen import training as TR
from pivotgen.training import Checkpoint, CheckpointError, TrainConfig


@pytest.fixture(scope="module")
def tiny():
    corpus = C.build_corpus(C.CorpusParams(scenes=120, test=15, seed=5))
    mcfg = M.ModelConfig(d=32, enc_layers=1, dec_layers=1, heads=2, ffn_mult=2)
    return corpus, mcfg


@pytest.fixture(scope="module")
def ck_a(tiny):
    corpus, mcfg = tiny
    cfg = TrainConfig(stage="align_vision", epochs=4, seed=1)
    return TR.train_vision_alignment(corpus.pairsets["D1"], cfg, mcfg)


@pytest.fixture(scope="module")
def ck_b(tiny, ck_a):
    corpus, mcfg = tiny
    cfg = TrainConfig(stage="align_lingual", epochs=3, seed=1)
    return TR.train_crosslingual_alignment(
        corpus.pairsets["D2"], corpus.pairsets["D3"], corpus.pairsets["D4"], cfg, mcfg, ck_a
    )


def test_train_config_validation():
    with pytest.raises(ValueError, match="stage"):
        TrainConfig(stage="warp")
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(r=150)


def test_stage_default_loss_weights():
    assert TrainConfig(stage="align_vision").weights().lam1 == 1.0
    assert TrainConfig(stage="align_vision").weights().lam2 == 0.0
    assert TrainConfig(stage="align_lingual").weights().lam2 == 1.0
    custom = TrainConfig(stage="align_lingual", lam1=0.3, lam2=0.7)
    assert (custom.weights().lam1, custom.weights().lam2) == (0.3, 0.7)


def test_vision_alignment_rejects_empty_pairs(tiny):
    corpus, mcfg = tiny
    empty = C.PairSet("D1", "vision", "L0", [], [], [])
    with pytest.raises(ValueError, match="non-empty"):
        TR.train_vision_alignment(empty, TrainConfig(stage="align_vision"), mcfg)


def test_dependent_stages_require_init(tiny):
    corpus, mcfg = tiny
    with pytest.raises(ValueError, match="align_vision"):
        TR.train_crosslingual_alignment(
            corpus.pairsets["D2"], None, None, TrainConfig(stage="align_lingual"), mcfg, None
        )
    with pytest.raises(ValueError, match="align_lingual"):
        TR.train_dlr({"L0": []}, TrainConfig(stage="dlr"), mcfg, None)


def test_stage_a_touches_only_vision_and_pivot(tiny, ck_a):
    corpus, mcfg = tiny
    fresh = M.init_parameters(mcfg, seed=1)
    for name, arr in ck_a.tensors.items():
        if name.startswith(("mul.", "dec.")):
            np.testing.assert_array_equal(arr, fresh[name].data, err_msg=name)
    changed = [n for n in ck_a.tensors if n.startswith(("vis.", "piv."))
               and not np.array_equal(ck_a.tensors[n], fresh[n].data)]
    assert changed


def test_stage_a_first_loss_near_log_batch():
    """Random-init contrastive loss starts near ln K (default scale:
    batch 64 from the 450-pair default D1)."""
    corpus = C.build_corpus(C.CorpusParams())
    cfg = TrainConfig(stage="align_vision", epochs=1, seed=0)
    ck = TR.train_vision_alignment(corpus.pairsets["D1"], cfg, M.ModelConfig())
    first = ck.provenance[-1]["first_batch_loss"]
    assert abs(first - np.log(64)) / np.log(64) <= 0.2


def test_stage_b_freezes_pivot_encoder_bitwise(tiny, ck_a, ck_b):
    for name, arr in ck_b.tensors.items():
        if name.startswith(("piv.", "vis.", "dec.")):
            np.testing.assert_array_equal(arr, ck_a.tensors[name], err_msg=name)
    assert any(
        not np.array_equal(ck_b.tensors[n], ck_a.tensors[n]) for n in ck_b.tensors if n.startswith("mul.")
    )


def test_dlr_freezes_multilingual_encoder(tiny, ck_b):
    corpus, mcfg = tiny
    pool = TR.dlr_sentence_pool(corpus.pairsets)
    cfg = TrainConfig(stage="dlr", epochs=2, seed=1, r=5, eps=0.05)
    ck_c = TR.train_dlr(pool, cfg, mcfg, ck_b)
    for name, arr in ck_c.tensors.items():
        if name.startswith(("mul.", "piv.", "vis.")):
            np.testing.assert_array_equal(arr, ck_b.tensors[name], err_msg=name)
    assert any(
        not np.array_equal(ck_c.tensors[n], ck_b.tensors[n]) for n in ck_c.tensors if n.startswith("dec.")
    )
    assert ck_c.stages_run() == ["align_vision", "align_lingual", "dlr"]


def test_dlr_can_train_encoder_when_asked(tiny, ck_b):
    corpus, mcfg = tiny
    pool = {"L1": TR.dlr_sentence_pool(corpus.pairsets)["L1"]}
    cfg = TrainConfig(stage="dlr", epochs=1, seed=1, train_encoder_in_dlr=True)
    ck = TR.train_dlr(pool, cfg, mcfg, ck_b)
    assert any(
        not np.array_equal(ck.tensors[n], ck_b.tensors[n]) for n in ck.tensors if n.startswith("mul.")
    )


def test_epoch_losses_non_increasing_early(tiny, ck_a, ck_b):
    for ck in (ck_a, ck_b):
        losses = ck.provenance[-1]["epoch_losses"][:3]
        for earlier, later in zip(losses, losses[1:]):
            assert later <= earlier * 1.05


def test_determinism_bit_identical_checkpoints(tiny, ck_a, tmp_path):
    corpus, mcfg = tiny
    cfg = TrainConfig(stage="align_vision", epochs=4, seed=1)
    again = TR.train_vision_alignment(corpus.pairsets["D1"], cfg, mcfg)
    TR.save_checkpoint(ck_a, tmp_path / "a.ckpt")
    TR.save_checkpoint(again, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_different_seed_changes_checkpoint(tiny):
    corpus, mcfg = tiny
    a = TR.train_vision_alignment(corpus.pairsets["D1"], TrainConfig(stage="align_vision", epochs=1, seed=1), mcfg)
    b = TR.train_vision_alignment(corpus.pairsets["D1"], TrainConfig(stage="align_vision", epochs=1, seed=2), mcfg)
    assert any(not np.array_equal(a.tensors[n], b.tensors[n]) for n in a.tensors)


def test_checkpoint_round_trip_is_byte_exact(tiny, ck_b, tmp_path):
    path = tmp_path / "b.ckpt"
    TR.save_checkpoint(ck_b, path)
    loaded = TR.load_checkpoint(path)
    assert loaded.config == ck_b.config
    assert loaded.provenance == ck_b.provenance
    assert list(loaded.tensors) == list(ck_b.tensors)
    for name in ck_b.tensors:
        assert loaded.tensors[name].tobytes() == ck_b.tensors[name].tobytes()
    TR.save_checkpoint(loaded, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_corrupted_magic_rejected(tiny, ck_a, tmp_path):
    path = tmp_path / "bad.ckpt"
    TR.save_checkpoint(ck_a, path)
    blob = bytearray(path.read_bytes())
    blob[0] = ord("X")
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="magic"):
        TR.load_checkpoint(path)


def test_checkpoint_truncation_rejected_with_position(tiny, ck_a, tmp_path):
    path = tmp_path / "trunc.ckpt"
    TR.save_checkpoint(ck_a, path)
    blob = path.read_bytes()[: len(path.read_bytes()) // 2]
    path.write_bytes(blob)
    with pytest.raises(CheckpointError, match="byte"):
        TR.load_checkpoint(path)


def test_checkpoint_tensor_count_mismatch_rejected(tiny, ck_a, tmp_path):
    path = tmp_path / "count.ckpt"
    TR.save_checkpoint(ck_a, path)
    blob = bytearray(path.read_bytes())
    declared = struct.unpack_from("<I", blob, 8)[0]
    struct.pack_into("<I", blob, 8, declared + 1)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        TR.load_checkpoint(path)


def test_checkpoint_version_check(tiny, ck_a, tmp_path):
    path = tmp_path / "ver.ckpt"
    TR.save_checkpoint(ck_a, path)
    blob = bytearray(path.read_bytes())
    struct.pack_into("<I", blob, 4, 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        TR.load_checkpoint(path)


def test_checkpoint_binary_layout(tiny, ck_a, tmp_path):
    """Spot-check the exact wire format: magic, version, count, first
    tensor record."""
    path = tmp_path / "layout.ckpt"
    TR.save_checkpoint(ck_a, path)
    blob = path.read_bytes()
    assert blob[:4] == b"ZNLG"
    version, count = struct.unpack_from("<II", blob, 4)
    assert version == 1 and count == len(ck_a.tensors)
    (name_len,) = struct.unpack_from("<H", blob, 12)
    first_name = blob[14 : 14 + name_len].decode("utf-8")
    assert first_name == next(iter(ck_a.tensors))
    (ndim,) = struct.unpack_from("<B", blob, 14 + name_len)
    dims = struct.unpack_from(f"<{ndim}I", blob, 15 + name_len)
    assert tuple(dims) == ck_a.tensors[first_name].shape


def test_finetune_zero_pairs_returns_unchanged(tiny, ck_b):
    corpus, mcfg = tiny
    pairs = list(zip(corpus.test.vision[:5], corpus.test.text["L1"][:5]))
    cfg = TrainConfig(stage="finetune", epochs=1, seed=1)
    out = TR.finetune_supervised(pairs, 0.05, cfg, mcfg, ck_b)  # floor(0.25) = 0 pairs
    for name in ck_b.tensors:
        np.testing.assert_array_equal(out.tensors[name], ck_b.tensors[name])
    assert out.provenance[-1]["pairs_used"] == 0


def test_finetune_ratio_validated(tiny, ck_b):
    corpus, mcfg = tiny
    cfg = TrainConfig(stage="finetune", epochs=1)
    with pytest.raises(ValueError, match="ratio"):
        TR.finetune_supervised([], 0.0, cfg, mcfg, ck_b)
    with pytest.raises(ValueError, match="ratio"):
        TR.finetune_supervised([], 1.1, cfg, mcfg, ck_b)


def test_finetune_trains_decoder_only(tiny, ck_b):
    corpus, mcfg = tiny
    pairs = list(zip(corpus.test.vision, corpus.test.text["L1"]))
    cfg = TrainConfig(stage="finetune", epochs=2, seed=3)
    out = TR.finetune_supervised(pairs, 1.0, cfg, mcfg, ck_b)
    for name in out.tensors:
        if not name.startswith("dec."):
            np.testing.assert_array_equal(out.tensors[name], ck_b.tensors[name], err_msg=name)
    assert any(not np.array_equal(out.tensors[n], ck_b.tensors[n]) for n in out.tensors if n.startswith("dec."))


def test_dlr_reconstruction_accuracy_small_scale(tiny, ck_b):
    """r=0, eps=0 auto-encoding memorizes the tiny training corpus."""
    corpus, mcfg = tiny
    pool = TR.dlr_sentence_pool(corpus.pairsets)
    cfg = TrainConfig(stage="dlr", epochs=150, seed=1, r=0, eps=0.0, learning_rate=3e-3, warmup_steps=20)
    ck_c = TR.train_dlr(pool, cfg, mcfg, ck_b)
    params = ck_c.to_parameters()
    params.frozen = set(params.tensors)
    params._sync_flags()
    from pivotgen.tensor import Tensor

    correct = total = 0
    for lang in C.LANGS:
        seqs = pool[lang][:40]
        coords = M.encode_multi_batch(params, mcfg, seqs)
        acc = M.token_accuracy(params, mcfg, Tensor(coords.data.copy()), seqs)
        correct += acc * sum(len(s.ids) for s in seqs)
        total += sum(len(s.ids) for s in seqs)
    assert correct / total >= 0.99
