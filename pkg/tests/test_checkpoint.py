"""Tests for checkpoint module."""

import json
import struct

import numpy as np
import pytest

from src.bieru import ABLATIONS, VARIANTS, ModelConfig, init_model
from src.checkpoint import (
    MAGIC,
    CorruptHeaderError,
    ShapeMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    payload_length,
    save_checkpoint,
)
from src.data import synth_dataset
from src.gntb import FULL_RANK, LOW_RANK, GntbConfig
from src.heads import CLASSIFY, REGRESS, LossConfig
from src.numkit import SeededRng
from src.tfe import TfeConfig
from src.train import TrainConfig, TrainState, report_params, train_stream


def _config(hidden=3):
    return ModelConfig(
        gntb=GntbConfig(d=4, r=2),
        tfe=TfeConfig(d=4, hidden=hidden, filters=2, kernel=2),
        n_class=3,
        dropout_rate=0.2,
    )


def _model(seed=0, hidden=3):
    return init_model(_config(hidden), SeededRng(seed))


def _rewrite_header(blob, edit):
    (length,) = struct.unpack_from("<Q", blob, 8)
    header = json.loads(blob[16 : 16 + length])
    edit(header)
    raw = json.dumps(header).encode()
    return MAGIC + struct.pack("<Q", len(raw)) + raw + blob[16 + length :]


def _random_config(seed):
    rng = SeededRng(seed)
    d = int(rng.integers(2, 6))
    k = int(rng.integers(1, 6))
    task = (CLASSIFY, REGRESS)[int(rng.integers(0, 2))]
    return ModelConfig(
        gntb=GntbConfig(
            d=d,
            k=k,
            r=int(rng.integers(1, 2 * d + 1)),
            mode=(LOW_RANK, FULL_RANK)[int(rng.integers(0, 2))],
        ),
        tfe=TfeConfig(
            d=d,
            hidden=int(rng.integers(1, 5)),
            filters=int(rng.integers(1, 5)),
            kernel=int(rng.integers(1, d + 1)),
        ),
        variant=VARIANTS[int(rng.integers(0, len(VARIANTS)))],
        task=task,
        n_class=int(rng.integers(2, 7)),
        ablation=ABLATIONS[seed % len(ABLATIONS)],
        head_bias=bool(rng.integers(0, 2)),
    )


def _trained_blob(tmp_path, name):
    data = synth_dataset(SeededRng(0), 3, (2, 4), d=4, n_class=3)
    config = TrainConfig(epochs=2, lr=0.01, seed=5)
    model = _model(5)
    state = TrainState.fresh(model, config)
    list(train_stream(model, data, state, config, LossConfig(), val_set=data))
    return save_checkpoint(tmp_path / name, model, state, run_config={"seed": 5}).read_bytes()


class TestRoundTrip:
    """Tests for save_checkpoint and load_checkpoint."""

    def test_model_tensors_identical(self, tmp_path):
        """Test tensors and run config survive a round trip."""
        model = _model()
        path = save_checkpoint(tmp_path / "m.ckpt", model, run_config={"seed": 0})
        ckpt = load_checkpoint(path)
        assert ckpt.model.config == model.config
        assert ckpt.run_config == {"seed": 0}
        assert ckpt.train_state is None
        for name, arr in model.named_tensors().items():
            np.testing.assert_array_equal(ckpt.model.named_tensors()[name], arr)

    def test_layout(self, tmp_path):
        """Test magic, header length and payload size."""
        model = _model()
        path = save_checkpoint(tmp_path / "m.ckpt", model)
        blob = path.read_bytes()
        assert blob[:8] == b"BIERUCKP"
        (length,) = struct.unpack_from("<Q", blob, 8)
        header = json.loads(blob[16 : 16 + length])
        assert header["format_version"] == 1
        assert len(blob) - 16 - length == 8 * model.num_params()
        assert payload_length(path) == model.num_params()

    def test_no_temp_file_left(self, tmp_path):
        """Test the atomic write leaves no temporary file."""
        save_checkpoint(tmp_path / "m.ckpt", _model())
        assert [p.name for p in tmp_path.iterdir()] == ["m.ckpt"]

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_payload_matches_reported_parameter_count(self, tmp_path, seed):
        """Test report_params totals equal the stored payload for random configurations."""
        model = init_model(_random_config(seed), SeededRng(seed))
        path = save_checkpoint(tmp_path / "m.ckpt", model)
        blob = path.read_bytes()
        (length,) = struct.unpack_from("<Q", blob, 8)
        total = report_params(model).total
        assert (len(blob) - 16 - length) // 8 == total
        assert payload_length(path) == total

    def test_identical_runs_write_identical_bytes(self, tmp_path):
        """Test two identical training runs produce byte-identical checkpoints."""
        assert _trained_blob(tmp_path, "a.ckpt") == _trained_blob(tmp_path, "b.ckpt")

    def test_early_stopping_counters_survive(self, tmp_path):
        """Test the best validation loss and stale count are restored on load."""
        model = _model()
        state = TrainState.fresh(model, TrainConfig(seed=0))
        state.best_val_loss = 0.75
        state.stale_epochs = 2
        ckpt = load_checkpoint(save_checkpoint(tmp_path / "m.ckpt", model, state))
        assert ckpt.train_state.best_val_loss == 0.75
        assert ckpt.train_state.stale_epochs == 2

    def test_resume_continues_bit_exactly(self, tmp_path):
        """Test resuming from a checkpoint matches a straight run."""
        data = synth_dataset(SeededRng(0), 3, (2, 4), d=4, n_class=3)
        config = TrainConfig(epochs=2, lr=0.01, seed=5)

        straight = _model(5)
        state = TrainState.fresh(straight, config)
        list(train_stream(straight, data, state, config, LossConfig()))

        first = _model(5)
        state = TrainState.fresh(first, config)
        list(train_stream(first, data, state, TrainConfig(epochs=1, lr=0.01, seed=5), LossConfig()))
        save_checkpoint(tmp_path / "m.ckpt", first, state)

        ckpt = load_checkpoint(tmp_path / "m.ckpt")
        assert ckpt.train_state.epoch == 1
        assert len(ckpt.train_state.history) == 1
        list(train_stream(ckpt.model, data, ckpt.train_state, config, LossConfig()))
        for name, arr in straight.named_tensors().items():
            np.testing.assert_array_equal(ckpt.model.named_tensors()[name], arr)


class TestCorruption:
    """Tests for decode_checkpoint failure modes."""

    def test_bad_magic(self):
        """Test a wrong magic prefix."""
        with pytest.raises(CorruptHeaderError, match="magic"):
            decode_checkpoint(b"NOTACKPT" + b"\x00" * 16)

    def test_header_length_past_end(self):
        """Test a header length beyond the file."""
        with pytest.raises(CorruptHeaderError):
            decode_checkpoint(MAGIC + struct.pack("<Q", 10**6) + b"{}")

    def test_garbage_header(self):
        """Test an undecodable header."""
        with pytest.raises(CorruptHeaderError):
            decode_checkpoint(MAGIC + struct.pack("<Q", 3) + b"\xff\xfe{")

    def test_version_mismatch(self):
        """Test an unsupported format version."""
        blob = _rewrite_header(encode_checkpoint(_model()), lambda h: h.update(format_version=2))
        with pytest.raises(VersionMismatchError):
            decode_checkpoint(blob)

    def test_truncated_payload(self):
        """Test a payload shorter than the index."""
        blob = encode_checkpoint(_model())
        with pytest.raises(TruncatedPayloadError):
            decode_checkpoint(blob[:-8])

    def test_shape_mismatch_against_expected_config(self):
        """Test stored shapes checked against an expected config."""
        blob = encode_checkpoint(_model(hidden=3))
        with pytest.raises(ShapeMismatchError):
            decode_checkpoint(blob, expected=_config(hidden=5))

    def test_missing_tensor(self):
        """Test a tensor missing from the index."""
        blob = _rewrite_header(
            encode_checkpoint(_model()), lambda h: h.update(tensors=h["tensors"][1:])
        )
        with pytest.raises(ShapeMismatchError, match="missing"):
            decode_checkpoint(blob)
