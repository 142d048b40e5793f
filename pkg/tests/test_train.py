"""Training loop behavior: chunking, descent, early stop, determinism."""

import numpy as np
import pytest

from navfuse.errors import ConfigError
from navfuse.optim import TrainConfig
from navfuse.pipeline import init_pipeline
from navfuse.train import make_chunks, train, validation_loss
from navfuse.verify import small_pipeline_config, small_synth_frames


def _tcfg(**kw):
    base = dict(batch_size=2, total_epochs=3, warmup_steps=2, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_make_chunks_nonoverlapping():
    seq = list(range(10))
    chunks = make_chunks([seq], window=4)
    assert chunks == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]


def test_make_chunks_multiple_sequences():
    chunks = make_chunks([[1, 2], [3]], window=4)
    assert chunks == [[1, 2], [3]]


def test_make_chunks_bad_window():
    with pytest.raises(ConfigError):
        make_chunks([[1]], window=0)


def test_train_empty_dataset():
    model = init_pipeline(small_pipeline_config(), seed=0)
    with pytest.raises(ConfigError):
        train(model, [], [], _tcfg())


def test_train_loss_decreases():
    cfg = small_pipeline_config()
    model = init_pipeline(cfg, seed=0)
    frames = small_synth_frames(9, seed=0)
    result = train(model, [frames], [frames], _tcfg(total_epochs=5), max_epochs=5)
    assert result.logs[-1].val_loss < result.logs[0].val_loss
    assert result.best_val_loss <= min(l.val_loss for l in result.logs)


def test_train_zero_epochs_is_initialization():
    cfg = small_pipeline_config()
    model = init_pipeline(cfg, seed=0)
    before = model.params.state_dict()
    frames = small_synth_frames(5, seed=0)
    result = train(model, [frames], [frames], _tcfg(), max_epochs=0)
    assert result.logs == []
    for k, v in before.items():
        np.testing.assert_array_equal(result.best_params[k], v)


def test_train_bitwise_deterministic():
    cfg = small_pipeline_config()
    frames = small_synth_frames(7, seed=0)

    def run():
        model = init_pipeline(cfg, seed=0)
        return train(model, [frames], [frames], _tcfg(total_epochs=2), max_epochs=2)

    a, b = run(), run()
    assert [l.val_loss for l in a.logs] == [l.val_loss for l in b.logs]
    assert [l.train_loss for l in a.logs] == [l.train_loss for l in b.logs]
    for k, v in a.best_params.items():
        np.testing.assert_array_equal(b.best_params[k], v)


def test_train_early_stop_reason():
    cfg = small_pipeline_config()
    model = init_pipeline(cfg, seed=0)
    frames = small_synth_frames(5, seed=0)
    # patience 1 with a zero lr: no improvement is possible after epoch 0
    result = train(model, [frames], [frames],
                   _tcfg(total_epochs=50, patience=1, lr_init=0.0, lr_min=0.0),
                   max_epochs=50)
    assert result.stopped_early
    assert "improvement" in result.stop_reason
    assert len(result.logs) < 50


def test_train_stop_hook():
    cfg = small_pipeline_config()
    model = init_pipeline(cfg, seed=0)
    frames = small_synth_frames(5, seed=0)
    result = train(model, [frames], [frames], _tcfg(total_epochs=50),
                   max_epochs=50, stop_hook=lambda epoch, m, r: epoch >= 1)
    assert result.stopped_early
    assert len(result.logs) == 2


def test_train_best_snapshot_restores_best_val():
    cfg = small_pipeline_config()
    model = init_pipeline(cfg, seed=0)
    frames = small_synth_frames(7, seed=0)
    result = train(model, [frames], [frames], _tcfg(total_epochs=3), max_epochs=3)
    model.params.load_state_dict(result.best_params)
    for k, v in result.best_buffers.items():
        model.buffers[k][...] = v
    from navfuse.train import make_chunks as mk
    val = validation_loss(model, mk([frames], cfg.window))
    assert val == result.best_val_loss


def test_train_with_augmentation_runs():
    from navfuse.kitti import AugmentPolicy
    cfg = small_pipeline_config()
    model = init_pipeline(cfg, seed=0)
    frames = small_synth_frames(5, seed=0)
    result = train(model, [frames], [frames], _tcfg(total_epochs=1),
                   augment=AugmentPolicy(), max_epochs=1)
    assert np.isfinite(result.logs[0].train_loss)
