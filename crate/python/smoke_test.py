#!/usr/bin/env python3
"""End-to-end smoke test for the hkt_py extension module.

Builds the cdylib with cargo, copies it next to this script under the
importable name, then exercises the bound API: config validation, forward
evaluation, checkpoint round-trip, dataset generation, op counting, the
causality certificate and decay calibration.

Usage: python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_extension() -> Path:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "hkt-py"], cwd=ROOT, check=True
    )
    built = ROOT / "target" / "release" / "libhkt_py.so"
    if not built.exists():  # macOS fallback
        built = ROOT / "target" / "release" / "libhkt_py.dylib"
    dest = Path(__file__).resolve().parent / "hkt_py.so"
    shutil.copyfile(built, dest)
    return dest


def main() -> None:
    build_extension()
    sys.path.insert(0, str(Path(__file__).resolve().parent))
    import hkt_py

    cfg = hkt_py.ModelConfig(
        d_model=32, n_heads=2, n_levels=3, stride=2, n_layers=1, max_seq_len=32
    )
    assert cfg.level_len(32, 0) == 32
    assert cfg.level_len(32, 1) == 16
    assert cfg.level_len(32, 2) == 8

    # invalid configs are rejected at construction
    try:
        hkt_py.ModelConfig(d_model=30, n_heads=4)
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError for d_model % n_heads != 0")

    model = hkt_py.Model(cfg, seed=1)
    assert model.n_parameters() > 0
    tokens = [16] + [3, 1, 4, 1, 5, 9, 2, 6] * 3 + [15] * 7
    assert len(tokens) == 32
    logits = model.logits(tokens)
    assert len(logits) == 10
    assert all(math.isfinite(v) for v in logits)
    assert model.predict(tokens) == max(range(10), key=lambda i: logits[i])

    # deterministic: same seed, same logits
    again = hkt_py.Model(cfg, seed=1).logits(tokens)
    assert logits == again

    with tempfile.TemporaryDirectory() as tmp:
        ckpt = Path(tmp) / "model.ckpt"
        model.save(ckpt)
        reloaded = hkt_py.Model.load(ckpt)
        assert reloaded.logits(tokens) == logits

        data_dir = Path(tmp) / "data"
        hkt_py.generate_dataset(
            data_dir, seed=7, n_train=50, n_val=10, n_test=10, seq_len=32,
            max_depth=2, max_arity=3,
        )
        lines = (data_dir / "train.tsv").read_text().strip().splitlines()
        assert len(lines) == 50
        seq, label = lines[0].split("\t")
        assert 0 <= int(label) <= 9
        assert len(seq.split(" ")) == 32

    entries, measured, theory = hkt_py.score_op_overhead(cfg, 32)
    assert measured == 1.3125 == theory
    assert entries == 32 * 32 + 16 * 16 + 8 * 8

    assert model.max_leakage(16, 2, 0) <= 1e-12

    delta, residual, warning = hkt_py.decay_calibration([49.9, 55.7, 55.3, 57.7])
    assert 0.2 <= delta <= 0.5
    assert warning is not None

    print("smoke test passed")


if __name__ == "__main__":
    main()
