import numpy as np
import pytest
import torch

from blurdec.synth import make_dataset


@pytest.fixture(autouse=True)
def _single_thread():
    # keep step timings and float reductions stable across test machines
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def mini_dataset(tmp_path_factory):
    """Two tiny reversal-paired clips: 32 frames of 16x16 each."""
    root = tmp_path_factory.mktemp("mini_data")
    manifest = make_dataset(root, n_clips=1, n_frames=32, height=16, width=16,
                            seed=7, with_reversals=True, n_sprites=3, speed=1.0)
    return manifest


def rand_stack(n, h, w, c, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return rng.random((n, h, w, c)).astype(dtype)
