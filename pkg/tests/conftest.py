import numpy as np
import pytest
import torch

from seg_inpaint import data


@pytest.fixture(autouse=True)
def _limit_threads():
    torch.set_num_threads(4)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_sample(size=64, num_categories=8, scene_seed=7, mask_seed=3,
                fraction=(1 / 8, 1 / 2)) -> data.Sample:
    img_arr, lab_arr = data.make_synthetic_scene(size, np.random.default_rng(scene_seed))
    image = data.from_display(img_arr)
    labels = torch.from_numpy(lab_arr.astype(np.int64))
    mask = data.generate_hole_mask(size, size, fraction, np.random.default_rng(mask_seed))
    return data.make_sample(image, labels, num_categories, mask, name=f"synthetic_{scene_seed}")


@pytest.fixture
def sample64() -> data.Sample:
    return make_sample(64)


@pytest.fixture
def demo_root(tmp_path):
    root = tmp_path / "demo"
    data.write_demo_dataset(root, n_train=4, n_test=2, size=32, seed=1)
    return root


@pytest.fixture(scope="session")
def tiny_checkpoints(tmp_path_factory):
    """Briefly trained sp/sg checkpoints shared by CLI and service tests."""
    from seg_inpaint.training import TrainConfig, save_checkpoint, train_stage

    out = tmp_path_factory.mktemp("ckpts")
    dataset = data.ListDataset([make_sample(64, scene_seed=s, mask_seed=60 + s)
                                for s in range(2)], seed=0)
    paths = {}
    for stage in ("sp", "sg"):
        config = TrainConfig(stage=stage, epochs=1, decay_start=1, batch_size=1,
                             image_size=64, width_scale=1 / 16, seed=0, num_categories=8)
        state = train_stage(config, dataset, max_steps=2)
        paths[stage] = out / f"{stage}.ckpt"
        save_checkpoint(state, paths[stage])
    return paths
