import numpy as np
import pytest

from mricascade import config as config_module
from mricascade.dataio import PatientRecord, SyntheticConfig, generate_synthetic


@pytest.fixture(autouse=True)
def quiet_progress(monkeypatch):
    """Keep tqdm bars out of test output and load patients serially."""
    monkeypatch.setattr(config_module.settings, "progress", False)
    monkeypatch.setattr(config_module.settings, "workers", 1)
    monkeypatch.delenv("MRICASCADE_SEED", raising=False)


@pytest.fixture()
def small_dataset(tmp_path):
    cfg = SyntheticConfig(n_patients=6,
                          slices_per_patient=2,
                          image_size=16,
                          lesion_probability=0.5,
                          seed=3)
    root = tmp_path / "synthetic"
    manifest = generate_synthetic(cfg, root)
    return root, manifest


def make_patient(patient_id: str = "P0001",
                 label: int = 1,
                 size: int = 16,
                 slices: int = 2,
                 lesion: tuple[int, int, int] | None = (6, 6, 4)) -> PatientRecord:
    """Patient with a bright square lesion (row, col, side) on every slice."""
    rng = np.random.default_rng(0)
    images, masks = [], []
    for _ in range(slices):
        pixels = rng.uniform(0.2, 0.4, size=(size, size))
        mask = np.zeros((size, size), dtype=np.uint8)
        if lesion is not None:
            r, c, side = lesion
            mask[r:r + side, c:c + side] = 1
            pixels[mask == 1] = 0.9
        images.append(pixels)
        masks.append(mask)
    return PatientRecord(patient_id=patient_id,
                         slices=tuple(images),
                         masks=tuple(masks),
                         label=label)


@pytest.fixture()
def patient_factory():
    return make_patient
