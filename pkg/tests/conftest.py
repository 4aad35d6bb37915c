import numpy as np
import pytest

from dmpcouple.coupling import assemble
from dmpcouple.network import TrainConfig, train_lm
from dmpcouple.oracle import OracleParams, Scene, demo_durations, gen_avoidance, gen_baseline, training_settings
from dmpcouple.rollout import fit_baseline

ORACLE = OracleParams()


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture(scope="session")
def scene():
    return Scene()


@pytest.fixture(scope="session")
def baseline(scene):
    """Baseline primitive fitted in the local frame of the standard scene."""
    return fit_baseline([gen_baseline(scene.start, scene.goal, scene.tau)])


@pytest.fixture(scope="session")
def sphere_settings(scene):
    return training_settings("sphere", scene)


@pytest.fixture(scope="session")
def trained(baseline, sphere_settings, scene):
    """A small network trained on two sphere settings, with its dataset."""
    demos = []
    for s in (sphere_settings[0], sphere_settings[13]):
        for i, tau in enumerate(demo_durations(scene.tau, 3)):
            demos.append(gen_avoidance(baseline, s, ORACLE, tau=tau, demo_id=f"{s.setting_id}-{i}"))
    ds = assemble(demos, baseline, seed=1)
    model = train_lm(ds, TrainConfig(max_iters=40, seed=3))
    return model, ds
