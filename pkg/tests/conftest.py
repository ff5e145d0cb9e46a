import numpy as np
import pytest

from gfdmlink.estimator import plan_pilots
from gfdmlink.harness import contiguous_block_sets, draw_frame_data
from gfdmlink.impairments import draw_impairments, synthesize_received
from gfdmlink.waveform import SystemConfig, build_assignment


def small_config(**overrides) -> SystemConfig:
    """K=8, M=2, 2 users, 3 antennas: the smallest config that exercises everything."""
    params = dict(K=8, M=2, U=2, K_D=8, L=2, L_cp=2, N_r=3, N_s=50,
                  rolloff=0.4, P_pil=1, delta=0.01)
    params.update(overrides)
    return SystemConfig(**params)


def tiny_config(**overrides) -> SystemConfig:
    """K=4, M=2, 2 users, 2 antennas: used where runtime matters most."""
    params = dict(K=4, M=2, U=2, K_D=4, L=2, L_cp=2, N_r=2, N_s=20,
                  rolloff=0.4, P_pil=1, delta=0.01)
    params.update(overrides)
    return SystemConfig(**params)


def make_plan(config: SystemConfig, sets=None):
    return build_assignment(config, sets if sets is not None else contiguous_block_sets(config))


def make_noise_free_frame(config: SystemConfig, seed: int = 0, plan=None, layout=None):
    """Deterministic noise-free frame with random impairments and QPSK payload."""
    plan = plan if plan is not None else make_plan(config)
    layout = layout if layout is not None else plan_pilots(plan)
    rng = np.random.default_rng(seed)
    imps = draw_impairments(config, rng)
    data = draw_frame_data(plan, layout, rng)
    frame = synthesize_received(plan, imps, data, rng, 0.0)
    return plan, layout, frame


@pytest.fixture(scope="session")
def small_noise_free():
    config = small_config()
    plan, layout, frame = make_noise_free_frame(config, seed=7)
    return config, plan, layout, frame
