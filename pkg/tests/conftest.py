import numpy as np
import pytest

from swarmplan.deepset import DeepSetModel, make_model


def pd_steer_model(kp: float = 0.4, kv: float = 0.9, u_max: float = 0.5) -> DeepSetModel:
    """Hand-wired model implementing u = kp * dp + kv * dv (a PD law).

    All set networks are zeroed out; the psi network reconstructs signed
    goal components through paired ReLU channels. Useful wherever tests
    need a steer policy that actually reaches goals without training.
    """
    model = make_model("steer", seed=0, u_max=u_max)
    for net in model.nets().values():
        for W in net.Ws:
            W[:] = 0.0
        for b in net.bs:
            b[:] = 0.0
    W1 = model.psi.Ws[0]  # (36, 64)
    W2 = model.psi.Ws[1]  # (64, 2)
    gains = [kp, kp, kv, kv]
    for comp in range(4):  # rel_goal components: dpx, dpy, dvx, dvy
        W1[comp, 2 * comp] = 1.0
        W1[comp, 2 * comp + 1] = -1.0
        out = comp % 2  # x-like components drive u_x, y-like drive u_y
        W2[2 * comp, out] = gains[comp]
        W2[2 * comp + 1, out] = -gains[comp]
    return model


@pytest.fixture(scope="session")
def pd_model() -> DeepSetModel:
    return pd_steer_model()
