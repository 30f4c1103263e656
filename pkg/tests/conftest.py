import numpy as np
import pytest

from uipcmf.baselines import ACF, MF, ProtoMF
from uipcmf.model import UIPCMF


def random_uipc(rng, n_users=6, n_items=6, dim=5, n_up=3, n_ip=4):
    return UIPCMF(
        user_embeddings=rng.normal(size=(n_users, dim)),
        item_embeddings=rng.normal(size=(n_items, dim)),
        user_prototypes=rng.normal(size=(n_up, dim)),
        item_prototypes=rng.normal(size=(n_ip, dim)),
        connections=rng.normal(size=(n_up, n_ip)),
    )


def random_model(kind, rng, n_users=6, n_items=6, dim=5, n_up=3, n_ip=4):
    if kind in ("uipc-mf", "uipc-mf-l1"):
        return random_uipc(rng, n_users, n_items, dim, n_up, n_ip)
    emb = dict(user_embeddings=rng.normal(size=(n_users, dim)),
               item_embeddings=rng.normal(size=(n_items, dim)))
    if kind == "mf":
        return MF(**emb)
    if kind == "acf":
        return ACF(**emb, anchors=rng.normal(size=(n_up, dim)))
    if kind == "protomf":
        return ProtoMF(**emb, user_prototypes=rng.normal(size=(n_up, dim)),
                       item_prototypes=rng.normal(size=(n_ip, dim)),
                       item_side_weights=rng.normal(size=(n_up, dim)),
                       user_side_weights=rng.normal(size=(n_ip, dim)))
    raise ValueError(kind)


def numeric_grad(fn, model, name, h=1e-6):
    """Central finite differences of scalar ``fn()`` w.r.t. ``model.<name>``."""
    arr = getattr(model, name)
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = fn()
        arr[i] = old - h
        down = fn()
        arr[i] = old
        out[i] = (up - down) / (2 * h)
    return out


def rel_error(analytic, numeric, floor=1e-7):
    """Norm-wise relative error; ``floor`` absorbs finite-difference noise on zero grads."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One verdict line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
