import csv

import numpy as np
import pytest

import uipcmf.trainer as trainer_mod
from uipcmf.baselines import build_model
from uipcmf.checkpoint import load_checkpoint
from uipcmf.config import ConfigError, TrainConfig
from uipcmf.data import leave_one_out_split
from uipcmf.evaluator import MetricsReport
from uipcmf.losses import Batch, RegWeights, total_loss
from uipcmf.optim import Adagrad, Adam, make_optimizer
from uipcmf.synth import SynthConfig, generate
from uipcmf.trainer import NonFiniteLossError, save_result, train


# --- optimizers -------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["adam", "adagrad"])
def test_zero_gradient_is_noop(kind):
    params = {"w": np.array([1.0, -2.0, 3.0])}
    before = params["w"].copy()
    opt = make_optimizer(kind, params, 0.1)
    for _ in range(3):
        opt.step({"w": np.zeros(3)})
    assert np.array_equal(params["w"], before)


def test_adam_first_step():
    params = {"x": np.array([0.0])}
    Adam(params, lr=0.1).step({"x": np.array([1.0])})
    assert params["x"][0] == pytest.approx(-0.1, rel=1e-6)


def test_adagrad_first_step():
    params = {"x": np.array([0.0])}
    Adagrad(params, lr=0.1).step({"x": np.array([3.0])})
    assert params["x"][0] == pytest.approx(-0.1, rel=1e-9)


def test_optimizer_errors():
    params = {"x": np.zeros(2)}
    with pytest.raises(ValueError, match="learning rate"):
        Adam(params, lr=0.0)
    with pytest.raises(ValueError, match="shape"):
        Adagrad(params, lr=0.1).step({"x": np.zeros(3)})
    with pytest.raises(ValueError, match="unknown optimizer"):
        make_optimizer("sgd", params, 0.1)


@pytest.mark.parametrize("kind", ["adam", "adagrad"])
def test_full_batch_steps_reduce_loss(kind):
    rng = np.random.default_rng(5)
    model = build_model("uipc-mf", 12, 15, 6, rng, 3, 3)
    batch = Batch(rng.integers(0, 12, 30), rng.integers(0, 15, 30), rng.integers(0, 15, (30, 4)))
    reg = RegWeights(lambda_l2=1e-4, lambda_1=0.1, lambda_l1=0.01)
    opt = make_optimizer(kind, model.tensors(), 0.01)
    first = None
    for _ in range(50):
        report, grads = total_loss(model, batch, reg, "ssm")
        first = report.total if first is None else first
        opt.step(grads)
    assert total_loss(model, batch, reg, "ssm")[0].total < first


# --- training loop ----------------------------------------------------------------

@pytest.fixture(scope="module")
def bundle():
    return leave_one_out_split(generate(SynthConfig(3, 20, 60, p_in=0.3, seed=2)), 0)


SMALL = TrainConfig(dim=6, n_user_prototypes=3, n_item_prototypes=3, max_epochs=3, n_neg=4,
                    batch_size=64, lambda_1=0.1, lambda_4=0.1, lambda_l1=0.01)


def test_early_stopping_on_flat_validation(bundle, monkeypatch):
    def flat(model, bundle, stage, cutoffs):
        ranks = np.full(3, 5)
        return MetricsReport(stage, {10: 0.5}, {10: 0.3}, np.arange(3), ranks)

    monkeypatch.setattr(trainer_mod, "evaluate", flat)
    result = train(bundle, "mf", SMALL.replace(max_epochs=50, patience=10))
    assert len(result.log.epochs) == 11
    assert result.log.best_epoch == 1


def test_zero_learning_rate_rejected(bundle):
    with pytest.raises(ConfigError):
        train(bundle, "mf", SMALL.replace(learning_rate=0.0))


@pytest.mark.parametrize("kind", ["mf", "acf", "protomf", "uipc-mf-l1"])
def test_training_is_deterministic(bundle, kind, tmp_path):
    a = train(bundle, kind, SMALL, step_log=tmp_path / "a.csv")
    b = train(bundle, kind, SMALL, step_log=tmp_path / "b.csv")
    for name, arr in a.model.tensors().items():
        assert np.array_equal(arr, b.model.tensors()[name])
    assert [e.losses for e in a.log.epochs] == [e.losses for e in b.log.epochs]
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_plain_uipc_ignores_l1(bundle):
    result = train(bundle, "uipc-mf", SMALL.replace(max_epochs=1))
    assert result.config.lambda_l1 == 0.0
    assert all(e.losses[trainer_mod.LOSS_FIELDS.index("l1_pref")] == 0.0
               for e in result.log.epochs)


def test_training_improves_on_random(bundle):
    result = train(bundle, "mf", SMALL.replace(max_epochs=15, learning_rate=0.01))
    assert result.log.best_hr > 0.2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(bundle):
    config = SMALL.replace(learning_rate=1e300, optimizer="adagrad", base_loss="bce",
                           lambda_l2=1e300)
    with pytest.raises(NonFiniteLossError, match="l2|total|base"):
        train(bundle, "mf", config)


def test_save_result_roundtrip(bundle, tmp_path):
    result = train(bundle, "uipc-mf-l1", SMALL.replace(max_epochs=2))
    paths = save_result(result, tmp_path, bundle.fingerprint())
    model, manifest = load_checkpoint(paths["checkpoint"])
    assert manifest["model_kind"] == "uipc-mf-l1"
    assert manifest["dataset_fingerprint"] == bundle.fingerprint()
    for name, arr in result.model.tensors().items():
        assert np.array_equal(arr, model.tensors()[name])
    with open(paths["train_log"]) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and "val_hr@10" in rows[0]
