import pytest

from app.schemas.config import RunConfig
from app.schemas.plan import SelectionMode, Strategy
from app.services.tasks import compare_pruners, eval_recall, init_toy_model, train_toy

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def config():
    return RunConfig()


@pytest.fixture(scope="module")
def trained(config):
    model = init_toy_model(config.vocab, config.head_dims(), config.num_layers, config.variant, seed=config.seed)
    return train_toy(model, config.task_spec(), config.train_hyper()).model


def test_default_config_reaches_target_accuracy(config, trained):
    assert eval_recall(trained, config.task_spec(), 512) >= 0.95


def test_drrqr_mean_is_not_below_random(config, trained):
    report = compare_pruners(
        trained,
        config.task_spec(),
        ratio=0.5,
        seeds=range(10),
        mode=SelectionMode.JOINT,
        challenger=Strategy.DRRQR,
        reference=Strategy.RAND,
    )
    assert report.passed
    assert report.means["drrqr"] >= report.means["rand"]
