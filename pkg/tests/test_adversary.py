import pytest

from bftdsn.core.exceptions import ScenarioError
from bftdsn.sim.adversary import (
    COMBINED_ROTATION,
    STRATEGIES,
    AdversaryConfig,
    Coalition,
    select_byzantine,
    strategy_for,
)

WEIGHTS = {1: 3, 2: 1, 3: 2, 4: 1, 5: 2, 6: 1, 7: 3, 8: 1, 9: 2, 10: 1}


@pytest.mark.parametrize(
    "kwargs",
    [
        {"strategy": "melt-down"},
        {"byzantine_fraction": 1.0},
        {"byzantine_fraction": -0.1},
        {"sybil_stored_fraction": 1.5},
        {"retrieval_mode": "loud"},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ScenarioError):
        AdversaryConfig(**kwargs)


def test_budget_rounds_down():
    assert AdversaryConfig(byzantine_fraction=0.33).budget(17) == 5
    assert AdversaryConfig(byzantine_fraction=0.0).budget(100) == 0


@pytest.mark.parametrize("seed", range(8))
def test_coalition_fits_the_budget(seed):
    config = AdversaryConfig("tamper-chunk", 0.3, seed=seed)
    chosen = select_byzantine(WEIGHTS, config)
    assert sum(WEIGHTS[m] for m in chosen) <= config.budget(sum(WEIGHTS.values()))
    assert chosen == sorted(chosen)


def test_selection_is_seeded():
    config = AdversaryConfig("drop-chunk", 0.3, seed=5)
    assert select_byzantine(WEIGHTS, config) == select_byzantine(WEIGHTS, config)


def test_no_strategy_means_no_coalition():
    assert select_byzantine(WEIGHTS, AdversaryConfig("none", 0.3)) == []


def test_combined_rotates_strategies():
    config = AdversaryConfig("combined", 0.3)
    coalition = Coalition()
    names = [strategy_for(config, coalition, position).name for position in range(6)]
    assert names[:5] == list(COMBINED_ROTATION)
    assert names[5] == COMBINED_ROTATION[0]


def test_every_strategy_builds():
    coalition = Coalition()
    for name in STRATEGIES:
        behaviour = strategy_for(AdversaryConfig(name, 0.2), coalition)
        assert behaviour.byzantine == (name != "none")
