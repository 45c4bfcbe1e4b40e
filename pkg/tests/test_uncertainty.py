import numpy as np
import pytest

from swcopf.errors import CaseFormatError, DimensionMismatch
from swcopf.load import load_scenarios
from swcopf.save import save_scenarios
from swcopf.uncertainty import (
    BetaScaled,
    Box,
    DeploymentVector,
    Gaussian,
    ScenarioSet,
    UncertaintyModel,
    UncertaintyVector,
    deploy,
    mismatch,
    sample,
)


###### Model loading ######

def test_box_model_from_file(triangle_box):
    assert triangle_box.uncertain_buses == [2]
    assert triangle_box.p_renewable[2] == pytest.approx(0.3)
    assert triangle_box.renewable_supports[2] == Box(-0.1, 0.1, -0.02, 0.02)
    assert triangle_box.mismatch_range() == pytest.approx((-0.15, 0.15))

def test_beta_bounds_default_to_plant_range(radial_wind):
    sup = radial_wind.renewable_supports[1]
    assert isinstance(sup, BetaScaled)
    assert (sup.lo, sup.hi) == pytest.approx((-0.2, 0.2))
    assert isinstance(radial_wind.load_supports[2], Gaussian)
    assert radial_wind.mismatch_range() == (-np.inf, np.inf)

def test_renewable_flag_required(triangle_3bus):
    doc = {'renewables': [{'bus': 1, 'p': 10.0, 'support': {'type': 'point'}}]}
    with pytest.raises(CaseFormatError, match=r'renewables\[0\]\.bus'):
        UncertaintyModel.from_dict(doc, triangle_3bus)

def test_unknown_support_type(triangle_3bus):
    doc = {'loads': [{'bus': 1, 'support': {'type': 'triangular'}}]}
    with pytest.raises(CaseFormatError, match='unknown support type'):
        UncertaintyModel.from_dict(doc, triangle_3bus)

def test_invalid_supports_rejected():
    with pytest.raises(ValueError):
        Box(0.1, -0.1, 0.0, 0.0)
    with pytest.raises(ValueError):
        Gaussian(((1.0, 2.0), (2.0, 1.0)))
    with pytest.raises(ValueError):
        BetaScaled(0.0, 1.0, a=0.0)

def test_point_mass_model_is_degenerate(triangle_3bus):
    model = UncertaintyModel.point_mass(triangle_3bus)
    assert model.degenerate
    assert np.all(model.draw(0, 5).delta == 0)
    assert model.mismatch_range() == (0.0, 0.0)

def test_scaling_shrinks_the_mismatch_range(triangle_box):
    assert triangle_box.scaled(0.5).mismatch_range() == pytest.approx((-0.075, 0.075))
    assert triangle_box.scaled(0.5).hash != triangle_box.hash


###### Sampling ######

def test_same_seed_same_scenarios(triangle_box):
    a = sample(triangle_box, 20, seed=3)
    b = sample(triangle_box, 20, seed=3)
    c = sample(triangle_box, 20, seed=4)
    assert np.array_equal(a.deltas, b.deltas)
    assert not np.array_equal(a.deltas, c.deltas)
    assert a.model_hash == triangle_box.hash

def test_scenarios_do_not_depend_on_order_or_threads(triangle_box):
    full = sample(triangle_box, 10, seed=11)
    tail = sample(triangle_box, 4, seed=11, start=6)
    threaded = sample(triangle_box, 10, seed=11, threads=4)
    assert np.array_equal(full.deltas[6:], tail.deltas)
    assert np.array_equal(full.deltas, threaded.deltas)
    assert full[7].index == 7
    assert np.array_equal(triangle_box.draw(11, 7).delta, full[7].delta)

def test_draws_stay_in_their_supports(triangle_box, radial_wind):
    for v in sample(triangle_box, 200, seed=0):
        assert triangle_box.contains(v)
        assert np.all(v.delta[[0, 1, 3, 4]] == 0)
    for v in sample(radial_wind, 200, seed=0):
        assert -0.2 <= v.renewable[1].real <= 0.2
        assert v.renewable[1].imag == 0

def test_sample_count_checked(triangle_box):
    with pytest.raises(ValueError):
        sample(triangle_box, 0, seed=0)

def test_scenario_file_round_trip(tmp_path, triangle_box):
    scenarios = sample(triangle_box, 5, seed=2, eps=0.2, beta=0.05)
    path = save_scenarios(tmp_path / 'scenarios.jsonl', scenarios, verbose=False)
    again = load_scenarios(path)
    assert np.array_equal(again.deltas, scenarios.deltas)
    assert (again.seed, again.model_hash, again.eps, again.beta) == (2, triangle_box.hash, 0.2, 0.05)
    assert [v.index for v in again] == list(range(5))

def test_scenario_file_count_checked(triangle_box):
    lines = sample(triangle_box, 3, seed=0).to_jsonl()
    with pytest.raises(CaseFormatError, match='header declares 3'):
        ScenarioSet.from_jsonl(lines[:-1])

def test_prefix_keeps_provenance(triangle_box):
    scenarios = sample(triangle_box, 6, seed=9)
    head = scenarios.prefix(2)
    assert len(head) == 2
    assert head.seed == 9
    assert np.array_equal(head.deltas, scenarios.deltas[:2])


###### Mismatch and deployment ######

def test_mismatch_signs():
    rising_load = np.zeros(4, dtype=complex)
    rising_load[1] = 0.2 + 0.05j
    rising_renewable = np.zeros(4, dtype=complex)
    rising_renewable[3] = 0.2
    assert mismatch(rising_load) == pytest.approx(0.2)
    assert mismatch(rising_renewable) == pytest.approx(-0.2)

def test_deploy_splits_the_mismatch():
    delta = np.zeros(4, dtype=complex)
    delta[1] = 0.5
    adjusted = deploy([1.0, 1.0], DeploymentVector([0.6, 0.4]), delta)
    assert adjusted == pytest.approx([1.3, 1.2])

def test_deployment_restores_the_active_balance(triangle_3bus, triangle_box):
    p_gen = np.array([0.7, 0.2])
    alpha = DeploymentVector.from_raw([3.0, 1.0])
    p0, _ = triangle_box.fixed_injection(triangle_3bus)
    for v in sample(triangle_box, 20, seed=5):
        p, _ = triangle_box.fixed_injection(triangle_3bus, v)
        total = deploy(p_gen, alpha, v).sum() + p.sum()
        assert total == pytest.approx(p_gen.sum() + p0.sum(), abs=1e-12)

def test_alpha_must_lie_on_the_simplex():
    with pytest.raises(ValueError):
        DeploymentVector([0.5, 0.6])
    with pytest.raises(ValueError):
        DeploymentVector([-0.1, 1.1])
    with pytest.raises(DimensionMismatch):
        DeploymentVector([])
    assert DeploymentVector.from_raw([2.0, -1e-9, 2.0]).alpha == pytest.approx([0.5, 0.0, 0.5])
    assert DeploymentVector.uniform(4).alpha == pytest.approx([0.25] * 4)

def test_vector_views():
    v = UncertaintyVector(np.arange(6, dtype=complex))
    assert v.n_bus == 3
    assert v.load.tolist() == [0, 1, 2]
    assert v.renewable.tolist() == [3, 4, 5]
    with pytest.raises(DimensionMismatch):
        UncertaintyVector(np.zeros(3))
