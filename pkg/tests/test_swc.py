import itertools
import math

import numpy as np
import pytest

from swcopf.conic import SolverOptions
from swcopf.errors import InfeasibleSwC
from swcopf.relaxation import solve_nominal
from swcopf.swc import (
    ControlDecision,
    SampleComplexitySpec,
    apply_realtime,
    assemble_swc,
    binomial_tail,
    certificate_residual,
    n_swc,
    n_swc_exact,
    n_swc_explicit,
    shared_dimension,
    solve_swc,
    sweep_sample_sizes,
)
from swcopf.uncertainty import DeploymentVector, ScenarioSet, UncertaintyModel, UncertaintyVector, sample


###### Sample complexity ######

def test_explicit_sample_count():
    assert n_swc_explicit(SampleComplexitySpec(0.1, 1e-6, 10)) == 361

def test_exact_count_with_one_shared_variable():
    # n_u = 1: smallest N with (1 - eps)^N <= beta
    spec = SampleComplexitySpec(0.1, 0.01, 1)
    assert n_swc_exact(spec) == math.ceil(math.log(0.01) / math.log(0.9)) == 44

def test_exact_count_never_exceeds_explicit():
    for eps, beta, n_u in itertools.product((0.05, 0.1, 0.2), (1e-2, 1e-4, 1e-6), (1, 5, 20)):
        spec = SampleComplexitySpec(eps, beta, n_u)
        assert n_swc_exact(spec) <= n_swc_explicit(spec)

def test_exact_count_is_the_smallest_meeting_the_tail():
    spec = SampleComplexitySpec(0.05, 1e-6, 3)
    N = n_swc(spec, 'exact')
    assert binomial_tail(N, spec) <= 1e-6
    assert binomial_tail(N - 1, spec) > 1e-6

def test_counts_decrease_with_the_risk_level():
    counts = [n_swc(SampleComplexitySpec(eps, 1e-3, 7)) for eps in (0.02, 0.05, 0.1, 0.2, 0.4)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))

def test_shared_dimension_counts_three_per_generator(triangle_3bus):
    assert shared_dimension(triangle_3bus) == 7
    assert SampleComplexitySpec.for_network(0.1, 0.01, triangle_3bus).n_u == 7

def test_sample_complexity_spec_checked():
    with pytest.raises(ValueError):
        SampleComplexitySpec(0.0, 0.1, 3)
    with pytest.raises(ValueError):
        SampleComplexitySpec(0.1, 1.0, 3)
    with pytest.raises(ValueError):
        SampleComplexitySpec(0.1, 0.1, 0)
    with pytest.raises(ValueError):
        n_swc(SampleComplexitySpec(0.1, 0.1, 3), 'loose')


###### Decisions ######

def test_realtime_setpoints_follow_the_mismatch():
    dec = ControlDecision([0.5, 0.3], [1.0, 1.02], DeploymentVector([0.25, 0.75]))
    delta = np.zeros(4, dtype=complex)
    delta[1] = 0.4
    setpoints = apply_realtime(dec, delta)
    assert setpoints.p_gen == pytest.approx([0.6, 0.6])
    assert setpoints.vm_gen == pytest.approx(np.sqrt([1.0, 1.02]))

def test_decision_dict_round_trip():
    dec = ControlDecision([0.5, 0.3], [1.0, 1.02], DeploymentVector([0.25, 0.75]), 3.5, {'seed': 4})
    again = ControlDecision.from_dict(dec.to_dict())
    assert again.p_gen == pytest.approx(dec.p_gen)
    assert again.alpha.alpha == pytest.approx(dec.alpha.alpha)
    assert again.provenance == {'seed': 4}
    with pytest.raises(ValueError, match='missing'):
        ControlDecision.from_dict({'p_gen': [0.5]})


###### Scenario program ######

def zero_scenarios(net, count=1):
    return ScenarioSet(tuple(UncertaintyVector.zeros(net.n_bus) for _ in range(count)), seed=0)

def test_degenerate_program_matches_the_nominal_relaxation(radial_3bus, opts):
    model = UncertaintyModel.point_mass(radial_3bus)
    spec = SampleComplexitySpec.for_network(0.1, 0.1, radial_3bus)
    swc = solve_swc(radial_3bus, model, spec, scenarios=zero_scenarios(radial_3bus), opts=opts, verbose=False)
    nominal = solve_nominal(radial_3bus, opts=opts, verbose=False)
    assert swc.decision.p_gen == pytest.approx(nominal.p_gen, abs=1e-4)
    assert swc.objective == pytest.approx(nominal.objective, abs=1e-5)
    assert swc.generation_cost == pytest.approx(nominal.objective, abs=1e-5)

def test_program_size_is_affine_in_the_scenario_count(triangle_3bus, triangle_box):
    scenarios = sample(triangle_box, 3, seed=0)
    sizes = [assemble_swc(triangle_3bus, triangle_box, scenarios.prefix(N)) for N in (1, 2, 3)]
    n_var = [p.n_var for p in sizes]
    n_row = [p.n_row for p in sizes]
    assert n_var[2] - n_var[1] == n_var[1] - n_var[0] > 0
    assert n_row[2] - n_row[1] == n_row[1] - n_row[0] > 0

def test_threaded_assembly_is_deterministic(triangle_3bus, triangle_box):
    scenarios = sample(triangle_box, 4, seed=1)
    a = assemble_swc(triangle_3bus, triangle_box, scenarios)
    b = assemble_swc(triangle_3bus, triangle_box, scenarios, threads=4)
    assert (a.A != b.A).nnz == 0
    assert np.array_equal(a.b, b.b)
    assert a.row_families == b.row_families

def test_assembly_arguments_checked(triangle_3bus, triangle_box):
    with pytest.raises(ValueError):
        assemble_swc(triangle_3bus, triangle_box, [])
    with pytest.raises(ValueError):
        assemble_swc(triangle_3bus, triangle_box, zero_scenarios(triangle_3bus), penalties=(-1.0, 0.0))

@pytest.mark.parametrize("tol", [1e-7, 1e-9])
def test_scenario_beyond_capacity_is_infeasible(radial_3bus, tol):
    model = UncertaintyModel.point_mass(radial_3bus)
    delta = np.zeros(6, dtype=complex)
    delta[2] = 5.0
    scenarios = ScenarioSet((UncertaintyVector(delta),), seed=0)
    opts = SolverOptions(feas_tol=tol, gap_tol=tol, max_iter=200)
    with pytest.raises(InfeasibleSwC):
        solve_swc(radial_3bus, model, None, scenarios=scenarios, opts=opts, verbose=False)

def test_certificates_satisfy_their_scenarios(triangle_3bus, triangle_box, opts):
    scenarios = sample(triangle_box, 5, seed=0)
    sol = solve_swc(triangle_3bus, triangle_box, None, scenarios=scenarios, opts=opts, verbose=False)
    assert sol.n_scenarios == 5
    assert sol.decision.alpha.alpha.sum() == pytest.approx(1.0)
    for cert, v in zip(sol.certificates, scenarios):
        assert certificate_residual(triangle_3bus, triangle_box, sol.decision, cert, v) <= 1e-5
    # the epigraph is tight at the worst scenario
    assert sol.epigraph_slack.min() == pytest.approx(0.0, abs=1e-5)
    assert np.all(sol.epigraph_slack >= -1e-6)

def test_line_penalty_raises_the_objective(triangle_3bus, triangle_box, opts):
    scenarios = sample(triangle_box, 3, seed=2)
    plain = solve_swc(triangle_3bus, triangle_box, None, scenarios=scenarios, opts=opts, verbose=False)
    penalized = solve_swc(triangle_3bus, triangle_box, None, penalties=(0.0, 0.1), lines_prob=[(0, 2)],
                          scenarios=scenarios, opts=opts, verbose=False)
    assert penalized.objective >= plain.objective - 1e-6
    assert np.all(penalized.line_penalty > 0)
    assert np.all(plain.line_penalty == 0)

@pytest.mark.slow
def test_objective_grows_with_nested_scenario_sets(triangle_3bus, triangle_box, opts):
    rows = sweep_sample_sizes(triangle_3bus, triangle_box, [1, 3, 6, 10], seed=0, opts=opts, verbose=False)
    assert [r['N'] for r in rows] == [1, 3, 6, 10]
    gammas = [r['gamma'] for r in rows]
    assert all(b >= a - 1e-6 for a, b in zip(gammas, gammas[1:]))
