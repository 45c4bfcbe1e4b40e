import numpy as np
import pytest

from swcopf.conic import (
    ConeBlock,
    ConeKind,
    ConeProgram,
    NonNeg,
    ProgramBuilder,
    RowChunk,
    PSD,
    SecondOrder,
    SolverOptions,
    SolverStatus,
    blocking_families,
    certificate_residual,
    dump_program,
    embed_hermitian,
    read_program,
    residuals,
    solve,
    _strictly_inside,
)
from swcopf.errors import DimensionMismatch


def lp_program():
    """ min x0 + 2 x1  s.t.  x0 + x1 = 1,  x >= 0 """
    builder = ProgramBuilder('lp')
    x = builder.add_block(NonNeg(2, 'x'))
    builder.add_row(x.cols, [1.0, 1.0], 1.0, 'balance')
    builder.add_cost(x.col(0), 1.0)
    builder.add_cost(x.col(1), 2.0)
    return builder.build()

def soc_program():
    """ min t  s.t.  (t, u, v) in SOC,  u = 3,  v = 4 """
    builder = ProgramBuilder('soc')
    q = builder.add_block(SecondOrder(3, 'q'))
    builder.add_row([q.col(1)], [1.0], 3.0, 'fix')
    builder.add_row([q.col(2)], [1.0], 4.0, 'fix')
    builder.add_cost(q.col(0), 1.0)
    return builder.build()

def sdp_program():
    """ min trace X  s.t.  X_01 = 1,  X >= 0 """
    builder = ProgramBuilder('sdp')
    X = builder.add_block(PSD(2, 'X'))
    col, scale = X.entry(0, 1)
    builder.add_row([col], [scale], 1.0, 'coupling')
    for k in range(2):
        col, scale = X.entry(k, k)
        builder.add_cost(col, scale)
    return builder.build()


###### Optimal programs ######

def test_lp_optimum(opts):
    prog = lp_program()
    sol = solve(prog, opts)
    assert sol.status == SolverStatus.OPTIMAL
    assert sol.primal_obj == pytest.approx(1.0, abs=1e-7)
    assert sol.block_value(prog, 'x') == pytest.approx([1.0, 0.0], abs=1e-6)
    assert sol.y[0] == pytest.approx(1.0, abs=1e-6)

def test_soc_optimum(opts):
    prog = soc_program()
    sol = solve(prog, opts)
    assert sol.optimal
    assert sol.primal_obj == pytest.approx(5.0, abs=1e-7)

def test_sdp_optimum(opts):
    prog = sdp_program()
    sol = solve(prog, opts)
    assert sol.optimal
    assert sol.primal_obj == pytest.approx(2.0, abs=1e-7)
    assert sol.block_value(prog, 'X') == pytest.approx(np.ones((2, 2)), abs=1e-5)

@pytest.mark.parametrize("make", [lp_program, soc_program, sdp_program])
def test_independent_residuals_are_small(make, opts):
    prog = make()
    sol = solve(prog, opts)
    primal, dual, gap = residuals(prog, sol)
    assert primal <= 1e-7
    assert dual <= 1e-7
    assert abs(gap) <= 1e-7

def test_inequality_rows_get_slacks(opts):
    builder = ProgramBuilder('ineq')
    x = builder.add_block(NonNeg(1, 'x'))
    builder.add_range([x.col()], [1.0], 0.5, 2.0, 'bound')
    builder.add_cost(x.col(), 1.0)
    prog = builder.build()
    assert prog.blocks[-1].name == 'slack'
    assert prog.n_row == 2
    sol = solve(prog, opts)
    assert sol.block_value(prog, 'x')[0] == pytest.approx(0.5, abs=1e-6)

def test_range_rows_are_indexed_like_chunks():
    builder = ProgramBuilder('ranges')
    x = builder.add_block(NonNeg(2, 'x'))
    assert builder.add_row(x.cols, [1.0, 1.0], 1.0, 'balance') == 0
    chunk = RowChunk()
    assert chunk.add_range([x.col(0)], [1.0], 0.0, 1.0, 'cap') == [0, 1]
    assert builder.add_chunk(chunk) == 1
    assert builder.add_range([x.col(1)], [1.0], 0.0, 2.0, 'cap') == [3, 4]
    assert builder.add_range([x.col(1)], [1.0], 0.5, 0.5, 'fix') == [5]
    prog = builder.build()
    assert prog.n_row == 6
    assert prog.row_families[3:] == ('cap', 'cap', 'fix')


###### Infeasibility ######

def test_primal_infeasible_certificate(opts):
    builder = ProgramBuilder('infeasible')
    x = builder.add_block(NonNeg(2, 'x'))
    builder.add_row(x.cols, [1.0, 1.0], -1.0, 'balance')
    builder.add_cost(x.col(0), 1.0)
    prog = builder.build()
    sol = solve(prog, opts)
    assert sol.status == SolverStatus.PRIMAL_INFEASIBLE
    bty, violation = certificate_residual(prog, sol)
    assert bty == pytest.approx(1.0, abs=1e-6)
    assert violation <= 1e-8
    assert list(blocking_families(prog, sol)) == ['balance']

def test_blocking_family_shares_sum_to_one(opts):
    builder = ProgramBuilder('capacity')
    x = builder.add_block(NonNeg(2, 'x'))
    builder.add_row([x.col(0)], [1.0], 1.0, 'cap', '<=')
    builder.add_row([x.col(1)], [1.0], 0.0, 'cap', '<=')
    builder.add_row(x.cols, [1.0, 1.0], 2.0, 'demand')
    prog = builder.build()
    sol = solve(prog, opts)
    assert sol.status == SolverStatus.PRIMAL_INFEASIBLE
    shares = blocking_families(prog, sol)
    assert set(shares) <= {'cap', 'demand'}
    assert sum(shares.values()) == pytest.approx(1.0, abs=1e-6)

def test_dual_infeasible_ray(opts):
    builder = ProgramBuilder('unbounded')
    x = builder.add_block(NonNeg(2, 'x'))
    builder.add_row(x.cols, [1.0, -1.0], 0.0)
    builder.add_cost(x.col(0), -1.0)
    prog = builder.build()
    sol = solve(prog, opts)
    assert sol.status == SolverStatus.DUAL_INFEASIBLE
    assert prog.c @ sol.x < 0
    assert np.all(sol.x >= -1e-9)
    assert np.linalg.norm(prog.A @ sol.x) <= 1e-6 * np.linalg.norm(sol.x)


###### Tolerances and reduced accuracy ######

def test_infeasibility_has_its_own_tolerance():
    builder = ProgramBuilder('infeasible')
    x = builder.add_block(NonNeg(2, 'x'))
    builder.add_row(x.cols, [1.0, 1.0], -1.0, 'balance')
    prog = builder.build()
    sol = solve(prog, SolverOptions(feas_tol=1e-12, gap_tol=1e-12, infeas_tol=1e-7, max_iter=200))
    assert sol.status == SolverStatus.PRIMAL_INFEASIBLE
    assert certificate_residual(prog, sol)[1] <= 1e-6

@pytest.mark.parametrize("make, optimum", [(lp_program, 1.0), (soc_program, 5.0), (sdp_program, 2.0)])
def test_unreachable_tolerance_returns_the_best_iterate(make, optimum):
    prog = make()
    sol = solve(prog, SolverOptions(feas_tol=1e-14, gap_tol=1e-14, max_iter=200, inaccurate_factor=1e6))
    assert sol.optimal
    assert sol.primal_obj == pytest.approx(optimum, abs=1e-6)
    assert sol.stats()['reduced_accuracy'] == sol.reduced_accuracy

def test_iteration_cap_with_loose_acceptance_is_reduced():
    sol = solve(lp_program(), SolverOptions(max_iter=2, inaccurate_factor=1e12))
    assert sol.status == SolverStatus.OPTIMAL
    assert sol.reduced_accuracy

def test_iteration_cap_far_from_optimum():
    sol = solve(lp_program(), SolverOptions(max_iter=0))
    assert sol.status == SolverStatus.MAX_ITER
    assert not sol.reduced_accuracy

def test_strictly_inside_cones():
    assert _strictly_inside(NonNeg(2), np.array([1.0, 1e-3]))
    assert not _strictly_inside(NonNeg(2), np.array([1.0, 0.0]))
    assert _strictly_inside(SecondOrder(3), np.array([2.0, 1.0, 1.0]))
    assert not _strictly_inside(SecondOrder(3), np.array([1.0, 1.0, 1.0]))
    # svec of [[1, 1], [1, 1]] sits on the PSD boundary
    assert not _strictly_inside(PSD(2), np.array([1.0, np.sqrt(2.0), 1.0]))
    assert _strictly_inside(PSD(2), np.array([1.0, 0.0, 1.0]))


###### Hermitian embedding ######

def test_embedding_of_singular_hermitian_matrix():
    emb = embed_hermitian(2)
    X = emb.embed([[1, 1j], [-1j, 1]])
    eig = np.linalg.eigvalsh(X)
    assert eig.min() == pytest.approx(0.0, abs=1e-12)
    assert eig.max() == pytest.approx(2.0)

def test_embedding_doubles_the_spectrum(rng):
    n = 4
    G = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    H = G + G.conj().T
    emb = embed_hermitian(n)
    X = emb.embed(H)
    assert np.allclose(np.linalg.eigvalsh(X), np.repeat(np.linalg.eigvalsh(H), 2))
    assert np.allclose(emb.extract(X), H)

def test_tying_rows_hold_on_embedded_matrices(rng):
    n = 3
    G = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    emb = embed_hermitian(n)
    X = emb.embed(G @ G.conj().T)
    for terms in emb.tying_rows():
        assert sum(coef * X[i, j] for (i, j), coef in terms) == pytest.approx(0.0, abs=1e-12)
    for row, col, sign, part in emb.four_positions(0, 2):
        value = X[row, col] * sign
        expected = (G @ G.conj().T)[0, 2]
        assert value == pytest.approx(expected.real if part == 're' else expected.imag)

def test_embedding_order_checked():
    with pytest.raises(ValueError):
        embed_hermitian(0)
    with pytest.raises(DimensionMismatch):
        embed_hermitian(2).embed(np.eye(3))


###### Validation and dumps ######

def test_program_dimensions_checked():
    with pytest.raises(DimensionMismatch):
        ConeProgram(np.zeros(3), np.zeros((1, 2)), np.zeros(1), (NonNeg(2),))
    with pytest.raises(ValueError):
        ConeBlock(ConeKind.SOC, 0)
    with pytest.raises(ValueError):
        ProgramBuilder().add_range([0], [1.0], 1.0, 0.0)

def test_solver_options_ignore_unknown_keys():
    opts = SolverOptions.from_params({'feas_tol': 1e-6, 'not_an_option': 3})
    assert opts.feas_tol == 1e-6
    assert opts.max_iter == SolverOptions().max_iter

def test_dump_and_read_back(tmp_path, opts):
    prog = sdp_program()
    path = tmp_path / 'sdp.txt'
    dump_program(prog, path)
    again = read_program(path)
    assert again.name == prog.name
    assert again.blocks == prog.blocks
    assert again.row_families == prog.row_families
    assert np.array_equal(again.c, prog.c)
    assert np.array_equal(again.b, prog.b)
    assert (again.A != prog.A).nnz == 0
    assert solve(again, opts).primal_obj == pytest.approx(2.0, abs=1e-7)

def test_dump_keeps_names_with_spaces(tmp_path):
    builder = ProgramBuilder('IEEE 14 bus')
    x = builder.add_block(NonNeg(2, 'gen output'))
    builder.add_row(x.cols, [1.0, 1.0], 1.0, 'line flow')
    builder.add_row([x.col(0)], [1.0], 0.5, '-')
    builder.add_row([x.col(1)], [1.0], 0.5)
    prog = builder.build()
    path = tmp_path / 'named.txt'
    dump_program(prog, path)
    assert 'name IEEE%2014%20bus' in path.read_text(encoding='utf-8').splitlines()
    again = read_program(path)
    assert again.name == 'IEEE 14 bus'
    assert again.blocks == prog.blocks
    assert again.row_families == ('line flow', '-', '')

def test_read_rejects_foreign_files(tmp_path):
    path = tmp_path / 'other.txt'
    path.write_text('hello\n')
    with pytest.raises(ValueError, match='header'):
        read_program(path)
