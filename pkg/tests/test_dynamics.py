import math

import numpy as np
import pytest

from effc_toolkit.analytic import ModelParams, mean_time_to_frag
from effc_toolkit.dynamics import (
    ChainState,
    Trajectory,
    load_trajectory_npz,
    occupation_array,
    occupation_histogram,
    read_trajectory_csv,
    sample_entrance_times,
    sample_fragmentation_times,
    save_trajectory_npz,
    simulate_ceiling_intervals,
    simulate_descent,
    simulate_descents,
    simulate_occupation,
    simulate_path,
    step,
    write_trajectory_csv,
)
from effc_toolkit.errors import DomainError, InvariantViolation
from effc_toolkit.excursions import box_counts, ceiling_intervals
from effc_toolkit.oracle import build_generator, exact_hitting_times
from effc_toolkit.streams import make_generator


def test_chain_state_bounds():
    assert ChainState(blocks=10, n_max=10).at_ceiling
    assert not ChainState(blocks=3, n_max=10).at_ceiling
    with pytest.raises(DomainError):
        ChainState(blocks=0, n_max=10)
    with pytest.raises(DomainError):
        ChainState(blocks=11, n_max=10)


def test_step_without_fragmentation_coalesces(rng):
    nxt, dwell = step(ChainState(blocks=2, n_max=10), ModelParams(c=1.0, lam=0.0), rng)
    assert nxt.blocks == 1
    assert dwell > 0


def test_step_from_one_block_shatters(rng):
    for _ in range(50):
        nxt, _ = step(ChainState(blocks=1, n_max=25), ModelParams(c=1.0, lam=0.2), rng)
        assert nxt.blocks == 25


def test_step_down_probability(rng):
    params = ModelParams(c=1.0, lam=0.5)
    samples = 20_000
    down = sum(step(ChainState(blocks=3, n_max=100), params, rng)[0].blocks == 2 for _ in range(samples))
    sigma = math.sqrt((2.0 / 3.0) * (1.0 / 3.0) / samples)
    assert abs(down / samples - 2.0 / 3.0) < 4.0 * sigma


def test_pure_death_path_has_four_events(rng):
    trajectory = simulate_path(ModelParams(c=1.0, lam=0.0), n_max=10, t_end=1e6, rng=rng, initial=5)
    assert trajectory.event_count == 4
    assert trajectory.states.tolist() == [4, 3, 2, 1]
    assert not trajectory.truncated
    assert trajectory.t_end == 1e6


def test_simulate_path_is_reproducible(fig_params):
    first = simulate_path(fig_params, 500, 20.0, make_generator(7), seed=7)
    second = simulate_path(fig_params, 500, 20.0, make_generator(7), seed=7)
    assert np.array_equal(first.jump_times, second.jump_times)
    assert np.array_equal(first.states, second.states)
    assert first.seed == 7


def test_simulated_path_is_skip_free(fig_params, rng):
    trajectory = simulate_path(fig_params, 300, 30.0, rng)
    trajectory.check_skip_free()
    assert np.all(np.diff(trajectory.jump_times) > 0)
    assert trajectory.jump_times[-1] <= trajectory.t_end


def test_shatter_at_ceiling_is_recorded(rng):
    trajectory = simulate_path(ModelParams.from_theta(1.5), 3, 200.0, rng)
    trajectory.check_skip_free()
    _, _, counts = trajectory.segments()
    assert np.any((counts[:-1] == 3) & (counts[1:] == 3))


def test_check_skip_free_rejects_jumps(fig_params):
    bad = Trajectory(
        jump_times=np.array([1.0, 2.0]), states=np.array([5, 3]), t0_state=6, n_max=6, t_end=3.0, params=fig_params
    )
    with pytest.raises(InvariantViolation):
        bad.check_skip_free()


def test_event_budget_truncates(fig_params, rng):
    trajectory = simulate_path(fig_params, 1_000, 1_000.0, rng, max_events=1_000)
    assert trajectory.truncated
    assert trajectory.event_count == 1_000
    assert trajectory.t_end == trajectory.jump_times[-1]


def test_budget_spent_on_absorption_is_not_truncation(rng):
    trajectory = simulate_path(ModelParams(c=1.0, lam=0.0), n_max=10, t_end=1e6, rng=rng, initial=5, max_events=4)
    assert trajectory.event_count == 4
    assert trajectory.states[-1] == 1
    assert not trajectory.truncated
    assert trajectory.t_end == 1e6


def test_simulate_path_rejects_bad_input(fig_params, rng):
    with pytest.raises(DomainError):
        simulate_path(fig_params, 100, 0.0, rng)
    with pytest.raises(DomainError):
        simulate_path(fig_params, 100, 1.0, rng, initial=101)
    with pytest.raises(DomainError):
        simulate_path(fig_params, 1, 1.0, rng)


def test_occupation_histogram_constant_path(fig_params):
    constant = Trajectory(
        jump_times=np.empty(0), states=np.empty(0, dtype=np.int64), t0_state=1, n_max=5, t_end=7.0, params=fig_params
    )
    assert occupation_histogram(constant) == {1: 7.0}


def test_occupation_histogram_partitions_time(rng):
    trajectory = simulate_path(ModelParams(c=1.0, lam=0.0), n_max=3, t_end=50.0, rng=rng)
    dwell = occupation_histogram(trajectory)
    assert set(dwell) <= {1, 2, 3}
    assert math.fsum(dwell.values()) == pytest.approx(50.0, rel=1e-12)


def test_streaming_occupation_matches_stored_path(fig_params):
    occupation = simulate_occupation(fig_params, 200, 50.0, make_generator(3))
    stored = occupation_array(simulate_path(fig_params, 200, 50.0, make_generator(3)))
    assert occupation.shape == (201,)
    assert np.allclose(occupation, stored, rtol=1e-12, atol=1e-12)
    assert math.fsum(occupation) == pytest.approx(50.0, rel=1e-12)


def test_streaming_ceiling_intervals_match_stored_path(half_params):
    lo, hi = simulate_ceiling_intervals(half_params, 200, 50.0, make_generator(5))
    trajectory = simulate_path(half_params, 200, 50.0, make_generator(5))
    stored_lo, stored_hi = ceiling_intervals(trajectory)
    assert np.all(hi > lo)
    assert lo[0] == 0.0
    scales = np.geomspace(10.0, 0.01, 12)
    assert np.array_equal(box_counts(lo, hi, scales), box_counts(stored_lo, stored_hi, scales))
    assert math.fsum(hi - lo) == pytest.approx(math.fsum(stored_hi - stored_lo), rel=1e-12)


def test_trajectory_csv_round_trip(fig_params, rng, tmp_path):
    trajectory = simulate_path(fig_params, 100, 5.0, rng)
    path = write_trajectory_csv(trajectory, tmp_path / "trajectory.csv")
    assert path.read_text(encoding="utf-8").splitlines()[0] == "t,state"
    times, states = read_trajectory_csv(path)
    assert times[0] == 0.0 and states[0] == trajectory.t0_state
    assert np.array_equal(times[1:], trajectory.jump_times)
    assert np.array_equal(states[1:], trajectory.states)


def test_trajectory_npz_round_trip(fig_params, rng, tmp_path):
    trajectory = simulate_path(fig_params, 100, 5.0, rng, seed=2**63 + 11)
    loaded = load_trajectory_npz(save_trajectory_npz(trajectory, tmp_path / "trajectory.npz"))
    assert np.array_equal(loaded.jump_times, trajectory.jump_times)
    assert np.array_equal(loaded.states, trajectory.states)
    assert (loaded.t0_state, loaded.n_max, loaded.t_end) == (trajectory.t0_state, trajectory.n_max, trajectory.t_end)
    assert loaded.seed == 2**63 + 11
    assert loaded.params == trajectory.params


def test_pure_kingman_descent():
    params = ModelParams(c=1.0, lam=0.0)
    records = simulate_descents(params, 2, 1, 10, replicas=4_000, seed=11, threads=2)
    assert all(r.frag_count == 0 and r.min_state_reached == 1 for r in records)
    mean = np.mean([r.total_time for r in records])
    assert mean == pytest.approx(1.0, abs=0.06)


def test_descent_budget_is_reported(rng):
    supercritical = ModelParams.from_theta(1.5)
    with pytest.raises(DomainError):
        simulate_descent(supercritical, 100, 1, 100, rng)
    record = simulate_descent(supercritical, 100, 1, 100, rng, max_steps=10)
    assert record.budget_exhausted
    assert record.steps == 10


def test_descents_do_not_depend_on_thread_count(fig_params):
    one = simulate_descents(fig_params, 200, 5, 200, replicas=6, seed=3, threads=1)
    many = simulate_descents(fig_params, 200, 5, 200, replicas=6, seed=3, threads=3)
    assert one == many


@pytest.mark.slow
def test_descent_mean_matches_exact_truncated_chain(fig_params):
    K = 2_000
    records = simulate_descents(fig_params, K, 10, K, replicas=400, seed=5)
    times = np.array([r.total_time for r in records])
    exact = exact_hitting_times(build_generator(fig_params, K), 10)[K - 1]
    se = times.std(ddof=1) / math.sqrt(times.size)
    assert abs(times.mean() - exact) < 4.0 * se


def test_entrance_times_pure_kingman(rng):
    samples = sample_entrance_times(ModelParams(c=1.0, lam=0.0), 10, 1_000, 5_000, rng)
    assert samples.shape == (5_000,)
    assert samples.mean() == pytest.approx(2.0 / 10 - 2.0 / 1_000, abs=0.003)


def test_fragmentation_times_mean(fig_params, rng):
    samples = sample_fragmentation_times(fig_params, 20, 20_000, rng)
    se = samples.std(ddof=1) / math.sqrt(samples.size)
    assert abs(samples.mean() - mean_time_to_frag(fig_params, 20)) < 4.0 * se
    with pytest.raises(DomainError):
        sample_fragmentation_times(ModelParams(c=1.0, lam=0.0), 20, 10, rng)


@pytest.mark.slow
def test_mean_dwell_per_visit_matches_jump_rate(fig_params):
    trajectory = simulate_path(fig_params, 200, 5_000.0, make_generator(29))
    starts, ends, counts = trajectory.segments()
    # the last piece is cut by t_end
    dwell, counts = (ends - starts)[:-1], counts[:-1]
    for j in (1, 2, 5, 10, 20, 50):
        visits = dwell[counts == j]
        expected = 1.0 / fig_params.jump_rate(j)
        assert visits.size > 300
        assert abs(visits.mean() - expected) < 3.0 * expected / math.sqrt(visits.size)
