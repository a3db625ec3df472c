import numpy as np
import pytest

from cbfadapt.barrier import ClassKParams, wall_barrier
from cbfadapt.dynamics import step
from cbfadapt.errors import OutOfSetError
from cbfadapt.iccbf import IccbfSpec
from cbfadapt.qp_filter import FilteredPolicy
from cbfadapt.validator import (
    Dataset,
    generate_dataset,
    horizon_steps,
    load_dataset,
    make_features,
    save_dataset,
    validate_horizon,
    validate_params,
)

GOAL = np.array([2.0, 0.0])
GAINS = (1.0, 1.5)


def di_scenario(rng):
    return np.array([rng.uniform(-2, 1), rng.uniform(-0.5, 1.5)]), np.array([rng.uniform(1.5, 2.5), 0.0])


def di_params(rng):
    return ClassKParams(tuple(np.exp(rng.uniform(np.log(0.2), np.log(10), 2))))


def test_behind_wall_example(di_spec):
    rep = validate_params(di_spec, di_spec.params, [0.0, 0.0], GOAL, GAINS)
    assert rep.validated
    assert rep.min_inner_margin >= 0
    assert rep.safety_target > 0
    assert rep.steps == 200 and rep.horizon == 2.0
    assert rep.infeasible_at is None


def test_witness_fails_at_step_zero(di):
    spec = IccbfSpec(di, wall_barrier(1.0), (2.0, 100.0))
    rep = validate_params(spec, spec.params, [0.0, 2.0], GOAL, GAINS)
    assert not rep.validated
    assert rep.infeasible_at == 0.0
    assert rep.min_feasibility_margin < 0


def test_single_step_from_interior(di_spec):
    rep = validate_params(di_spec, di_spec.params, [-3.0, 0.0], GOAL, GAINS, T=0.01, dt=0.01)
    assert rep.validated and rep.steps == 1


def test_precondition_and_argument_errors(di_spec):
    pol = FilteredPolicy(di_spec, GOAL, GAINS)
    with pytest.raises(OutOfSetError):
        validate_horizon(di_spec, pol, [1.5, 0.0])
    with pytest.raises(ValueError):
        validate_horizon(di_spec, pol, [0.0, 0.0], T=0.0)
    with pytest.raises(ValueError):
        validate_horizon(di_spec, pol, [0.0, 0.0], T=1.0, dt=2.0)


def test_horizon_steps_rounding():
    assert horizon_steps(2.0, 0.01) == 200
    assert horizon_steps(0.3, 0.1) == 3
    assert horizon_steps(1e-6, 0.01) == 1


def test_validated_rollout_stays_safe(di, rng):
    h = wall_barrier(1.0)
    hits = 0
    for _ in range(60):
        x0, goal = di_scenario(rng)
        params = di_params(rng)
        spec = IccbfSpec(di, h, params)
        if spec.evaluate(x0).inner_margin < 0:
            continue
        rep = validate_params(spec, params, x0, goal, GAINS)
        if not rep.validated:
            continue
        hits += 1
        pol = FilteredPolicy(spec, goal, GAINS)
        x = x0
        for _ in range(rep.steps):
            x = step(di, x, pol(x))
            assert h.value(x) >= -1e-3
    assert hits > 10


def test_horizon_prefix_property(di, rng):
    h = wall_barrier(1.0)
    for _ in range(30):
        x0, goal = di_scenario(rng)
        params = di_params(rng)
        spec = IccbfSpec(di, h, params)
        if spec.evaluate(x0).inner_margin < 0:
            continue
        if validate_params(spec, params, x0, goal, GAINS).validated:
            for T in (0.01, 0.5, 1.0, 1.5):
                assert validate_params(spec, params, x0, goal, GAINS, T=T).validated


def test_dt_refinement_is_stable(di, rng):
    h = wall_barrier(1.0)
    flips, total = 0, 0
    while total < 100:
        x0, goal = di_scenario(rng)
        params = di_params(rng)
        spec = IccbfSpec(di, h, params)
        if spec.evaluate(x0).inner_margin < 0:
            continue
        coarse = validate_params(spec, params, x0, goal, GAINS, T=1.0, dt=0.01)
        total += 1
        if not coarse.validated:
            continue
        fine = validate_params(spec, params, x0, goal, GAINS, T=1.0, dt=0.005)
        if not fine.validated:
            flips += 1
            # a flip is only allowed within the surrogate's tolerance band
            assert fine.min_inner_margin >= -2e-3
            assert fine.min_feasibility_margin >= -1e-3
    assert flips <= 5


def test_reports_are_deterministic(di_spec):
    a = validate_params(di_spec, di_spec.params, [0.2, 0.3], GOAL, GAINS)
    b = validate_params(di_spec, di_spec.params, [0.2, 0.3], GOAL, GAINS)
    assert a.to_dict() == b.to_dict()


def test_make_features():
    f = make_features([1.0, 2.0], [2.0, 0.0], ClassKParams((0.5, 3.0)))
    np.testing.assert_array_equal(f, [-1.0, 2.0, 0.5, 3.0])


def test_empty_dataset(di_spec, tmp_path):
    ds = generate_dataset(di_spec, di_scenario, di_params, N=0, seed=1)
    assert len(ds) == 0 and ds.n_features == 4
    path = tmp_path / "d.csv"
    save_dataset(ds, path)
    assert path.read_text() == "feature_0,feature_1,feature_2,feature_3,safety_target,progress_target,validated\n"
    assert len(load_dataset(path)) == 0


@pytest.mark.slow
def test_large_dataset_is_non_degenerate(di_spec):
    ds = generate_dataset(di_spec, di_scenario, di_params, N=1000, seed=3, T=1.0)
    assert len(ds) == 1000
    assert ds.validated.any() and not ds.validated.all()
    assert ds.targets[:, 0].std() > 0 and ds.targets[:, 1].std() > 0


def test_dataset_round_trip_and_determinism(di_spec, tmp_path):
    a = generate_dataset(di_spec, di_scenario, di_params, N=25, seed=7, T=0.5)
    b = generate_dataset(di_spec, di_scenario, di_params, N=25, seed=7, T=0.5)
    save_dataset(a, tmp_path / "a.csv")
    save_dataset(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv.json").read_bytes() == (tmp_path / "b.csv.json").read_bytes()
    back = load_dataset(tmp_path / "a.csv")
    np.testing.assert_array_equal(back.features, a.features)
    np.testing.assert_array_equal(back.targets, a.targets)
    np.testing.assert_array_equal(back.validated, a.validated)
    np.testing.assert_array_equal(back.feature_mean, a.feature_mean)
    assert back.meta["seed"] == 7


def test_rejected_rows_are_counted(di_spec, caplog):
    def outside(rng):
        return np.array([1.5, 0.0]), GOAL

    ds = generate_dataset(di_spec, outside, di_params, N=3, seed=0, max_retries=5)
    assert len(ds) == 0 and ds.meta["rejected_rows"] == 3
    assert "rejected" in caplog.text


def test_dataset_from_arrays_normalization():
    ds = Dataset.from_arrays(np.array([[1.0, 5.0], [3.0, 5.0]]), np.zeros((2, 2)))
    np.testing.assert_array_equal(ds.feature_mean, [2.0, 5.0])
    np.testing.assert_array_equal(ds.feature_std, [1.0, 1.0])
