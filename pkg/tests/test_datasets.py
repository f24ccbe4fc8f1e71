import numpy as np
import pytest

from stopqubo.analysis import coverage_profile
from stopqubo.datasets import CORRIDOR_CRITERIA, CORRIDOR_PRIORITIES, corridor_paths, load_corridor, make_corridor
from stopqubo.qubo import ModelParams, build_partitioned, build_unconstrained, definiteness_report, partition_for_p
from stopqubo.spatial import write_instance
from stopqubo.topsis import CriteriaSpec, alternatives_matrix, topsis_rank


@pytest.fixture(scope="module")
def corridor():
    model = load_corridor()
    spec = CriteriaSpec(CORRIDOR_CRITERIA, CORRIDOR_PRIORITIES)
    return model, topsis_rank(alternatives_matrix(model.facilities, spec.names), spec)


def test_bundled_files_match_generator(tmp_path):
    write_instance(make_corridor(), tmp_path / "d.csv", tmp_path / "f.csv")
    demand, facilities = corridor_paths()
    assert (tmp_path / "d.csv").read_bytes() == demand.read_bytes()
    assert (tmp_path / "f.csv").read_bytes() == facilities.read_bytes()


def test_corridor_shape(corridor):
    model, _ = corridor
    assert model.n_facilities == 49 and model.n_demand == 135
    assert model.competitor_counts.max() <= 2
    prof = coverage_profile(model, np.ones(49, int))
    assert prof.min == 2 and prof.covered_count == 135


def test_comparison_generator_shape():
    model = make_corridor(n_facilities=50)
    assert model.n_facilities == 50 and model.n_demand == 135


def test_couplings_only_between_route_neighbors(corridor):
    model, w = corridor
    Q = build_unconstrained(model, w).matrix
    rows, cols = np.nonzero(np.triu(Q, 1))
    orders = np.array([f.route_order for f in model.facilities])
    assert (np.abs(orders[rows] - orders[cols]) == 1).all()


def test_definiteness_regime(corridor):
    model, w = corridor
    for p, expected in ((40, True), (10, False), (14, False), (20, False)):
        Qhat = build_partitioned(model, w, ModelParams(p), partition_for_p(49, p, 5))
        assert definiteness_report(Qhat).positive_definite is expected
