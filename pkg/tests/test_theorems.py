import json

import numpy as np
import pytest

from dualgap.errors import ContractError, InputError
from dualgap.space import PushforwardMap, pushforward
from dualgap.theorems import (InstanceSpec, make_instance, make_map, reparametrize, run_suite, verify_data_processing,
                              verify_fwae_equals_wae, verify_reconstruction_bound, verify_reparametrization,
                              verify_theorem1, verify_theorem2, verify_theorem3, verify_theorem5)


def dump(reports):
    return json.dumps([r.to_dict() for r in reports], sort_keys=True)


class TestSpec:
    def test_validation(self):
        with pytest.raises(InputError):
            InstanceSpec(n_x=0)
        with pytest.raises(InputError):
            InstanceSpec(G_kind="bijection")
        with pytest.raises(InputError):
            InstanceSpec(n_x=3, n_z=4, G_kind="permutation")
        with pytest.raises(InputError):
            InstanceSpec(metric_kind="hamming")

    def test_instances_are_seeded(self):
        s = InstanceSpec(seed=3)
        a, b = make_instance(s, 5), make_instance(s, 5)
        assert np.array_equal(a.P_X, b.P_X) and np.array_equal(a.space.dist, b.space.dist)
        assert not np.array_equal(make_instance(s, 6).P_X, a.P_X)

    def test_map_kinds(self):
        rng = np.random.default_rng(0)
        assert make_map("identity", 4, 4, rng).invertible
        assert make_map("permutation", 4, 4, rng).invertible
        assert make_map("random-surjection", 6, 4, rng).surjective


class TestSuites:
    def test_theorem1_identity_trivial(self):
        rep = verify_theorem1(InstanceSpec(G_kind="identity", n_z=4), 5)
        assert rep.passed
        assert rep.tolerances["equality"] == 1e-5

    def test_theorem1_indicator(self):
        rep = verify_theorem1(InstanceSpec(generator="indicator", G_kind="permutation"), 10)
        assert rep.passed
        assert all(abs(r["gap"]) <= 1e-9 for r in rep.instances)

    def test_theorem1_random_map_reports_strict_gaps(self):
        rep = verify_theorem1(InstanceSpec(G_kind="random-map", n_z=3, lam=0.2), 30)
        assert rep.passed
        assert rep.notes["strict_gaps"] > 0

    def test_theorem2(self):
        rep = verify_theorem2(InstanceSpec(generator="chi2", n_x=3, n_z=3), 10)
        assert rep.passed
        assert set(rep.notes["convention_pass_counts"]) == {"discrete", "tv"}

    def test_theorem2_skips_kl(self):
        rep = verify_theorem2(InstanceSpec(generator="kl", n_x=3, n_z=3), 3)
        assert rep.skipped == 3 and rep.passed

    def test_theorem3_tv(self):
        rep = verify_theorem3(InstanceSpec(generator="tv", n_x=3, n_z=3), 5)
        assert rep.passed and rep.skipped == 0
        below = [lvl for r in rep.instances for lvl in r["levels"] if not lvl["asserted"]]
        assert below and all(lvl["below_threshold_gap"] >= -1e-9 for lvl in below)

    def test_theorem3_smooth_skipped(self):
        rep = verify_theorem3(InstanceSpec(generator="chi2", n_x=3, n_z=3), 2)
        assert rep.skipped == 2

    def test_theorem5(self):
        rep = verify_theorem5(InstanceSpec(), 5)
        assert rep.passed
        assert all(r["monotone"] for r in rep.instances)

    def test_lemmas(self):
        spec = InstanceSpec(generator="kl", G_kind="random-surjection", n_z=6)
        assert verify_data_processing(spec, 30, n_fiber=10).passed
        assert verify_fwae_equals_wae(spec, 10).passed
        assert verify_reparametrization(spec, 10).passed
        assert verify_reconstruction_bound(spec, 10).passed

    def test_data_processing_indicator(self):
        # both sides are often inf; inf == inf is an equality, not a nan gap
        rep = verify_data_processing(InstanceSpec(generator="indicator", G_kind="random-map", n_z=6), 20, n_fiber=5)
        assert rep.passed
        assert any(r["lhs"] == r["rhs"] == "inf" or r["lhs"] == r["rhs"] == float("inf") for r in rep.instances)

    def test_violation_is_detected(self):
        # an impossible tolerance direction turns every strict instance into a failure
        rep = verify_theorem1(InstanceSpec(G_kind="random-map", n_z=3, lam=0.2), 30, tol=-1e-3)
        assert not rep.passed and rep.violations > 0

    def test_reparametrize(self):
        G = PushforwardMap([2, 0, 1])
        pp = np.array([0.1, 0.6, 0.3])
        E = reparametrize(G, [0.5, 0.25, 0.25], pp)
        assert np.allclose(pushforward(G, E.aggregate([0.5, 0.25, 0.25])).weights, pp, atol=1e-15)
        with pytest.raises(ContractError):
            reparametrize(PushforwardMap([0, 0, 1]), [0.5, 0.5], [0.5, 0.5])


class TestDeterminism:
    @pytest.mark.parametrize("suite", ["theorem1", "theorem2", "theorem5", "lemmas"])
    def test_rerun_identical(self, suite):
        spec = InstanceSpec(seed=11, generator="chi2" if suite == "theorem2" else "tv")
        assert dump(run_suite(suite, spec, 4)) == dump(run_suite(suite, spec, 4))

    def test_threads_do_not_change_output(self, monkeypatch):
        spec = InstanceSpec(seed=5, G_kind="random-map", n_z=5)
        serial = dump(run_suite("theorem1", spec, 8))
        monkeypatch.setenv("DUALGAP_THREADS", "4")
        assert dump(run_suite("theorem1", spec, 8)) == serial

    def test_unknown_suite(self):
        with pytest.raises(InputError):
            run_suite("theorem4", InstanceSpec(), 1)
