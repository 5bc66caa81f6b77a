import dataclasses

import numpy as np
import pytest

from tofsi import sensitivity as S
from tofsi.coupling import CouplingConfig, assemble_coupled_load, element_forces
from tofsi.problems import column_in_channel


@pytest.fixture(scope="module", params=["pressure", "total_stress"])
def case(request):
    spec = column_in_channel(20, 10, p_alpha=5.25e-6)
    model = spec.model(CouplingConfig(stress_mode=request.param))
    rho = model.physical_density(np.full(model.design.size, 0.1))
    return model, rho, model.analyze(rho)


def test_adjoint_matches_complex_step(case):
    model, rho, _ = case
    els = S.pick_elements(model, 4, seed=0)
    rep = S.verify(model, rho, els)
    assert rep.passed, rep.to_text()
    assert rep.max_abs_error < 1e-6


def test_adjoint_matches_monolithic_solve(case):
    model, rho, an = case
    els = S.pick_elements(model, 5, seed=3)
    g = model.compliance_gradient(an, els)
    gm = S.monolithic_gradient(model, an, els)
    assert np.max(np.abs(gm - g) / np.abs(g)) < 1e-9


def test_coupling_chain_matters(case):
    model, rho, an = case
    els = S.pick_elements(model, 5, seed=3)
    g = model.compliance_gradient(an, els)
    g0 = model.compliance_gradient(an, els, include_coupling_chain=False)
    assert np.max(np.abs(g0 - g) / np.abs(g)) > 1e-3


def test_force_derivatives_match_differences(case, rng=np.random.default_rng(3)):
    model, rho, an = case
    fl = an.fluid
    nv = model.mesh.n_vnodes
    ones = np.ones(model.mesh.n_elements)

    def load(v1, v2, p):
        st = dataclasses.replace(fl, v1=v1, v2=v2, p=p)
        rec = model.recovery_op.apply(v1, v2) if model.recovery_op is not None else None
        return assemble_coupled_load(model.mesh, model.blocks, element_forces(model.mesh, model.blocks, st, rec),
                                     ones, model.coupling)

    base = load(fl.v1, fl.v2, fl.p)
    d = rng.standard_normal(2 * nv)
    step = 1e-3  # the map is linear, so a large step is exact up to round-off
    fd = (load(fl.v1 + step * d[:nv], fl.v2 + step * d[nv:], fl.p) - base) / step
    jv = S.dF_dv(model) @ d
    assert np.max(np.abs(fd - jv)) <= 1e-8 * max(1.0, np.max(np.abs(fd)))
    dp = rng.standard_normal(model.mesh.n_pnodes)
    fd = (load(fl.v1, fl.v2, fl.p + step * dp) - base) / step
    assert np.max(np.abs(fd - S.dF_dp(model) @ dp)) < 1e-8 * np.max(np.abs(fd))


def test_pick_elements_seeded_and_validated(case):
    model, _, _ = case
    a = S.pick_elements(model, 8, seed=11)
    b = S.pick_elements(model, 8, seed=11)
    assert np.array_equal(a, b)
    assert set(a) <= set(model.design)
    with pytest.raises(ValueError):
        S.pick_elements(model, 0, seed=1)


def test_report_formats(case):
    model, rho, _ = case
    rep = S.verify(model, rho, S.pick_elements(model, 2, seed=5), seed=5)
    csv_text = rep.to_csv()
    assert csv_text.splitlines()[0].startswith("mode,element,step")
    assert len(csv_text.strip().splitlines()) == 3
    assert "PASS" in rep.to_text() or "FAIL" in rep.to_text()
    assert {abs(r.step) for r in rep.rows} == {1e-10}


def test_volume_gradient_sums_to_one(case):
    model, _, _ = case
    g = S.volume_gradient(model.mesh, model.design)
    assert np.isclose(g.sum(), 1.0)
