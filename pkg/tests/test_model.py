import json

import numpy as np
import pytest
import scipy.sparse as sp

from robnav.model import (
    ProblemModel,
    Structure,
    assemble_nominal,
    load_problem,
    mean_objective,
    problem_from_dict,
    save_problem,
)
from robnav.validation import ValidationError


def test_stacking_single_voxel_structure():
    d = sp.csr_matrix(np.array([[1.0, 2.0]]))
    model = ProblemModel(
        num_voxels=1,
        num_beamlets=2,
        dose_matrix=d,
        structures=(Structure("s", np.array([0]), lower_bound=1.0, upper_bound=3.0, is_constrained=True),),
        fluence_lower=np.zeros(2),
        fluence_upper=np.full(2, 10.0),
    )
    nom = assemble_nominal(model)
    np.testing.assert_allclose(nom.constraint_matrix.toarray(), [[1.0, 2.0], [-1.0, -2.0]])
    np.testing.assert_allclose(nom.rhs, [3.0, -1.0])
    assert [o.kind for o in nom.row_origin] == ["ub", "lb"]


def test_stacking_keeps_trivial_lower_rows_by_default():
    d = sp.csr_matrix(np.array([[1.0, 2.0]]))
    model = ProblemModel(
        num_voxels=1,
        num_beamlets=2,
        dose_matrix=d,
        structures=(Structure("s", np.array([0]), lower_bound=0.0, upper_bound=3.0, is_constrained=True),),
        fluence_lower=np.zeros(2),
        fluence_upper=np.full(2, 10.0),
    )
    nom = assemble_nominal(model, omit_trivial_lower=False)
    assert nom.num_rows == 2
    np.testing.assert_allclose(nom.rhs, [3.0, 0.0])
    assert assemble_nominal(model, omit_trivial_lower=True).num_rows == 1


def test_stacking_overlapping_structures(tiny_model):
    nom = assemble_nominal(tiny_model)
    # voxel 1 belongs to both structures: two ub rows and two lb rows
    rows_for_voxel1 = [o for o in nom.row_origin if o.voxel == 1]
    assert {(o.structure, o.kind) for o in rows_for_voxel1} == {
        ("target", "ub"), ("target", "lb"), ("risk", "ub"), ("risk", "lb"),
    }
    # row count bookkeeping: per structure, finite ub rows + finite lb rows
    expected = 2 * 2 + 2 * 3
    assert nom.num_rows == expected


def test_stacking_omits_infinite_bounds():
    d = sp.csr_matrix(np.array([[1.0], [2.0]]))
    model = ProblemModel(
        num_voxels=2,
        num_beamlets=1,
        dose_matrix=d,
        structures=(Structure("s", np.array([0, 1]), lower_bound=None, upper_bound=4.0, is_constrained=True),),
        fluence_lower=np.zeros(1),
        fluence_upper=np.ones(1),
    )
    nom = assemble_nominal(model)
    assert nom.num_rows == 2
    assert all(o.kind == "ub" for o in nom.row_origin)


def test_feasibility_matches_direct_dose_evaluation(tiny_model):
    nom = assemble_nominal(tiny_model)
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.uniform(0, 3, size=2)
        stacked_ok = bool(np.all(nom.constraint_matrix @ x <= nom.rhs + 1e-12))
        doses = tiny_model.dose_matrix @ x
        direct_ok = True
        for s in tiny_model.structures:
            d = doses[s.voxel_indices]
            if s.upper_bound is not None and np.any(d > s.upper_bound + 1e-12):
                direct_ok = False
            if s.lower_bound is not None and np.any(d < s.lower_bound - 1e-12):
                direct_ok = False
        assert stacked_ok == direct_ok


def test_mean_objective_examples(tiny_model):
    obj = mean_objective(tiny_model, "target", sign=1.0)
    np.testing.assert_allclose(obj.coefficients, [2.0, 3.5])  # mean of [1,2] and [3,5]
    single = ProblemModel(
        num_voxels=1,
        num_beamlets=2,
        dose_matrix=sp.csr_matrix(np.array([[4.0, 7.0]])),
        structures=(Structure("one", np.array([0]), is_constrained=True),),
        fluence_lower=np.zeros(2),
        fluence_upper=np.ones(2),
    )
    np.testing.assert_allclose(mean_objective(single, "one").coefficients, [4.0, 7.0])
    neg = mean_objective(single, "one", sign=-1.0)
    np.testing.assert_allclose(neg.coefficients, [-4.0, -7.0])


def test_mean_objective_matches_dense_sum(small_phantom):
    obj = mean_objective(small_phantom, "target")
    dense = small_phantom.dose_matrix.toarray()
    idx = small_phantom.structure("target").voxel_indices
    np.testing.assert_allclose(obj.coefficients, dense[idx].sum(axis=0) / idx.size, rtol=1e-12)


def test_unknown_structure_errors(tiny_model):
    with pytest.raises((ValidationError, KeyError)):
        mean_objective(tiny_model, "nope")


def test_bound_inversion_names_structure():
    with pytest.raises(ValidationError, match="bad_struct"):
        Structure("bad_struct", np.array([0]), lower_bound=50.0, upper_bound=40.0)


def test_empty_structures_rejected():
    with pytest.raises(ValidationError, match="structures"):
        ProblemModel(
            num_voxels=1,
            num_beamlets=1,
            dose_matrix=sp.csr_matrix((1, 1)),
            structures=(),
            fluence_lower=np.zeros(1),
            fluence_upper=np.ones(1),
        )


def test_voxel_index_out_of_range():
    with pytest.raises(ValidationError, match="voxels"):
        ProblemModel(
            num_voxels=2,
            num_beamlets=1,
            dose_matrix=sp.csr_matrix((2, 1)),
            structures=(Structure("s", np.array([5]), is_constrained=True),),
            fluence_lower=np.zeros(1),
            fluence_upper=np.ones(1),
        )


def test_problem_roundtrip(tmp_path, small_phantom):
    path = tmp_path / "problem.json"
    save_problem(small_phantom, path)
    loaded = load_problem(path)
    assert loaded.num_voxels == small_phantom.num_voxels
    assert loaded.num_beamlets == small_phantom.num_beamlets
    np.testing.assert_allclose(loaded.dose_matrix.toarray(), small_phantom.dose_matrix.toarray())
    assert [s.name for s in loaded.structures] == [s.name for s in small_phantom.structures]
    np.testing.assert_allclose(
        loaded.objective_matrix(), small_phantom.objective_matrix(), rtol=1e-15
    )


def test_problem_roundtrip_binary_sidecar(tmp_path, small_phantom):
    path = tmp_path / "problem.json"
    save_problem(small_phantom, path, sidecar=True)
    assert (tmp_path / "problem.triplets.bin").exists()
    assert "entries" not in json.loads(path.read_text())["dose_matrix"]
    loaded = load_problem(path)
    np.testing.assert_allclose(loaded.dose_matrix.toarray(), small_phantom.dose_matrix.toarray())


def test_load_rejects_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ValidationError, match="malformed"):
        load_problem(p)


def test_load_validation_error_names_field():
    doc = {
        "num_voxels": 1,
        "num_beamlets": 1,
        "structures": [{"name": "s", "voxels": [0], "lb": 50, "ub": 40, "constrained": True}],
        "fluence_bounds": {"lower": 0, "upper": 1},
        "objectives": [],
        "dose_matrix": {"format": "triplets", "rows": 1, "cols": 1, "entries": [[0, 0, 1.0]]},
    }
    with pytest.raises(ValidationError, match=r"structures\[s\]"):
        problem_from_dict(doc)


def test_mean_bound_rows_experimental():
    d = sp.csr_matrix(np.array([[1.0, 3.0], [3.0, 5.0]]))
    model = ProblemModel(
        num_voxels=2,
        num_beamlets=2,
        dose_matrix=d,
        structures=(Structure("s", np.array([0, 1]), is_constrained=True, mean_upper=4.0),),
        fluence_lower=np.zeros(2),
        fluence_upper=np.ones(2),
    )
    nom = assemble_nominal(model)
    assert nom.num_rows == 1
    np.testing.assert_allclose(nom.constraint_matrix.toarray(), [[2.0, 4.0]])
    assert nom.row_origin[0].kind == "mean_ub"
