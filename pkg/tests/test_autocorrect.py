import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eadkit.autocorrect import (ConstraintCase, EnergyVector, Tolerances, check_constraints, correct,
                                correct_csv, generate_candidates, read_vectors_csv)
from eadkit.errors import CorrectionError, DataFormatError, StructuralError

T = Tolerances(1.0, 0.02)
GOOD = EnergyVector(230, 2, 460, 230, 0.5)
BAD_P = EnergyVector(230, 2, 460, 23, 0.5)
BAD_S = EnergyVector(230, 2, 500, 250, 0.5)


def vec(*v):
    return EnergyVector(*v)


def assert_vec(a, b, tol=1e-12):
    np.testing.assert_allclose(a.as_array(), b.as_array(), rtol=0, atol=tol)


class TestCheckConstraints:
    def test_cases(self):
        assert check_constraints(GOOD, T) is ConstraintCase.BOTH_SATISFIED
        assert check_constraints(BAD_P, T) is ConstraintCase.ONLY_FIRST
        assert check_constraints(BAD_S, T) is ConstraintCase.ONLY_SECOND
        assert check_constraints(vec(230, 2, 500, 25, 0.5), T) is ConstraintCase.NEITHER_SATISFIED

    def test_zero_apparent_power(self):
        assert check_constraints(vec(230, 0, 0, 0, 0), T) is ConstraintCase.BOTH_SATISFIED
        assert check_constraints(vec(230, 0, 0, 5, 0), T) is ConstraintCase.ONLY_FIRST
        assert check_constraints(vec(230, 0, 0, 0, 0.5), T) is ConstraintCase.ONLY_FIRST

    def test_default_tolerances(self):
        assert Tolerances.default(10) == Tolerances(0.5, 0.02)
        assert Tolerances.default(1000).eps1 == pytest.approx(10.0)
        with pytest.raises(StructuralError):
            Tolerances(0, 0.02)


class TestCandidates:
    def test_only_first(self):
        c = generate_candidates(BAD_P, ConstraintCase.ONLY_FIRST)
        assert [x.index for x in c] == [1, 2]
        assert_vec(c[0].vector, vec(230, 2, 460, 23, 0.05))
        assert_vec(c[1].vector, vec(230, 2, 460, 230, 0.5))

    def test_only_second(self):
        c = generate_candidates(BAD_S, ConstraintCase.ONLY_SECOND)
        assert_vec(c[0].vector, vec(230, 500 / 230, 500, 250, 0.5))
        assert_vec(c[1].vector, vec(250, 2, 500, 250, 0.5))

    def test_neither_enumerates_six(self):
        e = vec(230, 2, 500, 25, 0.5)
        c = generate_candidates(e, ConstraintCase.NEITHER_SATISFIED)
        assert [x.index for x in c] == [5, 6, 7, 8, 9, 10]
        assert_vec(c[0].vector, vec(230, 2, 460, 25, 25 / 460))
        assert_vec(c[1].vector, vec(230, 2, 460, 230, 0.5))
        assert_vec(c[5].vector, vec(250, 2, 500, 250, 0.5))

    def test_infeasible_candidates_are_dropped(self):
        # p > s would need a power factor above 1
        c = generate_candidates(vec(230, 2, 460, 2300, 0.5), ConstraintCase.ONLY_FIRST)
        assert [x.index for x in c] == [2]

    def test_division_by_zero_drops_candidate(self):
        c = generate_candidates(vec(0, 2, 460, 230, 0.5), ConstraintCase.ONLY_SECOND)
        assert [x.index for x in c] == [4]

    def test_both_satisfied_has_no_candidates(self):
        with pytest.raises(StructuralError):
            generate_candidates(GOOD, ConstraintCase.BOTH_SATISFIED)

    def test_nothing_survives(self):
        with pytest.raises(CorrectionError):
            generate_candidates(vec(0, 0, 5, 1, 0.5), ConstraintCase.ONLY_SECOND)


class TestCorrect:
    def test_consistent_vector_unchanged(self):
        r = correct(GOOD, T)
        assert r.corrected == GOOD and r.candidates == () and r.case is ConstraintCase.BOTH_SATISFIED

    def test_only_first_follows_raw_norm(self):
        # raw-component distance: changing cos_phi by 0.45 beats changing p by 207
        r = correct(BAD_P, T)
        assert r.chosen_index == 1
        assert r.distance == pytest.approx(0.45)
        assert_vec(r.corrected, vec(230, 2, 460, 23, 0.05))

    def test_only_second_repairs_current(self):
        r = correct(BAD_S, T)
        assert r.chosen_index == 3
        assert r.corrected.i == pytest.approx(2.1739130434782608, abs=1e-12)
        assert r.distance == pytest.approx(500 / 230 - 2)

    def test_scale_changes_the_choice(self):
        r = correct(BAD_P, T, scale=[1, 1, 1, 1000, 1e-3])
        assert r.chosen_index == 2 and r.corrected == GOOD

    def test_power_fix_when_cos_phi_would_exceed_one(self):
        r = correct(vec(230, 2, 460, 2300, 0.5), T)
        assert r.corrected == GOOD

    def test_tie_breaks_to_lowest_index(self):
        # both candidates move one field by exactly 1
        e = vec(2, 2, 2, 2, 1)
        r = correct(e, Tolerances(0.5, 0.02))
        assert r.case is ConstraintCase.ONLY_SECOND
        assert r.distance == 1.0 and r.chosen_index == 3

    def test_cos_phi_above_one_is_a_valid_reading(self):
        r = correct(vec(230, 2, 460, 230, 5.0), T)
        assert_vec(r.corrected, GOOD)


def test_batch_csv(tmp_path):
    src = tmp_path / "in.csv"
    src.write_text("u,i,s,p,cos_phi\n230,2,460,230,0.5\n230,2,500,250,0.5\n")
    reports = correct_csv(src, tmp_path / "out.csv", T)
    lines = (tmp_path / "out.csv").read_text().splitlines()
    assert lines[0] == "u,i,s,p,cos_phi,case,chosen_index,distance"
    assert lines[1].endswith("both,0,0.0") and ",only_second,3," in lines[2]
    assert len(reports) == 2
    (tmp_path / "bad.csv").write_text("u,i,s,p\n1,2,3,4\n")
    with pytest.raises(DataFormatError):
        read_vectors_csv(tmp_path / "bad.csv")


@st.composite
def consistent(draw):
    u = draw(st.floats(180, 250))
    i = draw(st.floats(0.05, 15))
    c = draw(st.floats(0.05, 1.0))
    s = u * i
    return EnergyVector(u, i, s, s * c, c)


@st.composite
def readings(draw):
    e = draw(consistent())
    field = draw(st.sampled_from(["u", "i", "s", "p", "cos_phi"]))
    factor = draw(st.floats(0.2, 5.0))
    values = {f: getattr(e, f) for f in ("u", "i", "s", "p", "cos_phi")}
    values[field] *= factor
    return EnergyVector(**values)


@settings(max_examples=300, deadline=None)
@given(consistent())
def test_fixed_point(e):
    assert correct(e).corrected == e


@settings(max_examples=300, deadline=None)
@given(readings())
def test_idempotent_sound_and_minimal(e):
    r = correct(e)
    c = r.corrected
    assert correct(c).corrected == c
    assert c.is_feasible()
    if r.case is not ConstraintCase.BOTH_SATISFIED:
        # the constraint that was violated now holds exactly, the other stays inside tolerance
        assert check_constraints(c, Tolerances.default(c.s)) is ConstraintCase.BOTH_SATISFIED
        dists = [np.linalg.norm(k.vector.as_array() - e.as_array()) for k in r.candidates]
        assert r.distance <= min(dists)


@settings(max_examples=300, deadline=None)
@given(consistent(), st.sampled_from(["i", "cos_phi"]), st.floats(1.2, 5.0))
def test_recovers_small_magnitude_fields(e, field, factor):
    values = {f: getattr(e, f) for f in ("u", "i", "s", "p", "cos_phi")}
    values[field] *= factor
    if values["cos_phi"] > 1 and field == "cos_phi":
        values["cos_phi"] = min(values["cos_phi"], 1.0)
    bad = EnergyVector(**values)
    if check_constraints(bad, Tolerances.default(bad.s)) is ConstraintCase.BOTH_SATISFIED:
        return
    assert_vec(correct(bad).corrected, e, tol=1e-9)


def test_single_field_corruption_is_not_identifiable():
    # corrupting u of one consistent vector and i of another can give the same reading,
    # so no deterministic rule can restore both originals
    a = vec(230, 2, 460, 230, 0.5)
    b = vec(460 / 2.5, 2.5, 460, 230, 0.5)
    read_a = vec(460 / 2.5, 2, 460, 230, 0.5)  # a with u misread
    read_b = vec(460 / 2.5, 2, 460, 230, 0.5)  # b with i misread
    assert read_a == read_b
    assert a != b
