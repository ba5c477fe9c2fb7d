import math

import numpy as np
import pytest

from logicrl import constraints as fl
from logicrl.envs import CartPole, GridWorld
from oracles import oracle_evaluate_batch, random_formula

GRID_SCHEMA = GridWorld().schema
CARTPOLE_SCHEMA = CartPole().schema


def registry_with(**sets) -> fl.ObjectRegistry:
    reg = fl.ObjectRegistry()
    for name, points in sets.items():
        reg.add_set(name, np.asarray(points, dtype=float))
    return reg


# -- parsing ------------------------------------------------------------------


def test_parse_simple_norm_atom():
    f = fl.parse("0 <= norm2(s - [5,5])")
    assert isinstance(f, fl.Atom)
    assert f.cmp.op == "<="
    assert f.cmp.lhs == fl.Literal(0.0)
    norm = f.cmp.rhs
    assert isinstance(norm, fl.NormDistance) and norm.p == 2.0
    assert norm.left == fl.StateRef(None)
    assert norm.right == fl.PointLiteral((5.0, 5.0))


def test_parse_forall():
    f = fl.parse("forall u in unsafe: 1.5 <= norm2(s - u)")
    assert isinstance(f, fl.ForAll)
    assert f.var == "u" and f.set_name == "unsafe"
    assert isinstance(f.body, fl.Atom)
    assert f.body.cmp.rhs == fl.NormDistance(2.0, fl.StateRef(None), fl.VarRef("u"))


def test_parse_cartpole_conjunction():
    f = fl.parse(
        "(-2.4 <= s[0] and s[0] <= 2.4) and (-0.2095 <= s[2] and s[2] <= 0.2095)"
    )
    assert isinstance(f, fl.And) and len(f.children) == 2
    atoms = []
    for side in f.children:
        assert isinstance(side, fl.And) and len(side.children) == 2
        atoms.extend(side.children)
    comps = {e.index for a in atoms for e in (a.cmp.lhs, a.cmp.rhs) if isinstance(e, fl.Component)}
    assert comps == {0, 2}
    assert atoms[0].cmp.lhs == fl.Literal(-2.4)


def test_parse_exists_is_not_forall_not():
    f = fl.parse("exists u in unsafe: norm2(s - u) <= 1")
    assert isinstance(f, fl.Not)
    assert isinstance(f.child, fl.ForAll)
    assert isinstance(f.child.body, fl.Not)


def test_parse_comments_and_whitespace():
    src = "# a comment\nforall u in unsafe:  # trailing\n    1 <= norm1(s - u)\n"
    f = fl.parse(src)
    assert isinstance(f, fl.ForAll)


def test_parse_precedence_or_of_ands():
    f = fl.parse("s[0] <= 1 and s[1] <= 2 or s[0] >= 3")
    assert isinstance(f, fl.Or)
    assert isinstance(f.children[0], fl.And)
    assert isinstance(f.children[1], fl.Atom)


@pytest.mark.parametrize(
    "source",
    ["", "1 <=", "norm2(s -)", "forall in unsafe: 1 <= s[0]", "s[1.5] <= 2",
     "1 ** 2", "(1 <= s[0]", "norm3(s - [1,2]) <= 1 <= 2"],
)
def test_parse_errors_carry_position(source):
    with pytest.raises(fl.FLSyntaxError) as exc:
        fl.parse(source)
    assert exc.value.line >= 1 and exc.value.col >= 1
    assert "line" in str(exc.value)


def test_load_constraint_file(tmp_path):
    path = tmp_path / "keepout.fl"
    path.write_text("# keep away\nforall u in unsafe: 1.5 <= norm2(s - u)\n")
    f = fl.load_constraint_file(path)
    assert isinstance(f, fl.ForAll)


# -- binding ------------------------------------------------------------------


def test_bind_unknown_set_names_it():
    f = fl.parse("forall u in unsafe: 1 <= norm2(s - u)")
    with pytest.raises(fl.BindError, match="unsafe"):
        fl.bind(f, fl.ObjectRegistry(), GRID_SCHEMA)


def test_bind_empty_set_is_vacuous_true():
    f = fl.parse("forall h in hazards: 1 <= norm2(s - h)")
    reg = fl.ObjectRegistry()
    reg.add_set("hazards", np.zeros((0, 0)))
    bound = fl.bind(f, reg, GRID_SCHEMA)
    assert bound.evaluate([3.0, 4.0]) is True


def test_bind_component_out_of_range():
    with pytest.raises(fl.BindError, match=r"s\[7\]"):
        fl.bind(fl.parse("s[7] <= 1"), fl.ObjectRegistry(), GRID_SCHEMA)


def test_bind_dimension_mismatch():
    # 2-D anchor against the 4-D cart-pole state
    f = fl.parse("forall u in pts: 1 <= norm2(s - u)")
    reg = registry_with(pts=[[1.0, 2.0]])
    with pytest.raises(fl.BindError, match="dimension"):
        fl.bind(f, reg, CARTPOLE_SCHEMA)


def test_bind_unknown_slice_and_unknown_var():
    with pytest.raises(fl.BindError, match="slice"):
        fl.bind(fl.parse("norm2(s.vel - [1,2]) <= 1"), fl.ObjectRegistry(), GRID_SCHEMA)
    with pytest.raises(fl.BindError, match="identifier"):
        fl.bind(fl.parse("norm2(s - q) <= 1"), fl.ObjectRegistry(), GRID_SCHEMA)


def test_bind_named_slice():
    f = fl.parse("norm2(s.pos - [1,2]) <= 3")
    bound = fl.bind(f, fl.ObjectRegistry(), GRID_SCHEMA)
    assert bound.evaluate([1.0, 2.0]) is True
    assert bound.evaluate([10.0, 2.0]) is False


# -- evaluation ---------------------------------------------------------------


def test_evaluate_distance_bound_false_case():
    bound = fl.bind(fl.parse("2 <= norm2(s - [5,6])"), fl.ObjectRegistry(), GRID_SCHEMA)
    assert bound.evaluate([5.0, 5.0]) is False  # distance is 1


def test_evaluate_tautology_nonnegative_norm():
    f = fl.parse("forall u in unsafe: 0 <= norm2(s - u)")
    reg = registry_with(unsafe=[[3, 3], [17, 2], [9, 9]])
    bound = fl.bind(f, reg, GRID_SCHEMA)
    rng = np.random.default_rng(0)
    states = rng.uniform(0, 19, size=(50, 2))
    assert bound.evaluate_batch(states).all()


def test_evaluate_forall_l1_two_anchors():
    f = fl.parse("forall u in unsafe: 1 <= norm1(s - u)")
    reg = registry_with(unsafe=[[3, 3], [4, 3]])
    bound = fl.bind(f, reg, GRID_SCHEMA)
    assert bound.evaluate([3.0, 4.0]) is True   # distance to (3,3) is exactly 1
    assert bound.evaluate([3.0, 3.0]) is False  # on an anchor


def test_evaluate_rejects_nonfinite_state():
    bound = fl.bind(fl.parse("0 <= s[0]"), fl.ObjectRegistry(), GRID_SCHEMA)
    with pytest.raises(ValueError):
        bound.evaluate([np.nan, 1.0])
    with pytest.raises(ValueError):
        bound.evaluate_batch([[np.inf, 0.0]])


def test_evaluate_strict_versus_nonstrict():
    reg = fl.ObjectRegistry()
    assert fl.bind(fl.parse("1 <= s[0]"), reg, GRID_SCHEMA).evaluate([1.0, 0.0]) is True
    assert fl.bind(fl.parse("1 < s[0]"), reg, GRID_SCHEMA).evaluate([1.0, 0.0]) is False
    assert fl.bind(fl.parse("1 >= s[0]"), reg, GRID_SCHEMA).evaluate([1.0, 0.0]) is True
    assert fl.bind(fl.parse("1 > s[0]"), reg, GRID_SCHEMA).evaluate([1.0, 0.0]) is False


def test_exists_semantics():
    f = fl.parse("exists u in pts: norm2(s - u) <= 1")
    reg = registry_with(pts=[[0, 0], [10, 10]])
    bound = fl.bind(f, reg, GRID_SCHEMA)
    assert bound.evaluate([0.5, 0.0]) is True
    assert bound.evaluate([5.0, 5.0]) is False


# -- norms --------------------------------------------------------------------


def test_norm_distance_hand_values():
    assert fl.norm_distance([3, 4], [0, 0], 2) == 5.0
    assert fl.norm_distance([1, -2], [0, 0], 1) == 3.0
    assert fl.norm_distance([1, -2], [0, 0], math.inf) == 2.0


def test_norm_distance_identity_and_errors():
    x = np.array([0.3, -1.7, 2.2])
    for p in (1, 2, 3, math.inf):
        assert fl.norm_distance(x, x, p) == 0.0
    with pytest.raises(ValueError):
        fl.norm_distance([1, 2], [1, 2, 3], 2)
    with pytest.raises(ValueError):
        fl.norm_distance([1, 2], [0, 0], 0.5)


def test_norm_distance_general_p_matches_numpy():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b = rng.normal(size=(2, 4))
        p = float(rng.uniform(1, 5))
        assert np.isclose(fl.norm_distance(a, b, p), np.linalg.norm(a - b, ord=p))


# -- rendering ----------------------------------------------------------------


@pytest.mark.parametrize(
    "source",
    [
        "0 <= norm2(s - [5,5])",
        "forall u in unsafe: 1.5 <= norm2(s - u)",
        "(-2.4 <= s[0] and s[0] <= 2.4) and (-0.2095 <= s[2] and s[2] <= 0.2095)",
        "not (s[0] <= 1 or s[1] >= 2) and norminf(s - [1,-2]) > 0.5",
        "exists u in unsafe: norm1(s - u) < 2",
        "forall u in unsafe: (0 <= s[0] and norm2(s.pos - u) >= 1)",
    ],
)
def test_to_text_round_trip(source):
    f = fl.parse(source)
    assert fl.parse(fl.to_text(f)) == f


def test_to_text_preserves_and_order():
    f = fl.parse("s[1] <= 2 and s[0] <= 1")
    text = fl.to_text(f)
    assert text.index("s[1]") < text.index("s[0]")


def test_to_text_parenthesizes_or_inside_and():
    f = fl.And((fl.Or((fl.parse("s[0] <= 1"), fl.parse("s[0] >= 3"))), fl.parse("s[1] <= 2")))
    text = fl.to_text(f)
    assert text.startswith("(")
    assert fl.parse(text) == f


def test_random_formulas_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(100):
        f = random_formula(rng)
        assert fl.parse(fl.to_text(f)) == f


# -- DNF normalizer (diagnostics) ----------------------------------------------


def _is_literal(f) -> bool:
    return isinstance(f, (fl.Atom, fl.ForAll)) or (
        isinstance(f, fl.Not) and isinstance(f.child, (fl.Atom, fl.ForAll))
    )


def _is_dnf(f) -> bool:
    clauses = f.children if isinstance(f, fl.Or) else (f,)
    for clause in clauses:
        literals = clause.children if isinstance(clause, fl.And) else (clause,)
        if not all(_is_literal(lit) for lit in literals):
            return False
    return True


def test_dnf_shape_and_equivalence():
    rng = np.random.default_rng(11)
    states = rng.uniform(-2, 12, size=(64, 2))
    reg = fl.ObjectRegistry()
    for _ in range(60):
        f = random_formula(rng, max_atoms=4)
        dnf = fl.to_dnf(f)
        assert _is_dnf(dnf)
        a = fl.bind(f, reg, GRID_SCHEMA).evaluate_batch(states)
        b = fl.bind(dnf, reg, GRID_SCHEMA).evaluate_batch(states)
        assert np.array_equal(a, b)


# -- properties ---------------------------------------------------------------


def test_brute_force_equivalence_sample():
    """evaluate agrees with the independent truth-table oracle (small scale;
    the acceptance suite runs the full 1000x1000 version)."""
    rng = np.random.default_rng(123)
    states = rng.uniform(-2.0, 12.0, size=(200, 2))
    reg = fl.ObjectRegistry()
    for _ in range(200):
        f = random_formula(rng)
        mine = fl.bind(f, reg, GRID_SCHEMA).evaluate_batch(states)
        oracle = oracle_evaluate_batch(f, states)
        assert np.array_equal(mine, oracle)


@pytest.mark.parametrize("n_anchors", [1, 2, 3, 5, 8])
def test_forall_equals_explicit_conjunction(n_anchors):
    rng = np.random.default_rng(n_anchors)
    anchors = rng.uniform(0, 10, size=(n_anchors, 2))
    f = fl.parse("forall u in pts: 1.2 <= norm2(s - u)")
    reg = registry_with(pts=anchors)
    bound = fl.bind(f, reg, GRID_SCHEMA)
    substituted = [
        fl.Atom(fl.Comparison(fl.Literal(1.2), "<=",
                              fl.NormDistance(2.0, fl.StateRef(None),
                                              fl.PointLiteral(tuple(a)))))
        for a in anchors
    ]
    expanded = fl.And(tuple(substituted)) if len(substituted) > 1 else substituted[0]
    bound2 = fl.bind(expanded, reg, GRID_SCHEMA)
    states = rng.uniform(-1, 11, size=(128, 2))
    assert np.array_equal(bound.evaluate_batch(states), bound2.evaluate_batch(states))


def test_safety_atom_monotone_in_distance():
    """If lb <= |s - u| holds at s, it holds at any state farther from u."""
    rng = np.random.default_rng(5)
    u = np.array([4.0, 7.0])
    bound = fl.bind(fl.parse("1.5 <= norm2(s - [4,7])"), fl.ObjectRegistry(), GRID_SCHEMA)
    for _ in range(200):
        direction = rng.normal(size=2)
        direction /= np.linalg.norm(direction)
        r = rng.uniform(0, 6)
        s = u + r * direction
        if bound.evaluate(s):
            farther = u + (r + rng.uniform(0, 5)) * direction
            assert bound.evaluate(farther)


def test_parser_total_on_generated_and_mutated_text():
    """Generated formulas always parse; mutations parse or raise a positioned
    syntax error, never anything else."""
    rng = np.random.default_rng(99)
    alphabet = list("abs0123456789 ()[]<>=.,-:orandnotfrll#\n")
    for _ in range(150):
        text = fl.to_text(random_formula(rng))
        assert fl.parse(text) is not None
        mutated = list(text)
        for _ in range(rng.integers(1, 4)):
            op = rng.integers(3)
            pos = int(rng.integers(len(mutated))) if mutated else 0
            if op == 0 and mutated:
                mutated[pos] = str(rng.choice(alphabet))
            elif op == 1 and mutated:
                del mutated[pos]
            else:
                mutated.insert(pos, str(rng.choice(alphabet)))
        try:
            fl.parse("".join(mutated))
        except fl.FLSyntaxError as exc:
            assert exc.line >= 1 and exc.col >= 1


def test_registry_validation():
    reg = fl.ObjectRegistry()
    reg.add_set("a", [[1, 2]])
    with pytest.raises(ValueError):
        reg.add_set("a", [[3, 4]])
    with pytest.raises(ValueError):
        reg.add_set("b", [[1, 2], [3, 4, 5]])
    with pytest.raises(ValueError):
        reg.add_set("c", [[np.nan, 1]])
