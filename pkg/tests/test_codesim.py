import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rydberg_anyons.codesim import (
    CodeSimError,
    DenseState,
    Pauli,
    PatchSpec,
    ProtocolScript,
    PunctureLayout,
    StabilizerTableau,
    apply_controlled_string,
    build_patch,
    connector_eigenstate,
    gf2_nullspace,
    gf2_rank,
    log_to_jsonl,
    measure_table1_signature,
    run_protocol,
    table1_states,
    two_puncture_prep_script,
)
from rydberg_anyons.observables import GroundStateName


@pytest.fixture(scope="module")
def default_patch():
    return build_patch(PatchSpec(), seed=0)


@pytest.fixture(scope="module")
def small_hole():
    """3x3 patch, one central puncture, one ancilla: 11 qubits."""
    return build_patch(PatchSpec.from_dict({"width": 3, "height": 3, "punctures": [{"x0": 1, "y0": 1}], "n_ancillas": 1}))


@pytest.fixture(scope="module")
def small_pair():
    """5x3 patch with two punctures and two ancillas: 20 qubits."""
    spec = {"width": 5, "height": 3, "punctures": [{"x0": 1, "y0": 1}, {"x0": 3, "y0": 1}], "n_ancillas": 2}
    return build_patch(PatchSpec.from_dict(spec))


def random_pauli(rng, n):
    return Pauli(rng.integers(0, 2, n).astype(np.uint8), rng.integers(0, 2, n).astype(np.uint8), int(rng.integers(2)))


# --------------------------------------------------------------- GF(2)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
def test_nullspace_against_rank(r, c, seed):
    M = np.random.default_rng(seed).integers(0, 2, (r, c)).astype(np.uint8)
    N = gf2_nullspace(M)
    assert N.shape[0] == c - gf2_rank(M)
    if N.size:
        assert not (M.astype(int) @ N.T.astype(int) % 2).any()


# ---------------------------------------------------- tableau vs dense


def lockstep(n, ops, seed):
    tab, dense = StabilizerTableau(n, seed), DenseState(n, seed)
    rng = np.random.default_rng(seed)
    for op in ops:
        kind = op[0]
        if kind == "m":
            P = random_pauli(rng, n)
            out, det = tab.measure(P)
            prob = dense.measure(P, forced=out)[1]
            assert abs(prob - (1.0 if det else 0.5)) < 1e-10
        elif kind in ("cnot", "cz"):
            a, b = op[1] % n, op[2] % n
            if a == b:
                continue
            getattr(tab, kind)(a, b)
            getattr(dense, kind)(a, b)
        elif kind == "p":
            P = random_pauli(rng, n)
            tab.apply_pauli(P)
            dense.apply_pauli(P)
        else:
            getattr(tab, kind)(op[1] % n)
            getattr(dense, kind)(op[1] % n)
    assert tab.check()
    for _ in range(20):
        P = random_pauli(rng, n)
        assert abs(tab.expectation(P) - dense.expectation(P)) < 1e-10
    for P in tab.stabilizers():
        assert abs(dense.expectation(P) - 1) < 1e-10


gate = st.one_of(
    st.tuples(st.sampled_from(["h", "s"]), st.integers(0, 9)),
    st.tuples(st.sampled_from(["cnot", "cz"]), st.integers(0, 9), st.integers(0, 9)),
    st.tuples(st.sampled_from(["m", "p"])),
)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.lists(gate, max_size=40), st.integers(0, 1000))
def test_tableau_matches_dense(n, ops, seed):
    lockstep(n, ops, seed)


def test_forced_outcome_zero_probability():
    tab = StabilizerTableau(1)
    with pytest.raises(CodeSimError):
        tab.measure(Pauli.from_string("Z"), forced=-1)
    assert tab.measure(Pauli.from_string("Z"), forced=1) == (1, True)


def test_measurement_seeded():
    a = [StabilizerTableau(3, seed=5).measure(Pauli.from_string("XII"))[0] for _ in range(2)]
    assert a[0] == a[1]


def test_pauli_helpers():
    p = Pauli.from_string("XYZI")
    assert p.weight() == 3 and str(p) == "+XYZI"
    assert Pauli.from_string("XI").commutes(Pauli.from_string("IZ"))
    assert not Pauli.from_string("XI").commutes(Pauli.from_string("ZI"))


# -------------------------------------------------------------- patches


def test_default_patch_shape(default_patch):
    patch, tab = default_patch
    assert patch.n_code == 72 and patch.n_qubits == 74
    assert patch.logical_count == 3
    assert tab.check()
    for name in ("Z_C", "X_C", "Z_S", "X_S", "Z_C@p2", "X_C@p2"):
        assert name in patch.operators
    assert patch.operator("Z_S").weight() == 3
    assert patch.operator("X_S").weight() == 6


def test_generators_commute(default_patch):
    patch, _ = default_patch
    gens = patch.generators()
    for i, g in enumerate(gens):
        assert all(g.commutes(h) for h in gens[i + 1 :])
        for P in patch.operators.values():
            assert g.commutes(P)


def test_logical_algebra(default_patch):
    patch, tab = default_patch
    op = patch.operator
    # each connector anticommutes with one loop and commutes with the other
    assert not op("Z_S").commutes(op("X_C")) and op("Z_S").commutes(op("Z_C"))
    assert not op("X_S").commutes(op("Z_C")) and op("X_S").commutes(op("X_C"))
    # joint eigenstates of both connectors exist
    assert op("Z_S").commutes(op("X_S"))
    for g in patch.generators():
        assert tab.expectation(g) == 1


@pytest.mark.parametrize(
    "spec,k",
    [
        ({"width": 3, "height": 3, "outer": "smooth", "punctures": []}, 0),
        ({"width": 3, "height": 3, "punctures": [{"x0": 1, "y0": 1}], "n_ancillas": 1}, 1),
        ({"width": 5, "height": 5, "punctures": [{"x0": 2, "y0": 2}], "n_ancillas": 1}, 1),
        (
            {
                "width": 3,
                "height": 3,
                "outer": {"left": "rough", "right": "rough", "bottom": "smooth", "top": "smooth"},
                "punctures": [],
            },
            1,
        ),
    ],
)
def test_logical_count(spec, k):
    patch, tab = build_patch(PatchSpec.from_dict(spec))
    assert patch.logical_count == k
    assert tab.check()


@pytest.mark.parametrize(
    "spec",
    [
        {"width": 3, "height": 3, "punctures": [{"x0": 0, "y0": 1}]},
        {"width": 5, "height": 4, "punctures": [{"x0": 1, "y0": 1}, {"x0": 2, "y0": 2}]},
        {"width": 3, "height": 3, "punctures": [{"x0": 1, "y0": 1, "rough": ["diagonal"]}]},
    ],
)
def test_bad_layouts(spec):
    with pytest.raises(CodeSimError):
        build_patch(PatchSpec.from_dict(spec))


def test_spec_roundtrip():
    s = PatchSpec()
    assert PatchSpec.from_dict(s.to_dict()) == s
    assert PunctureLayout(1, 1).mixed and not PunctureLayout(1, 1, rough=()).mixed


def test_unknown_operator(default_patch):
    with pytest.raises(CodeSimError):
        default_patch[0].operator("nope")
    with pytest.raises(CodeSimError):
        default_patch[0].ancilla(5)


def dense_prep(patch):
    d = DenseState(patch.n_qubits)
    for g in patch.generators() + list(patch.fixed_logicals):
        d.measure(g, forced=1)
    return d


def test_ground_state_against_dense(small_hole):
    patch, tab = small_hole
    d = dense_prep(patch)
    rng = np.random.default_rng(0)
    for P in patch.generators() + list(patch.fixed_logicals):
        assert abs(d.expectation(P) - 1) < 1e-10
    for _ in range(50):
        P = random_pauli(rng, patch.n_qubits)
        assert abs(tab.expectation(P) - d.expectation(P)) < 1e-10


def test_controlled_string_against_dense(small_pair):
    patch, tab0 = small_pair
    tab = tab0.copy(seed=1)
    d = dense_prep(patch)
    a0, a1 = patch.ancilla(0), patch.ancilla(1)
    for t in (tab, d):
        t.h(a0)
        t.h(a1)
    apply_controlled_string(tab, a0, patch.operator("X_S"), "X")
    apply_controlled_string(tab, a1, patch.operator("Z_S"), "Z")
    for q in np.flatnonzero(patch.operator("X_S").x):
        d.cnot(a0, int(q))
    for q in np.flatnonzero(patch.operator("Z_S").z):
        d.cz(a1, int(q))
    rng = np.random.default_rng(2)
    ops = [patch.operator("X_S"), patch.operator("Z_S")]
    ops += [Pauli.from_support(patch.n_qubits, xs=[a0]), Pauli.from_support(patch.n_qubits, xs=[a1])]
    ops += [random_pauli(rng, patch.n_qubits) for _ in range(30)]
    for P in ops:
        assert abs(tab.expectation(P) - d.expectation(P)) < 1e-10


def test_controlled_string_rejects_wrong_kind(default_patch):
    patch, tab = default_patch
    with pytest.raises(CodeSimError):
        apply_controlled_string(tab.copy(), patch.ancilla(0), patch.operator("Z_S"), "X")


# ------------------------------------------------------------ protocols


def test_table1_rows(default_patch):
    patch, tab = default_patch
    states = table1_states(patch, tab, seed=0)
    for name, t in states.items():
        lab = measure_table1_signature(t, patch)
        assert lab.label == name
        assert t.check()


@pytest.mark.parametrize("z,x", [(1, 1), (1, -1), (-1, 1), (-1, -1)])
def test_connector_eigenstate(default_patch, z, x):
    patch, tab = default_patch
    t = tab.copy(seed=7)
    connector_eigenstate(t, patch, z, x)
    assert t.expectation(patch.operator("Z_S")) == z
    assert t.expectation(patch.operator("X_S")) == x
    assert t.expectation(Pauli.from_support(patch.n_qubits, zs=[patch.ancilla(0)])) == 1


def test_prep_script_json_roundtrip():
    s = two_puncture_prep_script()
    back = ProtocolScript.from_json(s.to_json())
    assert back == s
    with pytest.raises(CodeSimError):
        ProtocolScript.from_json(json.dumps({"steps": [{"op": "teleport"}]}))


def test_prep_protocol_outcomes(default_patch):
    patch, tab = default_patch
    seen = set()
    for seed in range(40):
        t = tab.copy(seed=seed)
        log = run_protocol(two_puncture_prep_script(), patch, t)
        xx, zz = log[-2]["outcome"], log[-1]["outcome"]
        # the ancillas start in the ZZ = -1 sector
        assert zz == -1
        seen.add(xx)
        # the Bell outcome fixes the joint connector parity
        joint = Pauli(patch.operator("Z_S").x ^ patch.operator("X_S").x, patch.operator("Z_S").z ^ patch.operator("X_S").z)
        assert abs(t.expectation(joint)) == 1
    assert seen == {1, -1}


def test_prep_protocol_seeded_log(default_patch):
    patch, tab = default_patch
    logs = [log_to_jsonl(run_protocol(two_puncture_prep_script(), patch, tab.copy(seed=3))) for _ in range(2)]
    assert logs[0] == logs[1]
    first = json.loads(logs[0].splitlines()[0])
    assert set(first) == {"step", "operator", "outcome", "deterministic"}


def test_prep_protocol_against_dense(small_pair):
    patch, tab0 = small_pair
    script = two_puncture_prep_script()
    tab = tab0.copy(seed=4)
    log = run_protocol(script, patch, tab)
    d = dense_prep(patch)
    a0, a1 = patch.ancilla(0), patch.ancilla(1)
    d.h(a0)
    d.cnot(a0, a1)
    d.apply_pauli(Pauli.from_support(patch.n_qubits, xs=[a1]))
    for q in np.flatnonzero(patch.operator("X_S").x):
        d.cnot(a0, int(q))
    for q in np.flatnonzero(patch.operator("Z_S").z):
        d.cz(a1, int(q))
    n = patch.n_qubits
    for letter, rec in zip("XZ", log[-2:]):
        P = Pauli.from_support(n, (a0, a1) if letter == "X" else (), (a0, a1) if letter == "Z" else ())
        d.measure(P, forced=rec["outcome"])
    rng = np.random.default_rng(5)
    for P in [patch.operator("Z_S"), patch.operator("X_S")] + [random_pauli(rng, n) for _ in range(30)]:
        assert abs(tab.expectation(P) - d.expectation(P)) < 1e-10


def test_signature_of_prep_state_is_indeterminate(default_patch):
    # both connectors stay random after the protocol; only their product is fixed
    patch, tab = default_patch
    t = tab.copy(seed=0)
    run_protocol(two_puncture_prep_script(), patch, t)
    lab = measure_table1_signature(t, patch)
    assert lab.values == (0.0, 0.0, 0.0, 0.0)
    assert lab.name is GroundStateName.INDETERMINATE
