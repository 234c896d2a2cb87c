from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eovledger.chaincode import ChaincodeArgs, TxType
from eovledger.endorsement import (
    And,
    Or,
    OutOf,
    Principal,
    TransactionEnvelope,
    collect,
    endorse,
    evaluate_policy,
    make_proposal,
    minimal_signer_sets,
    parse_policy,
)
from eovledger.errors import (
    BadClientSignature,
    BadEndorserSignature,
    ChaincodeRejection,
    DivergentResults,
    MalformedProposal,
    NotEndorser,
    PolicySyntaxError,
    PolicyUnsatisfied,
    UnknownCaller,
)
from eovledger.membership import Role, Signature, derive_identity

from conftest import Pipeline, small_config
from oracles import ENDORSERS, SUBSETS, policies_depth2, truth_mask

E1, E2, E3, E4 = (Principal(e) for e in ENDORSERS)


def test_policy_examples():
    assert evaluate_policy(OutOf(2, (E1, E2, E3)), {"e1", "e3"})
    assert not evaluate_policy(And((E1, E2)), {"e1"})
    assert evaluate_policy(Or((E1, E2)), {"e2"})
    with pytest.raises(PolicySyntaxError):
        OutOf(4, (E1, E2, E3))
    with pytest.raises(PolicySyntaxError):
        OutOf(0, (E1,))


def test_depth2_policies_match_truth_table():
    for policy in policies_depth2():
        mask = truth_mask(policy)
        for bit, subset in enumerate(SUBSETS):
            assert evaluate_policy(policy, subset) == bool(mask >> bit & 1), (policy, subset)


@pytest.mark.parametrize(
    "text",
    ["e1", "outof(2, e1, e2, e3)", "and(e1, or(e2, e3))", "outof(1, and(e1, e2), e4)", "OR(e1,e2)"],
)
def test_parse_print_roundtrip(text):
    policy = parse_policy(text)
    assert parse_policy(str(policy)) == policy


@pytest.mark.parametrize("text", ["", "and(", "and()", "outof(x, e1)", "outof(3, e1, e2)", "e1 e2", "foo(e1)", "3"])
def test_parse_errors(text):
    with pytest.raises(PolicySyntaxError):
        parse_policy(text)


def test_minimal_signer_sets():
    assert minimal_signer_sets(parse_policy("outof(2, e1, e2, e3)")) == [("e1", "e2"), ("e1", "e3"), ("e2", "e3")]
    assert minimal_signer_sets(parse_policy("and(e1, or(e2, e3))")) == [("e1", "e2"), ("e1", "e3")]


policy_st = st.recursive(
    st.sampled_from([E1, E2, E3, E4]),
    lambda kids: st.one_of(
        st.lists(kids, min_size=1, max_size=4).map(lambda c: And(tuple(c))),
        st.lists(kids, min_size=1, max_size=4).map(lambda c: Or(tuple(c))),
        st.lists(kids, min_size=1, max_size=4).flatmap(
            lambda c: st.integers(1, len(c)).map(lambda n: OutOf(n, tuple(c)))
        ),
    ),
    max_leaves=10,
)


@settings(max_examples=300, deadline=None)
@given(policy_st, st.sets(st.sampled_from(ENDORSERS)), st.sampled_from(ENDORSERS))
def test_policy_is_monotone(policy, signers, extra):
    if evaluate_policy(policy, signers):
        assert evaluate_policy(policy, signers | {extra})


@settings(max_examples=200, deadline=None)
@given(policy_st)
def test_random_policy_parse_roundtrip(policy):
    assert parse_policy(str(policy)) == policy


# -- endorse / collect -------------------------------------------------------


def test_happy_path_store(pipeline):
    env = pipeline.store(0, b"reading")
    assert env.writeset and env.tx_id == env.proposal.tx_id
    assert env.wire_size_bytes == len(env.to_bytes())
    assert TransactionEnvelope.from_bytes(env.to_bytes()).to_bytes() == env.to_bytes()


def test_same_snapshot_gives_same_digest(pipeline, net):
    p = pipeline.proposal(pipeline.device(0), ChaincodeArgs(TxType.STORE, net.devices[0].device_id, b"v"))
    view = pipeline.state.snapshot()
    a = endorse(p, view, net.endorsers["e1"], net.membership)
    b = endorse(p, view, net.endorsers["e2"], net.membership)
    assert a.rwset_digest == b.rwset_digest


def test_unregistered_client_rejected_at_endorsement():
    # a private network: the intruder gets a membership identity but no registry entry
    local = small_config().build()
    intruder = local.membership.create_identity("intruder-7", Role.DEVICE, bytes(32))
    p = make_proposal(intruder, "home-1", ChaincodeArgs(TxType.STORE, "intruder-7", b"x"), bytes(8))
    with pytest.raises(ChaincodeRejection) as info:
        endorse(p, Pipeline(local).state.snapshot(), local.endorsers["e1"], local.membership)
    assert isinstance(info.value.inner, UnknownCaller)


def test_unknown_signer_is_bad_client_signature(pipeline, net):
    ghost = derive_identity("ghost", Role.DEVICE, bytes(32))
    p = make_proposal(ghost, "home-1", ChaincodeArgs(TxType.STORE, "ghost", b"x"), bytes(8))
    with pytest.raises(BadClientSignature):
        endorse(p, pipeline.state.snapshot(), net.endorsers["e1"], net.membership)


def test_tampered_proposal(pipeline, net):
    p = pipeline.proposal(pipeline.device(0), ChaincodeArgs(TxType.STORE, net.devices[0].device_id, b"v"))
    bad_sig = replace(p, client_sig=Signature(p.client_id, bytes(64)))
    with pytest.raises(BadClientSignature):
        endorse(bad_sig, pipeline.state.snapshot(), net.endorsers["e1"], net.membership)
    with pytest.raises(MalformedProposal):
        endorse(replace(p, nonce=b"\x09" * 8), pipeline.state.snapshot(), net.endorsers["e1"], net.membership)
    with pytest.raises(NotEndorser):
        endorse(p, pipeline.state.snapshot(), pipeline.device(1), net.membership)


def _endorsements(pipeline, net, signers, view=None):
    dev = pipeline.device(0)
    p = pipeline.proposal(dev, ChaincodeArgs(TxType.STORE, dev.id, b"v"))
    view = view or pipeline.state.snapshot()
    return p, [endorse(p, view, net.endorsers[e], net.membership) for e in signers]


def test_collect_outcomes(pipeline, net):
    policy = net.policies["p-main"]
    dev = pipeline.device(0)
    p, ends = _endorsements(pipeline, net, ["e1", "e2"])
    assert collect(p, ends, policy, dev, net.membership).tx_id == p.tx_id
    with pytest.raises(PolicyUnsatisfied):
        collect(p, ends[:1], policy, dev, net.membership)
    with pytest.raises(PolicyUnsatisfied):
        collect(p, [], policy, dev, net.membership)
    with pytest.raises(BadEndorserSignature):
        collect(p, [ends[0], ends[0]], policy, dev, net.membership)
    forged = replace(ends[1], endorser_sig=Signature("e2", bytes(64)))
    with pytest.raises(BadEndorserSignature):
        collect(p, [ends[0], forged], policy, dev, net.membership)


def test_collect_divergent_results(pipeline, net):
    stale = pipeline.state.snapshot()
    pipeline.commit([pipeline.store(0)])
    p, (a,) = _endorsements(pipeline, net, ["e1"], view=stale)
    b = endorse(p, pipeline.state.snapshot(), net.endorsers["e2"], net.membership)
    with pytest.raises(DivergentResults):
        collect(p, [a, b], net.policies["p-main"], pipeline.device(0), net.membership)


def test_collect_agrees_with_oracle_over_all_signer_sets(pipeline, net):
    policy = net.policies["p-main"]
    dev = pipeline.device(0)
    p, ends = _endorsements(pipeline, net, ["e1", "e2", "e3", "e4"])
    mask = truth_mask(policy)
    for bit, subset in enumerate(SUBSETS):
        chosen = [e for e in ends if e.endorser_id in subset]
        expect = bool(mask >> bit & 1)
        if expect:
            assert collect(p, chosen, policy, dev, net.membership)
        else:
            with pytest.raises(PolicyUnsatisfied):
                collect(p, chosen, policy, dev, net.membership)
