"""Scenario file parsing: strict sections, delay models, fault lists."""

import pytest

from bftsim.replica import ConfigError
from bftsim.scenario import parse_int_list, parse_scenario
from bftsim.simnet import (
    Asynchronous,
    Crash,
    Equivocate,
    MuteLeader,
    PartialSynchrony,
    Synchronous,
)

FULL = """
[protocol]
n = 7
f = 2
variant = two_chain
pacemaker = async_fallback
timeout_duration = 45
leader_rotation_period = 2

[adversary]
model = partial_synchrony
gst = 150
delta = 3
pre_gst_delay_bound = 25
faults = 0:crash@100, 5:mute_leader

[run]
horizon = 500
seed = 11
seeds = 1..4
out = results
inject_conflicting_commit = false

[sweep]
n_values = 4, 7, 10
seeds = 2,4
"""


def write(tmp_path, text, name="s.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_full_scenario_parses(tmp_path):
    sc = parse_scenario(write(tmp_path, FULL))
    assert sc.protocol.n == 7 and sc.protocol.f == 2
    assert sc.protocol.variant == "two_chain"
    assert sc.protocol.timeout_duration == 45
    assert sc.protocol.leader_rotation_period == 2
    assert sc.protocol.run_seed == 11
    assert sc.adversary.model == PartialSynchrony(150, 3, 25)
    assert sc.adversary.faults == ((0, Crash(100)), (5, MuteLeader()))
    assert sc.horizon == 500 and sc.seed == 11
    assert sc.seeds == [1, 2, 3, 4]
    assert sc.out_dir == "results"
    assert sc.inject_conflicting_commit is False
    assert sc.sweep_n == [4, 7, 10] and sc.sweep_seeds == [2, 4]


def test_minimal_scenario_defaults(tmp_path):
    sc = parse_scenario(write(tmp_path, """
[protocol]
n = 4
f = 1

[adversary]
model = synchronous

[run]
horizon = 100
"""))
    assert sc.protocol.variant == "three_chain"
    assert sc.protocol.pacemaker == "async_fallback"
    assert sc.adversary.model == Synchronous(1)
    assert sc.adversary.faults == ()
    assert sc.seed == 1 and sc.seeds == [1]
    assert sc.out_dir is None
    assert sc.sweep_n == [] and sc.sweep_seeds == []


def test_asynchronous_model_with_per_variant_delays(tmp_path):
    sc = parse_scenario(write(tmp_path, """
[protocol]
n = 4
f = 1

[adversary]
model = asynchronous
base_delay = 1..8
delay_proposal = 60..120
delay_vote = 2..5

[run]
horizon = 100
"""))
    m = sc.adversary.model
    assert isinstance(m, Asynchronous)
    assert m.base_delay == (1, 8)
    assert dict(m.per_variant) == {"proposal": (60, 120), "vote": (2, 5)}


def test_fault_kinds_parse(tmp_path):
    sc = parse_scenario(write(tmp_path, """
[protocol]
n = 7
f = 2

[adversary]
model = synchronous
faults = 1:equivocate, 3:crash@77

[run]
horizon = 50
"""))
    assert sc.adversary.faults == ((1, Equivocate()), (3, Crash(77)))


def test_with_seed_rebinds_protocol_seed(tmp_path):
    sc = parse_scenario(write(tmp_path, FULL))
    sc9 = sc.with_seed(9)
    assert sc9.seed == 9 and sc9.protocol.run_seed == 9
    assert sc.seed == 11  # original untouched


def test_parse_int_list():
    assert parse_int_list("1..5") == [1, 2, 3, 4, 5]
    assert parse_int_list("7") == [7]
    assert parse_int_list("3, 5, 9") == [3, 5, 9]
    with pytest.raises(ConfigError):
        parse_int_list("5..1")
    with pytest.raises(ConfigError):
        parse_int_list("a,b")


@pytest.mark.parametrize("mutation,needle", [
    ("[protocol]\nn = 5\nf = 1", "3f+1"),
    ("[protocol]\nn = 4\nf = 1\nbogus = 1", "bogus"),
    ("[protocol]\nn = 4\nf = 1\n\n[mystery]\nx = 1", "mystery"),
])
def test_bad_scenarios_rejected(tmp_path, mutation, needle):
    text = mutation + """

[adversary]
model = synchronous

[run]
horizon = 100
"""
    with pytest.raises(ConfigError) as err:
        parse_scenario(write(tmp_path, text))
    assert needle in str(err.value)


def test_missing_required_pieces_rejected(tmp_path):
    with pytest.raises(ConfigError):
        parse_scenario(write(tmp_path, "[protocol]\nn = 4\nf = 1\n"))
    with pytest.raises(ConfigError):
        parse_scenario(write(tmp_path, """
[protocol]
n = 4
f = 1

[adversary]
model = synchronous

[run]
seed = 2
"""))
    with pytest.raises(ConfigError):
        parse_scenario(write(tmp_path, """
[protocol]
n = 4
f = 1

[adversary]
model = warp_drive

[run]
horizon = 10
"""))
    # partial synchrony without gst
    with pytest.raises(ConfigError):
        parse_scenario(write(tmp_path, """
[protocol]
n = 4
f = 1

[adversary]
model = partial_synchrony

[run]
horizon = 10
"""))


def test_too_many_faults_rejected(tmp_path):
    with pytest.raises(ConfigError):
        parse_scenario(write(tmp_path, """
[protocol]
n = 4
f = 1

[adversary]
model = synchronous
faults = 0:crash@5, 1:mute_leader

[run]
horizon = 10
"""))


def test_unreadable_file_rejected():
    with pytest.raises(ConfigError):
        parse_scenario("/nonexistent/scenario.ini")
