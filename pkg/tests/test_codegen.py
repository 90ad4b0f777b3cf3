import pytest

from tabsplus.codegen import (
    CACHE_PREFIX,
    VOTE_TIMEOUT_STEPS,
    compile_package,
    deserialize,
    package_from_dict,
    package_to_dict,
    serialize,
    static_isolation_check,
)
from tabsplus.errors import CorruptPackage, SchemaVersionMismatch
from tabsplus.ledger import MAIN, SIDE


@pytest.fixture(scope="module")
def flat(supply_model):
    return compile_package(supply_model, ["S1", "S2"], "sc-all")


@pytest.fixture(scope="module")
def nested(supply_model):
    return compile_package(supply_model, ["S5", "S1", "S2"], "sc-2m")


# -- method partition and placement -----------------------------------------


def test_method_counts_per_selection(supply_model, flat, nested):
    assert len(flat.methods) == 7
    assert len(nested.methods) == 8
    mixed = compile_package(supply_model, ["S3", "S4", "S5", "S1", "S2"], "sc-2s")
    assert len(mixed.methods) == 10


def test_no_xa_places_everything_on_main(supply_model):
    package = compile_package(supply_model)
    assert package.plan.mechanism == "no-xa"
    assert set(package.deployment.values()) == {MAIN}
    assert set(package.contracts.values()) == {"c1"}
    assert not package.needs_sidechain


def test_sc_all_keeps_txn_methods_in_the_main_contract(flat):
    assert flat.deployment["txn_S1"] == MAIN
    assert flat.contracts["txn_S1"] == "c1"
    assert not flat.needs_sidechain


def test_sc_2m_splits_contracts_not_chains(nested):
    assert nested.deployment["txn_S5"] == MAIN
    assert nested.contracts["txn_S5"] == "c2"
    assert nested.contracts["actor_buyer"] == "c1"
    assert not nested.needs_sidechain


def test_sc_2s_moves_txn_methods_to_the_sidechain(supply_model):
    package = compile_package(supply_model, ["S3"], "sc-2s")
    assert package.deployment["txn_S3"] == SIDE
    assert package.deployment["actor_supplier"] == MAIN
    assert package.needs_sidechain
    assert package.methods_on(SIDE) == ["txn_S3"]


def test_default_mechanism_tracks_the_selection(supply_model):
    assert compile_package(supply_model, ["S1"]).plan.mechanism == "sc-all"
    assert compile_package(supply_model).plan.mechanism == "no-xa"


def test_machine_assignment_covers_every_machine(flat):
    assigned = sorted(mid for mids in flat.method_machines.values() for mid in mids)
    assert assigned == sorted(m.id for m in flat.machines.machines)
    mid = flat.method_machines["txn_S1"][0]
    assert flat.method_of_machine(mid) == "txn_S1"
    assert flat.method("txn_S1").region == "S1"
    with pytest.raises(KeyError):
        flat.method("txn_S99")


# -- woven patterns ---------------------------------------------------------


def test_pattern_roles_follow_nesting(nested):
    assert nested.patterns["S5"].two_pc["role"] == "coordinator"
    assert nested.patterns["S5"].two_pc["children"] == ["S1", "S2"]
    assert nested.patterns["S1"].two_pc == {
        "role": "participant", "children": [], "parent": "S5",
        "vote_timeout": VOTE_TIMEOUT_STEPS, "ack_required": True,
    }


def test_flat_regions_are_plain(flat):
    assert flat.patterns["S1"].two_pc["role"] == "plain"
    assert flat.patterns["S1"].two_pc["parent"] == ""


def test_cache_redirect_hides_keys_and_keeps_run_slots(flat):
    redirect = flat.patterns["S2"].cache_redirect
    assert redirect  # S2 members write ledger state
    for raw, hidden in redirect.items():
        assert hidden.startswith(CACHE_PREFIX)
        assert ("{run}" in raw) == ("{run}" in hidden)
        assert raw.split("/")[0] not in hidden


def test_cache_namespaces_are_disjoint(flat):
    ns1 = set(flat.patterns["S1"].cache_redirect.values())
    ns2 = set(flat.patterns["S2"].cache_redirect.values())
    assert ns1 and ns2 and not (ns1 & ns2)
    assert flat.patterns["S1"].begin["state_key"] != flat.patterns["S2"].begin["state_key"]


def test_access_check_lists_the_region_participants(flat):
    assert flat.patterns["S1"].access_check == ["buyer", "manufacturer", "middleman"]
    assert flat.patterns["S2"].access_check == ["carrier", "middleman", "supplier"]


def test_clean_packages_pass_the_isolation_check(flat, nested):
    assert static_isolation_check(flat) == []
    assert static_isolation_check(nested) == []


def test_isolation_check_flags_tampering(supply_model):
    package = compile_package(supply_model, ["S1", "S2"], "sc-all")
    package.patterns["S1"].access_check = ["buyer"]
    report = static_isolation_check(package)
    assert any(v["reason"].startswith("allowed actors differ") for v in report)

    raw = next(iter(package.patterns["S2"].cache_redirect))
    package.patterns["S2"].cache_redirect[raw] = "naked/key"
    report = static_isolation_check(package)
    assert any(v["reason"] == "cache escape" for v in report)


def test_isolation_check_flags_namespace_overlap(supply_model):
    package = compile_package(supply_model, ["S1", "S2"], "sc-all")
    package.patterns["S2"].begin["state_key"] = package.patterns["S1"].begin["state_key"]
    report = static_isolation_check(package)
    assert any(v["reason"] == "cache namespaces are not disjoint" for v in report)


def test_isolation_check_flags_undeclared_parties(supply_model):
    package = compile_package(supply_model, ["S5", "S1"], "sc-2m")
    package.patterns["S5"].two_pc["children"] = ["S1", "S9"]
    report = static_isolation_check(package)
    assert any("undeclared sub-transactions" in v["reason"] for v in report)


def test_missing_weave_is_reported(supply_model):
    package = compile_package(supply_model, ["S1"], "sc-all")
    package.patterns.pop("S1")
    report = static_isolation_check(package)
    assert report and report[0]["action"] == "weave"


# -- serialization ----------------------------------------------------------


def test_serialize_is_deterministic(supply_model, flat):
    again = compile_package(supply_model, ["S1", "S2"], "sc-all")
    assert serialize(flat) == serialize(again)


def test_package_round_trip(nested):
    raw = serialize(nested)
    back = deserialize(raw)
    assert package_to_dict(back) == package_to_dict(nested)
    assert serialize(back) == raw


def test_bad_bytes_rejected():
    with pytest.raises(CorruptPackage):
        deserialize(b"\xff\xfe")
    with pytest.raises(CorruptPackage):
        deserialize(b'["not", "an", "object"]')


def test_schema_version_checked(flat):
    data = package_to_dict(flat)
    data["schema"] = "tabsplus-package/2"
    with pytest.raises(SchemaVersionMismatch):
        package_from_dict(data)


def test_wiring_is_verified_on_load(flat):
    data = package_to_dict(flat)
    del data["method_machines"]["actor_buyer"]
    with pytest.raises(CorruptPackage):
        package_from_dict(data)

    data = package_to_dict(flat)
    del data["patterns"]["S2"]
    with pytest.raises(CorruptPackage):
        package_from_dict(data)

    data = package_to_dict(flat)
    del data["deployment"]["txn_S1"]
    with pytest.raises(CorruptPackage):
        package_from_dict(data)

    data = package_to_dict(flat)
    data["plan"]["selection"] = ["bogus"]
    with pytest.raises(CorruptPackage):
        package_from_dict(data)
