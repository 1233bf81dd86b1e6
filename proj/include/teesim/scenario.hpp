// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include "teesim/chain_state.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace teesim
{

struct ScenarioError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

// One typed argument in a scenario script. Address arguments name users or
// contracts and are resolved to chain addresses when the action fires.
struct ArgSpec
{
    enum class Kind
    {
        U64,
        Name, // user or contract, resolved to an address
        Str,
        Hex,
    };
    Kind kind = Kind::U64;
    std::uint64_t u64 = 0;
    std::string text;
};

struct ScriptAction
{
    enum class Kind
    {
        Deploy,
        Invoke,
        RespawnNode,
        WithdrawNode,
    };
    Kind kind = Kind::Deploy;
    std::uint64_t at_block = 1;
    std::string user;      // deploy/invoke sender
    std::string contract;  // scenario-local contract name
    std::string program;   // deploy: registered program id
    std::vector<ArgSpec> args;
    std::vector<std::string> acl; // deploy: names added to the ACL
    std::uint64_t ckrp = 1'000'000;
    std::string fn;                       // invoke
    std::optional<std::uint64_t> epoch;   // invoke/deploy: force a key epoch
    std::uint32_t node = 0;               // respawn/withdraw target
};

struct HostFaults
{
    bool drop_output = false;
    std::uint64_t delay_output_ticks = 0;
    std::uint64_t stale_depth = 0; // deliver blocks this many blocks late
    std::optional<std::uint64_t> crash_at_tick;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> offline; // tick spans
    bool withhold_storage = false;
    double flaky_prob = 0.0; // per-round unresponsiveness probability
};

struct NetworkProfile
{
    std::uint64_t min_delay = 1;
    std::uint64_t max_delay = 1;
    std::uint64_t reorder_window = 0; // extra random delivery jitter
};

struct Scenario
{
    std::string name = "unnamed";
    std::uint64_t seed = 1;
    std::uint32_t nodes = 3;
    SystemParams params;
    std::uint64_t block_interval = 12;
    std::uint64_t end_tick = 600;
    std::uint64_t step_limit = 1'000'000;
    std::uint32_t call_depth_limit = 32;
    bool publish_empty_ranges = true;
    std::uint64_t rsts_timeout_ticks = 6;
    std::uint64_t request_fee = 5;
    std::uint64_t deploy_fee = 10;
    std::uint64_t user_funds = 1'000'000;
    NetworkProfile network;
    std::map<std::uint32_t, HostFaults> host_faults;
    std::vector<std::string> users;
    std::vector<ScriptAction> script;
};

namespace scenario_detail
{

using nlohmann::json;

inline ScenarioError
at(const std::string& where, const std::string& what)
{
    return ScenarioError(where + ": " + what);
}

inline std::uint64_t
get_u64(const json& j, const std::string& key, std::uint64_t fallback,
        const std::string& where)
{
    if (!j.contains(key))
        return fallback;
    if (!j[key].is_number_unsigned())
        throw at(where + "." + key, "expected a non-negative integer");
    return j[key].get<std::uint64_t>();
}

inline ArgSpec
parse_arg(const json& j, const std::string& where)
{
    ArgSpec a;
    if (j.is_number_unsigned())
    {
        a.kind = ArgSpec::Kind::U64;
        a.u64 = j.get<std::uint64_t>();
        return a;
    }
    if (!j.is_object() || j.size() != 1)
        throw at(where, "argument must be an unsigned integer or a "
                        "one-key object {u64|name|str|hex: value}");
    auto it = j.begin();
    const auto& key = it.key();
    if (key == "u64")
    {
        a.kind = ArgSpec::Kind::U64;
        a.u64 = it.value().get<std::uint64_t>();
    }
    else if (key == "name")
    {
        a.kind = ArgSpec::Kind::Name;
        a.text = it.value().get<std::string>();
    }
    else if (key == "str")
    {
        a.kind = ArgSpec::Kind::Str;
        a.text = it.value().get<std::string>();
    }
    else if (key == "hex")
    {
        a.kind = ArgSpec::Kind::Hex;
        a.text = it.value().get<std::string>();
        from_hex(a.text); // validate early
    }
    else
        throw at(where, "unknown argument type '" + key + "'");
    return a;
}

}

inline Scenario
scenario_from_json(const nlohmann::json& j)
{
    using namespace scenario_detail;
    Scenario sc;
    if (!j.is_object())
        throw ScenarioError("scenario: top level must be an object");

    sc.name = j.value("name", std::string("unnamed"));
    sc.seed = get_u64(j, "seed", sc.seed, "scenario");
    sc.nodes = static_cast<std::uint32_t>(
        get_u64(j, "nodes", sc.nodes, "scenario"));
    if (sc.nodes == 0)
        throw ScenarioError("scenario.nodes: must be at least 1");
    sc.block_interval =
        get_u64(j, "block_interval", sc.block_interval, "scenario");
    sc.end_tick = get_u64(j, "end_tick", sc.end_tick, "scenario");
    sc.step_limit = get_u64(j, "step_limit", sc.step_limit, "scenario");
    sc.call_depth_limit = static_cast<std::uint32_t>(
        get_u64(j, "call_depth_limit", sc.call_depth_limit, "scenario"));
    sc.publish_empty_ranges =
        j.value("publish_empty_ranges", sc.publish_empty_ranges);
    sc.rsts_timeout_ticks =
        get_u64(j, "rsts_timeout_ticks", sc.rsts_timeout_ticks, "scenario");
    sc.request_fee = get_u64(j, "request_fee", sc.request_fee, "scenario");
    sc.deploy_fee = get_u64(j, "deploy_fee", sc.deploy_fee, "scenario");
    sc.user_funds = get_u64(j, "user_funds", sc.user_funds, "scenario");

    auto& p = sc.params;
    p.committee_size = get_u64(j, "committee_size", p.committee_size,
                               "scenario");
    p.mkrp = get_u64(j, "mkrp", p.mkrp, "scenario");
    p.transition_window =
        get_u64(j, "transition_window", p.transition_window, "scenario");
    p.min_deposit = get_u64(j, "min_deposit", p.min_deposit, "scenario");
    p.base_fee = get_u64(j, "base_fee", p.base_fee, "scenario");
    if (j.contains("rsts"))
    {
        const auto& r = j["rsts"];
        p.subnet_size = get_u64(r, "s", p.subnet_size, "scenario.rsts");
        p.confirm_threshold =
            get_u64(r, "t", p.confirm_threshold, "scenario.rsts");
        if (p.confirm_threshold == 0 ||
            p.confirm_threshold > p.subnet_size)
            throw ScenarioError("scenario.rsts: need 0 < t <= s");
    }
    if (p.committee_size == 0)
        throw ScenarioError("scenario.committee_size: must be at least 1");

    if (j.contains("network"))
    {
        const auto& n = j["network"];
        sc.network.min_delay =
            get_u64(n, "min_delay", sc.network.min_delay, "scenario.network");
        sc.network.max_delay =
            get_u64(n, "max_delay", sc.network.max_delay, "scenario.network");
        sc.network.reorder_window = get_u64(
            n, "reorder_window", sc.network.reorder_window,
            "scenario.network");
        if (sc.network.min_delay > sc.network.max_delay)
            throw ScenarioError(
                "scenario.network: min_delay must be <= max_delay");
    }

    if (j.contains("host_faults"))
    {
        if (!j["host_faults"].is_object())
            throw ScenarioError(
                "scenario.host_faults: expected node-index keyed object");
        for (const auto& [key, v] : j["host_faults"].items())
        {
            auto where = "scenario.host_faults." + key;
            std::uint32_t idx;
            try
            {
                idx = static_cast<std::uint32_t>(std::stoul(key));
            }
            catch (const std::exception&)
            {
                throw at(where, "key must be a node index");
            }
            if (idx >= sc.nodes)
                throw at(where, "node index out of range");
            HostFaults f;
            f.drop_output = v.value("drop_output", false);
            f.delay_output_ticks =
                get_u64(v, "delay_output_ticks", 0, where);
            f.stale_depth = get_u64(v, "stale_depth", 0, where);
            if (v.contains("crash_at_tick"))
                f.crash_at_tick = get_u64(v, "crash_at_tick", 0, where);
            f.withhold_storage = v.value("withhold_storage", false);
            f.flaky_prob = v.value("flaky_prob", 0.0);
            if (f.flaky_prob < 0.0 || f.flaky_prob > 1.0)
                throw at(where, "flaky_prob must be in [0,1]");
            if (v.contains("offline"))
            {
                for (const auto& span : v["offline"])
                {
                    if (!span.is_array() || span.size() != 2)
                        throw at(where + ".offline",
                                 "expected [from_tick, to_tick] pairs");
                    f.offline.emplace_back(span[0].get<std::uint64_t>(),
                                           span[1].get<std::uint64_t>());
                }
            }
            sc.host_faults[idx] = std::move(f);
        }
    }

    if (j.contains("users"))
        for (const auto& u : j["users"])
            sc.users.push_back(u.get<std::string>());

    std::set<std::string> knownUsers(sc.users.begin(), sc.users.end());
    std::set<std::string> knownContracts;
    // Contract addresses are deterministic, so ACLs and arguments may name
    // contracts declared anywhere in the script; only invocation order is
    // checked against declaration order.
    std::set<std::string> allContracts;
    if (j.contains("script"))
        for (const auto& a : j["script"])
            if (a.value("action", std::string()) == "deploy" &&
                a.contains("contract"))
                allContracts.insert(a["contract"].get<std::string>());
    if (j.contains("script"))
    {
        if (!j["script"].is_array())
            throw ScenarioError("scenario.script: expected an array");
        std::size_t i = 0;
        for (const auto& a : j["script"])
        {
            auto where = "scenario.script[" + std::to_string(i++) + "]";
            ScriptAction act;
            act.at_block = get_u64(a, "block", 1, where);
            if (act.at_block == 0)
                throw at(where, "block must be >= 1");
            auto kind = a.value("action", std::string());
            if (kind == "deploy")
            {
                act.kind = ScriptAction::Kind::Deploy;
                act.user = a.value("user", std::string());
                act.contract = a.value("contract", std::string());
                act.program = a.value("program", std::string());
                act.ckrp = get_u64(a, "ckrp", act.ckrp, where);
                if (act.ckrp == 0)
                    throw at(where, "ckrp must be >= 1");
                if (!knownUsers.count(act.user))
                    throw at(where, "unknown user '" + act.user + "'");
                if (act.contract.empty())
                    throw at(where, "deploy needs a contract name");
                if (knownContracts.count(act.contract))
                    throw at(where,
                             "contract '" + act.contract + "' redeclared");
                if (a.contains("init"))
                    for (const auto& arg : a["init"])
                        act.args.push_back(parse_arg(arg, where + ".init"));
                if (a.contains("acl"))
                    for (const auto& m : a["acl"])
                        act.acl.push_back(m.get<std::string>());
                for (const auto& m : act.acl)
                    if (!knownUsers.count(m) && !allContracts.count(m))
                        throw at(where, "acl member '" + m + "' unknown");
                if (a.contains("epoch"))
                    act.epoch = get_u64(a, "epoch", 0, where);
                knownContracts.insert(act.contract);
            }
            else if (kind == "invoke")
            {
                act.kind = ScriptAction::Kind::Invoke;
                act.user = a.value("user", std::string());
                act.contract = a.value("contract", std::string());
                act.fn = a.value("fn", std::string());
                if (!knownUsers.count(act.user))
                    throw at(where, "unknown user '" + act.user + "'");
                if (!knownContracts.count(act.contract))
                    throw at(where, "contract '" + act.contract +
                                        "' invoked before deployment");
                if (act.fn.empty())
                    throw at(where, "invoke needs fn");
                if (a.contains("args"))
                    for (const auto& arg : a["args"])
                        act.args.push_back(parse_arg(arg, where + ".args"));
                if (a.contains("epoch"))
                    act.epoch = get_u64(a, "epoch", 0, where);
            }
            else if (kind == "respawn_node")
            {
                act.kind = ScriptAction::Kind::RespawnNode;
                act.node = static_cast<std::uint32_t>(
                    get_u64(a, "node", 0, where));
                if (act.node >= sc.nodes)
                    throw at(where, "node index out of range");
            }
            else if (kind == "withdraw_node")
            {
                act.kind = ScriptAction::Kind::WithdrawNode;
                act.node = static_cast<std::uint32_t>(
                    get_u64(a, "node", 0, where));
                if (act.node >= sc.nodes)
                    throw at(where, "node index out of range");
            }
            else
                throw at(where, "unknown action '" + kind + "'");
            sc.script.push_back(std::move(act));
        }
    }
    std::stable_sort(sc.script.begin(), sc.script.end(),
                     [](const ScriptAction& a, const ScriptAction& b) {
                         return a.at_block < b.at_block;
                     });
    return sc;
}

inline Scenario
load_scenario(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ScenarioError("cannot open scenario file: " + path);
    nlohmann::json j;
    try
    {
        j = nlohmann::json::parse(in);
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw ScenarioError(path + ": " + e.what());
    }
    try
    {
        return scenario_from_json(j);
    }
    catch (const nlohmann::json::exception& e)
    {
        throw ScenarioError(path + ": " + e.what());
    }
}

}
