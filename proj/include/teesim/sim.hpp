// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include "teesim/enclave.hpp"
#include "teesim/scenario.hpp"
#include "teesim/taint.hpp"

#include <json.hpp>

#include <functional>
#include <map>
#include <tuple>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

namespace teesim
{

// Deterministic discrete-event scheduler: events fire in (tick, insertion
// sequence) order, so a run is a pure function of (scenario, seed).
class Scheduler
{
  public:
    void
    at(std::uint64_t tick, std::function<void()> fn)
    {
        mQueue.push(Event{std::max(tick, mNow), mSeq++, std::move(fn)});
    }

    void
    after(std::uint64_t delay, std::function<void()> fn)
    {
        at(mNow + delay, std::move(fn));
    }

    std::uint64_t
    now() const
    {
        return mNow;
    }

    void
    run_until(std::uint64_t endTick)
    {
        while (!mQueue.empty() && mQueue.top().tick <= endTick)
        {
            auto ev = mQueue.top();
            mQueue.pop();
            mNow = ev.tick;
            ev.fn();
        }
        mNow = endTick;
    }

  private:
    struct Event
    {
        std::uint64_t tick;
        std::uint64_t seq;
        std::function<void()> fn;

        bool
        operator>(const Event& o) const
        {
            return std::tie(tick, seq) > std::tie(o.tick, o.seq);
        }
    };

    std::priority_queue<Event, std::vector<Event>, std::greater<>> mQueue;
    std::uint64_t mNow = 0;
    std::uint64_t mSeq = 0;
};

struct RequestMetric
{
    std::size_t index = 0;
    std::string user;
    std::string contract;
    std::string fn; // "(deploy)" for deployments
    bool is_deploy = false;
    std::optional<RequestId> id;
    std::uint64_t submit_block = 0;
    std::optional<std::uint64_t> result_block;
    std::optional<std::string> status; // decoded result status
    std::uint64_t onchain_cost = 0;
    bool chain_accepted = false;
};

struct PublishLogEntry
{
    std::uint64_t block = 0;
    std::uint32_t node = 0;
    std::uint64_t start = 0;
    std::uint64_t end = 0;
    bool accepted = false;
    std::string reason;
    std::size_t outputs = 0;
    bool rotation = false;
};

struct RoundEntry
{
    std::uint64_t round = 0;
    std::uint64_t pending_blocks = 0;
    bool publish_accepted = false;
};

struct RunReport
{
    std::string scenario;
    std::uint64_t seed = 0;
    std::uint64_t end_tick = 0;
    std::uint64_t blocks = 0;
    std::string chain_head_hash;
    std::vector<RequestMetric> requests;
    std::vector<PublishLogEntry> publishes;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> rotations; // (block, epoch)
    std::vector<RoundEntry> rounds;
    std::vector<std::uint64_t> availability_gaps;
    std::map<std::string, std::uint64_t> cost_by_kind;
    std::uint64_t cost_total = 0;
    std::uint64_t remunerations = 0;
    std::map<std::string, std::string> final_state_digests;
    std::size_t taint_secrets = 0;
    std::size_t taint_observations = 0;
    std::vector<TaintLedger::Violation> taint_violations;
    std::vector<std::string> invariant_violations;

    nlohmann::json
    to_json() const
    {
        nlohmann::json j;
        j["schema_version"] = 1;
        j["scenario"] = scenario;
        j["seed"] = seed;
        j["end_tick"] = end_tick;
        j["blocks"] = blocks;
        j["chain_head_hash"] = chain_head_hash;
        j["remunerations"] = remunerations;
        auto reqs = nlohmann::json::array();
        for (const auto& r : requests)
        {
            nlohmann::json q;
            q["index"] = r.index;
            q["user"] = r.user;
            q["contract"] = r.contract;
            q["fn"] = r.fn;
            q["deploy"] = r.is_deploy;
            q["submit_block"] = r.submit_block;
            q["chain_accepted"] = r.chain_accepted;
            if (r.id)
                q["request_id"] = r.id->str();
            if (r.result_block)
            {
                q["result_block"] = *r.result_block;
                q["latency_blocks"] = *r.result_block - r.submit_block;
            }
            if (r.status)
                q["status"] = *r.status;
            q["onchain_cost"] = r.onchain_cost;
            reqs.push_back(std::move(q));
        }
        j["requests"] = std::move(reqs);
        auto pubs = nlohmann::json::array();
        for (const auto& p : publishes)
        {
            nlohmann::json q;
            q["block"] = p.block;
            q["node"] = p.node;
            q["start"] = p.start;
            q["end"] = p.end;
            q["accepted"] = p.accepted;
            q["reason"] = p.reason;
            q["outputs"] = p.outputs;
            q["rotation"] = p.rotation;
            pubs.push_back(std::move(q));
        }
        j["publishes"] = std::move(pubs);
        auto rots = nlohmann::json::array();
        for (const auto& [block, epoch] : rotations)
            rots.push_back({{"block", block}, {"epoch", epoch}});
        j["rotations"] = std::move(rots);
        auto rnds = nlohmann::json::array();
        for (const auto& r : rounds)
            rnds.push_back({{"round", r.round},
                            {"pending_blocks", r.pending_blocks},
                            {"publish_accepted", r.publish_accepted}});
        j["rounds"] = std::move(rnds);
        j["availability_gaps"] = availability_gaps;
        j["cost_by_kind"] = cost_by_kind;
        j["cost_total"] = cost_total;
        j["final_state_digests"] = final_state_digests;
        nlohmann::json taint;
        taint["secrets"] = taint_secrets;
        taint["observations"] = taint_observations;
        auto viols = nlohmann::json::array();
        for (const auto& v : taint_violations)
            viols.push_back({{"secret", v.secret},
                             {"channel", v.channel},
                             {"tick", v.tick}});
        taint["violations"] = std::move(viols);
        j["taint"] = std::move(taint);
        j["invariant_violations"] = invariant_violations;
        return j;
    }
};

// Whole-system simulation: the ledger, the node actors (host + enclave +
// disk), scripted users and the adversary profile, all driven by one seeded
// scheduler. Everything the adversary could observe flows through the taint
// ledger.
class Simulation
{
  public:
    explicit Simulation(Scenario sc)
        : mScenario(std::move(sc)), mRootRng(mScenario.seed),
          mNetRng(mRootRng.split("net")), mLedger(SystemParams{}, {})
    {
        auto nodeRng = mRootRng.split("nodes");

        std::map<Address, std::uint64_t> balances;
        for (const auto& name : mScenario.users)
        {
            UserInfo u;
            u.name = name;
            // Account identity is a function of the name alone, so the same
            // workload produces the same addresses (and the same plaintext
            // contract state) under every run seed. Per-run randomness such
            // as result keys still flows from the seed.
            auto identityRng = DetRng(
                sha256(as_span(to_bytes("teesim.user/" + name))).bytes);
            u.account = Account::generate(identityRng);
            u.rng = mRootRng.split("user-stream", mUsers.size());
            balances[u.account.addr] = mScenario.user_funds;
            mNames[name] = u.account.addr;
            mUsers.push_back(std::move(u));
        }
        for (std::uint32_t i = 0; i < mScenario.nodes; ++i)
        {
            auto node = std::make_unique<NodeActor>();
            node->sim = this;
            node->id = i;
            node->host = Account::generate(nodeRng);
            node->identity = SigningKeyPair::generate(nodeRng);
            auto fit = mScenario.host_faults.find(i);
            if (fit != mScenario.host_faults.end())
                node->faults = fit->second;
            balances[node->host.addr] = mScenario.params.min_deposit * 4;
            mNodes.push_back(std::move(node));
        }

        mEnclaveCfg.params = mScenario.params;
        mEnclaveCfg.genesis_balances = balances;
        mEnclaveCfg.step_limit = mScenario.step_limit;
        mEnclaveCfg.call_depth_limit = mScenario.call_depth_limit;
        mEnclaveCfg.publish_empty_ranges = mScenario.publish_empty_ranges;
        mLedger = Ledger(mScenario.params, balances);

        for (auto& node : mNodes)
        {
            node->enclave =
                std::make_unique<Enclave>(node->identity, mEnclaveCfg);
            mTaint.register_secret("identity-priv/" + std::to_string(node->id),
                                   as_span(node->identity.priv));
        }
        for (auto& u : mUsers)
            mTaint.register_secret("account-priv/" + u.name,
                                   as_span(u.account.keys.priv));

        auto genesisRng = mRootRng.split("genesis-secrets");
        mGenesisAnnouncement =
            mNodes[0]->enclave->generate_initial_secrets(genesisRng);
        mMaster = mNodes[0]->enclave->audit_secrets().master;
        mTaint.register_secret("master-secret", as_span(mMaster));
        mAnnouncements[0] = mGenesisAnnouncement.pub;
        register_request_priv(0);

        for (const auto& [name, addr] : mNames)
            mPublicValues.insert(Bytes(addr.begin(), addr.end()));
        for (const auto& node : mNodes)
            mPublicValues.insert(
                Bytes(node->host.addr.begin(), node->host.addr.end()));

        // Deploy addresses are pure functions of (owner, nonce), and script
        // actions are the only transactions users author, so every contract
        // name can be resolved up front. This lets ACLs and arguments refer
        // to contracts deployed later (mutually referencing deployments).
        std::map<std::string, std::uint64_t> nonces;
        for (const auto& act : mScenario.script)
        {
            if (act.kind == ScriptAction::Kind::RespawnNode ||
                act.kind == ScriptAction::Kind::WithdrawNode)
                continue;
            auto& nonce = nonces[act.user];
            if (act.kind == ScriptAction::Kind::Deploy)
            {
                auto addr = contract_address(mNames.at(act.user), nonce);
                mNames[act.contract] = addr;
                mPublicValues.insert(Bytes(addr.begin(), addr.end()));
            }
            ++nonce;
        }
    }

    void
    run()
    {
        schedule_onboarding();
        schedule_blocks();
        schedule_faults();
        schedule_script();
        mSched.run_until(mScenario.end_tick);
        finalize();
    }

    const RunReport&
    report() const
    {
        return mReport;
    }

    Ledger&
    ledger()
    {
        return mLedger;
    }

    const TaintLedger&
    taint() const
    {
        return mTaint;
    }

    const Scenario&
    scenario() const
    {
        return mScenario;
    }

    std::optional<Address>
    address_of(const std::string& name) const
    {
        auto it = mNames.find(name);
        if (it == mNames.end())
            return std::nullopt;
        return it->second;
    }

    // God-view helpers for tests and report assembly.

    std::optional<ResultPlain>
    decrypt_result(const RequestMetric& metric) const
    {
        if (!metric.id || !metric.result_block)
            return std::nullopt;
        auto addrIt = mNames.find(metric.contract);
        if (addrIt == mNames.end())
            return std::nullopt;
        auto reqIt = mRequestKres.find(*metric.id);
        if (reqIt == mRequestKres.end())
            return std::nullopt;
        auto [status, ct] =
            chain::read_result(mLedger.state(), addrIt->second, *metric.id);
        if (status != chain::ResultStatus::Ready)
            return std::nullopt;
        auto plain =
            aead_decrypt(reqIt->second, as_span(ct),
                         as_span(blob_ad(addrIt->second, 0, KeyRole::Result)));
        return decode_result_plain(as_span(plain));
    }

    std::optional<Digest>
    final_state_digest(const std::string& contractName) const
    {
        auto addrIt = mNames.find(contractName);
        if (addrIt == mNames.end())
            return std::nullopt;
        auto stIt = mLedger.state().mc.prog_states.find(addrIt->second);
        if (stIt == mLedger.state().mc.prog_states.end())
            return std::nullopt;
        auto blob = mShadowStore.get(stIt->second);
        if (!blob)
            return std::nullopt;
        auto [epoch, ct] = decode_epoch_blob(as_span(blob->ciphertext));
        auto key = kdf_symmetric(mMaster, KeyRole::State,
                                 as_span(addrIt->second), epoch);
        auto plain = aead_decrypt(
            key, as_span(ct),
            as_span(blob_ad(addrIt->second, epoch, KeyRole::State)));
        return sha256(plain);
    }

    const BlobStore&
    shadow_store() const
    {
        return mShadowStore;
    }

    std::uint64_t
    current_round() const
    {
        return mSched.now() / mScenario.block_interval;
    }

  private:
    struct UserInfo
    {
        std::string name;
        Account account;
        DetRng rng{0};
    };

    struct PendingPublish
    {
        PublishPayload payload;
        std::vector<StorageBlob> blobs;
        std::map<Digest, std::map<std::uint32_t, StorageAck>> acks;
        std::set<Digest> unsatisfied;
        std::uint64_t round = 0;
        bool submitted = false;
    };

    struct NodeActor : StorageGateway
    {
        Simulation* sim = nullptr;
        std::uint32_t id = 0;
        Account host;
        SigningKeyPair identity; // sealed: survives respawn
        std::unique_ptr<Enclave> enclave;
        BlobStore disk; // host-side persistent storage
        HostFaults faults;
        bool crashed = false;
        std::map<std::uint64_t, Block> backlog;
        std::optional<PendingPublish> pending;

        bool
        offline_at(std::uint64_t tick) const
        {
            for (auto [from, to] : faults.offline)
                if (tick >= from && tick <= to)
                    return true;
            return false;
        }

        bool
        flaky_off(std::uint64_t round) const
        {
            if (faults.flaky_prob <= 0.0)
                return false;
            auto r = DetRng(sim->mScenario.seed)
                         .split("flaky", id)
                         .split("round", round)
                         .uniform01();
            return r < faults.flaky_prob;
        }

        bool
        responsive(std::uint64_t tick) const
        {
            return !crashed && !offline_at(tick) &&
                   !flaky_off(tick / sim->mScenario.block_interval);
        }

        // StorageGateway: own disk first, then any serving peer.
        std::optional<Bytes>
        fetch(const Digest& digest) override
        {
            return sim->fetch_for(*this, digest);
        }
    };

    // ---- wiring ----

    std::uint64_t
    net_delay()
    {
        auto& net = mScenario.network;
        auto d = net.min_delay;
        if (net.max_delay > net.min_delay)
            d += mNetRng.uniform_below(net.max_delay - net.min_delay + 1);
        if (net.reorder_window > 0)
            d += mNetRng.uniform_below(net.reorder_window + 1);
        return d;
    }

    void
    register_request_priv(std::uint64_t epoch)
    {
        auto kp = kdf32(mMaster, "tx-keypair", ByteSpan{}, epoch);
        auto keys = RequestKeyPair::from_seed(kp, epoch);
        mTaint.register_secret("prik-tx/" + std::to_string(epoch),
                               as_span(keys.priv));
    }

    void
    schedule_onboarding()
    {
        // Genesis node registers in block 1 with a self-endorsed quote.
        mSched.at(1, [this] {
            auto& n0 = *mNodes[0];
            RegisterPayload p;
            p.node_pub = n0.identity.pub;
            p.attester = n0.host.addr;
            p.attestation = n0.enclave->endorse(n0.identity.pub);
            p.deposit = mScenario.params.min_deposit;
            p.initial_tx_key = mGenesisAnnouncement;
            submit_tx(n0.host.make_tx(TxKind::Register, encode_register(p)));
        });
        // Everyone else attests with the genesis node after block 1 and
        // receives the shared key material over the attested channel.
        for (std::uint32_t i = 1; i < mScenario.nodes; ++i)
        {
            mSched.at(mScenario.block_interval + 1, [this, i] {
                auto& joiner = *mNodes[i];
                mTaint.observe("p2p/attest-request",
                               as_span(joiner.identity.pub), mSched.now());
                mSched.after(net_delay(), [this, i] {
                    auto& attester = *mNodes[0];
                    auto& joiner = *mNodes[i];
                    if (attester.crashed)
                        return;
                    auto sig =
                        attester.enclave->endorse(joiner.identity.pub);
                    auto envelope =
                        attester.enclave->make_envelope(joiner.identity.pub,
                                                        0);
                    mTaint.observe("p2p/attest-response", as_span(envelope),
                                   mSched.now());
                    mSched.after(net_delay(), [this, i, sig, envelope] {
                        auto& joiner = *mNodes[i];
                        joiner.enclave->install_secrets(as_span(envelope));
                        RegisterPayload p;
                        p.node_pub = joiner.identity.pub;
                        p.attester = mNodes[0]->host.addr;
                        p.attestation = sig;
                        p.deposit = mScenario.params.min_deposit;
                        submit_tx(joiner.host.make_tx(TxKind::Register,
                                                      encode_register(p)));
                    });
                });
            });
        }
    }

    void
    schedule_blocks()
    {
        for (std::uint64_t t = mScenario.block_interval;
             t <= mScenario.end_tick; t += mScenario.block_interval)
            mSched.at(t, [this] { produce_block(); });
    }

    void
    schedule_faults()
    {
        for (std::uint32_t i = 0; i < mScenario.nodes; ++i)
            if (mNodes[i]->faults.crash_at_tick)
                mSched.at(*mNodes[i]->faults.crash_at_tick, [this, i] {
                    mNodes[i]->crashed = true;
                    mNodes[i]->pending.reset();
                });
    }

    void
    schedule_script()
    {
        for (const auto& act : mScenario.script)
        {
            auto tick = (act.at_block - 1) * mScenario.block_interval + 2;
            mSched.at(tick, [this, act] { run_action(act); });
        }
    }

    Bytes
    encode_args(const std::vector<ArgSpec>& args, const std::string& where)
    {
        ByteWriter w;
        for (const auto& a : args)
        {
            switch (a.kind)
            {
            case ArgSpec::Kind::U64:
                w.u64(a.u64);
                break;
            case ArgSpec::Kind::Name:
            {
                auto it = mNames.find(a.text);
                if (it == mNames.end())
                    throw ScenarioError(where + ": unknown name '" + a.text +
                                        "'");
                w.fixed(it->second);
                break;
            }
            case ArgSpec::Kind::Str:
                w.bytes(as_span(a.text));
                break;
            case ArgSpec::Kind::Hex:
                w.raw(as_span(from_hex(a.text)));
                break;
            }
        }
        return w.take();
    }

    // Confidential values inside scripted requests are secrets at their own
    // granularity, so a leak of one field is caught even when the enclosing
    // record never appears verbatim.
    void
    register_arg_secrets(const ScriptAction& act, const std::string& label)
    {
        std::size_t i = 0;
        for (const auto& a : act.args)
        {
            if (a.kind == ArgSpec::Kind::Str)
                mTaint.register_secret(label + "#" + std::to_string(i),
                                       as_span(a.text));
            else if (a.kind == ArgSpec::Kind::Hex)
            {
                auto raw = from_hex(a.text);
                mTaint.register_secret(label + "#" + std::to_string(i),
                                       as_span(raw));
            }
            ++i;
        }
    }

    UserInfo&
    user_by_name(const std::string& name)
    {
        for (auto& u : mUsers)
            if (u.name == name)
                return u;
        throw ScenarioError("unknown user '" + name + "'");
    }

    std::optional<std::array<std::uint8_t, 32>>
    tx_pub_for_epoch(std::uint64_t epoch) const
    {
        auto it = mAnnouncements.find(epoch);
        if (it == mAnnouncements.end())
            return std::nullopt;
        return it->second;
    }

    void
    run_action(const ScriptAction& act)
    {
        switch (act.kind)
        {
        case ScriptAction::Kind::Deploy:
            action_deploy(act);
            break;
        case ScriptAction::Kind::Invoke:
            action_invoke(act);
            break;
        case ScriptAction::Kind::RespawnNode:
            respawn_node(act.node);
            break;
        case ScriptAction::Kind::WithdrawNode:
            submit_tx(mNodes[act.node]->host.make_tx(TxKind::Withdraw, {}));
            break;
        }
    }

    void
    action_deploy(const ScriptAction& act)
    {
        auto& user = user_by_name(act.user);
        auto epoch =
            act.epoch.value_or(mLedger.state().mc.tx_key_current.epoch);
        auto pub = tx_pub_for_epoch(epoch);
        if (!pub)
            throw ScenarioError("deploy: no PubK_tx announced for epoch " +
                                std::to_string(epoch));

        ContractProgram prog{act.program,
                             encode_args(act.args, "deploy init")};
        register_arg_secrets(act, "deploy/" + act.contract);
        auto codePlain = encode_program(prog);
        ByteWriter cfgW;
        std::vector<Address> acl;
        for (const auto& m : act.acl)
        {
            auto it = mNames.find(m);
            if (it == mNames.end())
                throw ScenarioError("deploy acl: unknown name '" + m + "'");
            acl.push_back(it->second);
        }
        cfgW.u32(static_cast<std::uint32_t>(acl.size()));
        for (const auto& a : acl)
            cfgW.fixed(a);
        cfgW.u64(act.ckrp);
        auto configPlain = cfgW.take();

        mTaint.register_secret("code/" + act.contract, as_span(codePlain));
        mTaint.register_secret("config/" + act.contract,
                               as_span(configPlain));

        DeployPcPayload dp;
        dp.key_epoch = epoch;
        dp.enc_code = pk_encrypt(*pub, as_span(codePlain),
                                 user.rng.array<32>());
        dp.enc_config = pk_encrypt(*pub, as_span(configPlain),
                                   user.rng.array<32>());
        dp.fee = mScenario.deploy_fee;

        auto contractAddr = contract_address(user.account.addr,
                                             user.account.next_nonce);
        if (mNames.at(act.contract) != contractAddr)
            throw ScenarioError("deploy: nonce drift for contract '" +
                                act.contract + "'");

        RequestMetric metric;
        metric.index = mReport.requests.size();
        metric.user = act.user;
        metric.contract = act.contract;
        metric.fn = "(deploy)";
        metric.is_deploy = true;
        auto tx = user.account.make_tx(TxKind::DeployPC, encode_deploy(dp));
        mPendingByDigest[tx.digest()] = metric.index;
        mReport.requests.push_back(std::move(metric));
        submit_tx(std::move(tx));
    }

    void
    action_invoke(const ScriptAction& act)
    {
        auto& user = user_by_name(act.user);
        auto epoch =
            act.epoch.value_or(mLedger.state().mc.tx_key_current.epoch);
        auto pub = tx_pub_for_epoch(epoch);
        if (!pub)
            throw ScenarioError("invoke: no PubK_tx announced for epoch " +
                                std::to_string(epoch));
        auto target = mNames.at(act.contract);

        auto inputPlain =
            encode_call(act.fn, as_span(encode_args(act.args, "invoke args")));
        register_arg_secrets(act, "arg/" + act.contract + "/" + act.fn);
        auto kres = derive_fresh_key(KeyRole::Result, 0, user.rng);
        mTaint.register_secret(
            "input/" + act.contract + "/" + std::to_string(
                mReport.requests.size()),
            as_span(inputPlain));
        mTaint.register_secret(
            "kres/" + std::to_string(mReport.requests.size()),
            as_span(kres.bytes));

        InvokePcPayload ip;
        ip.pc = target;
        ip.key_epoch = epoch;
        ip.enc_input =
            pk_encrypt(*pub, as_span(inputPlain), user.rng.array<32>());
        ip.enc_kres =
            pk_encrypt(*pub, as_span(kres.bytes), user.rng.array<32>());
        ip.fee = mScenario.request_fee;

        RequestMetric metric;
        metric.index = mReport.requests.size();
        metric.user = act.user;
        metric.contract = act.contract;
        metric.fn = act.fn;
        auto tx = user.account.make_tx(TxKind::InvokePC, encode_invoke(ip));
        mPendingByDigest[tx.digest()] = metric.index;
        mPendingKres[tx.digest()] = kres;
        mReport.requests.push_back(std::move(metric));
        submit_tx(std::move(tx));
    }

    void
    respawn_node(std::uint32_t idx)
    {
        auto& node = *mNodes[idx];
        node.crashed = false;
        node.pending.reset();
        node.backlog.clear();
        // Fresh enclave, sealed identity, persistent disk. Everything else
        // is rebuilt from public chain data plus the blob store.
        node.enclave = std::make_unique<Enclave>(node.identity, mEnclaveCfg);
        for (std::uint64_t n = 1; n <= mLedger.height(); ++n)
            node.enclave->ingest(mLedger.get_block(n));
        try_bootstrap(node);
    }

    void
    try_bootstrap(NodeActor& node)
    {
        if (node.enclave->has_secrets())
            return;
        auto it = node.enclave->mirror().key_envelopes.find(node.host.addr);
        if (it == node.enclave->mirror().key_envelopes.end())
            return;
        auto env = fetch_for(node, it->second);
        if (env)
            node.enclave->install_secrets(as_span(*env));
    }

    void
    submit_tx(SignedTransaction tx)
    {
        mTaint.observe("chain/tx", as_span(tx.wire_bytes()), mSched.now());
        mLedger.submit(std::move(tx));
    }

    std::optional<Bytes>
    fetch_for(NodeActor& asker, const Digest& digest)
    {
        if (auto blob = asker.disk.get(digest))
            return blob->ciphertext;
        for (auto& peer : mNodes)
        {
            if (peer->id == asker.id || peer->crashed ||
                peer->offline_at(mSched.now()) || peer->faults.withhold_storage)
                continue;
            if (auto blob = peer->disk.get(digest))
            {
                mTaint.observe("p2p/fetch", as_span(blob->ciphertext),
                               mSched.now());
                return blob->ciphertext;
            }
        }
        return std::nullopt;
    }

    // ---- block pipeline ----

    void
    produce_block()
    {
        auto lebBefore = mLedger.state().mc.leb;
        const auto& block = mLedger.produce_block();
        auto number = block.header.number;

        bool anyAccepted = false;
        for (std::uint32_t i = 0; i < block.transactions.size(); ++i)
        {
            const auto& tx = block.transactions[i];
            const auto& res = block.results[i];
            mReport.cost_by_kind[tx_kind_name(tx.kind)] += res.cost;
            mReport.cost_total += res.cost;

            auto pend = mPendingByDigest.find(tx.digest());
            if (pend != mPendingByDigest.end())
            {
                auto& metric = mReport.requests[pend->second];
                metric.id = RequestId{number, i};
                metric.submit_block = number;
                metric.onchain_cost = res.cost;
                metric.chain_accepted = res.ok;
                auto kresIt = mPendingKres.find(tx.digest());
                if (kresIt != mPendingKres.end())
                {
                    mRequestKres[RequestId{number, i}] = kresIt->second;
                    mRequestMetricById[RequestId{number, i}] = pend->second;
                }
            }
            if (tx.kind == TxKind::Publish)
                anyAccepted |= note_publish(tx, res, number);
        }

        // Round bookkeeping: round r's publish window is block r+1.
        if (number >= 2)
        {
            RoundEntry entry;
            entry.round = number - 1;
            entry.pending_blocks = number - 1 - lebBefore.number;
            entry.publish_accepted = anyAccepted;
            mReport.rounds.push_back(entry);
            if (entry.pending_blocks > 0 && !entry.publish_accepted)
                mReport.availability_gaps.push_back(entry.round);
        }

        // Deliver to node hosts; a stale host feeds its enclave late.
        for (auto& node : mNodes)
        {
            auto delay = net_delay() +
                         node->faults.stale_depth * mScenario.block_interval;
            Block copy = block;
            mSched.after(delay, [this, idx = node->id, copy] {
                deliver_block(*mNodes[idx], copy);
            });
        }
    }

    bool
    note_publish(const SignedTransaction& tx, const TxResult& res,
                 std::uint64_t number)
    {
        PublishLogEntry entry;
        entry.block = number;
        entry.accepted = res.ok;
        entry.reason = res.reason;
        for (std::uint32_t n = 0; n < mNodes.size(); ++n)
            if (mNodes[n]->host.addr == tx.sender)
                entry.node = n;
        PublishPayload payload;
        try
        {
            payload = decode_publish(as_span(tx.payload));
            entry.start = payload.start.number;
            entry.end = payload.end.number;
            entry.outputs = payload.outputs.size();
            entry.rotation = payload.rotation.has_value();
        }
        catch (const std::exception&)
        {
        }
        mReport.publishes.push_back(entry);
        if (!res.ok)
            return false;

        mReport.remunerations += 1;
        // Tiling invariant: each accepted range starts where the last ended.
        if (mLastAcceptedEnd && payload.start.number != *mLastAcceptedEnd)
            mReport.invariant_violations.push_back(
                "publish at block " + std::to_string(number) +
                " breaks LEB tiling");
        mLastAcceptedEnd = payload.end.number;

        if (payload.rotation)
        {
            mAnnouncements[payload.rotation->epoch] = payload.rotation->pub;
            mReport.rotations.emplace_back(number, payload.rotation->epoch);
            register_request_priv(payload.rotation->epoch);
        }
        for (const auto& out : payload.outputs)
        {
            register_contract_secrets(out);
            for (const auto& rec : out.results)
            {
                auto [it, fresh] =
                    mResultFirstSeen.emplace(rec.request, sha256(rec.ciphertext));
                if (!fresh && it->second != sha256(rec.ciphertext))
                    mReport.invariant_violations.push_back(
                        "result for " + rec.request.str() + " rewritten");
                auto mIt = mRequestMetricById.find(rec.request);
                if (mIt != mRequestMetricById.end())
                {
                    auto& metric = mReport.requests[mIt->second];
                    if (!metric.result_block)
                    {
                        metric.result_block = number;
                        if (auto plain = decrypt_result(metric))
                            metric.status = vm_status_name(plain->status);
                    }
                }
            }
        }
        // Covered requests without a result record (deploys, or requests
        // whose result key was unrecoverable) complete here.
        std::set<Address> outputContracts;
        for (const auto& out : payload.outputs)
            outputContracts.insert(out.contract);
        for (auto& metric : mReport.requests)
        {
            if (!metric.id || metric.result_block || !metric.chain_accepted)
                continue;
            if (metric.id->block <= payload.start.number ||
                metric.id->block > payload.end.number)
                continue;
            metric.result_block = number;
            if (metric.is_deploy)
            {
                auto addr = mNames.at(metric.contract);
                metric.status = outputContracts.count(addr)
                                    ? "deployed"
                                    : "deploy rejected";
            }
            else
                metric.status = "rejected";
        }
        return true;
    }

    // God view: whenever new ciphertext anchors land on-chain, their
    // plaintexts (decrypted with derived keys) become registered secrets so
    // the taint sweep can catch any later exposure.
    void
    register_contract_secrets(const ContractOutput& out)
    {
        auto blob = mShadowStore.get(out.h_st);
        if (blob)
        {
            try
            {
                auto [epoch, ct] = decode_epoch_blob(as_span(blob->ciphertext));
                auto key = kdf_symmetric(mMaster, KeyRole::State,
                                         as_span(out.contract), epoch);
                auto plain = aead_decrypt(
                    key, as_span(ct),
                    as_span(blob_ad(out.contract, epoch, KeyRole::State)));
                auto tag = to_hex(as_span(out.contract)).substr(0, 8);
                mTaint.register_secret("state/" + tag, as_span(plain));
                mTaint.register_secret("kst/" + tag, as_span(key.bytes));
                auto codeKey = kdf_symmetric(mMaster, KeyRole::Code,
                                             as_span(out.contract), 0);
                mTaint.register_secret("kcode/" + tag,
                                       as_span(codeKey.bytes));
                // Individual state values too, so partial dumps match.
                // Values equal to public identities (addresses) are not
                // confidential and would false-positive on every tx.
                ByteReader r(as_span(plain));
                auto entries = r.u32();
                for (std::uint32_t i = 0; i < entries; ++i)
                {
                    r.bytes(); // key
                    auto value = r.bytes();
                    if (!mPublicValues.count(value))
                        mTaint.register_secret("state-value/" + tag,
                                               as_span(value));
                }
            }
            catch (const std::exception&)
            {
            }
        }
        auto inf = mShadowStore.get(out.h_inf);
        if (inf)
        {
            try
            {
                auto [epoch, ct] = decode_epoch_blob(as_span(inf->ciphertext));
                auto key = kdf_symmetric(mMaster, KeyRole::Info, ByteSpan{},
                                         epoch);
                auto plain = aead_decrypt(
                    key, as_span(ct),
                    as_span(blob_ad(out.contract, epoch, KeyRole::Info)));
                mTaint.register_secret(
                    "infop/" + to_hex(as_span(out.contract)).substr(0, 8),
                    as_span(plain));
                mTaint.register_secret("kinf/" + std::to_string(epoch),
                                       as_span(key.bytes));
            }
            catch (const std::exception&)
            {
            }
        }
    }

    void
    deliver_block(NodeActor& node, const Block& block)
    {
        if (node.crashed)
            return;
        node.backlog[block.header.number] = block;
        if (node.offline_at(mSched.now()))
            return; // catches up at the next delivery
        drain_and_act(node);
    }

    void
    drain_and_act(NodeActor& node)
    {
        bool progressed = false;
        for (;;)
        {
            auto next = node.enclave->last_verified().number + 1;
            auto it = node.backlog.find(next);
            if (it == node.backlog.end())
                break;
            if (node.enclave->ingest(it->second) != BlockVerdict::Verified)
            {
                node.backlog.erase(it);
                break;
            }
            node.backlog.erase(it);
            progressed = true;
        }
        if (!progressed)
            return;
        try_bootstrap(node);
        act_on_head(node);
    }

    void
    act_on_head(NodeActor& node)
    {
        if (!node.responsive(mSched.now()))
            return;
        auto head = node.enclave->last_verified();
        if (head.number == 0)
            return;
        if (!node.enclave->has_secrets())
            return;
        if (!node.enclave->selected(head.hash))
            return;

        std::string why;
        auto bundle = node.enclave->execute_range(head.number, *mNodes[node.id],
                                                  &why);
        if (!bundle)
            return;

        PendingPublish pending;
        pending.payload = std::move(bundle->payload);
        pending.blobs = std::move(bundle->blobs);
        pending.round = head.number;
        auto n = node.enclave->mirror().mc.node_list.size();
        auto [s, t] = effective_subnet(mScenario.params, n);

        bool withholding = node.faults.withhold_storage;
        for (const auto& blob : pending.blobs)
        {
            if (!withholding)
                node.disk.put(blob);
            mShadowStore.put(blob); // god copy for audits
            pending.unsatisfied.insert(blob.digest);
            auto subnet = select_subnet(pending.payload.end.hash, blob.digest,
                                        n, s);
            for (auto member : subnet)
            {
                const auto& pub =
                    node.enclave->mirror().mc.node_list[member].pub;
                auto peer = node_by_identity(pub);
                if (!peer)
                    continue;
                if (withholding && !(*peer)->faults.withhold_storage)
                    continue; // coalition keeps honest members in the dark
                mTaint.observe("p2p/blob", as_span(blob.ciphertext),
                               mSched.now());
                auto delay = net_delay();
                StorageBlob copy = blob;
                mSched.after(delay,
                             [this, peerId = (*peer)->id,
                              origin = node.id, copy] {
                                 on_store_request(*mNodes[peerId], origin,
                                                  copy);
                             });
            }
        }
        node.pending = std::move(pending);
        if (node.pending->unsatisfied.empty())
        {
            finalize_pending(node); // nothing to disseminate this round
            return;
        }
        mSched.after(mScenario.rsts_timeout_ticks, [this, idx = node.id,
                                                    round = head.number] {
            auto& n = *mNodes[idx];
            if (n.pending && n.pending->round == round &&
                !n.pending->unsatisfied.empty())
                n.pending.reset(); // insufficient confirmations this round
        });
    }

    std::optional<NodeActor*>
    node_by_identity(const std::array<std::uint8_t, 32>& pub)
    {
        for (auto& n : mNodes)
            if (n->identity.pub == pub)
                return n.get();
        return std::nullopt;
    }

    void
    on_store_request(NodeActor& peer, std::uint32_t origin,
                     const StorageBlob& blob)
    {
        if (!peer.responsive(mSched.now()))
            return;
        if (!peer.faults.withhold_storage)
            peer.disk.put(blob);
        // Acknowledge receipt, signed with the TEE identity.
        auto idx = peer.enclave->my_index();
        if (!idx)
            return;
        StorageAck ack{*idx, peer.enclave->ack_blob(blob.digest)};
        ByteWriter obs;
        obs.u32(ack.node_index);
        obs.fixed(ack.signature);
        mTaint.observe("p2p/ack", as_span(obs.data()), mSched.now());
        mSched.after(net_delay(), [this, origin, digest = blob.digest, ack] {
            on_ack(*mNodes[origin], digest, ack);
        });
    }

    void
    on_ack(NodeActor& node, const Digest& digest, const StorageAck& ack)
    {
        if (node.crashed || !node.pending || node.pending->submitted)
            return;
        auto& pending = *node.pending;
        if (!pending.unsatisfied.count(digest))
            return;
        pending.acks[digest][ack.node_index] = ack;
        auto hist = node.enclave->mirror().registry_history.find(
            pending.payload.end.number);
        if (hist == node.enclave->mirror().registry_history.end())
            return;
        auto [s, t] = effective_subnet(mScenario.params, hist->second.size());
        if (pending.acks[digest].size() < t)
            return;
        pending.unsatisfied.erase(digest);
        if (pending.unsatisfied.empty())
            finalize_pending(node);
    }

    // All blobs confirmed: attach receipts, sign and submit.
    void
    finalize_pending(NodeActor& node)
    {
        auto& pending = *node.pending;
        auto hist = node.enclave->mirror().registry_history.find(
            pending.payload.end.number);
        if (hist == node.enclave->mirror().registry_history.end())
            return;
        auto n = hist->second.size();
        auto [s, t] = effective_subnet(mScenario.params, n);
        for (const auto& blob : pending.blobs)
        {
            RstsReceipt rc;
            rc.blob = blob.digest;
            rc.subnet = select_subnet(pending.payload.end.hash, blob.digest,
                                      n, s);
            for (const auto& [idx, a] : pending.acks[blob.digest])
                rc.confirmations.push_back(a);
            pending.payload.receipts.push_back(std::move(rc));
        }
        pending.payload.node_sig =
            node.enclave->sign_payload(pending.payload);
        pending.submitted = true;
        if (node.faults.drop_output)
            return;
        auto delay = net_delay() + node.faults.delay_output_ticks;
        auto tx = node.host.make_tx(TxKind::Publish,
                                    encode_publish(pending.payload));
        mSched.after(delay,
                     [this, tx = std::move(tx)]() mutable {
                         submit_tx(std::move(tx));
                     });
    }

    // ---- end of run ----

    void
    finalize()
    {
        mReport.scenario = mScenario.name;
        mReport.seed = mScenario.seed;
        mReport.end_tick = mScenario.end_tick;
        mReport.blocks = mLedger.height();
        mReport.chain_head_hash = mLedger.chain_head().hash.hex();

        for (const auto& [name, addr] : mNames)
        {
            if (!mLedger.state().pcs.count(addr))
                continue;
            if (auto digest = final_state_digest(name))
                mReport.final_state_digests[name] = digest->hex();
        }
        if (mLedger.state().remunerations_paid != mReport.remunerations)
            mReport.invariant_violations.push_back(
                "remuneration count mismatch");

        mReport.taint_secrets = mTaint.secret_count();
        mReport.taint_observations = mTaint.observation_count();
        mReport.taint_violations = mTaint.scan();
    }

    Scenario mScenario;
    DetRng mRootRng;
    DetRng mNetRng;
    Scheduler mSched;
    Ledger mLedger;
    TaintLedger mTaint;
    EnclaveConfig mEnclaveCfg;
    std::vector<std::unique_ptr<NodeActor>> mNodes;
    std::vector<UserInfo> mUsers;
    std::map<std::string, Address> mNames;
    std::set<Bytes> mPublicValues; // known public identities, never secrets
    std::map<std::uint64_t, std::array<std::uint8_t, 32>> mAnnouncements;
    TxKeyAnnouncement mGenesisAnnouncement;
    std::array<std::uint8_t, 32> mMaster{};
    BlobStore mShadowStore;
    std::map<Digest, std::size_t> mPendingByDigest;
    std::map<Digest, SymmetricKey> mPendingKres;
    std::map<RequestId, SymmetricKey> mRequestKres;
    std::map<RequestId, std::size_t> mRequestMetricById;
    std::map<RequestId, Digest> mResultFirstSeen;
    std::optional<std::uint64_t> mLastAcceptedEnd;
    RunReport mReport;
};

// Per-block JSON line for the chain dump.
inline nlohmann::json
chain_dump_line(const Block& b)
{
    nlohmann::json j;
    j["number"] = b.header.number;
    j["hash"] = b.header.block_hash.hex();
    j["parent"] = b.header.parent_hash.hex();
    j["merkle_root"] = b.header.merkle_root.hex();
    auto txs = nlohmann::json::array();
    for (std::size_t i = 0; i < b.transactions.size(); ++i)
    {
        const auto& tx = b.transactions[i];
        nlohmann::json t;
        t["kind"] = tx_kind_name(tx.kind);
        t["sender"] = address_hex(tx.sender);
        t["nonce"] = tx.nonce;
        t["ok"] = b.results[i].ok;
        if (!b.results[i].ok)
            t["reason"] = b.results[i].reason;
        t["cost"] = b.results[i].cost;
        txs.push_back(std::move(t));
    }
    j["transactions"] = std::move(txs);
    return j;
}

// Per-block MC/PC snapshot for the audit trail.
inline nlohmann::json
state_snapshot(const ChainState& st)
{
    nlohmann::json j;
    j["leb"] = {{"number", st.mc.leb.number},
                {"hash", st.mc.leb.hash.hex()}};
    j["tx_key_epoch"] = st.mc.tx_key_current.epoch;
    j["nodes"] = st.mc.node_list.size();
    j["remunerations"] = st.remunerations_paid;
    auto progs = nlohmann::json::object();
    for (const auto& [addr, hInf] : st.mc.prog_list)
    {
        nlohmann::json p;
        p["h_inf"] = hInf.hex();
        auto c = st.mc.prog_codes.find(addr);
        if (c != st.mc.prog_codes.end())
            p["h_code"] = c->second.hex();
        auto s = st.mc.prog_states.find(addr);
        if (s != st.mc.prog_states.end())
            p["h_st"] = s->second.hex();
        auto pcIt = st.pcs.find(addr);
        if (pcIt != st.pcs.end())
        {
            p["requests"] = pcIt->second.request_log.size();
            p["results"] = pcIt->second.result_log.size();
        }
        progs[address_hex(addr)] = std::move(p);
    }
    j["programs"] = std::move(progs);
    return j;
}

}
