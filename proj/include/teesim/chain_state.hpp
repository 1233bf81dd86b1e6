// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include "teesim/tx.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace teesim
{

// Public protocol parameters fixed when the management contract is deployed.
struct SystemParams
{
    std::uint64_t committee_size = 2;      // c, nodes racing per round
    std::uint64_t mkrp = 20;               // management key rotation period
    std::uint64_t transition_window = 4;   // blocks the retired PubK_tx stays
    std::uint64_t subnet_size = 3;         // s, RSTS subnet
    std::uint64_t confirm_threshold = 2;   // t, RSTS confirmations needed
    std::uint64_t min_deposit = 1000;
    std::uint64_t base_fee = 1;            // paid per accepted publish
};

// Small registries clamp the subnet to what exists.
inline std::pair<std::uint64_t, std::uint64_t>
effective_subnet(const SystemParams& params, std::uint64_t n)
{
    auto s = std::min(params.subnet_size, n);
    auto t = std::min(params.confirm_threshold, s);
    return {s, t};
}

struct NodeEntry
{
    Address addr{};                      // host account that registered
    std::array<std::uint8_t, 32> pub{};  // enclave identity PubK_n
    std::uint64_t deposit = 0;
};

struct PrevTxKey
{
    std::uint64_t epoch = 0;
    std::array<std::uint8_t, 32> pub{};
    std::uint64_t expiry_block = 0; // last block where this epoch is accepted
};

struct McState
{
    SystemParams params;
    BlockRef leb;
    bool tx_key_set = false;
    TxKeyAnnouncement tx_key_current;
    std::optional<PrevTxKey> tx_key_previous;
    std::uint64_t last_rotation_block = 0;
    std::vector<NodeEntry> node_list; // ordered by registration, compacted
    std::map<Address, Digest> prog_list;   // H_inf per contract
    std::map<Address, Digest> prog_codes;  // H_code per contract
    std::map<Address, Digest> prog_states; // H_st per contract

    std::optional<std::uint32_t>
    node_index(const Address& a) const
    {
        for (std::uint32_t i = 0; i < node_list.size(); ++i)
            if (node_list[i].addr == a)
                return i;
        return std::nullopt;
    }

    std::vector<std::array<std::uint8_t, 32>>
    registry_pubs() const
    {
        std::vector<std::array<std::uint8_t, 32>> out;
        out.reserve(node_list.size());
        for (const auto& e : node_list)
            out.push_back(e.pub);
        return out;
    }
};

struct DeployRecord
{
    RequestId id;
    Address sender{};
    std::uint64_t key_epoch = 0;
    Bytes enc_code;
    Bytes enc_config;
    std::uint64_t fee = 0;
};

struct RequestRecord
{
    RequestId id;
    Address sender{};
    std::uint64_t key_epoch = 0;
    Bytes enc_input;
    Bytes enc_kres;
    std::uint64_t fee = 0;
};

struct PcState
{
    DeployRecord deployment;
    std::vector<RequestRecord> request_log;
    std::map<RequestId, Bytes> result_log; // write-once
    std::vector<PublicEvent> event_log;
};

inline Bytes
attestation_message(const std::array<std::uint8_t, 32>& nodePub)
{
    ByteWriter w;
    w.str("teesim.attest");
    w.fixed(nodePub);
    return w.take();
}

inline Address
contract_address(const Address& sender, std::uint64_t nonce)
{
    ByteWriter w;
    w.str("teesim.contract");
    w.fixed(sender);
    w.u64(nonce);
    auto d = sha256(as_span(w.data()));
    Address a;
    std::memcpy(a.data(), d.bytes.data(), a.size());
    return a;
}

struct TxResult
{
    bool ok = false;
    std::string reason;   // empty on success
    std::uint64_t cost = 0;
    std::optional<Address> created; // deploy target

    static TxResult
    success()
    {
        return TxResult{true, "", 0, std::nullopt};
    }

    static TxResult
    rejected(std::string why)
    {
        return TxResult{false, std::move(why), 0, std::nullopt};
    }
};

// The complete on-chain world: balances plus the management and program
// contract states. Value-copyable so the ledger can snapshot per block.
struct ChainState
{
    McState mc;
    std::map<Address, PcState> pcs;
    std::map<Address, std::uint64_t> balances;
    std::map<std::uint64_t, std::uint64_t> fees_by_block; // escrowed per block
    std::map<Address, Digest> key_envelopes; // latest envelope blob per node
    // Registry as of each sealed block; publish receipts are validated
    // against the registry the executing enclave actually saw (its end
    // block), not the one at inclusion time.
    std::map<std::uint64_t, std::vector<NodeEntry>> registry_history;
    std::uint64_t remunerations_paid = 0;

    void
    seal_block(std::uint64_t number)
    {
        registry_history[number] = mc.node_list;
    }

    std::uint64_t
    balance(const Address& a) const
    {
        auto it = balances.find(a);
        return it == balances.end() ? 0 : it->second;
    }

    bool
    spend(const Address& a, std::uint64_t amount)
    {
        auto it = balances.find(a);
        if (it == balances.end() || it->second < amount)
            return false;
        it->second -= amount;
        return true;
    }

    void
    credit(const Address& a, std::uint64_t amount)
    {
        balances[a] += amount;
    }
};

using CanonicalHashFn = std::function<std::optional<Digest>(std::uint64_t)>;

namespace chain
{

inline TxResult
apply_register(ChainState& st, const SignedTransaction& tx)
{
    auto p = decode_register(as_span(tx.payload));
    auto& mc = st.mc;
    if (mc.node_index(tx.sender))
        return TxResult::rejected("duplicate registration");
    if (p.deposit < mc.params.min_deposit)
        return TxResult::rejected("insufficient deposit");

    auto msg = attestation_message(p.node_pub);
    if (mc.node_list.empty())
    {
        // Genesis bootstrap: the first node endorses its own quote and must
        // announce the initial request key.
        if (!verify_signature(p.node_pub, as_span(msg), p.attestation))
            return TxResult::rejected("invalid attestation");
        if (!p.initial_tx_key || p.initial_tx_key->epoch != 0)
            return TxResult::rejected("missing key announcement");
        mc.tx_key_current = *p.initial_tx_key;
        mc.tx_key_set = true;
    }
    else
    {
        if (p.initial_tx_key)
            return TxResult::rejected("unexpected key announcement");
        auto idx = mc.node_index(p.attester);
        if (!idx)
            return TxResult::rejected("unknown attester");
        if (!verify_signature(mc.node_list[*idx].pub, as_span(msg),
                              p.attestation))
            return TxResult::rejected("invalid attestation");
    }
    if (!st.spend(tx.sender, p.deposit))
        return TxResult::rejected("insufficient balance");
    mc.node_list.push_back(NodeEntry{tx.sender, p.node_pub, p.deposit});
    return TxResult::success();
}

inline TxResult
apply_withdraw(ChainState& st, const SignedTransaction& tx)
{
    auto& mc = st.mc;
    auto idx = mc.node_index(tx.sender);
    if (!idx)
        return TxResult::rejected("unknown node");
    st.credit(tx.sender, mc.node_list[*idx].deposit);
    // Remaining nodes keep registration order; positions compact.
    mc.node_list.erase(mc.node_list.begin() + *idx);
    return TxResult::success();
}

inline TxResult
apply_deploy(ChainState& st, const SignedTransaction& tx, RequestId id)
{
    auto p = decode_deploy(as_span(tx.payload));
    if (!st.spend(tx.sender, p.fee))
        return TxResult::rejected("insufficient balance");
    auto addr = contract_address(tx.sender, tx.nonce);
    PcState pc;
    pc.deployment =
        DeployRecord{id, tx.sender, p.key_epoch, p.enc_code, p.enc_config,
                     p.fee};
    st.pcs.emplace(addr, std::move(pc));
    st.fees_by_block[id.block] += p.fee;
    auto r = TxResult::success();
    r.created = addr;
    return r;
}

inline TxResult
apply_invoke(ChainState& st, const SignedTransaction& tx, RequestId id)
{
    auto p = decode_invoke(as_span(tx.payload));
    auto it = st.pcs.find(p.pc);
    if (it == st.pcs.end())
        return TxResult::rejected("unknown program contract");
    if (!st.spend(tx.sender, p.fee))
        return TxResult::rejected("insufficient balance");
    it->second.request_log.push_back(RequestRecord{
        id, tx.sender, p.key_epoch, p.enc_input, p.enc_kres, p.fee});
    st.fees_by_block[id.block] += p.fee;
    return TxResult::success();
}

inline TxResult
apply_plain(ChainState& st, const SignedTransaction& tx)
{
    auto p = decode_plain(as_span(tx.payload));
    if (!st.spend(tx.sender, p.amount))
        return TxResult::rejected("insufficient balance");
    st.credit(p.to, p.amount);
    return TxResult::success();
}

// Algorithm-1 Publish: first valid submission for the pending range wins,
// everything else is rejected without side effects.
inline TxResult
apply_publish(ChainState& st, const SignedTransaction& tx,
              std::uint64_t currentBlock, const CanonicalHashFn& canonical)
{
    auto& mc = st.mc;
    auto idx = mc.node_index(tx.sender);
    if (!idx)
        return TxResult::rejected("unregistered node");

    PublishPayload p;
    try
    {
        p = decode_publish(as_span(tx.payload));
    }
    catch (const std::exception&)
    {
        return TxResult::rejected("malformed publish");
    }

    if (!verify_signature(mc.node_list[*idx].pub,
                          as_span(publish_signing_bytes(p)), p.node_sig))
        return TxResult::rejected("bad publish signature");

    if (p.start != mc.leb)
        return TxResult::rejected("stale start block");
    if (p.end.number <= p.start.number || p.end.number >= currentBlock)
        return TxResult::rejected("invalid end block");
    auto canon = canonical(p.end.number);
    if (!canon || *canon != p.end.hash)
        return TxResult::rejected("freshness violation");

    if (p.rotation && p.rotation->epoch != mc.tx_key_current.epoch + 1)
        return TxResult::rejected("bad rotation");

    // Every digest not already on-chain must carry a valid receipt proving
    // threshold-confirmed dissemination. Receipts are checked against the
    // registry at the publish's end block.
    auto histIt = st.registry_history.find(p.end.number);
    if (histIt == st.registry_history.end())
        return TxResult::rejected("invalid end block");
    const auto& registry = histIt->second;
    auto [s, t] = effective_subnet(mc.params, registry.size());
    std::vector<std::array<std::uint8_t, 32>> pubs;
    pubs.reserve(registry.size());
    for (const auto& e : registry)
        pubs.push_back(e.pub);
    std::map<Digest, bool> receiptFor;
    for (const auto& rc : p.receipts)
    {
        if (!verify_receipt(rc, p.end.hash, pubs, s, t))
            return TxResult::rejected("invalid storage receipt");
        receiptFor[rc.blob] = true;
    }
    auto needsReceipt = [&](const std::map<Address, Digest>& recorded,
                            const Address& a, const Digest& d) {
        if (d == Digest{})
            return false; // results-only output, nothing stored
        auto it = recorded.find(a);
        return it == recorded.end() || it->second != d;
    };
    for (const auto& o : p.outputs)
    {
        if (needsReceipt(mc.prog_list, o.contract, o.h_inf) &&
            !receiptFor.count(o.h_inf))
            return TxResult::rejected("missing storage receipt");
        if (needsReceipt(mc.prog_codes, o.contract, o.h_code) &&
            !receiptFor.count(o.h_code))
            return TxResult::rejected("missing storage receipt");
        if (needsReceipt(mc.prog_states, o.contract, o.h_st) &&
            !receiptFor.count(o.h_st))
            return TxResult::rejected("missing storage receipt");
    }
    for (const auto& env : p.envelopes)
        if (!receiptFor.count(env.blob))
            return TxResult::rejected("missing storage receipt");

    // Accepted: commit integrity anchors, results, checkpoint and payment.
    std::uint64_t coveredFees = 0;
    for (auto b = p.start.number + 1; b <= p.end.number; ++b)
    {
        auto it = st.fees_by_block.find(b);
        if (it != st.fees_by_block.end())
            coveredFees += it->second;
    }
    for (const auto& o : p.outputs)
    {
        // All-zero digests mean "results only, no anchor update" (used for
        // requests whose target never produced storable state).
        if (o.h_inf != Digest{})
            mc.prog_list[o.contract] = o.h_inf;
        if (o.h_code != Digest{})
            mc.prog_codes[o.contract] = o.h_code;
        if (o.h_st != Digest{})
            mc.prog_states[o.contract] = o.h_st;
        auto pcIt = st.pcs.find(o.contract);
        if (pcIt != st.pcs.end())
        {
            for (const auto& res : o.results)
                pcIt->second.result_log.emplace(res.request, res.ciphertext);
            for (const auto& ev : o.events)
                pcIt->second.event_log.push_back(ev);
        }
    }
    for (const auto& env : p.envelopes)
        st.key_envelopes[env.recipient] = env.blob;
    if (p.rotation)
    {
        mc.tx_key_previous =
            PrevTxKey{mc.tx_key_current.epoch, mc.tx_key_current.pub,
                      currentBlock + mc.params.transition_window};
        mc.tx_key_current = *p.rotation;
        mc.last_rotation_block = p.end.number;
    }
    mc.leb = p.end;
    st.credit(tx.sender, mc.params.base_fee + coveredFees);
    st.remunerations_paid += 1;
    return TxResult::success();
}

inline TxResult
apply_tx(ChainState& st, const SignedTransaction& tx, RequestId id,
         std::uint64_t currentBlock, const CanonicalHashFn& canonical)
{
    TxResult r;
    switch (tx.kind)
    {
    case TxKind::Register:
        r = apply_register(st, tx);
        break;
    case TxKind::Withdraw:
        r = apply_withdraw(st, tx);
        break;
    case TxKind::DeployPC:
        r = apply_deploy(st, tx, id);
        break;
    case TxKind::InvokePC:
        r = apply_invoke(st, tx, id);
        break;
    case TxKind::Publish:
        r = apply_publish(st, tx, currentBlock, canonical);
        break;
    case TxKind::Plain:
        r = apply_plain(st, tx);
        break;
    }
    r.cost = 100 + tx.payload.size(); // flat base plus bytes stored on-chain
    return r;
}

// Result lookup for callers polling their PC.
enum class ResultStatus
{
    Ready,
    Pending,
    UnknownRequest,
    UnknownContract,
};

inline std::pair<ResultStatus, Bytes>
read_result(const ChainState& st, const Address& pc, RequestId id)
{
    auto it = st.pcs.find(pc);
    if (it == st.pcs.end())
        return {ResultStatus::UnknownContract, {}};
    auto res = it->second.result_log.find(id);
    if (res != it->second.result_log.end())
        return {ResultStatus::Ready, res->second};
    for (const auto& rec : it->second.request_log)
        if (rec.id == id)
            return {ResultStatus::Pending, {}};
    return {ResultStatus::UnknownRequest, {}};
}

}
}
