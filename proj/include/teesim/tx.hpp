// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include "teesim/crypto.hpp"
#include "teesim/storage.hpp"

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace teesim
{

using Address = std::array<std::uint8_t, 20>;

inline Address
address_from_pub(const std::array<std::uint8_t, 32>& pub)
{
    auto d = sha256(as_span(pub));
    Address a;
    std::memcpy(a.data(), d.bytes.data(), a.size());
    return a;
}

inline std::string
address_hex(const Address& a)
{
    return to_hex(as_span(a));
}

inline Address
address_from_hex(std::string_view h)
{
    auto raw = from_hex(h);
    if (raw.size() != 20)
        throw std::invalid_argument("address hex must be 20 bytes");
    Address a;
    std::memcpy(a.data(), raw.data(), 20);
    return a;
}

struct BlockRef
{
    std::uint64_t number = 0;
    Digest hash;

    auto operator<=>(const BlockRef&) const = default;
};

struct RequestId
{
    std::uint64_t block = 0;
    std::uint32_t index = 0;

    auto operator<=>(const RequestId&) const = default;

    std::string
    str() const
    {
        return std::to_string(block) + ":" + std::to_string(index);
    }
};

enum class TxKind : std::uint8_t
{
    Register = 0,
    Withdraw = 1,
    DeployPC = 2,
    InvokePC = 3,
    Publish = 4,
    Plain = 5,
};

inline const char*
tx_kind_name(TxKind k)
{
    switch (k)
    {
    case TxKind::Register:
        return "register";
    case TxKind::Withdraw:
        return "withdraw";
    case TxKind::DeployPC:
        return "deploy_pc";
    case TxKind::InvokePC:
        return "invoke_pc";
    case TxKind::Publish:
        return "publish";
    case TxKind::Plain:
        return "plain";
    }
    return "?";
}

// ---- payload bodies ----

struct TxKeyAnnouncement
{
    std::uint64_t epoch = 0;
    std::array<std::uint8_t, 32> pub{};
};

struct RegisterPayload
{
    std::array<std::uint8_t, 32> node_pub{};
    // Attestation: endorsement of node_pub signed by an already-registered
    // node's identity key. The genesis node endorses itself.
    Address attester{};
    Signature attestation{};
    std::uint64_t deposit = 0;
    // Only the genesis registration announces the initial request key.
    std::optional<TxKeyAnnouncement> initial_tx_key;
};

struct DeployPcPayload
{
    std::uint64_t key_epoch = 0;
    Bytes enc_code;   // under PubK_tx[key_epoch]
    Bytes enc_config; // under PubK_tx[key_epoch]
    std::uint64_t fee = 0;
};

struct InvokePcPayload
{
    Address pc{};
    std::uint64_t key_epoch = 0;
    Bytes enc_input; // under PubK_tx[key_epoch]
    Bytes enc_kres;  // under PubK_tx[key_epoch]
    std::uint64_t fee = 0;
};

struct PlainPayload
{
    Address to{};
    std::uint64_t amount = 0;
};

struct ResultRecord
{
    RequestId request;
    Bytes ciphertext; // under the caller's K_res
};

// Plaintext log line a contract chose to publish. This is the one unencrypted
// output channel; a contract that routes secrets here leaks them by design.
struct PublicEvent
{
    RequestId request;
    Bytes topic;
    Bytes data;
};

struct ContractOutput
{
    Address contract{};
    Digest h_inf;
    Digest h_code;
    Digest h_st;
    std::vector<ResultRecord> results;
    std::vector<PublicEvent> events;
};

struct KeyEnvelopeRef
{
    Address recipient{};
    Digest blob;
};

struct PublishPayload
{
    BlockRef start; // must equal the recorded LEB
    BlockRef end;   // last block covered; hash checked against the chain
    std::vector<ContractOutput> outputs;
    std::optional<TxKeyAnnouncement> rotation;
    std::vector<RstsReceipt> receipts;
    std::vector<KeyEnvelopeRef> envelopes;
    Signature node_sig{};
};

// ---- canonical encodings ----

inline void
write_block_ref(ByteWriter& w, const BlockRef& r)
{
    w.u64(r.number);
    w.fixed(r.hash.bytes);
}

inline BlockRef
read_block_ref(ByteReader& r)
{
    BlockRef b;
    b.number = r.u64();
    b.hash.bytes = r.fixed<32>();
    return b;
}

inline void
write_request_id(ByteWriter& w, const RequestId& id)
{
    w.u64(id.block);
    w.u32(id.index);
}

inline RequestId
read_request_id(ByteReader& r)
{
    RequestId id;
    id.block = r.u64();
    id.index = r.u32();
    return id;
}

inline Bytes
encode_register(const RegisterPayload& p)
{
    ByteWriter w;
    w.fixed(p.node_pub);
    w.fixed(p.attester);
    w.fixed(p.attestation);
    w.u64(p.deposit);
    w.u8(p.initial_tx_key ? 1 : 0);
    if (p.initial_tx_key)
    {
        w.u64(p.initial_tx_key->epoch);
        w.fixed(p.initial_tx_key->pub);
    }
    return w.take();
}

inline RegisterPayload
decode_register(ByteSpan data)
{
    ByteReader r(data);
    RegisterPayload p;
    p.node_pub = r.fixed<32>();
    p.attester = r.fixed<20>();
    p.attestation = r.fixed<64>();
    p.deposit = r.u64();
    if (r.u8())
    {
        TxKeyAnnouncement a;
        a.epoch = r.u64();
        a.pub = r.fixed<32>();
        p.initial_tx_key = a;
    }
    return p;
}

inline Bytes
encode_deploy(const DeployPcPayload& p)
{
    ByteWriter w;
    w.u64(p.key_epoch);
    w.bytes(as_span(p.enc_code));
    w.bytes(as_span(p.enc_config));
    w.u64(p.fee);
    return w.take();
}

inline DeployPcPayload
decode_deploy(ByteSpan data)
{
    ByteReader r(data);
    DeployPcPayload p;
    p.key_epoch = r.u64();
    p.enc_code = r.bytes();
    p.enc_config = r.bytes();
    p.fee = r.u64();
    return p;
}

inline Bytes
encode_invoke(const InvokePcPayload& p)
{
    ByteWriter w;
    w.fixed(p.pc);
    w.u64(p.key_epoch);
    w.bytes(as_span(p.enc_input));
    w.bytes(as_span(p.enc_kres));
    w.u64(p.fee);
    return w.take();
}

inline InvokePcPayload
decode_invoke(ByteSpan data)
{
    ByteReader r(data);
    InvokePcPayload p;
    p.pc = r.fixed<20>();
    p.key_epoch = r.u64();
    p.enc_input = r.bytes();
    p.enc_kres = r.bytes();
    p.fee = r.u64();
    return p;
}

inline Bytes
encode_plain(const PlainPayload& p)
{
    ByteWriter w;
    w.fixed(p.to);
    w.u64(p.amount);
    return w.take();
}

inline PlainPayload
decode_plain(ByteSpan data)
{
    ByteReader r(data);
    PlainPayload p;
    p.to = r.fixed<20>();
    p.amount = r.u64();
    return p;
}

inline void
write_receipt(ByteWriter& w, const RstsReceipt& rc)
{
    w.fixed(rc.blob.bytes);
    w.u32(static_cast<std::uint32_t>(rc.subnet.size()));
    for (auto m : rc.subnet)
        w.u32(m);
    w.u32(static_cast<std::uint32_t>(rc.confirmations.size()));
    for (const auto& ack : rc.confirmations)
    {
        w.u32(ack.node_index);
        w.fixed(ack.signature);
    }
}

inline RstsReceipt
read_receipt(ByteReader& r)
{
    RstsReceipt rc;
    rc.blob.bytes = r.fixed<32>();
    auto ns = r.u32();
    for (std::uint32_t i = 0; i < ns; ++i)
        rc.subnet.push_back(r.u32());
    auto na = r.u32();
    for (std::uint32_t i = 0; i < na; ++i)
    {
        StorageAck a;
        a.node_index = r.u32();
        a.signature = r.fixed<64>();
        rc.confirmations.push_back(a);
    }
    return rc;
}

// Everything except node_sig; this is both the wire body and the freshness
// proof the node signs (start/end refs bind the output to the exact chain
// segment processed).
inline Bytes
publish_signing_bytes(const PublishPayload& p)
{
    ByteWriter w;
    write_block_ref(w, p.start);
    write_block_ref(w, p.end);
    w.u32(static_cast<std::uint32_t>(p.outputs.size()));
    for (const auto& o : p.outputs)
    {
        w.fixed(o.contract);
        w.fixed(o.h_inf.bytes);
        w.fixed(o.h_code.bytes);
        w.fixed(o.h_st.bytes);
        w.u32(static_cast<std::uint32_t>(o.results.size()));
        for (const auto& res : o.results)
        {
            write_request_id(w, res.request);
            w.bytes(as_span(res.ciphertext));
        }
        w.u32(static_cast<std::uint32_t>(o.events.size()));
        for (const auto& ev : o.events)
        {
            write_request_id(w, ev.request);
            w.bytes(as_span(ev.topic));
            w.bytes(as_span(ev.data));
        }
    }
    w.u8(p.rotation ? 1 : 0);
    if (p.rotation)
    {
        w.u64(p.rotation->epoch);
        w.fixed(p.rotation->pub);
    }
    w.u32(static_cast<std::uint32_t>(p.receipts.size()));
    for (const auto& rc : p.receipts)
        write_receipt(w, rc);
    w.u32(static_cast<std::uint32_t>(p.envelopes.size()));
    for (const auto& env : p.envelopes)
    {
        w.fixed(env.recipient);
        w.fixed(env.blob.bytes);
    }
    return w.take();
}

inline Bytes
encode_publish(const PublishPayload& p)
{
    ByteWriter w;
    w.bytes(as_span(publish_signing_bytes(p)));
    w.fixed(p.node_sig);
    return w.take();
}

inline PublishPayload
decode_publish(ByteSpan data)
{
    ByteReader outer(data);
    auto body = outer.bytes();
    auto sig = outer.fixed<64>();

    ByteReader r(as_span(body));
    PublishPayload p;
    p.start = read_block_ref(r);
    p.end = read_block_ref(r);
    auto no = r.u32();
    for (std::uint32_t i = 0; i < no; ++i)
    {
        ContractOutput o;
        o.contract = r.fixed<20>();
        o.h_inf.bytes = r.fixed<32>();
        o.h_code.bytes = r.fixed<32>();
        o.h_st.bytes = r.fixed<32>();
        auto nr = r.u32();
        for (std::uint32_t j = 0; j < nr; ++j)
        {
            ResultRecord res;
            res.request = read_request_id(r);
            res.ciphertext = r.bytes();
            o.results.push_back(std::move(res));
        }
        auto ne = r.u32();
        for (std::uint32_t j = 0; j < ne; ++j)
        {
            PublicEvent ev;
            ev.request = read_request_id(r);
            ev.topic = r.bytes();
            ev.data = r.bytes();
            o.events.push_back(std::move(ev));
        }
        p.outputs.push_back(std::move(o));
    }
    if (r.u8())
    {
        TxKeyAnnouncement a;
        a.epoch = r.u64();
        a.pub = r.fixed<32>();
        p.rotation = a;
    }
    auto nrc = r.u32();
    for (std::uint32_t i = 0; i < nrc; ++i)
        p.receipts.push_back(read_receipt(r));
    auto nev = r.u32();
    for (std::uint32_t i = 0; i < nev; ++i)
    {
        KeyEnvelopeRef env;
        env.recipient = r.fixed<20>();
        env.blob.bytes = r.fixed<32>();
        p.envelopes.push_back(env);
    }
    p.node_sig = sig;
    return p;
}

// ---- transactions ----

struct SignedTransaction
{
    Address sender{};
    std::array<std::uint8_t, 32> sender_pub{};
    TxKind kind = TxKind::Plain;
    Bytes payload;
    std::uint64_t nonce = 0;
    Signature signature{};

    Bytes
    signing_bytes() const
    {
        ByteWriter w;
        w.fixed(sender);
        w.fixed(sender_pub);
        w.u8(static_cast<std::uint8_t>(kind));
        w.u64(nonce);
        w.bytes(as_span(payload));
        return w.take();
    }

    Bytes
    wire_bytes() const
    {
        ByteWriter w;
        w.raw(as_span(signing_bytes()));
        w.fixed(signature);
        return w.take();
    }

    Digest
    digest() const
    {
        return sha256(wire_bytes());
    }

    bool
    signature_valid() const
    {
        if (sender != address_from_pub(sender_pub))
            return false;
        return verify_signature(sender_pub, as_span(signing_bytes()),
                                signature);
    }
};

// A chain account that can author transactions.
struct Account
{
    SigningKeyPair keys;
    Address addr{};
    std::uint64_t next_nonce = 0;

    static Account
    generate(DetRng& rng)
    {
        Account a;
        a.keys = SigningKeyPair::generate(rng);
        a.addr = address_from_pub(a.keys.pub);
        return a;
    }

    SignedTransaction
    make_tx(TxKind kind, Bytes payload)
    {
        SignedTransaction tx;
        tx.sender = addr;
        tx.sender_pub = keys.pub;
        tx.kind = kind;
        tx.payload = std::move(payload);
        tx.nonce = next_nonce++;
        tx.signature = keys.sign(as_span(tx.signing_bytes()));
        return tx;
    }
};

}
