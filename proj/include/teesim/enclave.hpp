// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include "teesim/chain_state.hpp"
#include "teesim/ledger.hpp"
#include "teesim/selection.hpp"
#include "teesim/storage.hpp"
#include "teesim/vm.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace teesim
{

// How the enclave reaches the replicated blob store; implemented by the host
// actor (local disk first, then peers).
class StorageGateway
{
  public:
    virtual ~StorageGateway() = default;
    virtual std::optional<Bytes> fetch(const Digest& digest) = 0;
};

struct EnclaveConfig
{
    SystemParams params;
    std::map<Address, std::uint64_t> genesis_balances;
    std::uint64_t step_limit = 1'000'000; // per request, in VM steps
    std::uint32_t call_depth_limit = 32;
    bool publish_empty_ranges = true;
};

// All shared confidential material reduces to one 32-byte master secret.
// Every protocol key (K_inf, KP_tx, K_code, K_st epochs) is derived from it
// by role, owner and epoch, so any enclave holding the master reproduces the
// same key bytes for the same context and racing executors emit identical
// ciphertexts for identical chain prefixes.
struct SecretBundle
{
    std::array<std::uint8_t, 32> master{};
};

// Per-contract management record (the ACL, rotation period, invocation
// counter and the contract keys), encrypted as a unit under K_inf.
struct ContractMeta
{
    std::vector<Address> acl;
    std::uint64_t ckrp = 1;
    std::uint64_t exec_counter = 0;
    SymmetricKey k_code;
    SymmetricKey k_st;
};

inline Bytes
encode_meta(const ContractMeta& m)
{
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(m.acl.size()));
    for (const auto& a : m.acl)
        w.fixed(a);
    w.u64(m.ckrp);
    w.u64(m.exec_counter);
    w.fixed(m.k_code.bytes);
    w.u64(m.k_code.epoch);
    w.fixed(m.k_st.bytes);
    w.u64(m.k_st.epoch);
    return w.take();
}

inline ContractMeta
decode_meta(ByteSpan data)
{
    ByteReader r(data);
    ContractMeta m;
    auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i)
        m.acl.push_back(r.fixed<20>());
    m.ckrp = r.u64();
    m.exec_counter = r.u64();
    m.k_code.bytes = r.fixed<32>();
    m.k_code.epoch = r.u64();
    m.k_code.role = KeyRole::Code;
    m.k_st.bytes = r.fixed<32>();
    m.k_st.epoch = r.u64();
    m.k_st.role = KeyRole::State;
    return m;
}

// Ciphertexts are bound to (contract, epoch, role) so blobs cannot be spliced
// across contracts or epochs.
inline Bytes
blob_ad(const Address& contract, std::uint64_t epoch, KeyRole role)
{
    ByteWriter w;
    w.fixed(contract);
    w.u64(epoch);
    w.u8(static_cast<std::uint8_t>(role));
    return w.take();
}

// Info and state blobs carry their key epoch in front of the ciphertext so a
// reader knows which derived key opens them.
inline Bytes
encode_epoch_blob(std::uint64_t epoch, Bytes ciphertext)
{
    ByteWriter w;
    w.u64(epoch);
    w.bytes(as_span(ciphertext));
    return w.take();
}

inline std::pair<std::uint64_t, Bytes>
decode_epoch_blob(ByteSpan data)
{
    ByteReader r(data);
    auto epoch = r.u64();
    return {epoch, r.bytes()};
}

// Plaintext layout of an encrypted result record.
struct ResultPlain
{
    RequestId request;
    VmStatus status = VmStatus::Ok;
    Bytes ret;
    std::uint64_t steps_used = 0;
};

inline Bytes
encode_result_plain(const ResultPlain& rp)
{
    ByteWriter w;
    write_request_id(w, rp.request);
    w.u8(static_cast<std::uint8_t>(rp.status));
    w.bytes(as_span(rp.ret));
    w.u64(rp.steps_used);
    return w.take();
}

inline ResultPlain
decode_result_plain(ByteSpan data)
{
    ByteReader r(data);
    ResultPlain rp;
    rp.request = read_request_id(r);
    rp.status = static_cast<VmStatus>(r.u8());
    rp.ret = r.bytes();
    rp.steps_used = r.u64();
    return rp;
}

// Request plaintext: function selector plus encoded arguments.
inline Bytes
encode_call(const std::string& fn, ByteSpan args)
{
    ByteWriter w;
    w.str(fn);
    w.bytes(args);
    return w.take();
}

inline std::pair<std::string, Bytes>
decode_call(ByteSpan data)
{
    ByteReader r(data);
    auto fn = r.str();
    return {fn, r.bytes()};
}

enum class BlockVerdict
{
    Verified,
    ChainMismatch,
    MerkleMismatch,
    BadTxSignature,
};

inline const char*
block_verdict_name(BlockVerdict v)
{
    switch (v)
    {
    case BlockVerdict::Verified:
        return "verified";
    case BlockVerdict::ChainMismatch:
        return "chain mismatch";
    case BlockVerdict::MerkleMismatch:
        return "merkle mismatch";
    case BlockVerdict::BadTxSignature:
        return "bad tx signature";
    }
    return "?";
}

// Host-supplied blocks are untrusted; everything is recomputed before use.
inline BlockVerdict
verify_block(const Block& b, const BlockRef& expectedParent)
{
    if (b.header.number != expectedParent.number + 1 ||
        b.header.parent_hash != expectedParent.hash)
        return BlockVerdict::ChainMismatch;
    if (merkle_root(tx_leaves(b.transactions)) != b.header.merkle_root)
        return BlockVerdict::MerkleMismatch;
    if (block_hash_of(b.header.number, b.header.parent_hash,
                      b.header.merkle_root) != b.header.block_hash)
        return BlockVerdict::ChainMismatch;
    for (const auto& tx : b.transactions)
        if (!tx.signature_valid())
            return BlockVerdict::BadTxSignature;
    return BlockVerdict::Verified;
}

// The trusted enclave program. It follows the chain through verified blocks,
// mirrors the on-chain contract state by replaying the same transition
// functions, and turns pending request ranges into signed publish payloads.
// Range execution is a pure function of (mirror, blocks, blob store); nothing
// is committed until the resulting publish is observed back on-chain.
class Enclave
{
  public:
    Enclave(SigningKeyPair identity, EnclaveConfig cfg)
        : mIdentity(std::move(identity)), mCfg(std::move(cfg))
    {
        mMirror.mc.params = mCfg.params;
        mMirror.balances = mCfg.genesis_balances;
        Digest emptyRoot = merkle_root({});
        mHeaders.push_back(
            BlockRef{0, block_hash_of(0, Digest{}, emptyRoot)});
        mMirror.mc.leb = mHeaders[0];
        mMirror.seal_block(0);
    }

    const std::array<std::uint8_t, 32>&
    identity_pub() const
    {
        return mIdentity.pub;
    }

    // ---- secrets ----

    bool
    has_secrets() const
    {
        return mSecrets.has_value();
    }

    // Genesis bootstrap: mint the master secret and announce the epoch-0
    // request key for the registration transaction.
    TxKeyAnnouncement
    generate_initial_secrets(DetRng& rng)
    {
        SecretBundle s;
        s.master = rng.array<32>();
        mSecrets = s;
        return TxKeyAnnouncement{0, request_keys(0).pub};
    }

    // Attestation endorsement of a joining node's identity.
    Signature
    endorse(const std::array<std::uint8_t, 32>& newNodePub) const
    {
        auto msg = attestation_message(newNodePub);
        return mIdentity.sign(as_span(msg));
    }

    // Key envelope for a peer: the master secret sealed to the peer's
    // identity. Deterministic per (master, recipient, epoch) so every
    // executor builds the identical blob.
    Bytes
    make_envelope(const std::array<std::uint8_t, 32>& recipientSignPub,
                  std::uint64_t epoch) const
    {
        if (!mSecrets)
            throw std::logic_error("enclave has no key material");
        ensure_sodium();
        std::array<std::uint8_t, 32> curvePk;
        if (crypto_sign_ed25519_pk_to_curve25519(curvePk.data(),
                                                 recipientSignPub.data()) != 0)
            throw KeyFormatError("peer key not convertible");
        ByteWriter w;
        w.fixed(mSecrets->master);
        auto seed = kdf32(mSecrets->master, "envelope-seed",
                          as_span(recipientSignPub), epoch);
        return pk_encrypt(curvePk, as_span(w.data()), seed);
    }

    bool
    install_secrets(ByteSpan envelopeCiphertext)
    {
        try
        {
            auto pt = pk_decrypt(mIdentity.curve_pub(), mIdentity.curve_priv(),
                                 envelopeCiphertext);
            ByteReader r(as_span(pt));
            SecretBundle s;
            s.master = r.fixed<32>();
            mSecrets = s;
            return true;
        }
        catch (const CryptoError&)
        {
            return false;
        }
    }

    // Harness-only access to the sealed bundle (taint registration, god-view
    // decryption in reports); not part of the protocol surface.
    const SecretBundle&
    audit_secrets() const
    {
        if (!mSecrets)
            throw std::logic_error("enclave has no key material");
        return *mSecrets;
    }

    RequestKeyPair
    request_keys(std::uint64_t epoch) const
    {
        auto seed = kdf32(mSecrets->master, "tx-keypair", ByteSpan{}, epoch);
        return RequestKeyPair::from_seed(seed, epoch);
    }

    SymmetricKey
    info_key(std::uint64_t epoch) const
    {
        return kdf_symmetric(mSecrets->master, KeyRole::Info, ByteSpan{},
                             epoch);
    }

    SymmetricKey
    code_key(const Address& contract) const
    {
        return kdf_symmetric(mSecrets->master, KeyRole::Code, as_span(contract),
                             0);
    }

    SymmetricKey
    state_key(const Address& contract, std::uint64_t epoch) const
    {
        return kdf_symmetric(mSecrets->master, KeyRole::State,
                             as_span(contract), epoch);
    }

    // ---- chain following ----

    BlockVerdict
    ingest(const Block& b)
    {
        auto verdict = verify_block(b, mHeaders.back());
        if (verdict != BlockVerdict::Verified)
            return verdict;
        auto canonical = [this](std::uint64_t n) -> std::optional<Digest> {
            if (n >= mHeaders.size())
                return std::nullopt;
            return mHeaders[n].hash;
        };
        auto prevEpoch = mMirror.mc.tx_key_current.epoch;
        bool hadKey = mMirror.mc.tx_key_set;
        // Host-supplied per-tx results are not covered by the Merkle root
        // and cannot be trusted; the mirror replay recomputes them.
        Block verified = b;
        verified.results.clear();
        for (std::uint32_t i = 0; i < b.transactions.size(); ++i)
        {
            RequestId id{b.header.number, i};
            verified.results.push_back(chain::apply_tx(
                mMirror, b.transactions[i], id, b.header.number, canonical));
        }
        if (mMirror.mc.tx_key_set &&
            (!hadKey || mMirror.mc.tx_key_current.epoch != prevEpoch))
            mKeyEras.push_back(KeyEra{mMirror.mc.tx_key_current.epoch,
                                      b.header.number});
        mMirror.seal_block(b.header.number);
        mHeaders.push_back(b.ref());
        mBlocks.emplace(b.header.number, std::move(verified));
        return BlockVerdict::Verified;
    }

    BlockRef
    last_verified() const
    {
        return mHeaders.back();
    }

    const ChainState&
    mirror() const
    {
        return mMirror;
    }

    std::optional<std::uint32_t>
    my_index() const
    {
        const auto& nodes = mMirror.mc.node_list;
        for (std::uint32_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].pub == mIdentity.pub)
                return i;
        return std::nullopt;
    }

    bool
    selected(const Digest& blockHash) const
    {
        auto idx = my_index();
        if (!idx)
            return false;
        auto n = mMirror.mc.node_list.size();
        auto c = std::min<std::uint64_t>(mCfg.params.committee_size, n);
        return is_selected(*idx, blockHash, n, c);
    }

    // ---- execution ----

    struct Bundle
    {
        PublishPayload payload; // node_sig not yet attached
        std::vector<StorageBlob> blobs;
    };

    std::optional<Bundle>
    execute_range(std::uint64_t endBlockNumber, StorageGateway& storage,
                  std::string* whyNot = nullptr) const
    {
        auto fail = [&](std::string why) -> std::optional<Bundle> {
            if (whyNot)
                *whyNot = std::move(why);
            return std::nullopt;
        };
        if (!mSecrets)
            return fail("no key material");
        if (endBlockNumber >= mHeaders.size())
            return fail("unknown end block");
        auto start = mMirror.mc.leb;
        if (endBlockNumber <= start.number)
            return fail("nothing to process");
        if (!mMirror.mc.tx_key_set)
            return fail("request key not established");

        bool rotate =
            endBlockNumber >= mMirror.mc.last_rotation_block + mCfg.params.mkrp;
        auto curEpoch = mMirror.mc.tx_key_current.epoch;
        auto writeEpoch = rotate ? curEpoch + 1 : curEpoch;

        Staging st(*this, storage);
        bool hasRequests = false;
        for (auto bn = start.number + 1; bn <= endBlockNumber; ++bn)
        {
            auto it = mBlocks.find(bn);
            if (it == mBlocks.end())
                return fail("missing block data");
            const auto& block = it->second;
            for (std::uint32_t i = 0; i < block.transactions.size(); ++i)
            {
                const auto& tx = block.transactions[i];
                RequestId id{bn, i};
                if (tx.kind == TxKind::DeployPC)
                {
                    if (!block.results[i].ok)
                        continue;
                    hasRequests = true;
                    st.handle_deploy(tx, id);
                }
                else if (tx.kind == TxKind::InvokePC)
                {
                    if (!block.results[i].ok)
                        continue;
                    hasRequests = true;
                    st.handle_invoke(tx, id);
                }
            }
        }
        if (st.fetch_failed)
            return fail("blob unavailable: " + st.fetch_failed_digest.hex());
        if (!hasRequests && !rotate && !mCfg.publish_empty_ranges)
            return fail("empty range");

        Bundle bundle;
        bundle.payload.start = start;
        bundle.payload.end = BlockRef{endBlockNumber,
                                      mHeaders[endBlockNumber].hash};
        if (rotate)
            bundle.payload.rotation =
                TxKeyAnnouncement{writeEpoch, request_keys(writeEpoch).pub};
        st.seal(rotate, writeEpoch, bundle);
        if (st.fetch_failed)
            return fail("blob unavailable: " + st.fetch_failed_digest.hex());

        // Peers without an on-chain envelope pointer get one now; a rotation
        // re-issues envelopes to everyone so the new epoch is receivable.
        std::set<Address> wanted;
        for (const auto& e : mMirror.mc.node_list)
        {
            if (rotate || !mMirror.key_envelopes.count(e.addr))
                wanted.insert(e.addr);
        }
        for (const auto& e : mMirror.mc.node_list)
        {
            if (!wanted.count(e.addr))
                continue;
            auto blob = StorageBlob::make(make_envelope(e.pub, writeEpoch),
                                          BlobKind::Checkpoint);
            bundle.payload.envelopes.push_back(
                KeyEnvelopeRef{e.addr, blob.digest});
            bundle.blobs.push_back(std::move(blob));
        }
        return bundle;
    }

    Signature
    sign_payload(const PublishPayload& p) const
    {
        return mIdentity.sign(as_span(publish_signing_bytes(p)));
    }

    Signature
    ack_blob(const Digest& d) const
    {
        auto msg = storage_ack_message(d);
        return mIdentity.sign(as_span(msg));
    }

    const EnclaveConfig&
    config() const
    {
        return mCfg;
    }

  private:
    struct KeyEra
    {
        std::uint64_t epoch = 0;
        std::uint64_t install_block = 0;
    };

    // Is a request tagged with `epoch`, included at `blockNumber`, still
    // decryptable under policy? Current epoch always; the previous epoch only
    // inside the transition window after its successor was installed.
    bool
    epoch_valid_at(std::uint64_t epoch, std::uint64_t blockNumber) const
    {
        const KeyEra* active = nullptr;
        for (const auto& era : mKeyEras)
            if (era.install_block <= blockNumber)
                active = &era;
        if (!active)
            return false;
        if (epoch == active->epoch)
            return true;
        return epoch + 1 == active->epoch &&
               blockNumber <= active->install_block +
                                  mCfg.params.transition_window;
    }

    struct StagedContract
    {
        ContractMeta meta;
        std::string program;
        StateMap state;
        std::uint64_t loaded_info_epoch = 0;
        bool dirty = false;   // state or counter changed this range
        bool created = false; // deployed this range
    };

    // One range execution's working set plus the CallHost wiring for nested
    // contract calls. Everything here is discarded unless sealed into the
    // publish payload.
    class Staging : public CallHost
    {
      public:
        Staging(const Enclave& e, StorageGateway& storage)
            : mEnclave(e), mStorage(storage)
        {
        }

        bool fetch_failed = false;
        Digest fetch_failed_digest;

        void
        handle_deploy(const SignedTransaction& tx, RequestId id)
        {
            auto p = decode_deploy(as_span(tx.payload));
            auto addr = contract_address(tx.sender, tx.nonce);
            if (!mEnclave.epoch_valid_at(p.key_epoch, id.block))
            {
                note_rejection(addr, id, VmStatus::StaleKey);
                return;
            }
            Bytes codePlain, configPlain;
            try
            {
                auto keys = mEnclave.request_keys(p.key_epoch);
                codePlain = pk_decrypt(keys, as_span(p.enc_code));
                configPlain = pk_decrypt(keys, as_span(p.enc_config));
            }
            catch (const CryptoError&)
            {
                note_rejection(addr, id, VmStatus::BadRequest);
                return;
            }
            ContractProgram prog;
            ContractMeta meta;
            try
            {
                prog = decode_program(as_span(codePlain));
                ByteReader cfg(as_span(configPlain));
                auto aclCount = cfg.u32();
                for (std::uint32_t i = 0; i < aclCount; ++i)
                    meta.acl.push_back(cfg.fixed<20>());
                meta.ckrp = cfg.u64();
            }
            catch (const std::exception&)
            {
                note_rejection(addr, id, VmStatus::BadRequest);
                return;
            }
            if (meta.ckrp == 0 ||
                !ProgramRegistry::instance().find(prog.code_id))
            {
                note_rejection(addr, id, VmStatus::BadRequest);
                return;
            }
            // The owner can always invoke what it deployed.
            if (std::find(meta.acl.begin(), meta.acl.end(), tx.sender) ==
                meta.acl.end())
                meta.acl.push_back(tx.sender);
            meta.exec_counter = 0;
            meta.k_code = mEnclave.code_key(addr);
            meta.k_st = mEnclave.state_key(addr, 0);

            StagedContract sc;
            sc.meta = meta;
            sc.program = prog.code_id;
            sc.created = true;
            sc.dirty = true;
            mContracts[addr] = std::move(sc);
            mCodePlain[addr] = codePlain;

            // Run the constructor with the deployer as caller.
            mCurrentRequest = id;
            std::uint64_t budget = mEnclave.mCfg.step_limit;
            auto snapshot = snap();
            VmOutcome outcome;
            try
            {
                outcome = run_frame(tx.sender, addr, "init",
                                    as_span(prog.init_params), budget);
            }
            catch (const OutOfStepsSignal&)
            {
                outcome = VmOutcome::fail(VmStatus::OutOfSteps);
            }
            if (!outcome.ok())
            {
                restore(snapshot);
                mContracts.erase(addr);
                mCodePlain.erase(addr);
                note_rejection(addr, id, outcome.status);
                return;
            }
            // The constructor does not count as an invocation.
            mContracts.at(addr).meta.exec_counter = 0;
        }

        void
        handle_invoke(const SignedTransaction& tx, RequestId id)
        {
            auto p = decode_invoke(as_span(tx.payload));
            mCurrentRequest = id;
            if (!mEnclave.epoch_valid_at(p.key_epoch, id.block))
            {
                // Old epochs stay derivable, so the caller still gets an
                // encrypted stale-key notice; the request is not executed.
                try
                {
                    auto keys = mEnclave.request_keys(p.key_epoch);
                    auto kresBytes = pk_decrypt(keys, as_span(p.enc_kres));
                    record_result(p.pc, id, VmStatus::StaleKey, {}, 0,
                                  kresBytes);
                }
                catch (const CryptoError&)
                {
                    note_rejection(p.pc, id, VmStatus::StaleKey);
                }
                return;
            }
            Bytes inputPlain, kresBytes;
            try
            {
                auto keys = mEnclave.request_keys(p.key_epoch);
                inputPlain = pk_decrypt(keys, as_span(p.enc_input));
                kresBytes = pk_decrypt(keys, as_span(p.enc_kres));
            }
            catch (const CryptoError&)
            {
                note_rejection(p.pc, id, VmStatus::BadRequest);
                return;
            }
            if (kresBytes.size() != 32)
            {
                note_rejection(p.pc, id, VmStatus::BadRequest);
                return;
            }
            std::string fn;
            Bytes args;
            try
            {
                std::tie(fn, args) = decode_call(as_span(inputPlain));
            }
            catch (const std::exception&)
            {
                record_result(p.pc, id, VmStatus::BadRequest, {}, 0,
                              kresBytes);
                return;
            }
            auto* sc = load_contract(p.pc);
            if (!sc)
            {
                record_result(p.pc, id, VmStatus::BadRequest, {}, 0,
                              kresBytes);
                return;
            }
            if (std::find(sc->meta.acl.begin(), sc->meta.acl.end(),
                          tx.sender) == sc->meta.acl.end())
            {
                record_result(p.pc, id, VmStatus::AccessDenied, {}, 0,
                              kresBytes);
                return;
            }
            std::uint64_t budget = mEnclave.mCfg.step_limit;
            auto snapshot = snap();
            VmOutcome outcome;
            try
            {
                outcome = run_frame(tx.sender, p.pc, fn, as_span(args), budget);
            }
            catch (const OutOfStepsSignal&)
            {
                outcome = VmOutcome::fail(VmStatus::OutOfSteps);
            }
            auto stepsUsed = mEnclave.mCfg.step_limit - budget;
            if (!outcome.ok())
                restore(snapshot);
            record_result(p.pc, id, outcome.status, outcome.ret, stepsUsed,
                          kresBytes);
        }

        // CallHost: nested invocation from contract code. The callee's ACL
        // must list the calling contract; failures roll the sub-call back and
        // surface to the caller as a catchable outcome.
        VmOutcome
        call(const Address& caller, const Address& callee,
             const std::string& fn, ByteSpan args,
             std::uint64_t& budget) override
        {
            if (mDepth + 1 > mEnclave.mCfg.call_depth_limit)
                return VmOutcome::fail(VmStatus::DepthExceeded);
            auto* sc = load_contract(callee);
            if (!sc)
                return VmOutcome::fail(VmStatus::BadRequest);
            if (std::find(sc->meta.acl.begin(), sc->meta.acl.end(), caller) ==
                sc->meta.acl.end())
                return VmOutcome::fail(VmStatus::AccessDenied);
            auto snapshot = snap();
            auto outcome = run_frame(caller, callee, fn, args, budget);
            if (!outcome.ok())
                restore(snapshot);
            return outcome;
        }

        void
        emit(const Address& self, Bytes topic, Bytes data) override
        {
            mEvents[self].push_back(
                PublicEvent{mCurrentRequest, std::move(topic),
                            std::move(data)});
        }

        // Re-encrypt the working set, compute integrity hashes and assemble
        // the publish outputs. CKRP rotations apply here, at commit.
        void
        seal(bool rotateInf, std::uint64_t writeEpoch, Bundle& bundle)
        {
            if (rotateInf)
            {
                // New management epoch re-encrypts every management record,
                // so all known contracts must be in the working set.
                for (const auto& [addr, digest] :
                     mEnclave.mMirror.mc.prog_list)
                    load_contract(addr);
            }
            auto pendingFor = [this](const Address& addr) {
                auto r = mResults.find(addr);
                if (r != mResults.end() && !r->second.empty())
                    return true;
                auto o = mOrphanResults.find(addr);
                if (o != mOrphanResults.end() && !o->second.empty())
                    return true;
                auto e = mEvents.find(addr);
                return e != mEvents.end() && !e->second.empty();
            };
            for (auto& [addr, sc] : mContracts)
            {
                bool hasResults = pendingFor(addr);
                if (!sc.dirty && !sc.created && !rotateInf &&
                    sc.loaded_info_epoch == writeEpoch && !hasResults)
                    continue; // loaded as a read-only callee, nothing changed
                ContractOutput out;
                out.contract = addr;
                if (sc.dirty)
                {
                    auto newStEpoch = sc.meta.exec_counter / sc.meta.ckrp;
                    if (newStEpoch != sc.meta.k_st.epoch)
                        sc.meta.k_st = mEnclave.state_key(addr, newStEpoch);

                    ByteWriter sw;
                    sw.u32(static_cast<std::uint32_t>(sc.state.size()));
                    for (const auto& [k, v] : sc.state)
                    {
                        sw.bytes(as_span(k));
                        sw.bytes(as_span(v));
                    }
                    auto stCt = aead_encrypt(
                        sc.meta.k_st, as_span(sw.data()),
                        as_span(blob_ad(addr, sc.meta.k_st.epoch,
                                        KeyRole::State)));
                    auto stBlob = StorageBlob::make(
                        encode_epoch_blob(sc.meta.k_st.epoch, stCt),
                        BlobKind::State);
                    out.h_st = stBlob.digest;
                    bundle.blobs.push_back(std::move(stBlob));
                }
                else
                {
                    out.h_st = recorded(mEnclave.mMirror.mc.prog_states, addr);
                }

                if (sc.created)
                {
                    auto codeCt = aead_encrypt(
                        sc.meta.k_code, as_span(mCodePlain[addr]),
                        as_span(blob_ad(addr, 0, KeyRole::Code)));
                    auto codeBlob =
                        StorageBlob::make(codeCt, BlobKind::Code);
                    out.h_code = codeBlob.digest;
                    bundle.blobs.push_back(std::move(codeBlob));
                }
                else
                {
                    out.h_code =
                        recorded(mEnclave.mMirror.mc.prog_codes, addr);
                }

                if (sc.dirty || rotateInf ||
                    sc.loaded_info_epoch != writeEpoch)
                {
                    auto infCt = aead_encrypt(
                        mEnclave.info_key(writeEpoch),
                        as_span(encode_meta(sc.meta)),
                        as_span(blob_ad(addr, writeEpoch, KeyRole::Info)));
                    auto infBlob = StorageBlob::make(
                        encode_epoch_blob(writeEpoch, infCt), BlobKind::Info);
                    out.h_inf = infBlob.digest;
                    bundle.blobs.push_back(std::move(infBlob));
                }
                else
                {
                    out.h_inf = recorded(mEnclave.mMirror.mc.prog_list, addr);
                }

                attach_results_and_events(addr, out);
                bundle.payload.outputs.push_back(std::move(out));
            }
            // Results and rejection markers for contracts that never made it
            // into the working set (dead deploys, undecryptable requests):
            // digests stay zero, which the management contract treats as
            // "no update".
            std::set<Address> orphans;
            for (const auto& [addr, results] : mOrphanResults)
                if (!results.empty())
                    orphans.insert(addr);
            for (const auto& [addr, events] : mEvents)
                if (!events.empty())
                    orphans.insert(addr);
            for (const auto& addr : orphans)
            {
                ContractOutput out;
                out.contract = addr;
                attach_results_and_events(addr, out);
                bundle.payload.outputs.push_back(std::move(out));
            }
        }

      private:
        static Digest
        recorded(const std::map<Address, Digest>& m, const Address& a)
        {
            auto it = m.find(a);
            return it == m.end() ? Digest{} : it->second;
        }

        void
        attach_results_and_events(const Address& addr, ContractOutput& out)
        {
            auto rit = mResults.find(addr);
            if (rit != mResults.end())
            {
                out.results = std::move(rit->second);
                mResults.erase(rit);
            }
            auto oit = mOrphanResults.find(addr);
            if (oit != mOrphanResults.end())
            {
                for (auto& r : oit->second)
                    out.results.push_back(std::move(r));
                oit->second.clear();
            }
            auto eit = mEvents.find(addr);
            if (eit != mEvents.end())
            {
                out.events = std::move(eit->second);
                mEvents.erase(eit);
            }
        }

        StagedContract*
        load_contract(const Address& addr)
        {
            auto it = mContracts.find(addr);
            if (it != mContracts.end())
                return &it->second;
            const auto& mc = mEnclave.mMirror.mc;
            auto infIt = mc.prog_list.find(addr);
            auto codeIt = mc.prog_codes.find(addr);
            auto stIt = mc.prog_states.find(addr);
            if (infIt == mc.prog_list.end() || codeIt == mc.prog_codes.end() ||
                stIt == mc.prog_states.end())
                return nullptr;
            auto infBytes = fetch(infIt->second);
            auto codeBytes = fetch(codeIt->second);
            auto stBytes = fetch(stIt->second);
            if (!infBytes || !codeBytes || !stBytes)
                return nullptr;
            try
            {
                StagedContract sc;
                auto [infEpoch, infCt] = decode_epoch_blob(as_span(*infBytes));
                auto metaPlain = aead_decrypt(
                    mEnclave.info_key(infEpoch), as_span(infCt),
                    as_span(blob_ad(addr, infEpoch, KeyRole::Info)));
                sc.meta = decode_meta(as_span(metaPlain));
                sc.loaded_info_epoch = infEpoch;

                auto codePlain = aead_decrypt(
                    sc.meta.k_code, as_span(*codeBytes),
                    as_span(blob_ad(addr, 0, KeyRole::Code)));
                auto prog = decode_program(as_span(codePlain));
                sc.program = prog.code_id;
                mCodePlain[addr] = codePlain;

                auto [stEpoch, stCt] = decode_epoch_blob(as_span(*stBytes));
                auto statePlain = aead_decrypt(
                    mEnclave.state_key(addr, stEpoch), as_span(stCt),
                    as_span(blob_ad(addr, stEpoch, KeyRole::State)));
                ByteReader r(as_span(statePlain));
                auto n = r.u32();
                for (std::uint32_t i = 0; i < n; ++i)
                {
                    auto k = r.bytes();
                    auto v = r.bytes();
                    sc.state.emplace(std::move(k), std::move(v));
                }
                return &mContracts.emplace(addr, std::move(sc)).first->second;
            }
            catch (const std::exception&)
            {
                return nullptr;
            }
        }

        std::optional<Bytes>
        fetch(const Digest& d)
        {
            auto bytes = mStorage.fetch(d);
            if (!bytes)
            {
                fetch_failed = true;
                fetch_failed_digest = d;
            }
            return bytes;
        }

        VmOutcome
        run_frame(const Address& caller, const Address& self,
                  const std::string& fn, ByteSpan args, std::uint64_t& budget)
        {
            auto program = mContracts.at(self).program;
            ++mDepth;
            ExecContext ctx(caller, self, mContracts.at(self).state, budget,
                            *this);
            VmOutcome outcome;
            try
            {
                outcome = vm_invoke(program, ctx, fn, args);
            }
            catch (...)
            {
                --mDepth;
                throw;
            }
            --mDepth;
            if (outcome.ok())
            {
                // Each successful (sub-)invocation bumps the callee's counter.
                auto& sc = mContracts.at(self);
                sc.meta.exec_counter += 1;
                sc.dirty = true;
            }
            return outcome;
        }

        // Full-transaction-view snapshots give sub-call atomicity: a failed
        // frame rolls back everything its subtree touched. Restoring mutates
        // entries in place; map nodes never move, so StateMap references held
        // by still-live outer frames stay valid.
        struct Snapshot
        {
            std::map<Address, StagedContract> contracts;
            std::map<Address, std::vector<PublicEvent>> events;
        };

        Snapshot
        snap() const
        {
            return Snapshot{mContracts, mEvents};
        }

        void
        restore(const Snapshot& s)
        {
            for (auto it = mContracts.begin(); it != mContracts.end();)
            {
                auto sit = s.contracts.find(it->first);
                if (sit == s.contracts.end())
                    it = mContracts.erase(it);
                else
                {
                    it->second = sit->second;
                    ++it;
                }
            }
            mEvents = s.events;
        }

        void
        record_result(const Address& pc, RequestId id, VmStatus status,
                      Bytes ret, std::uint64_t steps, const Bytes& kresBytes)
        {
            SymmetricKey kres;
            std::memcpy(kres.bytes.data(), kresBytes.data(), 32);
            kres.role = KeyRole::Result;
            auto plain = encode_result_plain(
                ResultPlain{id, status, std::move(ret), steps});
            auto ct = aead_encrypt(kres, as_span(plain),
                                   as_span(blob_ad(pc, 0, KeyRole::Result)));
            if (mContracts.count(pc))
                mResults[pc].push_back(ResultRecord{id, std::move(ct)});
            else
                mOrphanResults[pc].push_back(ResultRecord{id, std::move(ct)});
        }

        // No result channel is recoverable; leave an on-chain-visible marker.
        void
        note_rejection(const Address& pc, RequestId id, VmStatus status)
        {
            mEvents[pc].push_back(PublicEvent{
                id, to_bytes("rejected"), to_bytes(vm_status_name(status))});
        }

        const Enclave& mEnclave;
        StorageGateway& mStorage;
        std::map<Address, StagedContract> mContracts;
        std::map<Address, Bytes> mCodePlain;
        std::map<Address, std::vector<ResultRecord>> mResults;
        std::map<Address, std::vector<ResultRecord>> mOrphanResults;
        std::map<Address, std::vector<PublicEvent>> mEvents;
        RequestId mCurrentRequest;
        std::uint32_t mDepth = 0;
    };

    SigningKeyPair mIdentity;
    EnclaveConfig mCfg;
    std::optional<SecretBundle> mSecrets;
    ChainState mMirror;
    std::vector<BlockRef> mHeaders;         // canonical view, index = number
    std::map<std::uint64_t, Block> mBlocks; // verified block bodies
    std::vector<KeyEra> mKeyEras;
};

}
