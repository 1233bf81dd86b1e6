// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include "teesim/crypto.hpp"
#include "teesim/rng.hpp"

#include <gmpxx.h>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

namespace teesim
{

enum class BlobKind : std::uint8_t
{
    Info = 0,
    Code = 1,
    State = 2,
    Checkpoint = 3, // per-peer key envelopes and other recovery material
};

struct StorageBlob
{
    Digest digest;
    Bytes ciphertext;
    BlobKind kind = BlobKind::State;

    static StorageBlob
    make(Bytes ciphertext, BlobKind kind)
    {
        StorageBlob b;
        b.digest = sha256(ciphertext);
        b.ciphertext = std::move(ciphertext);
        b.kind = kind;
        return b;
    }
};

// One node's replicated blob store. Content is immutable once written; honest
// nodes keep everything they acknowledged for the whole run.
class BlobStore
{
  public:
    void
    put(const StorageBlob& blob)
    {
        mBlobs.emplace(blob.digest, blob);
    }

    std::optional<StorageBlob>
    get(const Digest& digest) const
    {
        auto it = mBlobs.find(digest);
        if (it == mBlobs.end())
            return std::nullopt;
        return it->second;
    }

    bool
    has(const Digest& digest) const
    {
        return mBlobs.count(digest) != 0;
    }

    std::size_t
    size() const
    {
        return mBlobs.size();
    }

    const std::map<Digest, StorageBlob>&
    all() const
    {
        return mBlobs;
    }

  private:
    std::map<Digest, StorageBlob> mBlobs;
};

// Draw s distinct node indices for a dissemination subnet. The seed binds the
// subnet to (round, blob), so the on-chain verifier can recompute it and
// different blobs in one round land on different subnets.
inline std::vector<std::uint32_t>
select_subnet(const Digest& roundHash, const Digest& blobDigest,
              std::uint64_t n, std::uint64_t s)
{
    if (s > n)
        throw std::invalid_argument("select_subnet: s must be <= n");
    ByteWriter w;
    w.str("teesim.subnet");
    w.fixed(roundHash.bytes);
    w.fixed(blobDigest.bytes);
    DetRng rng(sha256(as_span(w.data())).bytes);

    std::vector<std::uint32_t> pool(n);
    for (std::uint64_t i = 0; i < n; ++i)
        pool[i] = static_cast<std::uint32_t>(i);
    // Partial Fisher-Yates: first s entries are a uniform size-s subset.
    for (std::uint64_t i = 0; i < s; ++i)
    {
        auto j = i + rng.uniform_below(n - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(s);
    return pool;
}

struct StorageAck
{
    std::uint32_t node_index = 0;
    Signature signature{}; // over the blob digest, by the node's identity key
};

struct RstsReceipt
{
    Digest blob;
    std::vector<std::uint32_t> subnet;
    std::vector<StorageAck> confirmations;
};

inline Bytes
storage_ack_message(const Digest& blobDigest)
{
    ByteWriter w;
    w.str("teesim.storage-ack");
    w.fixed(blobDigest.bytes);
    return w.take();
}

// Validates a receipt against the registry: the subnet must match the seeded
// draw, every confirmation must come from a distinct subnet member, its
// signature must verify, and at least `threshold` confirmations must remain.
inline bool
verify_receipt(const RstsReceipt& receipt, const Digest& roundHash,
               const std::vector<std::array<std::uint8_t, 32>>& registryPubs,
               std::uint64_t subnetSize, std::uint64_t threshold)
{
    auto n = registryPubs.size();
    if (subnetSize > n || threshold == 0 || threshold > subnetSize)
        return false;
    if (receipt.subnet != select_subnet(roundHash, receipt.blob, n, subnetSize))
        return false;
    auto msg = storage_ack_message(receipt.blob);
    std::vector<bool> seen(n, false);
    std::uint64_t valid = 0;
    for (const auto& ack : receipt.confirmations)
    {
        if (ack.node_index >= n || seen[ack.node_index])
            return false;
        bool inSubnet = false;
        for (auto m : receipt.subnet)
            if (m == ack.node_index)
                inSubnet = true;
        if (!inSubnet)
            return false;
        if (!verify_signature(registryPubs[ack.node_index], as_span(msg),
                              ack.signature))
            return false;
        seen[ack.node_index] = true;
        ++valid;
    }
    return valid >= threshold;
}

// Exact probability that an adversary controlling m of n nodes supplies all
// t required confirmations from a random size-s subnet: the upper tail of a
// hypergeometric distribution, evaluated in exact rational arithmetic.
struct TailProbability
{
    mpq_class exact;

    double
    approx() const
    {
        return exact.get_d();
    }

    // log10 without floating underflow, usable far below 1e-300.
    double
    log10() const
    {
        if (exact == 0)
            return -std::numeric_limits<double>::infinity();
        signed long int expNum, expDen;
        double dNum = mpz_get_d_2exp(&expNum, exact.get_num().get_mpz_t());
        double dDen = mpz_get_d_2exp(&expDen, exact.get_den().get_mpz_t());
        return (std::log10(dNum) - std::log10(dDen)) +
               static_cast<double>(expNum - expDen) * std::log10(2.0);
    }
};

inline TailProbability
rsts_epsilon(std::uint64_t n, std::uint64_t m, std::uint64_t s,
             std::uint64_t t)
{
    if (m > n)
        throw std::invalid_argument("rsts_epsilon: m must be <= n");
    if (t == 0 || t > s || s > n)
        throw std::invalid_argument("rsts_epsilon: need 0 < t <= s <= n");
    if (m < t)
        return TailProbability{mpq_class(0)};

    mpz_class total;
    mpz_bin_uiui(total.get_mpz_t(), n, s);
    mpz_class sum = 0;
    std::uint64_t kMax = std::min(s, m);
    for (std::uint64_t k = t; k <= kMax; ++k)
    {
        if (s - k > n - m)
            continue; // not enough honest nodes to fill the rest
        mpz_class a, b;
        mpz_bin_uiui(a.get_mpz_t(), m, k);
        mpz_bin_uiui(b.get_mpz_t(), n - m, s - k);
        sum += a * b;
    }
    mpq_class eps(sum, total);
    eps.canonicalize();
    return TailProbability{eps};
}

}
