// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include "teesim/crypto.hpp"

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace teesim
{

// Per-round committee selection. Members are picked by walking the node
// registry in a stride coprime with the registry size, starting from a
// position derived from the round seed. Coprimality guarantees the c picked
// positions are distinct, and a uniform start position gives every node the
// same selection probability c/n.

// Smallest stride >= floor(n/c) that is coprime with n.
inline std::uint64_t
committee_stride(std::uint64_t n, std::uint64_t c)
{
    if (n == 0 || c == 0)
        throw std::invalid_argument("committee_stride: n and c must be > 0");
    if (c > n)
        throw std::invalid_argument("committee_stride: c must be <= n");
    std::uint64_t step = n / c;
    while (std::gcd(step, n) != 1)
        ++step;
    return step;
}

inline std::vector<std::uint32_t>
select_committee(std::uint64_t roundSeed, std::uint64_t n, std::uint64_t c)
{
    auto step = committee_stride(n, c) % n; // stride may exceed n when c == 1
    std::vector<std::uint32_t> members;
    members.reserve(c);
    std::uint64_t pos = roundSeed % n;
    for (std::uint64_t k = 0; k < c; ++k)
    {
        members.push_back(static_cast<std::uint32_t>(pos));
        pos += step;
        if (pos >= n)
            pos -= n;
    }
    return members;
}

// The round seed is read out of the block hash, so eligibility is unknowable
// before the block exists.
inline std::uint64_t
round_seed(const Digest& blockHash)
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(blockHash.bytes[i]) << (8 * i);
    return v;
}

inline bool
is_selected(std::uint32_t myIndex, const Digest& blockHash, std::uint64_t n,
            std::uint64_t c)
{
    for (auto m : select_committee(round_seed(blockHash), n, c))
        if (m == myIndex)
            return true;
    return false;
}

}
