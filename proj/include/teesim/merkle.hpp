// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include "teesim/crypto.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace teesim
{

// Binary Merkle tree with domain-separated leaf/node hashing. Odd nodes are
// promoted to the next level unchanged, which avoids the duplicate-leaf
// mutation pitfall of the duplication scheme.

inline Digest
merkle_leaf(ByteSpan data)
{
    ByteWriter w;
    w.u8(0x00);
    w.raw(data);
    return sha256(as_span(w.data()));
}

inline Digest
merkle_node(const Digest& left, const Digest& right)
{
    ByteWriter w;
    w.u8(0x01);
    w.fixed(left.bytes);
    w.fixed(right.bytes);
    return sha256(as_span(w.data()));
}

inline Digest
merkle_root(std::span<const Digest> leaves)
{
    if (leaves.empty())
        return sha256(ByteSpan{});
    std::vector<Digest> level(leaves.begin(), leaves.end());
    while (level.size() > 1)
    {
        std::vector<Digest> next;
        next.reserve((level.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < level.size(); i += 2)
            next.push_back(merkle_node(level[i], level[i + 1]));
        if (level.size() % 2 == 1)
            next.push_back(level.back());
        level = std::move(next);
    }
    return level[0];
}

struct MerkleProof
{
    std::uint32_t leaf_index = 0;
    // (sibling digest, sibling-is-right flag), leaf level first.
    std::vector<std::pair<Digest, bool>> sibling_path;
};

inline MerkleProof
merkle_prove(std::span<const Digest> leaves, std::uint32_t index)
{
    if (index >= leaves.size())
        throw std::out_of_range("merkle proof index out of range");
    MerkleProof proof;
    proof.leaf_index = index;
    std::vector<Digest> level(leaves.begin(), leaves.end());
    std::uint32_t pos = index;
    while (level.size() > 1)
    {
        std::uint32_t sib = pos ^ 1;
        if (sib < level.size())
            proof.sibling_path.emplace_back(level[sib], (sib > pos));
        std::vector<Digest> next;
        next.reserve((level.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < level.size(); i += 2)
            next.push_back(merkle_node(level[i], level[i + 1]));
        if (level.size() % 2 == 1)
            next.push_back(level.back());
        level = std::move(next);
        pos /= 2;
    }
    return proof;
}

inline bool
merkle_verify(const Digest& root, const Digest& leaf, const MerkleProof& proof)
{
    Digest acc = leaf;
    for (const auto& [sib, sibIsRight] : proof.sibling_path)
        acc = sibIsRight ? merkle_node(acc, sib) : merkle_node(sib, acc);
    return acc == root;
}

}
