// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include "teesim/chain_state.hpp"
#include "teesim/merkle.hpp"

#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace teesim
{

struct BlockHeader
{
    std::uint64_t number = 0;
    Digest parent_hash;
    Digest merkle_root;
    Digest block_hash;
};

inline Digest
block_hash_of(std::uint64_t number, const Digest& parent, const Digest& root)
{
    ByteWriter w;
    w.str("teesim.block");
    w.u64(number);
    w.fixed(parent.bytes);
    w.fixed(root.bytes);
    return sha256(as_span(w.data()));
}

struct Block
{
    BlockHeader header;
    std::vector<SignedTransaction> transactions;
    std::vector<TxResult> results; // parallel to transactions

    BlockRef
    ref() const
    {
        return BlockRef{header.number, header.block_hash};
    }
};

inline std::vector<Digest>
tx_leaves(const std::vector<SignedTransaction>& txs)
{
    std::vector<Digest> leaves;
    leaves.reserve(txs.size());
    for (const auto& tx : txs)
        leaves.push_back(merkle_leaf(as_span(tx.wire_bytes())));
    return leaves;
}

// Append-only simulated chain. A single writer (the scheduler) drains the
// pending pool into a block every block interval and executes the on-chain
// contract machines as it goes.
class Ledger
{
  public:
    Ledger(SystemParams params,
           const std::map<Address, std::uint64_t>& initialBalances)
    {
        mState.mc.params = params;
        mState.balances = initialBalances;
        Block genesis;
        genesis.header.number = 0;
        genesis.header.merkle_root = merkle_root({});
        genesis.header.block_hash =
            block_hash_of(0, Digest{}, genesis.header.merkle_root);
        mChain.push_back(genesis);
        mState.mc.leb = genesis.ref();
        mState.seal_block(0);
        mSnapshots.push_back(mState);
    }

    enum class Submit
    {
        Accepted,
        BadSignature,
        StaleNonce,
    };

    Submit
    submit(SignedTransaction tx)
    {
        if (!tx.signature_valid())
            return Submit::BadSignature;
        auto& next = mNextNonce[tx.sender];
        if (tx.nonce != next)
            return Submit::StaleNonce;
        ++next;
        mPending.push_back(std::move(tx));
        return Submit::Accepted;
    }

    std::size_t
    pending_count() const
    {
        return mPending.size();
    }

    // Drains the pool in arrival order, executes every transaction against
    // the on-chain state and seals the block. Contract-level failures are
    // recorded per transaction; the block is produced regardless.
    const Block&
    produce_block()
    {
        Block b;
        b.header.number = mChain.size();
        b.header.parent_hash = mChain.back().header.block_hash;
        b.transactions.assign(mPending.begin(), mPending.end());
        mPending.clear();

        auto canonical = [this](std::uint64_t n) -> std::optional<Digest> {
            if (n >= mChain.size())
                return std::nullopt;
            return mChain[n].header.block_hash;
        };
        for (std::uint32_t i = 0; i < b.transactions.size(); ++i)
        {
            RequestId id{b.header.number, i};
            b.results.push_back(chain::apply_tx(mState, b.transactions[i], id,
                                                b.header.number, canonical));
        }
        mState.seal_block(b.header.number);
        b.header.merkle_root = merkle_root(tx_leaves(b.transactions));
        b.header.block_hash = block_hash_of(
            b.header.number, b.header.parent_hash, b.header.merkle_root);
        mChain.push_back(std::move(b));
        mSnapshots.push_back(mState);
        return mChain.back();
    }

    BlockRef
    chain_head() const
    {
        return mChain.back().ref();
    }

    const Block&
    get_block(std::uint64_t number) const
    {
        if (number >= mChain.size())
            throw std::out_of_range("unknown block number");
        return mChain[number];
    }

    std::uint64_t
    height() const
    {
        return mChain.size() - 1;
    }

    MerkleProof
    prove_inclusion(std::uint64_t blockNumber, std::uint32_t txIndex) const
    {
        const auto& b = get_block(blockNumber);
        return merkle_prove(tx_leaves(b.transactions), txIndex);
    }

    static bool
    verify_inclusion(const BlockHeader& header, const SignedTransaction& tx,
                     const MerkleProof& proof)
    {
        return merkle_verify(header.merkle_root,
                             merkle_leaf(as_span(tx.wire_bytes())), proof);
    }

    const ChainState&
    state() const
    {
        return mState;
    }

    const ChainState&
    state_at(std::uint64_t blockNumber) const
    {
        if (blockNumber >= mSnapshots.size())
            throw std::out_of_range("unknown block number");
        return mSnapshots[blockNumber];
    }

    // One-shot fork hook used by a dedicated test: drops the newest block and
    // puts its transactions back in front of the pool. Results derived from
    // the discarded block become invalid automatically because the canonical
    // hash at that height changes.
    void
    reorg_drop_last()
    {
        if (mChain.size() <= 1)
            throw std::logic_error("cannot drop genesis");
        auto dropped = std::move(mChain.back());
        mChain.pop_back();
        mSnapshots.pop_back();
        mState = mSnapshots.back();
        for (auto it = dropped.transactions.rbegin();
             it != dropped.transactions.rend(); ++it)
            mPending.push_front(std::move(*it));
    }

  private:
    std::vector<Block> mChain;
    std::vector<ChainState> mSnapshots; // state after each block
    std::deque<SignedTransaction> mPending;
    std::map<Address, std::uint64_t> mNextNonce; // admission-time nonce check
    ChainState mState;
};

}
