// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include "teesim/bytes.hpp"

#include <sodium.h>

#include <cstdint>
#include <string_view>

namespace teesim
{

inline void
ensure_sodium()
{
    static const int rc = sodium_init();
    if (rc < 0)
        throw std::runtime_error("sodium_init failed");
}

// Splittable, counter-based deterministic generator. Every random choice in a
// run derives from one seed through labeled splits, so two runs with the same
// seed replay bit-identically on any platform. The stream is SHA-256 of
// (key, block counter); splits re-key with a domain-separated label.
class DetRng
{
  public:
    explicit DetRng(std::uint64_t seed)
    {
        ensure_sodium();
        ByteWriter w;
        w.str("teesim.rng.root");
        w.u64(seed);
        keyFrom(as_span(w.data()));
    }

    explicit DetRng(const std::array<std::uint8_t, 32>& key) : mKey(key)
    {
        ensure_sodium();
    }

    DetRng
    split(std::string_view label) const
    {
        ByteWriter w;
        w.fixed(mKey);
        w.u8(0xff);
        w.str(label);
        std::array<std::uint8_t, 32> k;
        crypto_hash_sha256(k.data(), w.data().data(), w.data().size());
        return DetRng(k);
    }

    DetRng
    split(std::string_view label, std::uint64_t index) const
    {
        ByteWriter w;
        w.fixed(mKey);
        w.u8(0xfe);
        w.str(label);
        w.u64(index);
        std::array<std::uint8_t, 32> k;
        crypto_hash_sha256(k.data(), w.data().data(), w.data().size());
        return DetRng(k);
    }

    std::uint64_t
    next_u64()
    {
        if (mBufUsed + 8 > mBuf.size())
            refill();
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(mBuf[mBufUsed++]) << (8 * i);
        return v;
    }

    // Unbiased integer in [0, bound).
    std::uint64_t
    uniform_below(std::uint64_t bound)
    {
        if (bound == 0)
            throw std::invalid_argument("uniform_below(0)");
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t v;
        do
        {
            v = next_u64();
        } while (v >= limit);
        return v % bound;
    }

    // Integer in [lo, hi] inclusive.
    std::uint64_t
    uniform_range(std::uint64_t lo, std::uint64_t hi)
    {
        if (hi < lo)
            throw std::invalid_argument("uniform_range: hi < lo");
        return lo + uniform_below(hi - lo + 1);
    }

    double
    uniform01()
    {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    void
    fill(std::uint8_t* out, std::size_t n)
    {
        for (std::size_t i = 0; i < n; ++i)
        {
            if (mBufUsed == mBuf.size())
                refill();
            out[i] = mBuf[mBufUsed++];
        }
    }

    Bytes
    bytes(std::size_t n)
    {
        Bytes out(n);
        fill(out.data(), n);
        return out;
    }

    template <std::size_t N>
    std::array<std::uint8_t, N>
    array()
    {
        std::array<std::uint8_t, N> a;
        fill(a.data(), N);
        return a;
    }

  private:
    void
    keyFrom(ByteSpan material)
    {
        crypto_hash_sha256(mKey.data(), material.data(), material.size());
    }

    void
    refill()
    {
        ByteWriter w;
        w.fixed(mKey);
        w.u64(mCounter++);
        crypto_hash_sha256(mBuf.data(), w.data().data(), w.data().size());
        mBufUsed = 0;
    }

    std::array<std::uint8_t, 32> mKey{};
    std::array<std::uint8_t, 32> mBuf{};
    std::uint64_t mCounter = 0;
    std::size_t mBufUsed = 32; // force refill on first use
};

}
