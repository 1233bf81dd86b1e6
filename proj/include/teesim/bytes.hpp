// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace teesim
{

using Bytes = std::vector<std::uint8_t>;
using ByteSpan = std::span<const std::uint8_t>;

inline ByteSpan
as_span(const Bytes& b)
{
    return ByteSpan(b.data(), b.size());
}

inline ByteSpan
as_span(std::string_view s)
{
    return ByteSpan(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

template <std::size_t N>
inline ByteSpan
as_span(const std::array<std::uint8_t, N>& a)
{
    return ByteSpan(a.data(), N);
}

inline Bytes
to_bytes(std::string_view s)
{
    return Bytes(s.begin(), s.end());
}

inline std::string
to_hex(ByteSpan data)
{
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (auto b : data)
    {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

inline Bytes
from_hex(std::string_view hex)
{
    auto nib = [](char c) -> int {
        if (c >= '0' && c <= '9')
            return c - '0';
        if (c >= 'a' && c <= 'f')
            return c - 'a' + 10;
        if (c >= 'A' && c <= 'F')
            return c - 'A' + 10;
        return -1;
    };
    if (hex.size() % 2 != 0)
        throw std::invalid_argument("hex string with odd length");
    Bytes out;
    out.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2)
    {
        int hi = nib(hex[i]);
        int lo = nib(hex[i + 1]);
        if (hi < 0 || lo < 0)
            throw std::invalid_argument("invalid hex digit");
        out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
    }
    return out;
}

// Canonical little-endian byte codec used for everything that is hashed,
// signed or encrypted. Encodings must be stable across platforms and runs.
class ByteWriter
{
  public:
    void
    u8(std::uint8_t v)
    {
        mOut.push_back(v);
    }

    void
    u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i)
            mOut.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    void
    u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i)
            mOut.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    void
    i64(std::int64_t v)
    {
        u64(static_cast<std::uint64_t>(v));
    }

    // Length-prefixed variable byte string.
    void
    bytes(ByteSpan data)
    {
        u32(static_cast<std::uint32_t>(data.size()));
        raw(data);
    }

    void
    str(std::string_view s)
    {
        bytes(as_span(s));
    }

    // Fixed-width data, no length prefix.
    void
    raw(ByteSpan data)
    {
        mOut.insert(mOut.end(), data.begin(), data.end());
    }

    template <std::size_t N>
    void
    fixed(const std::array<std::uint8_t, N>& a)
    {
        raw(as_span(a));
    }

    Bytes
    take()
    {
        return std::move(mOut);
    }

    const Bytes&
    data() const
    {
        return mOut;
    }

  private:
    Bytes mOut;
};

class ByteReader
{
  public:
    explicit ByteReader(ByteSpan data) : mData(data)
    {
    }

    std::uint8_t
    u8()
    {
        need(1);
        return mData[mPos++];
    }

    std::uint32_t
    u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(mData[mPos++]) << (8 * i);
        return v;
    }

    std::uint64_t
    u64()
    {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(mData[mPos++]) << (8 * i);
        return v;
    }

    std::int64_t
    i64()
    {
        return static_cast<std::int64_t>(u64());
    }

    Bytes
    bytes()
    {
        auto n = u32();
        need(n);
        Bytes out(mData.begin() + mPos, mData.begin() + mPos + n);
        mPos += n;
        return out;
    }

    std::string
    str()
    {
        auto b = bytes();
        return std::string(b.begin(), b.end());
    }

    template <std::size_t N>
    std::array<std::uint8_t, N>
    fixed()
    {
        need(N);
        std::array<std::uint8_t, N> a;
        std::memcpy(a.data(), mData.data() + mPos, N);
        mPos += N;
        return a;
    }

    bool
    done() const
    {
        return mPos == mData.size();
    }

    std::size_t
    remaining() const
    {
        return mData.size() - mPos;
    }

  private:
    void
    need(std::size_t n) const
    {
        if (mPos + n > mData.size())
            throw std::out_of_range("byte reader: truncated input");
    }

    ByteSpan mData;
    std::size_t mPos = 0;
};

}
