// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include "teesim/bytes.hpp"

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace teesim
{

// Test instrument for the privacy claims: every secret byte pattern is
// registered as it is created, every byte sequence that reaches the
// adversary-observable surface (chain, wire, host-visible output) is logged,
// and a final sweep reports any secret occurring as a contiguous subsequence
// of any observation.
class TaintLedger
{
  public:
    // Patterns shorter than this cannot be meaningfully matched as
    // substrings and are skipped.
    static constexpr std::size_t MIN_MATCH_LEN = 16;

    struct Violation
    {
        std::string secret;
        std::string channel;
        std::uint64_t tick = 0;
    };

    void
    register_secret(std::string label, ByteSpan pattern)
    {
        if (pattern.size() < MIN_MATCH_LEN)
            return;
        for (const auto& s : mSecrets)
            if (s.pattern.size() == pattern.size() &&
                std::equal(pattern.begin(), pattern.end(), s.pattern.begin()))
                return;
        mSecrets.push_back(
            Secret{std::move(label), Bytes(pattern.begin(), pattern.end())});
    }

    void
    observe(std::string channel, ByteSpan data, std::uint64_t tick)
    {
        mObservations.push_back(Observation{
            std::move(channel), Bytes(data.begin(), data.end()), tick});
        mObservedBytes += data.size();
    }

    // Full post-run sweep; also matches secrets registered after the
    // observation was logged.
    std::vector<Violation>
    scan() const
    {
        std::vector<Violation> out;
        for (const auto& obs : mObservations)
            for (const auto& sec : mSecrets)
                if (std::search(obs.data.begin(), obs.data.end(),
                                sec.pattern.begin(),
                                sec.pattern.end()) != obs.data.end())
                    out.push_back(Violation{sec.label, obs.channel, obs.tick});
        return out;
    }

    std::size_t
    secret_count() const
    {
        return mSecrets.size();
    }

    std::size_t
    observation_count() const
    {
        return mObservations.size();
    }

    std::uint64_t
    observed_bytes() const
    {
        return mObservedBytes;
    }

  private:
    struct Secret
    {
        std::string label;
        Bytes pattern;
    };

    struct Observation
    {
        std::string channel;
        Bytes data;
        std::uint64_t tick;
    };

    std::vector<Secret> mSecrets;
    std::vector<Observation> mObservations;
    std::uint64_t mObservedBytes = 0;
};

}
