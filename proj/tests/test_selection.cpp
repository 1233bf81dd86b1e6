// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#include "teesim/rng.hpp"
#include "teesim/selection.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <set>

using namespace teesim;

namespace
{

// Independent oracle for the stride rule: smallest value >= floor(n/c) that
// is coprime with n, found by brute scan.
std::uint64_t
stride_oracle(std::uint64_t n, std::uint64_t c)
{
    for (std::uint64_t step = n / c;; ++step)
        if (std::gcd(step, n) == 1)
            return step;
}

}

TEST_CASE("committee stride matches direct evaluation", "[selection]")
{
    REQUIRE(committee_stride(10, 3) == 3); // gcd(3,10)=1
    REQUIRE(committee_stride(9, 3) == 4);  // gcd(3,9)=3, gcd(4,9)=1
    REQUIRE(committee_stride(1, 1) == 1);

    SECTION("oracle agreement over all n <= 128")
    {
        for (std::uint64_t n = 1; n <= 128; ++n)
            for (std::uint64_t c = 1; c <= n; ++c)
                REQUIRE(committee_stride(n, c) == stride_oracle(n, c));
    }

    SECTION("result is always coprime with n")
    {
        for (std::uint64_t n = 1; n <= 128; ++n)
            for (std::uint64_t c = 1; c <= n; ++c)
                REQUIRE(std::gcd(committee_stride(n, c), n) == 1);
    }

    SECTION("parameter errors")
    {
        REQUIRE_THROWS_AS(committee_stride(0, 1), std::invalid_argument);
        REQUIRE_THROWS_AS(committee_stride(10, 0), std::invalid_argument);
        REQUIRE_THROWS_AS(committee_stride(3, 4), std::invalid_argument);
    }
}

TEST_CASE("committee member computation", "[selection]")
{
    SECTION("worked example: seed 7 mod 10, n=10, c=3")
    {
        auto m = select_committee(7, 10, 3);
        REQUIRE(m == std::vector<std::uint32_t>{7, 0, 3});
    }

    SECTION("c = n covers all indices exactly once")
    {
        for (std::uint64_t n : {1u, 2u, 5u, 12u, 31u})
        {
            auto m = select_committee(99991, n, n);
            std::set<std::uint32_t> distinct(m.begin(), m.end());
            REQUIRE(distinct.size() == n);
        }
    }

    SECTION("members are distinct for sampled (n, c, seed)")
    {
        DetRng rng(5);
        for (int trial = 0; trial < 2000; ++trial)
        {
            auto n = 1 + rng.uniform_below(512);
            auto c = 1 + rng.uniform_below(n);
            auto seed = rng.next_u64();
            auto m = select_committee(seed, n, c);
            REQUIRE(m.size() == c);
            std::set<std::uint32_t> distinct(m.begin(), m.end());
            REQUIRE(distinct.size() == c);
            for (auto idx : m)
                REQUIRE(idx < n);
        }
    }
}

TEST_CASE("selection frequency is c/n", "[selection]")
{
    // n=10, c=3 over 10^4 random seeds: every index near 0.3.
    DetRng rng(17);
    std::array<int, 10> hits{};
    const int trials = 10000;
    for (int i = 0; i < trials; ++i)
        for (auto idx : select_committee(rng.next_u64(), 10, 3))
            ++hits[idx];
    for (auto h : hits)
    {
        double freq = static_cast<double>(h) / trials;
        REQUIRE(freq > 0.28);
        REQUIRE(freq < 0.32);
    }
}

TEST_CASE("eligibility is a pure function of the block hash", "[selection]")
{
    DetRng rng(23);
    auto hash = sha256(as_span(rng.bytes(32)));

    SECTION("n = 1 is always selected")
    {
        REQUIRE(is_selected(0, hash, 1, 1));
    }

    SECTION("two views with the same registry agree on every block")
    {
        for (int i = 0; i < 50; ++i)
        {
            auto h = sha256(as_span(rng.bytes(16)));
            for (std::uint32_t idx = 0; idx < 7; ++idx)
                REQUIRE(is_selected(idx, h, 7, 3) ==
                        is_selected(idx, h, 7, 3));
        }
    }

    SECTION("round seed reads the hash prefix")
    {
        Digest d{};
        d.bytes[0] = 0x2a; // little-endian u64 = 42
        REQUIRE(round_seed(d) == 42);
    }
}
