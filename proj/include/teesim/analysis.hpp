// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include "teesim/rng.hpp"
#include "teesim/selection.hpp"
#include "teesim/storage.hpp"

#include <gmpxx.h>

#include <cmath>
#include <cstdint>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace teesim
{

// Closed-form calculators for the protocol's probability claims, evaluated in
// exact rational arithmetic, with Monte-Carlo cross-validation against the
// real committee-selection and subnet-draw code.

struct LivenessQuery
{
    std::uint64_t n = 1;        // total nodes
    std::uint64_t c = 1;        // committee size per round
    std::uint64_t t_rounds = 1; // rounds elapsed
    std::uint64_t honest = 1;   // honest node count
};

// Probability that a request is processed within t rounds when only one
// honest node exists: 1 - (1 - c/n)^t.
inline TailProbability
liveness_delta(const LivenessQuery& q)
{
    if (q.n == 0 || q.c == 0 || q.c > q.n)
        throw std::invalid_argument("liveness_delta: need 1 <= c <= n");
    if (q.honest != 1)
        throw std::invalid_argument(
            "liveness_delta: closed form covers the single-honest worst case");
    mpq_class miss(q.n - q.c, q.n);
    miss.canonicalize();
    mpq_class missAll = 1;
    for (std::uint64_t i = 0; i < q.t_rounds; ++i)
        missAll *= miss;
    mpq_class delta = mpq_class(1) - missAll;
    delta.canonicalize();
    return TailProbability{delta};
}

struct MonteCarloEstimate
{
    double p_hat = 0;
    double std_error = 0;
    std::uint64_t trials = 0;
};

// Simulates t rounds of committee draws with the production selection rule
// and honest nodes at random positions; a trial hits when any round selects
// any honest node.
inline MonteCarloEstimate
liveness_montecarlo(const LivenessQuery& q, std::uint64_t trials,
                    std::uint64_t seed)
{
    if (q.n == 0 || q.c == 0 || q.c > q.n || q.honest == 0 ||
        q.honest > q.n)
        throw std::invalid_argument("liveness_montecarlo: bad query");
    if (trials < 1000)
        throw std::invalid_argument(
            "liveness_montecarlo: need at least 1000 trials");
    DetRng rng(seed);
    std::uint64_t hits = 0;
    std::vector<bool> isHonest(q.n);
    for (std::uint64_t trial = 0; trial < trials; ++trial)
    {
        std::fill(isHonest.begin(), isHonest.end(), false);
        for (std::uint64_t placed = 0; placed < q.honest;)
        {
            auto idx = rng.uniform_below(q.n);
            if (!isHonest[idx])
            {
                isHonest[idx] = true;
                ++placed;
            }
        }
        bool hit = false;
        for (std::uint64_t round = 0; round < q.t_rounds && !hit; ++round)
            for (auto member : select_committee(rng.next_u64(), q.n, q.c))
                if (isHonest[member])
                {
                    hit = true;
                    break;
                }
        if (hit)
            ++hits;
    }
    MonteCarloEstimate est;
    est.trials = trials;
    est.p_hat = static_cast<double>(hits) / static_cast<double>(trials);
    est.std_error =
        std::sqrt(est.p_hat * (1.0 - est.p_hat) /
                  static_cast<double>(trials));
    return est;
}

// Empirical counterpart of rsts_epsilon: frequency of subnet draws where the
// adversary's m nodes cover the full confirmation threshold.
inline MonteCarloEstimate
rsts_montecarlo(std::uint64_t n, std::uint64_t m, std::uint64_t s,
                std::uint64_t t, std::uint64_t trials, std::uint64_t seed)
{
    DetRng rng(seed);
    std::uint64_t hits = 0;
    for (std::uint64_t trial = 0; trial < trials; ++trial)
    {
        Digest round{}, blob{};
        auto r = rng.next_u64();
        auto b = rng.next_u64();
        std::memcpy(round.bytes.data(), &r, 8);
        std::memcpy(blob.bytes.data(), &b, 8);
        std::uint64_t adversarial = 0;
        for (auto member : select_subnet(round, blob, n, s))
            if (member < m) // adversary controls indices 0..m-1, wlog
                ++adversarial;
        if (adversarial >= t)
            ++hits;
    }
    MonteCarloEstimate est;
    est.trials = trials;
    est.p_hat = static_cast<double>(hits) / static_cast<double>(trials);
    est.std_error = std::sqrt(est.p_hat * (1.0 - est.p_hat) /
                              static_cast<double>(trials));
    return est;
}

struct RstsCell
{
    std::uint64_t n = 0, m = 0, s = 0, t = 0;
    TailProbability epsilon;
    bool reference_cell = false; // the documented n=10000 headline setting
};

inline bool
is_reference_rsts_cell(std::uint64_t n, std::uint64_t m, std::uint64_t s,
                       std::uint64_t t)
{
    return n == 10000 && m == n / 3 && s == 38 && t == (9 * s + 9) / 10;
}

inline std::vector<RstsCell>
rsts_sweep(const std::vector<std::array<std::uint64_t, 4>>& grid)
{
    std::vector<RstsCell> rows;
    rows.reserve(grid.size());
    for (const auto& [n, m, s, t] : grid)
    {
        RstsCell cell;
        cell.n = n;
        cell.m = m;
        cell.s = s;
        cell.t = t;
        cell.epsilon = rsts_epsilon(n, m, s, t);
        cell.reference_cell = is_reference_rsts_cell(n, m, s, t);
        rows.push_back(std::move(cell));
    }
    return rows;
}

inline std::string
rational_str(const mpq_class& q)
{
    return q.get_str();
}

inline void
emit_rsts_csv(std::ostream& os, const std::vector<RstsCell>& rows)
{
    os << "n,m,s,t,epsilon_exact,epsilon_log10,reference_cell\n";
    for (const auto& r : rows)
    {
        os << r.n << ',' << r.m << ',' << r.s << ',' << r.t << ','
           << rational_str(r.epsilon.exact) << ',';
        if (r.epsilon.exact == 0)
            os << "-inf";
        else
            os << r.epsilon.log10();
        os << ',' << (r.reference_cell ? 1 : 0) << '\n';
    }
}

}
