// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#include "teesim/rng.hpp"
#include "teesim/vm.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace teesim;

namespace
{

// Minimal in-test host: one flat world of contracts, no ACLs, straight
// dispatch. The enclave repeats this with encryption and ACL checks on top.
struct World : CallHost
{
    std::map<Address, std::pair<std::string, StateMap>> contracts;
    std::vector<std::pair<Address, Bytes>> events;
    std::uint32_t depth = 0;

    Address
    add(std::string program, const Address& addr)
    {
        contracts[addr] = {std::move(program), {}};
        return addr;
    }

    VmOutcome
    invoke(const Address& caller, const Address& self, const std::string& fn,
           ByteSpan args, std::uint64_t& budget)
    {
        auto it = contracts.find(self);
        if (it == contracts.end())
            return VmOutcome::fail(VmStatus::BadRequest);
        auto snapshot = contracts; // crude whole-world rollback
        auto eventsMark = events.size();
        ExecContext ctx(caller, self, it->second.second, budget, *this);
        VmOutcome out;
        try
        {
            out = vm_invoke(it->second.first, ctx, fn, args);
        }
        catch (const OutOfStepsSignal&)
        {
            out = VmOutcome::fail(VmStatus::OutOfSteps);
        }
        if (!out.ok())
        {
            for (auto& [a, cs] : snapshot)
                contracts[a].second = cs.second;
            events.resize(eventsMark);
        }
        return out;
    }

    VmOutcome
    call(const Address& caller, const Address& callee, const std::string& fn,
         ByteSpan args, std::uint64_t& budget) override
    {
        if (++depth > 32)
        {
            --depth;
            return VmOutcome::fail(VmStatus::DepthExceeded);
        }
        auto out = invoke(caller, callee, fn, args, budget);
        --depth;
        return out;
    }

    void
    emit(const Address& self, Bytes, Bytes data) override
    {
        events.emplace_back(self, std::move(data));
    }
};

Address
addr_of(std::uint8_t tag)
{
    Address a{};
    a[0] = tag;
    return a;
}

Bytes
args_addr_u64(const Address& a, std::uint64_t v)
{
    ByteWriter w;
    w.fixed(a);
    w.u64(v);
    return w.take();
}

std::uint64_t
as_u64(const Bytes& ret)
{
    return ByteReader(as_span(ret)).u64();
}

}

TEST_CASE("token transfers and conservation", "[vm]")
{
    World w;
    auto alice = addr_of(1), bob = addr_of(2);
    auto tok = w.add("token", addr_of(0x10));
    std::uint64_t budget = 100000;

    REQUIRE(w.invoke(alice, tok, "init", as_span(args_addr_u64(alice, 100)),
                     budget)
                .ok());

    SECTION("mint 100 to A, transfer 40 to B")
    {
        auto rc =
            w.invoke(alice, tok, "transfer", as_span(args_addr_u64(bob, 40)),
                     budget);
        REQUIRE(rc.ok());
        auto balA = w.invoke(alice, tok, "balance_of",
                             as_span(args_addr_u64(alice, 0)), budget);
        // balance_of args only need the address; extra bytes are ignored.
        REQUIRE(as_u64(balA.ret) == 60);
        auto balB = w.invoke(alice, tok, "balance_of",
                             as_span(args_addr_u64(bob, 0)), budget);
        REQUIRE(as_u64(balB.ret) == 40);
    }

    SECTION("transfer beyond balance fails with no state delta")
    {
        auto before = w.contracts[tok].second;
        auto rc = w.invoke(alice, tok, "transfer",
                           as_span(args_addr_u64(bob, 101)), budget);
        REQUIRE(rc.status == VmStatus::Reverted);
        REQUIRE(w.contracts[tok].second == before);
    }

    SECTION("transfer of zero is a no-op success")
    {
        auto rc = w.invoke(alice, tok, "transfer",
                           as_span(args_addr_u64(bob, 0)), budget);
        REQUIRE(rc.ok());
    }

    SECTION("mint by non-minter is rejected")
    {
        auto rc = w.invoke(bob, tok, "mint", as_span(args_addr_u64(bob, 5)),
                           budget);
        REQUIRE(rc.status == VmStatus::Reverted);
    }

    SECTION("random transfer sequences conserve total supply")
    {
        DetRng rng(3);
        std::vector<Address> holders{alice, bob, addr_of(3), addr_of(4)};
        // Reference ledger mirrors expected balances.
        std::map<Address, std::uint64_t> model{{alice, 100}};
        for (int step = 0; step < 300; ++step)
        {
            auto from = holders[rng.uniform_below(holders.size())];
            auto to = holders[rng.uniform_below(holders.size())];
            auto amount = rng.uniform_below(40);
            auto rc = w.invoke(from, tok, "transfer",
                               as_span(args_addr_u64(to, amount)), budget);
            budget = 100000;
            if (model[from] >= amount)
            {
                REQUIRE(rc.ok());
                model[from] -= amount;
                model[to] += amount;
            }
            else
                REQUIRE(rc.status == VmStatus::Reverted);
        }
        std::uint64_t total = 0;
        for (auto& [who, bal] : model)
        {
            auto rc = w.invoke(alice, tok, "balance_of",
                               as_span(args_addr_u64(who, 0)), budget);
            budget = 100000;
            REQUIRE(as_u64(rc.ret) == bal);
            total += bal;
        }
        REQUIRE(total == 100);
        auto sup =
            w.invoke(alice, tok, "total_supply", ByteSpan{}, budget);
        REQUIRE(as_u64(sup.ret) == 100);
    }
}

TEST_CASE("dex constant-product swaps", "[vm]")
{
    World w;
    auto lp = addr_of(1), trader = addr_of(2);
    auto tokX = w.add("token", addr_of(0x20));
    auto tokY = w.add("token", addr_of(0x21));
    auto dex = w.add("dex", addr_of(0x22));
    std::uint64_t budget = 1'000'000;

    REQUIRE(w.invoke(lp, tokX, "init", as_span(args_addr_u64(lp, 10000)),
                     budget)
                .ok());
    REQUIRE(w.invoke(lp, tokY, "init", as_span(args_addr_u64(lp, 10000)),
                     budget)
                .ok());
    {
        ByteWriter init;
        init.fixed(tokX);
        init.fixed(tokY);
        init.u64(0); // zero fee
        REQUIRE(w.invoke(lp, dex, "init", as_span(init.data()), budget).ok());
    }

    SECTION("swap against an empty pool fails")
    {
        ByteWriter sw;
        sw.fixed(tokX);
        sw.u64(100);
        auto rc = w.invoke(trader, dex, "swap", as_span(sw.data()), budget);
        REQUIRE(rc.status == VmStatus::Reverted);
    }

    // Seed the pool 1000/1000.
    REQUIRE(w.invoke(lp, tokX, "approve", as_span(args_addr_u64(dex, 1000)),
                     budget)
                .ok());
    REQUIRE(w.invoke(lp, tokY, "approve", as_span(args_addr_u64(dex, 1000)),
                     budget)
                .ok());
    {
        ByteWriter add;
        add.u64(1000);
        add.u64(1000);
        REQUIRE(w.invoke(lp, dex, "add_liquidity", as_span(add.data()), budget)
                    .ok());
    }

    SECTION("pool (1000,1000), swap in 100 with zero fee pays out 90")
    {
        REQUIRE(w.invoke(lp, tokX, "transfer",
                         as_span(args_addr_u64(trader, 100)), budget)
                    .ok());
        REQUIRE(w.invoke(trader, tokX, "approve",
                         as_span(args_addr_u64(dex, 100)), budget)
                    .ok());
        ByteWriter sw;
        sw.fixed(tokX);
        sw.u64(100);
        auto rc = w.invoke(trader, dex, "swap", as_span(sw.data()), budget);
        REQUIRE(rc.ok());
        REQUIRE(as_u64(rc.ret) == 90); // floor(1000 - 1000*1000/1100)

        auto balY = w.invoke(trader, tokY, "balance_of",
                             as_span(args_addr_u64(trader, 0)), budget);
        REQUIRE(as_u64(balY.ret) == 90);
        // Three contracts were updated atomically.
        auto res = w.invoke(trader, dex, "reserves", ByteSpan{}, budget);
        ByteReader rr(as_span(res.ret));
        REQUIRE(rr.u64() == 1100);
        REQUIRE(rr.u64() == 910);
    }

    SECTION("the product x*y never decreases across random swaps")
    {
        DetRng rng(8);
        REQUIRE(w.invoke(lp, tokX, "transfer",
                         as_span(args_addr_u64(trader, 2000)), budget)
                    .ok());
        REQUIRE(w.invoke(lp, tokY, "transfer",
                         as_span(args_addr_u64(trader, 2000)), budget)
                    .ok());
        for (int i = 0; i < 50; ++i)
        {
            auto res = w.invoke(trader, dex, "reserves", ByteSpan{}, budget);
            ByteReader rr(as_span(res.ret));
            auto rx = rr.u64();
            auto ry = rr.u64();
            auto before = static_cast<unsigned __int128>(rx) * ry;

            auto& tokIn = (i % 2 == 0) ? tokX : tokY;
            std::uint64_t amount = 1 + rng.uniform_below(150);
            REQUIRE(w.invoke(trader, tokIn, "approve",
                             as_span(args_addr_u64(dex, amount)), budget)
                        .ok());
            ByteWriter sw;
            sw.fixed(tokIn);
            sw.u64(amount);
            auto rc = w.invoke(trader, dex, "swap", as_span(sw.data()), budget);
            budget = 1'000'000;
            if (!rc.ok())
                continue; // trader ran dry, fine
            res = w.invoke(trader, dex, "reserves", ByteSpan{}, budget);
            ByteReader r2(as_span(res.ret));
            auto after = static_cast<unsigned __int128>(r2.u64()) * r2.u64();
            REQUIRE(after >= before);
        }
    }

    SECTION("failed inner transfer leaves all three contracts untouched")
    {
        auto snapX = w.contracts[tokX].second;
        auto snapD = w.contracts[dex].second;
        // No approval from trader: transfer_from inside swap reverts.
        ByteWriter sw;
        sw.fixed(tokX);
        sw.u64(50);
        auto rc = w.invoke(trader, dex, "swap", as_span(sw.data()), budget);
        REQUIRE_FALSE(rc.ok());
        REQUIRE(w.contracts[tokX].second == snapX);
        REQUIRE(w.contracts[dex].second == snapD);
    }
}

TEST_CASE("second-price auction", "[vm]")
{
    World w;
    auto owner = addr_of(1);
    auto a = addr_of(2), b = addr_of(3), c = addr_of(4);
    auto tok = w.add("token", addr_of(0x30));
    auto auc = w.add("auction", addr_of(0x31));
    std::uint64_t budget = 1'000'000;

    REQUIRE(
        w.invoke(owner, tok, "init", as_span(args_addr_u64(owner, 1000)),
                 budget)
            .ok());
    for (auto who : {a, b, c})
        REQUIRE(w.invoke(owner, tok, "transfer",
                         as_span(args_addr_u64(who, 100)), budget)
                    .ok());

    auto initAuction = [&](std::uint64_t reserve) {
        ByteWriter init;
        init.fixed(tok);
        init.u64(reserve);
        REQUIRE(
            w.invoke(owner, auc, "init", as_span(init.data()), budget).ok());
    };
    auto bid = [&](const Address& who, std::uint64_t amount) {
        REQUIRE(w.invoke(who, tok, "approve",
                         as_span(args_addr_u64(auc, amount)), budget)
                    .ok());
        ByteWriter wb;
        wb.u64(amount);
        return w.invoke(who, auc, "bid", as_span(wb.data()), budget);
    };
    auto balance = [&](const Address& who) {
        auto rc = w.invoke(owner, tok, "balance_of",
                           as_span(args_addr_u64(who, 0)), budget);
        return as_u64(rc.ret);
    };

    SECTION("bids {A:10, B:7, C:9} -> A wins and pays 9")
    {
        initAuction(0);
        REQUIRE(bid(a, 10).ok());
        REQUIRE(bid(b, 7).ok());
        REQUIRE(bid(c, 9).ok());
        auto rc = w.invoke(owner, auc, "close", ByteSpan{}, budget);
        REQUIRE(rc.ok());
        ByteReader rr(as_span(rc.ret));
        auto winner = rr.fixed<20>();
        REQUIRE(winner == a);
        REQUIRE(rr.u64() == 9);
        REQUIRE(balance(a) == 91); // refunded 10, paid 9
        REQUIRE(balance(b) == 100);
        REQUIRE(balance(c) == 100);
        REQUIRE(balance(owner) == 700 + 9);
    }

    SECTION("single bid pays the configured reserve")
    {
        initAuction(4);
        REQUIRE(bid(a, 10).ok());
        auto rc = w.invoke(owner, auc, "close", ByteSpan{}, budget);
        REQUIRE(rc.ok());
        ByteReader rr(as_span(rc.ret));
        REQUIRE(rr.fixed<20>() == a);
        REQUIRE(rr.u64() == 4);
        REQUIRE(balance(a) == 96);
    }

    SECTION("tie goes to the earlier bid")
    {
        initAuction(0);
        REQUIRE(bid(b, 10).ok()); // earlier in global order
        REQUIRE(bid(a, 10).ok());
        auto rc = w.invoke(owner, auc, "close", ByteSpan{}, budget);
        ByteReader rr(as_span(rc.ret));
        REQUIRE(rr.fixed<20>() == b);
        REQUIRE(rr.u64() == 10); // second-highest equals the tied bid
    }

    SECTION("bid after close and duplicate close are rejected")
    {
        initAuction(0);
        REQUIRE(bid(a, 5).ok());
        REQUIRE(w.invoke(owner, auc, "close", ByteSpan{}, budget).ok());
        REQUIRE(bid(b, 6).status == VmStatus::Reverted);
        REQUIRE(w.invoke(owner, auc, "close", ByteSpan{}, budget).status ==
                VmStatus::Reverted);
    }

    SECTION("only the owner can close")
    {
        initAuction(0);
        REQUIRE(w.invoke(a, auc, "close", ByteSpan{}, budget).status ==
                VmStatus::Reverted);
    }
}

TEST_CASE("bounded compute contract", "[vm]")
{
    World w;
    auto user = addr_of(1);
    auto cmp = w.add("compute", addr_of(0x40));

    auto run = [&](std::uint64_t k, std::uint64_t budgetIn) {
        std::uint64_t budget = budgetIn;
        ByteWriter args;
        args.u64(k);
        auto rc = w.invoke(user, cmp, "run", as_span(args.data()), budget);
        return std::make_pair(rc, budgetIn - budget);
    };

    SECTION("k = 0 gives 0")
    {
        auto [rc, steps] = run(0, 1000);
        REQUIRE(rc.ok());
        REQUIRE(ByteReader(as_span(rc.ret)).i64() == 0);
    }

    SECTION("k = 5 gives 1-2+3-4+5 = 3")
    {
        auto [rc, steps] = run(5, 1000);
        REQUIRE(rc.ok());
        REQUIRE(ByteReader(as_span(rc.ret)).i64() == 3);
        REQUIRE(steps == 5);
    }

    SECTION("step use grows exactly linearly in k")
    {
        auto [rc1, s1] = run(100, 1'000'000);
        auto [rc2, s2] = run(1000, 1'000'000);
        REQUIRE(s1 == 100);
        REQUIRE(s2 == 1000);
        // Output width does not depend on k.
        REQUIRE(rc1.ret.size() == rc2.ret.size());
    }

    SECTION("budget exhaustion is deterministic")
    {
        auto [rc, steps] = run(50, 10);
        REQUIRE(rc.status == VmStatus::OutOfSteps);
        REQUIRE(steps == 10); // stopped after exactly the budget
    }
}

TEST_CASE("looper hits the step limit", "[vm]")
{
    World w;
    auto user = addr_of(1);
    auto loop = w.add("looper", addr_of(0x50));
    std::uint64_t budget = 5000;
    auto rc = w.invoke(user, loop, "spin", ByteSpan{}, budget);
    REQUIRE(rc.status == VmStatus::OutOfSteps);
    REQUIRE(budget == 0);
}

TEST_CASE("leaky fixture emits its secret", "[vm]")
{
    World w;
    auto user = addr_of(1);
    auto leak = w.add("leaky", addr_of(0x60));
    std::uint64_t budget = 1000;
    ByteWriter init;
    init.bytes(as_span(to_bytes("super-confidential-configuration")));
    REQUIRE(w.invoke(user, leak, "init", as_span(init.data()), budget).ok());
    REQUIRE(w.invoke(user, leak, "poke", ByteSpan{}, budget).ok());
    REQUIRE(w.events.size() == 1);
    REQUIRE(w.events[0].second == to_bytes("super-confidential-configuration"));
}

TEST_CASE("call depth is capped with a catchable error", "[vm]")
{
    World w;
    auto user = addr_of(1);
    auto rec = w.add("recurse", addr_of(0x55));
    std::uint64_t budget = 100000;
    auto rc = w.invoke(user, rec, "dive", ByteSpan{}, budget);
    REQUIRE(rc.ok());
    REQUIRE(as_u64(rc.ret) == 1); // bottom frame saw DepthExceeded
}

TEST_CASE("unknown function and unknown program", "[vm]")
{
    World w;
    auto user = addr_of(1);
    auto tok = w.add("token", addr_of(0x70));
    std::uint64_t budget = 1000;
    REQUIRE(w.invoke(user, tok, "frobnicate", ByteSpan{}, budget).status ==
            VmStatus::UnknownFunction);
    auto ghost = w.add("no-such-program", addr_of(0x71));
    REQUIRE(w.invoke(user, ghost, "init", ByteSpan{}, budget).status ==
            VmStatus::BadRequest);
}

TEST_CASE("metering is identical across replays", "[vm]")
{
    auto runOnce = [] {
        World w;
        auto user = addr_of(1);
        auto tok = w.add("token", addr_of(0x80));
        std::uint64_t budget = 100000;
        w.invoke(user, tok, "init", as_span(args_addr_u64(user, 50)), budget);
        w.invoke(user, tok, "transfer", as_span(args_addr_u64(addr_of(2), 7)),
                 budget);
        return budget;
    };
    REQUIRE(runOnce() == runOnce());
}
