// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include "teesim/tx.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace teesim
{

// Confidential contracts are registered deterministic programs. The encrypted
// code blob a user submits is the byte-encoded (program name, init params)
// pair; execution, state layout and step counts are pure functions of it.

using StateMap = std::map<Bytes, Bytes>;

enum class VmStatus : std::uint8_t
{
    Ok = 0,
    Reverted = 1,      // contract-level failure, no state delta
    OutOfSteps = 2,    // step budget exhausted, surfaces as time-exceeded
    UnknownFunction = 3,
    AccessDenied = 4,  // nested call rejected by the callee's ACL
    DepthExceeded = 5,
    BadRequest = 6,    // undecodable input or malformed arguments
    StaleKey = 7,      // request key epoch already retired
};

inline const char*
vm_status_name(VmStatus s)
{
    switch (s)
    {
    case VmStatus::Ok:
        return "ok";
    case VmStatus::Reverted:
        return "reverted";
    case VmStatus::OutOfSteps:
        return "time-exceeded";
    case VmStatus::UnknownFunction:
        return "unknown function";
    case VmStatus::AccessDenied:
        return "access denied";
    case VmStatus::DepthExceeded:
        return "depth exceeded";
    case VmStatus::BadRequest:
        return "bad request";
    case VmStatus::StaleKey:
        return "stale key";
    }
    return "?";
}

struct VmOutcome
{
    VmStatus status = VmStatus::Ok;
    Bytes ret;

    bool
    ok() const
    {
        return status == VmStatus::Ok;
    }

    static VmOutcome
    success(Bytes ret = {})
    {
        return VmOutcome{VmStatus::Ok, std::move(ret)};
    }

    static VmOutcome
    fail(VmStatus s)
    {
        return VmOutcome{s, {}};
    }
};

// Budget exhaustion aborts the whole transaction; it is not catchable by
// contract code, unlike a nested-call failure.
struct OutOfStepsSignal
{
};

class ExecContext;

// Gateway back into the enclave for cross-contract invocation (ACL checks,
// state loading and staging live there) and for plaintext event output.
class CallHost
{
  public:
    virtual ~CallHost() = default;
    virtual VmOutcome call(const Address& caller, const Address& callee,
                           const std::string& fn, ByteSpan args,
                           std::uint64_t& budget) = 0;
    virtual void emit(const Address& self, Bytes topic, Bytes data) = 0;
};

class ExecContext
{
  public:
    ExecContext(Address caller, Address self, StateMap& state,
                std::uint64_t& budget, CallHost& host)
        : mCaller(caller), mSelf(self), mState(state), mBudget(budget),
          mHost(host)
    {
    }

    const Address&
    caller() const
    {
        return mCaller;
    }

    const Address&
    self() const
    {
        return mSelf;
    }

    void
    charge(std::uint64_t steps)
    {
        if (mBudget < steps)
        {
            mBudget = 0;
            throw OutOfStepsSignal{};
        }
        mBudget -= steps;
    }

    std::optional<Bytes>
    get(const Bytes& key)
    {
        charge(1);
        auto it = mState.find(key);
        if (it == mState.end())
            return std::nullopt;
        return it->second;
    }

    void
    put(Bytes key, Bytes value)
    {
        charge(1);
        mState[std::move(key)] = std::move(value);
    }

    void
    erase(const Bytes& key)
    {
        charge(1);
        mState.erase(key);
    }

    std::uint64_t
    get_u64(const Bytes& key)
    {
        auto v = get(key);
        if (!v || v->size() != 8)
            return 0;
        return ByteReader(as_span(*v)).u64();
    }

    void
    put_u64(Bytes key, std::uint64_t value)
    {
        ByteWriter w;
        w.u64(value);
        put(std::move(key), w.take());
    }

    // Range scan by key prefix; charges one step per visited entry.
    template <typename Fn>
    void
    scan_prefix(const Bytes& prefix, Fn&& fn)
    {
        auto it = mState.lower_bound(prefix);
        while (it != mState.end() &&
               it->first.size() >= prefix.size() &&
               std::equal(prefix.begin(), prefix.end(), it->first.begin()))
        {
            charge(1);
            fn(it->first, it->second);
            ++it;
        }
    }

    VmOutcome
    call(const Address& callee, const std::string& fn, ByteSpan args)
    {
        charge(10);
        return mHost.call(mSelf, callee, fn, args, mBudget);
    }

    void
    emit(std::string_view topic, Bytes data)
    {
        charge(1);
        mHost.emit(mSelf, to_bytes(topic), std::move(data));
    }

  private:
    Address mCaller;
    Address mSelf;
    StateMap& mState;
    std::uint64_t& mBudget;
    CallHost& mHost;
};

using ProgramFn =
    std::function<VmOutcome(ExecContext&, const std::string&, ByteSpan)>;

class ProgramRegistry
{
  public:
    static ProgramRegistry&
    instance()
    {
        static ProgramRegistry reg;
        return reg;
    }

    void
    add(std::string name, ProgramFn fn)
    {
        mPrograms[std::move(name)] = std::move(fn);
    }

    const ProgramFn*
    find(const std::string& name) const
    {
        auto it = mPrograms.find(name);
        return it == mPrograms.end() ? nullptr : &it->second;
    }

  private:
    ProgramRegistry();
    std::map<std::string, ProgramFn> mPrograms;
};

inline VmOutcome
vm_invoke(const std::string& program, ExecContext& ctx, const std::string& fn,
          ByteSpan args)
{
    const auto* p = ProgramRegistry::instance().find(program);
    if (!p)
        return VmOutcome::fail(VmStatus::BadRequest);
    try
    {
        return (*p)(ctx, fn, args);
    }
    catch (const std::out_of_range&)
    {
        return VmOutcome::fail(VmStatus::BadRequest); // truncated arguments
    }
}

// Code blobs: (program name, init params).
struct ContractProgram
{
    std::string code_id;
    Bytes init_params;
};

inline Bytes
encode_program(const ContractProgram& p)
{
    ByteWriter w;
    w.str(p.code_id);
    w.bytes(as_span(p.init_params));
    return w.take();
}

inline ContractProgram
decode_program(ByteSpan data)
{
    ByteReader r(data);
    ContractProgram p;
    p.code_id = r.str();
    p.init_params = r.bytes();
    return p;
}

inline Bytes
u64_ret(std::uint64_t v)
{
    ByteWriter w;
    w.u64(v);
    return w.take();
}

inline Bytes
i64_ret(std::int64_t v)
{
    ByteWriter w;
    w.i64(v);
    return w.take();
}

// ---- demo programs ----

namespace programs
{

inline Bytes
balance_key(const Address& a)
{
    ByteWriter w;
    w.str("bal");
    w.fixed(a);
    return w.take();
}

inline Bytes
allowance_key(const Address& owner, const Address& spender)
{
    ByteWriter w;
    w.str("alw");
    w.fixed(owner);
    w.fixed(spender);
    return w.take();
}

// ERC-20 style token: conservation of total supply under transfers.
inline VmOutcome
token(ExecContext& ctx, const std::string& fn, ByteSpan args)
{
    ByteReader r(args);
    if (fn == "init")
    {
        auto minter = r.fixed<20>();
        auto supply = r.u64();
        ctx.put(to_bytes("minter"), Bytes(minter.begin(), minter.end()));
        ctx.put_u64(to_bytes("supply"), supply);
        ctx.put_u64(balance_key(minter), supply);
        return VmOutcome::success();
    }
    if (fn == "mint")
    {
        auto stored = ctx.get(to_bytes("minter"));
        if (!stored || !std::equal(stored->begin(), stored->end(),
                                   ctx.caller().begin(), ctx.caller().end()))
            return VmOutcome::fail(VmStatus::Reverted);
        auto to = r.fixed<20>();
        auto amount = r.u64();
        ctx.put_u64(balance_key(to), ctx.get_u64(balance_key(to)) + amount);
        ctx.put_u64(to_bytes("supply"),
                    ctx.get_u64(to_bytes("supply")) + amount);
        return VmOutcome::success();
    }
    if (fn == "transfer")
    {
        auto to = r.fixed<20>();
        auto amount = r.u64();
        auto from = ctx.caller();
        auto fromBal = ctx.get_u64(balance_key(from));
        if (fromBal < amount)
            return VmOutcome::fail(VmStatus::Reverted);
        ctx.put_u64(balance_key(from), fromBal - amount);
        ctx.put_u64(balance_key(to), ctx.get_u64(balance_key(to)) + amount);
        return VmOutcome::success();
    }
    if (fn == "approve")
    {
        auto spender = r.fixed<20>();
        auto amount = r.u64();
        ctx.put_u64(allowance_key(ctx.caller(), spender), amount);
        return VmOutcome::success();
    }
    if (fn == "transfer_from")
    {
        auto from = r.fixed<20>();
        auto to = r.fixed<20>();
        auto amount = r.u64();
        auto allowed = ctx.get_u64(allowance_key(from, ctx.caller()));
        auto fromBal = ctx.get_u64(balance_key(from));
        if (allowed < amount || fromBal < amount)
            return VmOutcome::fail(VmStatus::Reverted);
        ctx.put_u64(allowance_key(from, ctx.caller()), allowed - amount);
        ctx.put_u64(balance_key(from), fromBal - amount);
        ctx.put_u64(balance_key(to), ctx.get_u64(balance_key(to)) + amount);
        return VmOutcome::success();
    }
    if (fn == "balance_of")
    {
        auto who = r.fixed<20>();
        return VmOutcome::success(u64_ret(ctx.get_u64(balance_key(who))));
    }
    if (fn == "total_supply")
        return VmOutcome::success(u64_ret(ctx.get_u64(to_bytes("supply"))));
    return VmOutcome::fail(VmStatus::UnknownFunction);
}

// Constant-product pool over two token contracts.
inline VmOutcome
dex(ExecContext& ctx, const std::string& fn, ByteSpan args)
{
    ByteReader r(args);
    auto tokenAddr = [&](const char* key) {
        auto v = ctx.get(to_bytes(key));
        Address a{};
        if (v && v->size() == 20)
            std::memcpy(a.data(), v->data(), 20);
        return a;
    };
    auto pull = [&](const Address& token, const Address& from,
                    std::uint64_t amount) {
        ByteWriter w;
        w.fixed(from);
        w.fixed(ctx.self());
        w.u64(amount);
        return ctx.call(token, "transfer_from", as_span(w.data()));
    };
    if (fn == "init")
    {
        auto tx = r.fixed<20>();
        auto ty = r.fixed<20>();
        auto feeBps = r.u64();
        ctx.put(to_bytes("tok_x"), Bytes(tx.begin(), tx.end()));
        ctx.put(to_bytes("tok_y"), Bytes(ty.begin(), ty.end()));
        ctx.put_u64(to_bytes("fee_bps"), feeBps);
        ctx.put_u64(to_bytes("rx"), 0);
        ctx.put_u64(to_bytes("ry"), 0);
        return VmOutcome::success();
    }
    if (fn == "add_liquidity")
    {
        auto dx = r.u64();
        auto dy = r.u64();
        auto rcx = pull(tokenAddr("tok_x"), ctx.caller(), dx);
        if (!rcx.ok())
            return rcx;
        auto rcy = pull(tokenAddr("tok_y"), ctx.caller(), dy);
        if (!rcy.ok())
            return rcy;
        ctx.put_u64(to_bytes("rx"), ctx.get_u64(to_bytes("rx")) + dx);
        ctx.put_u64(to_bytes("ry"), ctx.get_u64(to_bytes("ry")) + dy);
        return VmOutcome::success();
    }
    if (fn == "swap")
    {
        auto tokenIn = r.fixed<20>();
        auto amountIn = r.u64();
        auto tx = tokenAddr("tok_x");
        auto ty = tokenAddr("tok_y");
        bool inIsX = tokenIn == tx;
        if (!inIsX && tokenIn != ty)
            return VmOutcome::fail(VmStatus::Reverted);
        auto reserveIn = ctx.get_u64(inIsX ? to_bytes("rx") : to_bytes("ry"));
        auto reserveOut = ctx.get_u64(inIsX ? to_bytes("ry") : to_bytes("rx"));
        if (reserveIn == 0 || reserveOut == 0 || amountIn == 0)
            return VmOutcome::fail(VmStatus::Reverted);
        auto feeBps = ctx.get_u64(to_bytes("fee_bps"));
        // out = floor(in' * r_out / (r_in + in')) with in' fee-discounted;
        // flooring keeps the product x*y non-decreasing.
        unsigned __int128 inEff =
            static_cast<unsigned __int128>(amountIn) * (10000 - feeBps);
        unsigned __int128 num =
            inEff * static_cast<unsigned __int128>(reserveOut);
        unsigned __int128 den =
            static_cast<unsigned __int128>(reserveIn) * 10000 + inEff;
        auto amountOut = static_cast<std::uint64_t>(num / den);

        auto rcIn = pull(inIsX ? tx : ty, ctx.caller(), amountIn);
        if (!rcIn.ok())
            return rcIn;
        ByteWriter w;
        w.fixed(ctx.caller());
        w.u64(amountOut);
        auto rcOut = ctx.call(inIsX ? ty : tx, "transfer", as_span(w.data()));
        if (!rcOut.ok())
            return rcOut;
        ctx.put_u64(inIsX ? to_bytes("rx") : to_bytes("ry"),
                    reserveIn + amountIn);
        ctx.put_u64(inIsX ? to_bytes("ry") : to_bytes("rx"),
                    reserveOut - amountOut);
        return VmOutcome::success(u64_ret(amountOut));
    }
    if (fn == "reserves")
    {
        ByteWriter w;
        w.u64(ctx.get_u64(to_bytes("rx")));
        w.u64(ctx.get_u64(to_bytes("ry")));
        return VmOutcome::success(w.take());
    }
    return VmOutcome::fail(VmStatus::UnknownFunction);
}

// Second-price auction escrowing payments in a token contract. The highest
// bidder wins but pays the runner-up's bid; global transaction order breaks
// ties in favor of the earlier bid.
inline VmOutcome
auction(ExecContext& ctx, const std::string& fn, ByteSpan args)
{
    ByteReader r(args);
    if (fn == "init")
    {
        auto token = r.fixed<20>();
        auto reserve = r.u64();
        ctx.put(to_bytes("token"), Bytes(token.begin(), token.end()));
        ctx.put_u64(to_bytes("reserve"), reserve);
        ctx.put(to_bytes("owner"),
                Bytes(ctx.caller().begin(), ctx.caller().end()));
        ctx.put_u64(to_bytes("nbids"), 0);
        return VmOutcome::success();
    }
    auto tokenOf = [&]() {
        auto v = ctx.get(to_bytes("token"));
        Address a{};
        if (v && v->size() == 20)
            std::memcpy(a.data(), v->data(), 20);
        return a;
    };
    auto bidKey = [](const Address& a) {
        Bytes k = to_bytes("bid");
        k.insert(k.end(), a.begin(), a.end());
        return k;
    };
    if (fn == "bid")
    {
        if (ctx.get(to_bytes("closed")))
            return VmOutcome::fail(VmStatus::Reverted);
        auto amount = r.u64();
        if (ctx.get(bidKey(ctx.caller())))
            return VmOutcome::fail(VmStatus::Reverted); // one bid per bidder
        ByteWriter w;
        w.fixed(ctx.caller());
        w.fixed(ctx.self());
        w.u64(amount);
        auto rc = ctx.call(tokenOf(), "transfer_from", as_span(w.data()));
        if (!rc.ok())
            return rc;
        auto order = ctx.get_u64(to_bytes("nbids"));
        ByteWriter rec;
        rec.u64(amount);
        rec.u64(order);
        ctx.put(bidKey(ctx.caller()), rec.take());
        ctx.put_u64(to_bytes("nbids"), order + 1);
        return VmOutcome::success();
    }
    if (fn == "close")
    {
        auto owner = ctx.get(to_bytes("owner"));
        if (!owner || !std::equal(owner->begin(), owner->end(),
                                  ctx.caller().begin(), ctx.caller().end()))
            return VmOutcome::fail(VmStatus::Reverted);
        if (ctx.get(to_bytes("closed")))
            return VmOutcome::fail(VmStatus::Reverted);

        struct BidRow
        {
            Address who;
            std::uint64_t amount;
            std::uint64_t order;
        };
        std::vector<BidRow> bids;
        Bytes prefix = to_bytes("bid");
        ctx.scan_prefix(prefix, [&](const Bytes& key, const Bytes& val) {
            Address who{};
            std::memcpy(who.data(), key.data() + prefix.size(), 20);
            ByteReader rr(as_span(val));
            auto amount = rr.u64();
            auto order = rr.u64();
            bids.push_back(BidRow{who, amount, order});
        });
        std::size_t win = 0;
        std::uint64_t second = 0;
        for (std::size_t i = 1; i < bids.size(); ++i)
        {
            bool beats = bids[i].amount > bids[win].amount ||
                         (bids[i].amount == bids[win].amount &&
                          bids[i].order < bids[win].order);
            if (beats)
                win = i;
        }
        for (std::size_t i = 0; i < bids.size(); ++i)
            if (i != win)
                second = std::max(second, bids[i].amount);
        auto count = bids.size();
        Address winner = count ? bids[win].who : Address{};
        auto reserve = ctx.get_u64(to_bytes("reserve"));
        std::uint64_t price =
            count == 0 ? 0 : (count == 1 ? reserve : std::max(second, reserve));

        auto payout = [&](const Address& to, std::uint64_t amount) {
            if (amount == 0)
                return VmOutcome::success();
            ByteWriter w;
            w.fixed(to);
            w.u64(amount);
            return ctx.call(tokenOf(), "transfer", as_span(w.data()));
        };
        // Refund losers fully and the winner the difference.
        for (const auto& b : bids)
        {
            auto rc = payout(b.who, b.who == winner ? b.amount - price
                                                    : b.amount);
            if (!rc.ok())
                return rc;
        }
        if (count > 0)
        {
            Address ownerAddr{};
            std::memcpy(ownerAddr.data(), owner->data(), 20);
            auto rcOwner = payout(ownerAddr, price);
            if (!rcOwner.ok())
                return rcOwner;
        }
        ctx.put(to_bytes("closed"), to_bytes("1"));
        ByteWriter out;
        out.fixed(winner);
        out.u64(price);
        return VmOutcome::success(out.take());
    }
    return VmOutcome::fail(VmStatus::UnknownFunction);
}

// Parity-alternating sum from 1 to k. Input and output stay fixed-width no
// matter how large k is; only the step count grows.
inline VmOutcome
compute(ExecContext& ctx, const std::string& fn, ByteSpan args)
{
    ByteReader r(args);
    if (fn == "init")
        return VmOutcome::success();
    if (fn == "run")
    {
        auto k = r.u64();
        std::int64_t sum = 0;
        for (std::uint64_t i = 1; i <= k; ++i)
        {
            ctx.charge(1);
            sum += (i % 2 == 1) ? static_cast<std::int64_t>(i)
                                : -static_cast<std::int64_t>(i);
        }
        return VmOutcome::success(i64_ret(sum));
    }
    return VmOutcome::fail(VmStatus::UnknownFunction);
}

// Test fixture: never terminates, exists to hit the step limit.
inline VmOutcome
looper(ExecContext& ctx, const std::string& fn, ByteSpan)
{
    if (fn == "init")
        return VmOutcome::success();
    if (fn == "spin")
    {
        for (;;)
            ctx.charge(1);
    }
    return VmOutcome::fail(VmStatus::UnknownFunction);
}

// Test fixture: unbounded self-recursion. The depth cap surfaces to the
// caller as a catchable failure; reaching it proves the cap fired.
inline VmOutcome
recurse(ExecContext& ctx, const std::string& fn, ByteSpan)
{
    if (fn == "init")
        return VmOutcome::success();
    if (fn == "dive")
    {
        auto inner = ctx.call(ctx.self(), "dive", ByteSpan{});
        if (inner.status == VmStatus::DepthExceeded)
            return VmOutcome::success(u64_ret(1)); // caught at the bottom
        return inner;
    }
    return VmOutcome::fail(VmStatus::UnknownFunction);
}

// Test fixture: a logic flaw that copies its confidential configuration into
// the plaintext event log. The taint detector must flag this.
inline VmOutcome
leaky(ExecContext& ctx, const std::string& fn, ByteSpan)
{
    if (fn == "init")
        return VmOutcome::success();
    if (fn == "poke")
    {
        auto secret = ctx.get(to_bytes("secret"));
        ctx.emit("leak", secret ? *secret : Bytes{});
        return VmOutcome::success();
    }
    return VmOutcome::fail(VmStatus::UnknownFunction);
}

inline VmOutcome
leaky_init(ExecContext& ctx, ByteSpan args)
{
    ByteReader r(args);
    ctx.put(to_bytes("secret"), r.bytes());
    return VmOutcome::success();
}

}

inline ProgramRegistry::ProgramRegistry()
{
    add("token", programs::token);
    add("dex", programs::dex);
    add("auction", programs::auction);
    add("compute", programs::compute);
    add("looper", programs::looper);
    add("recurse", programs::recurse);
    add("leaky", [](ExecContext& ctx, const std::string& fn, ByteSpan args) {
        if (fn == "init")
            return programs::leaky_init(ctx, args);
        return programs::leaky(ctx, fn, args);
    });
}

}
