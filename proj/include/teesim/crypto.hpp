// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include "teesim/bytes.hpp"
#include "teesim/rng.hpp"

#include <sodium.h>

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace teesim
{

struct CryptoError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

// Authentication failure on decrypt: wrong key, wrong epoch, tampered
// ciphertext or mismatched associated data all land here.
struct IntegrityError : CryptoError
{
    using CryptoError::CryptoError;
};

struct KeyFormatError : CryptoError
{
    using CryptoError::CryptoError;
};

struct Digest
{
    std::array<std::uint8_t, 32> bytes{};

    auto operator<=>(const Digest&) const = default;

    std::string
    hex() const
    {
        return to_hex(as_span(bytes));
    }

    static Digest
    from_hex(std::string_view h)
    {
        auto raw = teesim::from_hex(h);
        if (raw.size() != 32)
            throw std::invalid_argument("digest hex must be 32 bytes");
        Digest d;
        std::memcpy(d.bytes.data(), raw.data(), 32);
        return d;
    }
};

inline Digest
sha256(ByteSpan data)
{
    ensure_sodium();
    Digest d;
    crypto_hash_sha256(d.bytes.data(), data.data(), data.size());
    return d;
}

inline Digest
sha256(const Bytes& data)
{
    return sha256(as_span(data));
}

using Signature = std::array<std::uint8_t, 64>;

// Ed25519 identity used both for TEE node identities (KP_n in the protocol)
// and for plain account keys on the simulated chain. The X25519 views let a
// signing identity also receive sealed key envelopes.
struct SigningKeyPair
{
    std::array<std::uint8_t, 32> pub{};
    std::array<std::uint8_t, 64> priv{};

    static SigningKeyPair
    generate(DetRng& rng)
    {
        ensure_sodium();
        SigningKeyPair kp;
        auto seed = rng.array<32>();
        crypto_sign_seed_keypair(kp.pub.data(), kp.priv.data(), seed.data());
        return kp;
    }

    Signature
    sign(ByteSpan msg) const
    {
        Signature sig;
        crypto_sign_detached(sig.data(), nullptr, msg.data(), msg.size(),
                             priv.data());
        return sig;
    }

    std::array<std::uint8_t, 32>
    curve_pub() const
    {
        std::array<std::uint8_t, 32> out;
        if (crypto_sign_ed25519_pk_to_curve25519(out.data(), pub.data()) != 0)
            throw KeyFormatError("public key not convertible to curve25519");
        return out;
    }

    std::array<std::uint8_t, 32>
    curve_priv() const
    {
        std::array<std::uint8_t, 32> out;
        crypto_sign_ed25519_sk_to_curve25519(out.data(), priv.data());
        return out;
    }
};

inline bool
verify_signature(const std::array<std::uint8_t, 32>& pub, ByteSpan msg,
                 const Signature& sig)
{
    ensure_sodium();
    if (sodium_is_zero(pub.data(), pub.size()))
        throw KeyFormatError("all-zero verification key");
    return crypto_sign_verify_detached(sig.data(), msg.data(), msg.size(),
                                       pub.data()) == 0;
}

// X25519 pair protecting user-submitted requests (KP_tx). Rotates: the epoch
// tags which generation of the key a ciphertext was made for.
struct RequestKeyPair
{
    std::array<std::uint8_t, 32> pub{};
    std::array<std::uint8_t, 32> priv{};
    std::uint64_t epoch = 0;

    static RequestKeyPair
    from_seed(const std::array<std::uint8_t, 32>& seed, std::uint64_t epoch)
    {
        ensure_sodium();
        RequestKeyPair kp;
        crypto_box_seed_keypair(kp.pub.data(), kp.priv.data(), seed.data());
        kp.epoch = epoch;
        return kp;
    }

    static RequestKeyPair
    generate(std::uint64_t epoch, DetRng& rng)
    {
        auto seed = rng.array<32>();
        return from_seed(seed, epoch);
    }
};

// Sealed-box encryption to a recipient public key, with the ephemeral key
// derived from an explicit seed so the whole simulation stays replayable.
// Wire format matches crypto_box_seal: ephemeral_pk || box ciphertext, with
// the box nonce derived from (ephemeral_pk, recipient_pk).
inline Bytes
pk_encrypt(const std::array<std::uint8_t, 32>& recipientPub, ByteSpan plaintext,
           const std::array<std::uint8_t, 32>& ephemeralSeed)
{
    ensure_sodium();
    std::array<std::uint8_t, 32> epk, esk;
    crypto_box_seed_keypair(epk.data(), esk.data(), ephemeralSeed.data());

    std::array<std::uint8_t, crypto_box_NONCEBYTES> nonce;
    crypto_generichash_state st;
    crypto_generichash_init(&st, nullptr, 0, nonce.size());
    crypto_generichash_update(&st, epk.data(), epk.size());
    crypto_generichash_update(&st, recipientPub.data(), recipientPub.size());
    crypto_generichash_final(&st, nonce.data(), nonce.size());

    Bytes out(epk.size() + plaintext.size() + crypto_box_MACBYTES);
    std::memcpy(out.data(), epk.data(), epk.size());
    if (crypto_box_easy(out.data() + epk.size(), plaintext.data(),
                        plaintext.size(), nonce.data(), recipientPub.data(),
                        esk.data()) != 0)
        throw CryptoError("box encryption failed");
    return out;
}

inline Bytes
pk_encrypt(const RequestKeyPair& kp, ByteSpan plaintext, DetRng& rng)
{
    return pk_encrypt(kp.pub, plaintext, rng.array<32>());
}

inline Bytes
pk_decrypt(const std::array<std::uint8_t, 32>& recipientPub,
           const std::array<std::uint8_t, 32>& recipientPriv,
           ByteSpan ciphertext)
{
    ensure_sodium();
    if (ciphertext.size() < crypto_box_SEALBYTES)
        throw IntegrityError("sealed box too short");
    Bytes out(ciphertext.size() - crypto_box_SEALBYTES);
    if (crypto_box_seal_open(out.data(), ciphertext.data(), ciphertext.size(),
                             recipientPub.data(), recipientPriv.data()) != 0)
        throw IntegrityError("sealed box authentication failed");
    return out;
}

inline Bytes
pk_decrypt(const RequestKeyPair& kp, ByteSpan ciphertext)
{
    return pk_decrypt(kp.pub, kp.priv, ciphertext);
}

enum class KeyRole : std::uint8_t
{
    Info = 0,   // K_inf: management records
    Code = 1,   // K_code: contract code, never rotated
    State = 2,  // K_st: contract state, rotated every CKRP invocations
    Result = 3, // K_res: per-request result key chosen by the caller
};

inline const char*
key_role_name(KeyRole r)
{
    switch (r)
    {
    case KeyRole::Info:
        return "info";
    case KeyRole::Code:
        return "code";
    case KeyRole::State:
        return "state";
    case KeyRole::Result:
        return "result";
    }
    return "?";
}

struct SymmetricKey
{
    std::array<std::uint8_t, 32> bytes{};
    KeyRole role = KeyRole::Result;
    std::uint64_t epoch = 0;

    bool
    operator==(const SymmetricKey& o) const = default;
};

inline SymmetricKey
derive_fresh_key(KeyRole role, std::uint64_t epoch, DetRng& rng)
{
    SymmetricKey k;
    k.bytes = rng.array<32>();
    k.role = role;
    k.epoch = epoch;
    return k;
}

namespace detail
{
inline std::array<std::uint8_t, crypto_aead_xchacha20poly1305_ietf_NPUBBYTES>
aead_nonce(const SymmetricKey& key, ByteSpan plaintext, ByteSpan ad)
{
    // Nonce is a PRF of (key, ad, plaintext): encryption is deterministic and
    // replayable, and distinct messages under one key never share a nonce.
    std::array<std::uint8_t, crypto_aead_xchacha20poly1305_ietf_NPUBBYTES> n;
    crypto_generichash_state st;
    crypto_generichash_init(&st, key.bytes.data(), key.bytes.size(), n.size());
    std::uint64_t adLen = ad.size();
    crypto_generichash_update(&st,
                              reinterpret_cast<const std::uint8_t*>(&adLen), 8);
    crypto_generichash_update(&st, ad.data(), ad.size());
    crypto_generichash_update(&st, plaintext.data(), plaintext.size());
    crypto_generichash_final(&st, n.data(), n.size());
    return n;
}
}

// XChaCha20-Poly1305 with the nonce carried in front of the ciphertext.
inline Bytes
aead_encrypt(const SymmetricKey& key, ByteSpan plaintext, ByteSpan ad)
{
    ensure_sodium();
    auto nonce = detail::aead_nonce(key, plaintext, ad);
    Bytes out(nonce.size() + plaintext.size() +
              crypto_aead_xchacha20poly1305_ietf_ABYTES);
    std::memcpy(out.data(), nonce.data(), nonce.size());
    unsigned long long clen = 0;
    crypto_aead_xchacha20poly1305_ietf_encrypt(
        out.data() + nonce.size(), &clen, plaintext.data(), plaintext.size(),
        ad.data(), ad.size(), nullptr, nonce.data(), key.bytes.data());
    out.resize(nonce.size() + clen);
    return out;
}

inline Bytes
aead_decrypt(const SymmetricKey& key, ByteSpan ciphertext, ByteSpan ad)
{
    ensure_sodium();
    constexpr std::size_t nlen = crypto_aead_xchacha20poly1305_ietf_NPUBBYTES;
    if (ciphertext.size() < nlen + crypto_aead_xchacha20poly1305_ietf_ABYTES)
        throw IntegrityError("aead ciphertext too short");
    Bytes out(ciphertext.size() - nlen -
              crypto_aead_xchacha20poly1305_ietf_ABYTES);
    unsigned long long mlen = 0;
    if (crypto_aead_xchacha20poly1305_ietf_decrypt(
            out.data(), &mlen, nullptr, ciphertext.data() + nlen,
            ciphertext.size() - nlen, ad.data(), ad.size(), ciphertext.data(),
            key.bytes.data()) != 0)
        throw IntegrityError("aead integrity violation");
    out.resize(mlen);
    return out;
}

// Keyed derivation from an enclave's master entropy. Every protocol key is a
// pure function of (master, role, owner, epoch), so any enclave holding the
// master material reproduces the same key bytes for the same context.
inline std::array<std::uint8_t, 32>
kdf32(const std::array<std::uint8_t, 32>& master, std::string_view label,
      ByteSpan context, std::uint64_t epoch)
{
    ensure_sodium();
    std::array<std::uint8_t, 32> out;
    crypto_generichash_state st;
    crypto_generichash_init(&st, master.data(), master.size(), out.size());
    std::uint64_t llen = label.size();
    crypto_generichash_update(&st,
                              reinterpret_cast<const std::uint8_t*>(&llen), 8);
    crypto_generichash_update(
        &st, reinterpret_cast<const std::uint8_t*>(label.data()),
        label.size());
    crypto_generichash_update(&st, context.data(), context.size());
    crypto_generichash_update(&st,
                              reinterpret_cast<const std::uint8_t*>(&epoch),
                              8);
    crypto_generichash_final(&st, out.data(), out.size());
    return out;
}

inline SymmetricKey
kdf_symmetric(const std::array<std::uint8_t, 32>& master, KeyRole role,
              ByteSpan context, std::uint64_t epoch)
{
    SymmetricKey k;
    k.bytes = kdf32(master, key_role_name(role), context, epoch);
    k.role = role;
    k.epoch = epoch;
    return k;
}

}
