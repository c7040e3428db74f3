// Copyright (c) 2026 The warmsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace warmsim {

// Units used throughout: sizes in bytes (u64), times in seconds (double),
// bandwidths in bytes/second (double).
using Bytes = std::uint64_t;
using Seconds = double;
using BytesPerSecond = double;

enum class ElementType : std::uint8_t { F32, F16, BF16, I8 };

inline const char* to_string(ElementType t) {
    switch (t) {
        case ElementType::F32: return "f32";
        case ElementType::F16: return "f16";
        case ElementType::BF16: return "bf16";
        case ElementType::I8: return "i8";
    }
    return "?";
}

inline std::optional<ElementType> element_type_from_string(std::string_view s) {
    if (s == "f32") return ElementType::F32;
    if (s == "f16") return ElementType::F16;
    if (s == "bf16") return ElementType::BF16;
    if (s == "i8") return ElementType::I8;
    return std::nullopt;
}

/// 128-bit content fingerprint identifying a tensor across processes.
struct TensorId {
    std::uint64_t hi = 0;
    std::uint64_t lo = 0;

    friend bool operator==(const TensorId&, const TensorId&) = default;
    friend auto operator<=>(const TensorId&, const TensorId&) = default;

    std::string hex() const {
        char buf[33];
        std::snprintf(buf, sizeof(buf), "%016llx%016llx",
                      static_cast<unsigned long long>(hi),
                      static_cast<unsigned long long>(lo));
        return std::string(buf);
    }
};

namespace detail {

inline std::uint64_t rotl64(std::uint64_t x, int r) { return (x << r) | (x >> (64 - r)); }

inline std::uint64_t fmix64(std::uint64_t k) {
    k ^= k >> 33;
    k *= 0xff51afd7ed558ccdULL;
    k ^= k >> 33;
    k *= 0xc4ceb9fe1a85ec53ULL;
    k ^= k >> 33;
    return k;
}

// MurmurHash3 x64 128-bit. Non-cryptographic, well distributed, stable
// across runs (no salting).
inline TensorId murmur3_x64_128(const void* key, std::size_t len, std::uint64_t seed = 0) {
    const auto* data = static_cast<const std::uint8_t*>(key);
    const std::size_t nblocks = len / 16;

    std::uint64_t h1 = seed;
    std::uint64_t h2 = seed;
    const std::uint64_t c1 = 0x87c37b91114253d5ULL;
    const std::uint64_t c2 = 0x4cf5ad432745937fULL;

    for (std::size_t i = 0; i < nblocks; i++) {
        std::uint64_t k1, k2;
        std::memcpy(&k1, data + i * 16, 8);
        std::memcpy(&k2, data + i * 16 + 8, 8);

        k1 *= c1; k1 = rotl64(k1, 31); k1 *= c2; h1 ^= k1;
        h1 = rotl64(h1, 27); h1 += h2; h1 = h1 * 5 + 0x52dce729;
        k2 *= c2; k2 = rotl64(k2, 33); k2 *= c1; h2 ^= k2;
        h2 = rotl64(h2, 31); h2 += h1; h2 = h2 * 5 + 0x38495ab5;
    }

    const std::uint8_t* tail = data + nblocks * 16;
    std::uint64_t k1 = 0, k2 = 0;
    switch (len & 15) {
        case 15: k2 ^= std::uint64_t(tail[14]) << 48; [[fallthrough]];
        case 14: k2 ^= std::uint64_t(tail[13]) << 40; [[fallthrough]];
        case 13: k2 ^= std::uint64_t(tail[12]) << 32; [[fallthrough]];
        case 12: k2 ^= std::uint64_t(tail[11]) << 24; [[fallthrough]];
        case 11: k2 ^= std::uint64_t(tail[10]) << 16; [[fallthrough]];
        case 10: k2 ^= std::uint64_t(tail[9]) << 8; [[fallthrough]];
        case 9:  k2 ^= std::uint64_t(tail[8]);
                 k2 *= c2; k2 = rotl64(k2, 33); k2 *= c1; h2 ^= k2; [[fallthrough]];
        case 8:  k1 ^= std::uint64_t(tail[7]) << 56; [[fallthrough]];
        case 7:  k1 ^= std::uint64_t(tail[6]) << 48; [[fallthrough]];
        case 6:  k1 ^= std::uint64_t(tail[5]) << 40; [[fallthrough]];
        case 5:  k1 ^= std::uint64_t(tail[4]) << 32; [[fallthrough]];
        case 4:  k1 ^= std::uint64_t(tail[3]) << 24; [[fallthrough]];
        case 3:  k1 ^= std::uint64_t(tail[2]) << 16; [[fallthrough]];
        case 2:  k1 ^= std::uint64_t(tail[1]) << 8; [[fallthrough]];
        case 1:  k1 ^= std::uint64_t(tail[0]);
                 k1 *= c1; k1 = rotl64(k1, 31); k1 *= c2; h1 ^= k1;
    }

    h1 ^= len; h2 ^= len;
    h1 += h2; h2 += h1;
    h1 = fmix64(h1); h2 = fmix64(h2);
    h1 += h2; h2 += h1;
    return TensorId{h1, h2};
}

}  // namespace detail

/// Deterministic fingerprint of (model_id, tensor name, shape, element type).
/// Canonical serialization: UTF-8 fields joined with 0x1F separators,
/// dimensions as decimal.
inline TensorId fingerprint(std::string_view model_id, std::string_view name,
                            const std::vector<std::int64_t>& shape, ElementType etype) {
    std::string buf;
    buf.reserve(model_id.size() + name.size() + shape.size() * 8 + 16);
    buf.append(model_id);
    buf.push_back('\x1f');
    buf.append(name);
    buf.push_back('\x1f');
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) buf.push_back(',');
        buf.append(std::to_string(shape[i]));
    }
    buf.push_back('\x1f');
    buf.append(to_string(etype));
    return detail::murmur3_x64_128(buf.data(), buf.size());
}

struct TensorIdHash {
    std::size_t operator()(const TensorId& id) const noexcept {
        return static_cast<std::size_t>(id.hi ^ (id.lo * 0x9e3779b97f4a7c15ULL));
    }
};

/// Recoverable domain errors. Configuration/IO problems throw instead.
enum class Error {
    InsufficientMemory,
    PoolExhausted,
    Infeasible,
    Pinned,
    NotFound,
    OverlapMove,
    DestinationOccupied,
    OrderingError,
    InstanceTooLarge,
    InvalidArgument,
};

inline const char* to_string(Error e) {
    switch (e) {
        case Error::InsufficientMemory: return "insufficient memory";
        case Error::PoolExhausted: return "pool exhausted";
        case Error::Infeasible: return "infeasible";
        case Error::Pinned: return "tensor pinned";
        case Error::NotFound: return "not found";
        case Error::OverlapMove: return "overlapping move";
        case Error::DestinationOccupied: return "destination occupied";
        case Error::OrderingError: return "out-of-order timestamp";
        case Error::InstanceTooLarge: return "instance too large";
        case Error::InvalidArgument: return "invalid argument";
    }
    return "?";
}

/// Configuration and file-format problems are exceptional (CLI exits 1).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// The simulated cluster cannot serve the workload at all (CLI exits 2).
class RuntimeInfeasible : public std::runtime_error {
public:
    explicit RuntimeInfeasible(const std::string& what) : std::runtime_error(what) {}
};

/// Minimal expected-style result; std::expected is not available in C++20.
template <typename T>
class Result {
public:
    Result(T value) : v_(std::move(value)) {}  // NOLINT(google-explicit-constructor)
    Result(Error e) : v_(e) {}                 // NOLINT(google-explicit-constructor)

    bool ok() const { return std::holds_alternative<T>(v_); }
    explicit operator bool() const { return ok(); }

    const T& value() const& { return std::get<T>(v_); }
    T& value() & { return std::get<T>(v_); }
    T&& value() && { return std::get<T>(std::move(v_)); }
    Error error() const { return std::get<Error>(v_); }

private:
    std::variant<T, Error> v_;
};

struct Unit {};
using Status = Result<Unit>;
inline Status ok_status() { return Status(Unit{}); }

}  // namespace warmsim
