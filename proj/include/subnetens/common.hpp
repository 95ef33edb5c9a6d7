#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>

namespace subnetens {

using Index = Eigen::Index;

/// Dense row-major matrix; rows are samples for activations, output units for weights.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Labels = Eigen::VectorXi;

// Error taxonomy. Each class maps to a distinct CLI exit code (see cli.hpp).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct MaskError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ChecksumError : Error { using Error::Error; };
struct VersionError : Error { using Error::Error; };

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Named substreams so every random decision is derived from (seed, purpose, indices)
// and independent of call order.
enum Stream : std::uint64_t {
    kStreamInit = 1,
    kStreamClassifierInit,
    kStreamPartition,
    kStreamReinit,
    kStreamShuffle,
    kStreamDropoutMask,
    kStreamMcPredict,
    kStreamBlobs,
    kStreamMember,
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = splitmix64(seed);
    for (std::uint64_t t : tags) h = splitmix64(h ^ t);
    return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    return std::mt19937_64(mix_seed(seed, tags));
}

template <typename Derived>
void check_finite(const Eigen::DenseBase<Derived>& m, const char* what) {
    if (!m.derived().allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

constexpr std::uint64_t kFnvOffsetBasis = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = kFnvOffsetBasis) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

}  // namespace subnetens
