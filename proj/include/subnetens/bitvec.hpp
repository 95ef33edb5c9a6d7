#pragma once

#include "subnetens/common.hpp"

#include <bit>
#include <cstdint>
#include <vector>

namespace subnetens {

/// Packed bit vector with an eagerly maintained popcount.
class BitVector {
public:
    BitVector() = default;

    explicit BitVector(Index nbits, bool value = false)
        : nbits_(nbits), words_((nbits + 63) / 64, value ? ~0ULL : 0ULL) {
        trim_tail();
        count_ = value ? nbits : 0;
    }

    Index size() const { return nbits_; }
    Index count() const { return count_; }

    bool get(Index i) const { return (words_[i >> 6] >> (i & 63)) & 1ULL; }

    void set(Index i, bool v) {
        std::uint64_t bit = 1ULL << (i & 63);
        std::uint64_t& w = words_[i >> 6];
        bool cur = w & bit;
        if (cur == v) return;
        w ^= bit;
        count_ += v ? 1 : -1;
    }

    BitVector& operator&=(const BitVector& o) {
        for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
        recount();
        return *this;
    }
    BitVector& operator|=(const BitVector& o) {
        for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
        recount();
        return *this;
    }

    friend BitVector operator&(BitVector a, const BitVector& b) { return a &= b; }
    friend BitVector operator|(BitVector a, const BitVector& b) { return a |= b; }

    BitVector complement() const {
        BitVector r(*this);
        for (auto& w : r.words_) w = ~w;
        r.trim_tail();
        r.count_ = nbits_ - count_;
        return r;
    }

    bool intersects(const BitVector& o) const { return first_common_bit(o) >= 0; }

    /// Lowest index set in both, or -1.
    Index first_common_bit(const BitVector& o) const {
        for (std::size_t i = 0; i < words_.size(); ++i) {
            std::uint64_t w = words_[i] & o.words_[i];
            if (w) return static_cast<Index>(i * 64 + std::countr_zero(w));
        }
        return -1;
    }

    bool is_subset_of(const BitVector& o) const {
        for (std::size_t i = 0; i < words_.size(); ++i)
            if (words_[i] & ~o.words_[i]) return false;
        return true;
    }

    bool all() const { return count_ == nbits_; }
    bool none() const { return count_ == 0; }

    bool operator==(const BitVector& o) const { return nbits_ == o.nbits_ && words_ == o.words_; }

    const std::vector<std::uint64_t>& words() const { return words_; }

    static BitVector from_words(Index nbits, std::vector<std::uint64_t> words) {
        BitVector r;
        r.nbits_ = nbits;
        r.words_ = std::move(words);
        if (r.words_.size() != static_cast<std::size_t>((nbits + 63) / 64))
            throw FormatError("bit vector word count does not match bit count");
        r.trim_tail();
        r.recount();
        return r;
    }

private:
    void trim_tail() {
        if (nbits_ & 63) words_.back() &= (1ULL << (nbits_ & 63)) - 1;
    }
    void recount() {
        Index c = 0;
        for (std::uint64_t w : words_) c += std::popcount(w);
        count_ = c;
    }

    Index nbits_ = 0;
    std::vector<std::uint64_t> words_;
    Index count_ = 0;
};

}  // namespace subnetens
