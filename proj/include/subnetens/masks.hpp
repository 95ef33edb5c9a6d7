#pragma once

#include "subnetens/bitvec.hpp"
#include "subnetens/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace subnetens {

/// Flat weight count of each maskable layer, in store order.
struct MaskLayout {
    std::vector<Index> layer_sizes;

    Index total() const;
    bool operator==(const MaskLayout&) const = default;
};

/// Binary mask over the maskable weights of a store, one bit vector per maskable layer.
/// Bit set means the weight is active in the subnetwork.
class Mask {
public:
    Mask() = default;
    explicit Mask(const MaskLayout& layout, bool value = false);

    int layer_count() const { return static_cast<int>(layers_.size()); }
    const BitVector& layer(int li) const { return layers_[li]; }
    BitVector& layer(int li) { return layers_[li]; }

    Index popcount() const;
    bool aligned_with(const MaskLayout& layout) const;

    bool intersects(const Mask& o) const;
    bool is_subset_of(const Mask& o) const;
    Mask complement() const;

    Mask& operator|=(const Mask& o);
    Mask& operator&=(const Mask& o);
    bool operator==(const Mask& o) const { return layers_ == o.layers_; }

private:
    std::vector<BitVector> layers_;
};

/// Per-layer weight budget for mask index `mask_index` when a layer of `layer_size`
/// weights is split k ways. Remainder weights go to the lowest mask indices.
Index quota_for(Index layer_size, int k, int mask_index);

/// k masks over one layout plus the union of the ones claimed so far. Claims are
/// sequential; masks past `finalized` are placeholders.
struct MaskSet {
    MaskLayout layout;
    int k = 0;
    std::vector<Mask> masks;
    int finalized = 0;
    Mask claimed;
};

MaskSet make_mask_set(const MaskLayout& layout, int k);

/// Shuffles every layer's weight indices by seed and deals them into k groups of
/// near-equal size. The result is fully finalized: claimed covers every weight.
MaskSet random_orthogonal_partition(const MaskLayout& layout, int k, std::uint64_t seed);

/// Independent keep/drop draw per weight; the dropout-style mask sampler.
Mask bernoulli_mask(const MaskLayout& layout, double keep_prob, std::mt19937_64& rng);

/// Weights subnetwork i may still use: complement of the union of masks 0..i-1.
Mask availability(const MaskSet& set, int i);

/// Stores `mask` as subnetwork i's mask. Rejects overlap with already-claimed weights
/// and per-layer popcounts that miss the quota for index i.
void claim(MaskSet& set, int i, const Mask& mask);

struct ConstraintReport {
    bool orthogonal = true;
    int overlap_i = -1, overlap_j = -1, overlap_layer = -1;
    Index overlap_index = -1;

    int k = 0;
    int finalized = 0;
    bool coverage_complete = false;       // claimed == all ones (checked once all k are in)
    Index max_quota_deviation = 0;        // |popcount - quota| over finalized masks and layers
    Index max_layer_spread = 0;           // max-min layer popcount across finalized masks
    std::vector<double> sparsity;         // total weights / popcount per finalized mask

    bool pass() const;
    std::string summary() const;          // one "name: pass|fail" line per constraint
};

/// Never throws; reports every Eq-style constraint with the first offender.
ConstraintReport verify(const MaskSet& set);

}  // namespace subnetens
