#include "subnetens/masks.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace subnetens {

Index MaskLayout::total() const {
    return std::accumulate(layer_sizes.begin(), layer_sizes.end(), Index{0});
}

Mask::Mask(const MaskLayout& layout, bool value) {
    layers_.reserve(layout.layer_sizes.size());
    for (Index n : layout.layer_sizes) layers_.emplace_back(n, value);
}

Index Mask::popcount() const {
    Index c = 0;
    for (const auto& l : layers_) c += l.count();
    return c;
}

bool Mask::aligned_with(const MaskLayout& layout) const {
    if (layers_.size() != layout.layer_sizes.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].size() != layout.layer_sizes[i]) return false;
    return true;
}

bool Mask::intersects(const Mask& o) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].intersects(o.layers_[i])) return true;
    return false;
}

bool Mask::is_subset_of(const Mask& o) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (!layers_[i].is_subset_of(o.layers_[i])) return false;
    return true;
}

Mask Mask::complement() const {
    Mask r(*this);
    for (auto& l : r.layers_) l = l.complement();
    return r;
}

Mask& Mask::operator|=(const Mask& o) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i] |= o.layers_[i];
    return *this;
}

Mask& Mask::operator&=(const Mask& o) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i] &= o.layers_[i];
    return *this;
}

Index quota_for(Index layer_size, int k, int mask_index) {
    if (k <= 0) throw MaskError("subnetwork count must be positive");
    if (mask_index < 0 || mask_index >= k) throw MaskError("mask index out of range");
    Index base = layer_size / k;
    Index rem = layer_size % k;
    return base + (mask_index < rem ? 1 : 0);
}

MaskSet make_mask_set(const MaskLayout& layout, int k) {
    if (k <= 0) throw MaskError("subnetwork count must be positive");
    MaskSet set;
    set.layout = layout;
    set.k = k;
    set.masks.assign(k, Mask(layout, false));
    set.finalized = 0;
    set.claimed = Mask(layout, false);
    return set;
}

MaskSet random_orthogonal_partition(const MaskLayout& layout, int k, std::uint64_t seed) {
    MaskSet set = make_mask_set(layout, k);
    const int nl = static_cast<int>(layout.layer_sizes.size());
    for (int li = 0; li < nl; ++li) {
        Index n = layout.layer_sizes[li];
        std::vector<Index> order(n);
        std::iota(order.begin(), order.end(), Index{0});
        auto rng = make_rng(seed, {kStreamPartition, static_cast<std::uint64_t>(li)});
        std::shuffle(order.begin(), order.end(), rng);
        Index pos = 0;
        for (int m = 0; m < k; ++m) {
            Index q = quota_for(n, k, m);
            for (Index j = 0; j < q; ++j) set.masks[m].layer(li).set(order[pos++], true);
        }
    }
    for (int m = 0; m < k; ++m) set.claimed |= set.masks[m];
    set.finalized = k;
    return set;
}

Mask bernoulli_mask(const MaskLayout& layout, double keep_prob, std::mt19937_64& rng) {
    Mask m(layout, false);
    std::bernoulli_distribution keep(keep_prob);
    for (int li = 0; li < m.layer_count(); ++li)
        for (Index i = 0; i < layout.layer_sizes[li]; ++i) m.layer(li).set(i, keep(rng));
    return m;
}

Mask availability(const MaskSet& set, int i) {
    if (i < 0 || i >= set.k) throw MaskError("subnetwork index out of range");
    if (i > set.finalized) throw MaskError("earlier masks not yet finalized");
    Mask used(set.layout, false);
    for (int j = 0; j < i; ++j) used |= set.masks[j];
    return used.complement();
}

void claim(MaskSet& set, int i, const Mask& mask) {
    if (i != set.finalized) throw MaskError("claims must be sequential");
    if (i < 0 || i >= set.k) throw MaskError("subnetwork index out of range");
    if (!mask.aligned_with(set.layout)) throw MaskError("mask does not align with layout");
    if (mask.intersects(set.claimed)) throw MaskError("mask overlaps weights claimed by an earlier subnetwork");
    for (int li = 0; li < mask.layer_count(); ++li) {
        Index want = quota_for(set.layout.layer_sizes[li], set.k, i);
        if (mask.layer(li).count() != want) {
            std::ostringstream os;
            os << "quota violation in layer " << li << ": mask holds " << mask.layer(li).count()
               << " weights, quota is " << want;
            throw MaskError(os.str());
        }
    }
    set.masks[i] = mask;
    set.claimed |= mask;
    set.finalized = i + 1;
}

bool ConstraintReport::pass() const {
    return orthogonal && max_quota_deviation == 0 && max_layer_spread <= 1 &&
           (finalized < k || coverage_complete);
}

std::string ConstraintReport::summary() const {
    std::ostringstream os;
    os << "orthogonality: " << (orthogonal ? "pass" : "fail");
    if (!orthogonal)
        os << " (masks " << overlap_i + 1 << " and " << overlap_j + 1 << ", layer " << overlap_layer
           << ", index " << overlap_index << ")";
    os << "\n";
    os << "quota: " << (max_quota_deviation == 0 ? "pass" : "fail")
       << " (max deviation " << max_quota_deviation << ", max layer spread " << max_layer_spread << ")\n";
    os << "coverage: " << (coverage_complete ? "pass" : "incomplete") << " (" << finalized
       << " masks finalized)\n";
    for (std::size_t m = 0; m < sparsity.size(); ++m)
        os << "sparsity mask " << m + 1 << ": " << sparsity[m] << "\n";
    return os.str();
}

ConstraintReport verify(const MaskSet& set) {
    ConstraintReport rep;
    rep.k = set.k;
    rep.finalized = set.finalized;

    for (int i = 0; i < set.finalized && rep.orthogonal; ++i) {
        for (int j = i + 1; j < set.finalized && rep.orthogonal; ++j) {
            for (int li = 0; li < set.masks[i].layer_count(); ++li) {
                Index bit = set.masks[i].layer(li).first_common_bit(set.masks[j].layer(li));
                if (bit >= 0) {
                    rep.orthogonal = false;
                    rep.overlap_i = i;
                    rep.overlap_j = j;
                    rep.overlap_layer = li;
                    rep.overlap_index = bit;
                    break;
                }
            }
        }
    }

    const Index total = set.layout.total();
    for (int m = 0; m < set.finalized; ++m) {
        Index pc = set.masks[m].popcount();
        rep.sparsity.push_back(pc > 0 ? static_cast<double>(total) / static_cast<double>(pc)
                                      : std::numeric_limits<double>::infinity());
    }

    for (std::size_t li = 0; li < set.layout.layer_sizes.size(); ++li) {
        Index lo = std::numeric_limits<Index>::max(), hi = 0;
        for (int m = 0; m < set.finalized; ++m) {
            Index pc = set.masks[m].layer(static_cast<int>(li)).count();
            Index want = quota_for(set.layout.layer_sizes[li], set.k, m);
            rep.max_quota_deviation = std::max(rep.max_quota_deviation, std::abs(pc - want));
            lo = std::min(lo, pc);
            hi = std::max(hi, pc);
        }
        if (set.finalized > 0) rep.max_layer_spread = std::max(rep.max_layer_spread, hi - lo);
    }

    if (set.finalized == set.k) {
        Mask all(set.layout, false);
        for (int m = 0; m < set.finalized; ++m) all |= set.masks[m];
        rep.coverage_complete = all.popcount() == total && set.claimed == all;
    }
    return rep;
}

}  // namespace subnetens
