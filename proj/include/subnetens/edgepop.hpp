#pragma once

#include "subnetens/masks.hpp"
#include "subnetens/network.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

namespace subnetens {

/// Continuous importance scores, one per maskable weight, shaped like the weights.
template <typename S>
struct PopupScores {
    std::vector<Matrix<S>> layers;
};

struct PruneConfig {
    int epochs = 20;
    double score_lr = 0.01;
    double score_momentum = 0.9;
    int batch_size = 128;
    int subnet = 0;                // batchnorm variant and bias set used in the masked forward
    std::vector<Index> quotas;     // per maskable layer; see quota_table
    std::uint64_t seed = 1;
};

/// Per-layer weight budget of subnetwork i under the equal-partition rule.
inline std::vector<Index> quota_table(const MaskLayout& layout, int k, int i) {
    std::vector<Index> q;
    q.reserve(layout.layer_sizes.size());
    for (Index n : layout.layer_sizes) q.push_back(quota_for(n, k, i));
    return q;
}

/// Scores start at the weights normalized by the layer-wise maximum magnitude,
/// so every score lies in [-1, 1]. An all-zero layer keeps all-zero scores.
template <typename S>
PopupScores<S> init_scores(const WeightStore<S>& store) {
    PopupScores<S> scores;
    for (std::size_t li = 0; li < store.layers.size(); ++li) {
        if (store.mask_index[li] < 0) continue;
        const Matrix<S>& w = store.layers[li].weight;
        S max_abs = w.cwiseAbs().maxCoeff();
        scores.layers.push_back(max_abs > S(0) ? (w / max_abs).eval()
                                               : Matrix<S>::Zero(w.rows(), w.cols()).eval());
    }
    return scores;
}

/// Per layer, the quota-many available weights with the largest |score|.
/// Ties break toward the lower flat index. Unavailable weights are never selected.
template <typename S>
Mask select_mask(const PopupScores<S>& scores, const Mask& avail, const std::vector<Index>& quotas) {
    if (static_cast<int>(scores.layers.size()) != avail.layer_count() ||
        scores.layers.size() != quotas.size())
        throw MaskError("scores, availability and quotas do not align");
    MaskLayout layout;
    for (const auto& s : scores.layers) layout.layer_sizes.push_back(s.size());
    Mask mask(layout, false);
    std::vector<Index> cand;
    for (std::size_t li = 0; li < scores.layers.size(); ++li) {
        const BitVector& bits = avail.layer(static_cast<int>(li));
        const S* s = scores.layers[li].data();
        cand.clear();
        for (Index i = 0; i < scores.layers[li].size(); ++i)
            if (bits.get(i)) cand.push_back(i);
        if (quotas[li] > static_cast<Index>(cand.size()))
            throw MaskError("quota exceeds available weights in a layer");
        std::partial_sort(cand.begin(), cand.begin() + quotas[li], cand.end(),
                          [&](Index a, Index b) {
                              S sa = std::abs(s[a]), sb = std::abs(s[b]);
                              return sa != sb ? sa > sb : a < b;
                          });
        for (Index j = 0; j < quotas[li]; ++j) mask.layer(static_cast<int>(li)).set(cand[j], true);
    }
    return mask;
}

/// Straight-through score gradient of a dense layer: the top-quota selection is
/// treated as the identity, so dL/dS_ij = sum_batch dL/dpre_j * W_ij * x_i.
template <typename S>
Matrix<S> ste_score_grads(const Matrix<S>& upstream, const Matrix<S>& weights,
                          const Matrix<S>& inputs) {
    if (upstream.rows() != inputs.rows() || upstream.cols() != weights.rows() ||
        inputs.cols() != weights.cols())
        throw ShapeError("ste_score_grads shape mismatch");
    return (upstream.transpose() * inputs).cwiseProduct(weights);
}

/// Convolution analog; the product is summed over batch and spatial positions.
template <typename S>
Matrix<S> ste_score_grads_conv(const Matrix<S>& upstream, const Matrix<S>& weights,
                               const Matrix<S>& inputs, const ConvGeom& g) {
    if (upstream.rows() != inputs.rows() || upstream.cols() != g.out_size() ||
        inputs.cols() != g.in_c * g.in_h * g.in_w || weights.rows() != g.out_c ||
        weights.cols() != g.patch_size())
        throw ShapeError("ste_score_grads_conv shape mismatch");
    Matrix<S> raw = Matrix<S>::Zero(g.out_c, g.patch_size());
    Matrix<S> patches;
    for (Index s = 0; s < inputs.rows(); ++s) {
        detail::im2col(g, inputs.row(s).data(), patches);
        Eigen::Map<const Matrix<S>> d_out(upstream.row(s).data(), g.out_c, g.out_h() * g.out_w());
        raw.noalias() += d_out * patches.transpose();
    }
    return raw.cwiseProduct(weights);
}

/// Modified edge-pop: optimizes the popup scores by SGD for cfg.epochs while the
/// weights stay fixed, selecting a fresh top-quota mask before every minibatch.
/// Weights outside `avail` are excluded from selection and from score updates.
/// With zero epochs this reduces to magnitude pruning of the available weights.
template <typename S>
Mask optimize_mask(const WeightStore<S>& store, const Mask& avail, const PruneConfig& cfg,
                   const Matrix<S>& train_x, const Labels& train_y,
                   const std::function<void(int, const Mask&)>& epoch_observer = {}) {
    if (!avail.aligned_with(store.maskable_layout()))
        throw MaskError("availability mask does not align with store");
    if (cfg.quotas.size() != store.maskable_layout().layer_sizes.size())
        throw MaskError("quota table does not align with store");

    PopupScores<S> scores = init_scores(store);
    std::vector<Matrix<S>> velocity;
    for (const auto& s : scores.layers) velocity.push_back(Matrix<S>::Zero(s.rows(), s.cols()));

    // maskable-layer index -> store layer index
    std::vector<std::size_t> owner;
    for (std::size_t li = 0; li < store.layers.size(); ++li)
        if (store.mask_index[li] >= 0) owner.push_back(li);

    const Index n = train_x.rows();
    const S lr = static_cast<S>(cfg.score_lr);
    const S mom = static_cast<S>(cfg.score_momentum);
    auto& mutable_store = const_cast<WeightStore<S>&>(store);  // prune mode never mutates

    std::vector<Index> order(n);
    std::iota(order.begin(), order.end(), Index{0});
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto rng = make_rng(cfg.seed, {kStreamShuffle, static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), rng);
        for (Index start = 0; start < n; start += cfg.batch_size) {
            Index b = std::min<Index>(cfg.batch_size, n - start);
            Matrix<S> x(b, train_x.cols());
            Labels y(b);
            for (Index r = 0; r < b; ++r) {
                x.row(r) = train_x.row(order[start + r]);
                y[r] = train_y[order[start + r]];
            }

            Mask mask = select_mask(scores, avail, cfg.quotas);
            MaskApply<S> ma{&mask, S(1)};
            ForwardCache<S> cache;
            forward(mutable_store, x, ma, cfg.subnet, FwdMode::prune, &cache);
            GradRecord<S> grads = backward(store, cache, y);

            for (std::size_t mi = 0; mi < scores.layers.size(); ++mi) {
                const Matrix<S>& w = store.layers[owner[mi]].weight;
                Matrix<S> g = grads.layers[owner[mi]].weight_raw.cwiseProduct(w);
                const BitVector& bits = avail.layer(static_cast<int>(mi));
                S* gd = g.data();
                for (Index i = 0; i < g.size(); ++i)
                    if (!bits.get(i)) gd[i] = S(0);
                velocity[mi] = mom * velocity[mi] + g;
                scores.layers[mi] -= lr * velocity[mi];
            }
        }
        if (epoch_observer) epoch_observer(epoch, select_mask(scores, avail, cfg.quotas));
    }
    return select_mask(scores, avail, cfg.quotas);
}

}  // namespace subnetens
