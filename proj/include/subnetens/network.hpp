#pragma once

#include "subnetens/arch.hpp"
#include "subnetens/common.hpp"
#include "subnetens/masks.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <vector>

namespace subnetens {

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.1;

template <typename S>
struct BatchNormVariant {
    Vector<S> gamma, beta, running_mean, running_var;
};

template <typename S>
struct Layer {
    LayerSpec spec;
    Matrix<S> weight;                      // dense/classifier: out x in; conv: out_c x (in_c*kh*kw)
    std::vector<Vector<S>> bias;           // dense: one set per subnetwork; classifier: one shared set
    std::vector<BatchNormVariant<S>> bn;   // batchnorm: one variant per subnetwork
};

/// All trainable tensors of one network. Weight matrices are shared across
/// subnetworks; bias sets and batchnorm variants are replicated per subnetwork.
template <typename S>
struct WeightStore {
    ArchSpec arch;
    std::vector<Layer<S>> layers;
    std::vector<int> mask_index;    // per layer: index into the maskable layout, or -1
    int subnet_count = 1;
    bool classifier_frozen = false;
    std::uint64_t version = 0;      // bumped on parameter mutation; forward caches pin it

    MaskLayout maskable_layout() const { return arch.maskable_layout(); }
    Layer<S>& classifier() { return layers[arch.classifier_index()]; }
    const Layer<S>& classifier() const { return layers[arch.classifier_index()]; }

    template <typename T>
    WeightStore<T> cast() const;
};

template <typename S>
WeightStore<S> init_network(const ArchSpec& arch, int subnet_count, bool frozen_classifier,
                            std::uint64_t seed, std::uint64_t classifier_seed) {
    if (subnet_count < 1) throw ConfigError("subnetwork count must be at least 1");
    WeightStore<S> store;
    store.arch = arch;
    store.subnet_count = subnet_count;
    store.classifier_frozen = frozen_classifier;

    int mi = 0;
    for (const auto& spec : arch.layers) store.mask_index.push_back(spec.maskable() ? mi++ : -1);

    for (std::size_t li = 0; li < arch.layers.size(); ++li) {
        const LayerSpec& spec = arch.layers[li];
        Layer<S> layer;
        layer.spec = spec;
        if (spec.has_weight()) {
            Index fan_in = spec.weight_cols();
            double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
            auto rng = spec.kind == LayerKind::Classifier
                           ? make_rng(classifier_seed, {kStreamClassifierInit})
                           : make_rng(seed, {kStreamInit, static_cast<std::uint64_t>(li)});
            std::normal_distribution<double> dist(0.0, std_dev);
            layer.weight.resize(spec.weight_rows(), spec.weight_cols());
            for (Index i = 0; i < layer.weight.size(); ++i)
                layer.weight.data()[i] = static_cast<S>(dist(rng));
            if (spec.kind == LayerKind::Dense)
                layer.bias.assign(subnet_count, Vector<S>::Zero(spec.out_features));
            else if (spec.kind == LayerKind::Classifier)
                layer.bias.assign(1, Vector<S>::Zero(spec.out_features));
        } else {
            BatchNormVariant<S> v;
            v.gamma = Vector<S>::Ones(spec.channels);
            v.beta = Vector<S>::Zero(spec.channels);
            v.running_mean = Vector<S>::Zero(spec.channels);
            v.running_var = Vector<S>::Ones(spec.channels);
            layer.bn.assign(subnet_count, v);
        }
        store.layers.push_back(std::move(layer));
    }
    return store;
}

/// Redraws every maskable weight from the init distribution, keeping values at
/// positions outside `avail`. The draw count per layer is fixed, so the values a
/// position would receive do not depend on the availability pattern.
template <typename S>
void reinit_available(WeightStore<S>& store, const Mask& avail, std::uint64_t seed) {
    if (!avail.aligned_with(store.maskable_layout()))
        throw MaskError("availability mask does not align with store");
    for (std::size_t li = 0; li < store.layers.size(); ++li) {
        int mi = store.mask_index[li];
        if (mi < 0) continue;
        Layer<S>& layer = store.layers[li];
        double std_dev = std::sqrt(2.0 / static_cast<double>(layer.spec.weight_cols()));
        auto rng = make_rng(seed, {kStreamReinit, static_cast<std::uint64_t>(li)});
        std::normal_distribution<double> dist(0.0, std_dev);
        const BitVector& bits = avail.layer(mi);
        for (Index i = 0; i < layer.weight.size(); ++i) {
            S draw = static_cast<S>(dist(rng));
            if (bits.get(i)) layer.weight.data()[i] = draw;
        }
    }
    ++store.version;
}

template <typename S>
template <typename T>
WeightStore<T> WeightStore<S>::cast() const {
    WeightStore<T> out;
    out.arch = arch;
    out.mask_index = mask_index;
    out.subnet_count = subnet_count;
    out.classifier_frozen = classifier_frozen;
    for (const auto& l : layers) {
        Layer<T> o;
        o.spec = l.spec;
        o.weight = l.weight.template cast<T>();
        for (const auto& b : l.bias) o.bias.push_back(b.template cast<T>());
        for (const auto& v : l.bn)
            o.bn.push_back({v.gamma.template cast<T>(), v.beta.template cast<T>(),
                            v.running_mean.template cast<T>(), v.running_var.template cast<T>()});
        out.layers.push_back(std::move(o));
    }
    return out;
}

/// train: batch statistics, running stats of the chosen variant updated, cache built.
/// eval:  running statistics, no mutation.
/// prune: running statistics and a cache; used while optimizing masks with weights
///        and batchnorm stats held fixed.
enum class FwdMode { train, eval, prune };

template <typename S>
struct MaskApply {
    const Mask* mask = nullptr;
    S scale = S(1);
};

template <typename S>
struct LayerCache {
    Matrix<S> input;
    Matrix<S> eff_weight;
    Matrix<S> preact;      // layer output before ReLU
    Matrix<S> xhat;        // batchnorm only
    Vector<S> inv_std;     // batchnorm only
};

template <typename S>
struct ForwardCache {
    std::vector<LayerCache<S>> layers;
    Matrix<S> logits;
    int subnet = 0;
    FwdMode mode = FwdMode::train;
    std::optional<Mask> mask;
    S mask_scale = S(1);
    std::uint64_t store_version = 0;
};

namespace detail {

template <typename S>
Matrix<S> effective_weight(const Layer<S>& layer, int mi, const MaskApply<S>& ma) {
    Matrix<S> eff = layer.weight;
    if (ma.mask && mi >= 0) {
        const BitVector& bits = ma.mask->layer(mi);
        S* d = eff.data();
        for (Index i = 0; i < eff.size(); ++i) d[i] = bits.get(i) ? d[i] * ma.scale : S(0);
    }
    return eff;
}

/// Gathers conv patches of one sample into a (in_c*kh*kw) x (out_h*out_w) matrix.
template <typename S>
void im2col(const ConvGeom& g, const S* x, Matrix<S>& patches) {
    const Index oh = g.out_h(), ow = g.out_w();
    patches.resize(g.patch_size(), oh * ow);
    for (Index c = 0; c < g.in_c; ++c)
        for (Index u = 0; u < g.kh; ++u)
            for (Index v = 0; v < g.kw; ++v) {
                Index row = (c * g.kh + u) * g.kw + v;
                for (Index i = 0; i < oh; ++i)
                    for (Index j = 0; j < ow; ++j)
                        patches(row, i * ow + j) =
                            x[(c * g.in_h + i * g.stride + u) * g.in_w + j * g.stride + v];
            }
}

template <typename S>
void col2im_add(const ConvGeom& g, const Matrix<S>& patches, S* dx) {
    const Index oh = g.out_h(), ow = g.out_w();
    for (Index c = 0; c < g.in_c; ++c)
        for (Index u = 0; u < g.kh; ++u)
            for (Index v = 0; v < g.kw; ++v) {
                Index row = (c * g.kh + u) * g.kw + v;
                for (Index i = 0; i < oh; ++i)
                    for (Index j = 0; j < ow; ++j)
                        dx[(c * g.in_h + i * g.stride + u) * g.in_w + j * g.stride + v] +=
                            patches(row, i * ow + j);
            }
}

}  // namespace detail

template <typename S>
Matrix<S> forward(WeightStore<S>& store, const Matrix<S>& batch, const MaskApply<S>& ma,
                  int subnet, FwdMode mode, ForwardCache<S>* cache = nullptr) {
    if (subnet < 0 || subnet >= store.subnet_count)
        throw ShapeError("subnetwork index out of range");
    if (batch.cols() != store.arch.input_size())
        throw ShapeError("batch feature count does not match architecture input");
    if (ma.mask && !ma.mask->aligned_with(store.maskable_layout()))
        throw MaskError("mask does not align with store layout");
    if (cache) {
        cache->layers.assign(store.layers.size(), {});
        cache->subnet = subnet;
        cache->mode = mode;
        cache->mask = ma.mask ? std::optional<Mask>(*ma.mask) : std::nullopt;
        cache->mask_scale = ma.scale;
        cache->store_version = store.version;
    }

    const Index b = batch.rows();
    Matrix<S> x = batch;
    for (std::size_t li = 0; li < store.layers.size(); ++li) {
        Layer<S>& layer = store.layers[li];
        const LayerSpec& spec = layer.spec;
        LayerCache<S>* lc = cache ? &cache->layers[li] : nullptr;
        if (lc) lc->input = x;

        Matrix<S> out;
        switch (spec.kind) {
            case LayerKind::Dense:
            case LayerKind::Classifier: {
                if (x.cols() != spec.in_features) throw ShapeError("dense input width mismatch");
                Matrix<S> eff = detail::effective_weight(layer, store.mask_index[li], ma);
                out.noalias() = x * eff.transpose();
                const Vector<S>& bias =
                    spec.kind == LayerKind::Classifier ? layer.bias[0] : layer.bias[subnet];
                out.rowwise() += bias.transpose();
                if (lc) lc->eff_weight = std::move(eff);
                break;
            }
            case LayerKind::Conv: {
                const ConvGeom& g = spec.geom;
                if (x.cols() != g.in_c * g.in_h * g.in_w) throw ShapeError("conv input size mismatch");
                Matrix<S> eff = detail::effective_weight(layer, store.mask_index[li], ma);
                out.resize(b, g.out_size());
                Matrix<S> patches;
                for (Index s = 0; s < b; ++s) {
                    detail::im2col(g, x.row(s).data(), patches);
                    Eigen::Map<Matrix<S>> outmap(out.row(s).data(), g.out_c, g.out_h() * g.out_w());
                    outmap.noalias() = eff * patches;
                }
                if (lc) lc->eff_weight = std::move(eff);
                break;
            }
            case LayerKind::BatchNorm: {
                const Index C = spec.channels, Sp = spec.spatial;
                if (x.cols() != C * Sp) throw ShapeError("batchnorm input size mismatch");
                BatchNormVariant<S>& v = layer.bn[subnet];
                out.resize(b, x.cols());
                if (lc) {
                    lc->xhat.resize(b, x.cols());
                    lc->inv_std.resize(C);
                }
                const S eps = static_cast<S>(kBnEpsilon);
                for (Index c = 0; c < C; ++c) {
                    auto xc = x.middleCols(c * Sp, Sp);
                    S mean, var;
                    if (mode == FwdMode::train) {
                        const S n = static_cast<S>(b * Sp);
                        mean = xc.sum() / n;
                        var = (xc.array() - mean).square().sum() / n;
                        const S mom = static_cast<S>(kBnMomentum);
                        v.running_mean[c] = (S(1) - mom) * v.running_mean[c] + mom * mean;
                        v.running_var[c] = (S(1) - mom) * v.running_var[c] + mom * var;
                    } else {
                        mean = v.running_mean[c];
                        var = v.running_var[c];
                    }
                    S inv_std = S(1) / std::sqrt(var + eps);
                    Matrix<S> xhat = ((xc.array() - mean) * inv_std).matrix();
                    out.middleCols(c * Sp, Sp) = (v.gamma[c] * xhat.array() + v.beta[c]).matrix();
                    if (lc) {
                        lc->xhat.middleCols(c * Sp, Sp) = xhat;
                        lc->inv_std[c] = inv_std;
                    }
                }
                break;
            }
        }
        if (lc) lc->preact = out;
        if (spec.relu) out = out.cwiseMax(S(0));
        x = std::move(out);
    }
    check_finite(x, "logits");
    if (cache) cache->logits = x;
    return x;
}

template <typename S>
Matrix<S> forward_eval(const WeightStore<S>& store, const Matrix<S>& batch,
                       const MaskApply<S>& ma = {}, int subnet = 0) {
    // eval mode never mutates the store
    return forward(const_cast<WeightStore<S>&>(store), batch, ma, subnet, FwdMode::eval);
}

template <typename S>
std::pair<S, Matrix<S>> softmax_cross_entropy(const Matrix<S>& logits, const Labels& labels) {
    if (labels.size() != logits.rows()) throw ShapeError("label count does not match batch");
    const Index b = logits.rows(), k = logits.cols();
    Matrix<S> probs(b, k);
    S loss = 0;
    for (Index i = 0; i < b; ++i) {
        if (labels[i] < 0 || labels[i] >= k) throw ShapeError("label out of class range");
        S m = logits.row(i).maxCoeff();
        auto shifted = (logits.row(i).array() - m).eval();
        S lse = std::log(shifted.exp().sum());
        probs.row(i) = (shifted - lse).exp().matrix();
        loss -= shifted[labels[i]] - lse;
    }
    loss /= static_cast<S>(b);
    Matrix<S> dlogits = probs;
    for (Index i = 0; i < b; ++i) dlogits(i, labels[i]) -= S(1);
    dlogits /= static_cast<S>(b);
    return {loss, dlogits};
}

template <typename S>
struct LayerGrads {
    Matrix<S> weight;       // gradients at masked-out weights are exactly zero
    Matrix<S> weight_raw;   // pre-mask product; drives the popup-score update
    Vector<S> bias;
    Vector<S> gamma, beta;
};

template <typename S>
struct GradRecord {
    std::vector<LayerGrads<S>> layers;
    S loss = 0;
};

template <typename S>
GradRecord<S> backward_from(const WeightStore<S>& store, const ForwardCache<S>& cache,
                            const Matrix<S>& dlogits) {
    if (cache.store_version != store.version)
        throw Error("stale forward cache: parameters changed since forward");
    if (cache.mode == FwdMode::eval) throw Error("backward requires a train or prune cache");

    GradRecord<S> rec;
    rec.layers.assign(store.layers.size(), {});
    Matrix<S> delta = dlogits;
    for (int li = static_cast<int>(store.layers.size()) - 1; li >= 0; --li) {
        const Layer<S>& layer = store.layers[li];
        const LayerSpec& spec = layer.spec;
        const LayerCache<S>& lc = cache.layers[li];
        LayerGrads<S>& g = rec.layers[li];

        if (spec.relu)
            delta.array() *= (lc.preact.array() > S(0)).template cast<S>();

        switch (spec.kind) {
            case LayerKind::Dense:
            case LayerKind::Classifier: {
                g.weight_raw.noalias() = delta.transpose() * lc.input;
                g.weight = g.weight_raw;
                int mi = store.mask_index[li];
                if (cache.mask && mi >= 0) {
                    const BitVector& bits = cache.mask->layer(mi);
                    S* d = g.weight.data();
                    for (Index i = 0; i < g.weight.size(); ++i)
                        d[i] = bits.get(i) ? d[i] * cache.mask_scale : S(0);
                }
                g.bias = delta.colwise().sum().transpose();
                if (li > 0) delta = (delta * lc.eff_weight).eval();
                break;
            }
            case LayerKind::Conv: {
                const ConvGeom& geom = spec.geom;
                const Index b = delta.rows();
                g.weight_raw = Matrix<S>::Zero(geom.out_c, geom.patch_size());
                Matrix<S> dinput = li > 0 ? Matrix<S>::Zero(b, lc.input.cols()) : Matrix<S>();
                Matrix<S> patches, dpatches;
                for (Index s = 0; s < b; ++s) {
                    detail::im2col(geom, lc.input.row(s).data(), patches);
                    Eigen::Map<const Matrix<S>> d_out(delta.row(s).data(), geom.out_c,
                                                      geom.out_h() * geom.out_w());
                    g.weight_raw.noalias() += d_out * patches.transpose();
                    if (li > 0) {
                        dpatches.noalias() = lc.eff_weight.transpose() * d_out;
                        detail::col2im_add(geom, dpatches, dinput.row(s).data());
                    }
                }
                g.weight = g.weight_raw;
                int mi = store.mask_index[li];
                if (cache.mask && mi >= 0) {
                    const BitVector& bits = cache.mask->layer(mi);
                    S* d = g.weight.data();
                    for (Index i = 0; i < g.weight.size(); ++i)
                        d[i] = bits.get(i) ? d[i] * cache.mask_scale : S(0);
                }
                if (li > 0) delta = std::move(dinput);
                break;
            }
            case LayerKind::BatchNorm: {
                const Index C = spec.channels, Sp = spec.spatial;
                const BatchNormVariant<S>& v = layer.bn[cache.subnet];
                g.gamma.resize(C);
                g.beta.resize(C);
                Matrix<S> dx(delta.rows(), delta.cols());
                const S n = static_cast<S>(delta.rows() * Sp);
                for (Index c = 0; c < C; ++c) {
                    auto dy = delta.middleCols(c * Sp, Sp);
                    auto xhat = lc.xhat.middleCols(c * Sp, Sp);
                    g.gamma[c] = (dy.array() * xhat.array()).sum();
                    g.beta[c] = dy.sum();
                    const S inv_std = lc.inv_std[c];
                    auto dxhat = (dy.array() * v.gamma[c]).eval();
                    if (cache.mode == FwdMode::train) {
                        // batch mean and variance depend on x, so the chain rule
                        // carries the usual two correction sums
                        S sum_dxhat = dxhat.sum();
                        S sum_dxhat_xhat = (dxhat * xhat.array()).sum();
                        dx.middleCols(c * Sp, Sp) =
                            ((inv_std / n) *
                             (n * dxhat - sum_dxhat - xhat.array() * sum_dxhat_xhat))
                                .matrix();
                    } else {
                        dx.middleCols(c * Sp, Sp) = (dxhat * inv_std).matrix();
                    }
                }
                if (li > 0) delta = std::move(dx);
                break;
            }
        }
    }
    return rec;
}

template <typename S>
GradRecord<S> backward(const WeightStore<S>& store, const ForwardCache<S>& cache,
                       const Labels& labels) {
    auto [loss, dlogits] = softmax_cross_entropy(cache.logits, labels);
    if (!std::isfinite(static_cast<double>(loss))) throw NumericError("non-finite training loss");
    GradRecord<S> rec = backward_from(store, cache, dlogits);
    rec.loss = loss;
    return rec;
}

}  // namespace subnetens
