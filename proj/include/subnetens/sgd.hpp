#pragma once

#include "subnetens/network.hpp"

#include <vector>

namespace subnetens {

struct SgdConfig {
    double lr = 0.01;
    double momentum = 0.0;
    double weight_decay = 0.0;
    std::vector<int> milestones;   // epochs at which lr is multiplied by decay
    double decay = 0.1;

    double lr_at(int epoch) const {
        double l = lr;
        for (int m : milestones)
            if (epoch >= m) l *= decay;
        return l;
    }
};

template <typename S>
struct SgdState {
    SgdConfig cfg;
    int epoch = 0;
    std::vector<Matrix<S>> v_weight;
    std::vector<Vector<S>> v_bias, v_gamma, v_beta;

    SgdState(const SgdConfig& c, const WeightStore<S>& store) : cfg(c) {
        if (!(cfg.lr > 0)) throw ConfigError("learning rate must be positive");
        for (const auto& l : store.layers) {
            v_weight.push_back(l.spec.has_weight()
                                   ? Matrix<S>::Zero(l.weight.rows(), l.weight.cols())
                                   : Matrix<S>());
            v_bias.push_back(l.bias.empty() ? Vector<S>() : Vector<S>::Zero(l.bias[0].size()));
            v_gamma.push_back(l.bn.empty() ? Vector<S>() : Vector<S>::Zero(l.spec.channels));
            v_beta.push_back(l.bn.empty() ? Vector<S>() : Vector<S>::Zero(l.spec.channels));
        }
    }
};

/// v <- momentum*v + grad + wd*w; w <- w - lr*v, per non-frozen tensor. Weight decay
/// skips batchnorm parameters. When `ownership` is given, maskable weights outside it
/// keep both value and velocity, so weights claimed by other subnetworks never move.
template <typename S>
void sgd_step(WeightStore<S>& store, const GradRecord<S>& grads, SgdState<S>& state,
              int subnet, const Mask* ownership = nullptr) {
    const S lr = static_cast<S>(state.cfg.lr_at(state.epoch));
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
    const S mom = static_cast<S>(state.cfg.momentum);
    const S wd = static_cast<S>(state.cfg.weight_decay);
    if (subnet < 0 || subnet >= store.subnet_count)
        throw ShapeError("subnetwork index out of range");
    if (grads.layers.size() != store.layers.size())
        throw ShapeError("gradient record does not align with store");
    if (ownership && !ownership->aligned_with(store.maskable_layout()))
        throw MaskError("ownership mask does not align with store");

    for (std::size_t li = 0; li < store.layers.size(); ++li) {
        Layer<S>& layer = store.layers[li];
        const LayerGrads<S>& g = grads.layers[li];
        switch (layer.spec.kind) {
            case LayerKind::Dense:
            case LayerKind::Conv: {
                int mi = store.mask_index[li];
                Matrix<S>& v = state.v_weight[li];
                if (ownership && mi >= 0) {
                    const BitVector& own = ownership->layer(mi);
                    S* w = layer.weight.data();
                    S* vd = v.data();
                    const S* gd = g.weight.data();
                    for (Index i = 0; i < layer.weight.size(); ++i) {
                        if (!own.get(i)) continue;
                        vd[i] = mom * vd[i] + gd[i] + wd * w[i];
                        w[i] -= lr * vd[i];
                    }
                } else {
                    v = mom * v + g.weight + wd * layer.weight;
                    layer.weight -= lr * v;
                }
                if (layer.spec.kind == LayerKind::Dense) {
                    Vector<S>& vb = state.v_bias[li];
                    vb = mom * vb + g.bias + wd * layer.bias[subnet];
                    layer.bias[subnet] -= lr * vb;
                }
                break;
            }
            case LayerKind::Classifier: {
                if (store.classifier_frozen) break;
                Matrix<S>& v = state.v_weight[li];
                v = mom * v + g.weight + wd * layer.weight;
                layer.weight -= lr * v;
                Vector<S>& vb = state.v_bias[li];
                vb = mom * vb + g.bias + wd * layer.bias[0];
                layer.bias[0] -= lr * vb;
                break;
            }
            case LayerKind::BatchNorm: {
                BatchNormVariant<S>& bn = layer.bn[subnet];
                Vector<S>& vg = state.v_gamma[li];
                Vector<S>& vb = state.v_beta[li];
                vg = mom * vg + g.gamma;
                vb = mom * vb + g.beta;
                bn.gamma -= lr * vg;
                bn.beta -= lr * vb;
                break;
            }
        }
    }
    ++store.version;
}

}  // namespace subnetens
