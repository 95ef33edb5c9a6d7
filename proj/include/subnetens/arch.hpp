#pragma once

#include "subnetens/common.hpp"
#include "subnetens/masks.hpp"

#include <string>
#include <vector>

namespace subnetens {

enum class LayerKind { Dense, Conv, BatchNorm, Classifier };

struct ConvGeom {
    Index in_c = 0, in_h = 0, in_w = 0;
    Index out_c = 0, kh = 0, kw = 0, stride = 1;

    Index out_h() const { return (in_h - kh) / stride + 1; }
    Index out_w() const { return (in_w - kw) / stride + 1; }
    Index patch_size() const { return in_c * kh * kw; }
    Index out_size() const { return out_c * out_h() * out_w(); }
};

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    bool relu = false;              // ReLU applied to this layer's output
    Index in_features = 0;          // dense/classifier
    Index out_features = 0;
    ConvGeom geom;                  // conv
    Index channels = 0, spatial = 1;  // batchnorm: stats per channel over batch*spatial

    bool maskable() const { return kind == LayerKind::Dense || kind == LayerKind::Conv; }
    bool has_weight() const { return kind != LayerKind::BatchNorm; }
    Index weight_rows() const;
    Index weight_cols() const;
    Index output_size() const;
};

/// Parsed network architecture. Text grammar, whitespace-separated tokens:
///   input:784 | input:1x28x28
///   dense:N   conv:OUTxKHxKW[xSTRIDE]   bn   relu   classifier:CLASSES
/// `relu` attaches to the preceding layer; `classifier` must be last and unique.
struct ArchSpec {
    std::string text;
    std::vector<Index> input_shape;   // {d} or {c,h,w}
    std::vector<LayerSpec> layers;
    int class_count = 0;

    Index input_size() const;
    MaskLayout maskable_layout() const;
    int classifier_index() const;
    Index shared_param_count() const;      // weights of every layer plus the classifier bias
    Index per_subnet_param_count() const;  // one bias set plus one set of bn gamma/beta
};

ArchSpec parse_arch(const std::string& text);

}  // namespace subnetens
