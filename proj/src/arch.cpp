#include "subnetens/arch.hpp"

#include <sstream>

namespace subnetens {
namespace {

std::vector<std::string> tokenize(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::string> toks;
    std::string t;
    while (is >> t) toks.push_back(t);
    return toks;
}

std::vector<Index> parse_dims(const std::string& s, const std::string& tok) {
    std::vector<Index> dims;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        std::size_t next = s.find('x', pos);
        std::string part = s.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
        try {
            std::size_t used = 0;
            long v = std::stol(part, &used);
            if (used != part.size() || v <= 0) throw std::invalid_argument(part);
            dims.push_back(static_cast<Index>(v));
        } catch (const std::exception&) {
            throw ConfigError("bad dimension '" + part + "' in arch token '" + tok + "'");
        }
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    return dims;
}

}  // namespace

Index LayerSpec::weight_rows() const {
    switch (kind) {
        case LayerKind::Dense:
        case LayerKind::Classifier: return out_features;
        case LayerKind::Conv: return geom.out_c;
        case LayerKind::BatchNorm: return 0;
    }
    return 0;
}

Index LayerSpec::weight_cols() const {
    switch (kind) {
        case LayerKind::Dense:
        case LayerKind::Classifier: return in_features;
        case LayerKind::Conv: return geom.patch_size();
        case LayerKind::BatchNorm: return 0;
    }
    return 0;
}

Index LayerSpec::output_size() const {
    switch (kind) {
        case LayerKind::Dense:
        case LayerKind::Classifier: return out_features;
        case LayerKind::Conv: return geom.out_size();
        case LayerKind::BatchNorm: return channels * spatial;
    }
    return 0;
}

Index ArchSpec::input_size() const {
    Index n = 1;
    for (Index d : input_shape) n *= d;
    return n;
}

MaskLayout ArchSpec::maskable_layout() const {
    MaskLayout layout;
    for (const auto& l : layers)
        if (l.maskable()) layout.layer_sizes.push_back(l.weight_rows() * l.weight_cols());
    return layout;
}

int ArchSpec::classifier_index() const {
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].kind == LayerKind::Classifier) return static_cast<int>(i);
    return -1;
}

Index ArchSpec::shared_param_count() const {
    Index n = 0;
    for (const auto& l : layers) {
        n += l.weight_rows() * l.weight_cols();
        if (l.kind == LayerKind::Classifier) n += l.out_features;
    }
    return n;
}

Index ArchSpec::per_subnet_param_count() const {
    Index n = 0;
    for (const auto& l : layers) {
        if (l.kind == LayerKind::Dense) n += l.out_features;
        if (l.kind == LayerKind::BatchNorm) n += 2 * l.channels;
    }
    return n;
}

ArchSpec parse_arch(const std::string& text) {
    ArchSpec arch;
    auto toks = tokenize(text);
    if (toks.empty()) throw ConfigError("empty architecture");

    // Running output shape: spatial {c,h,w} until flattened by a dense layer.
    std::vector<Index> shape;
    bool saw_classifier = false;

    std::ostringstream canon;
    for (std::size_t ti = 0; ti < toks.size(); ++ti) {
        const std::string& tok = toks[ti];
        if (saw_classifier) throw ConfigError("classifier must be the last arch token");
        std::size_t colon = tok.find(':');
        std::string head = tok.substr(0, colon);
        std::string rest = colon == std::string::npos ? "" : tok.substr(colon + 1);

        if (ti == 0) {
            if (head != "input") throw ConfigError("arch must start with input:...");
            auto dims = parse_dims(rest, tok);
            if (dims.size() != 1 && dims.size() != 3)
                throw ConfigError("input must be DIM or CxHxW");
            arch.input_shape = dims;
            shape = dims;
        } else if (head == "dense" || head == "classifier") {
            auto dims = parse_dims(rest, tok);
            if (dims.size() != 1) throw ConfigError(head + " takes a single size");
            LayerSpec l;
            l.kind = head == "dense" ? LayerKind::Dense : LayerKind::Classifier;
            l.in_features = 1;
            for (Index d : shape) l.in_features *= d;
            l.out_features = dims[0];
            arch.layers.push_back(l);
            shape = {dims[0]};
            if (l.kind == LayerKind::Classifier) {
                saw_classifier = true;
                arch.class_count = static_cast<int>(dims[0]);
            }
        } else if (head == "conv") {
            auto dims = parse_dims(rest, tok);
            if (dims.size() != 3 && dims.size() != 4)
                throw ConfigError("conv takes OUTxKHxKW or OUTxKHxKWxSTRIDE");
            if (shape.size() != 3) throw ConfigError("conv requires a CxHxW input");
            LayerSpec l;
            l.kind = LayerKind::Conv;
            l.geom.in_c = shape[0];
            l.geom.in_h = shape[1];
            l.geom.in_w = shape[2];
            l.geom.out_c = dims[0];
            l.geom.kh = dims[1];
            l.geom.kw = dims[2];
            l.geom.stride = dims.size() == 4 ? dims[3] : 1;
            if (l.geom.kh > l.geom.in_h || l.geom.kw > l.geom.in_w)
                throw ConfigError("conv kernel larger than its input");
            arch.layers.push_back(l);
            shape = {l.geom.out_c, l.geom.out_h(), l.geom.out_w()};
        } else if (head == "bn") {
            if (!rest.empty()) throw ConfigError("bn takes no argument");
            LayerSpec l;
            l.kind = LayerKind::BatchNorm;
            if (shape.size() == 3) {
                l.channels = shape[0];
                l.spatial = shape[1] * shape[2];
            } else {
                l.channels = shape[0];
                l.spatial = 1;
            }
            arch.layers.push_back(l);
        } else if (head == "relu") {
            if (arch.layers.empty()) throw ConfigError("relu needs a preceding layer");
            if (arch.layers.back().relu) throw ConfigError("duplicate relu");
            arch.layers.back().relu = true;
        } else {
            throw ConfigError("unknown arch token '" + tok + "'");
        }
        canon << (ti ? " " : "") << tok;
    }
    if (!saw_classifier) throw ConfigError("arch must end with classifier:CLASSES");
    if (arch.layers.back().relu) throw ConfigError("classifier output takes no relu");
    arch.text = canon.str();
    return arch;
}

}  // namespace subnetens
