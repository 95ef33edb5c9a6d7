#include "subnetens/checkpoint.hpp"

#include "subnetens/config.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <type_traits>

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace subnetens {
namespace {

struct ByteWriter {
    std::string buf;

    template <typename T>
    void scalar(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void str(const std::string& s) {
        scalar<std::uint64_t>(s.size());
        buf.append(s);
    }
    template <typename S>
    void tensor(const Matrix<S>& m) {
        scalar<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
        scalar<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
        for (Index i = 0; i < m.size(); ++i) scalar<float>(static_cast<float>(m.data()[i]));
    }
    template <typename S>
    void vec(const Vector<S>& v) {
        scalar<std::uint64_t>(static_cast<std::uint64_t>(v.size()));
        for (Index i = 0; i < v.size(); ++i) scalar<float>(static_cast<float>(v[i]));
    }
    void bits(const BitVector& bv) {
        scalar<std::uint64_t>(static_cast<std::uint64_t>(bv.size()));
        scalar<std::uint32_t>(static_cast<std::uint32_t>(bv.count()));
        for (std::uint64_t w : bv.words()) scalar<std::uint64_t>(w);
    }
};

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    template <typename T>
    T scalar() {
        static_assert(std::is_trivially_copyable_v<T>);
        if (pos + sizeof(T) > buf.size()) throw FormatError("truncated checkpoint payload");
        T v;
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::string str() {
        auto n = scalar<std::uint64_t>();
        if (pos + n > buf.size()) throw FormatError("truncated checkpoint string");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    Matrix<float> tensor() {
        auto rows = scalar<std::uint64_t>();
        auto cols = scalar<std::uint64_t>();
        Matrix<float> m(static_cast<Index>(rows), static_cast<Index>(cols));
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = scalar<float>();
        return m;
    }
    Vector<float> vec() {
        auto n = scalar<std::uint64_t>();
        Vector<float> v(static_cast<Index>(n));
        for (Index i = 0; i < v.size(); ++i) v[i] = scalar<float>();
        return v;
    }
    BitVector bits() {
        auto nbits = scalar<std::uint64_t>();
        auto popcount = scalar<std::uint32_t>();
        std::vector<std::uint64_t> words((nbits + 63) / 64);
        for (auto& w : words) w = scalar<std::uint64_t>();
        BitVector bv = BitVector::from_words(static_cast<Index>(nbits), std::move(words));
        if (bv.count() != static_cast<Index>(popcount))
            throw FormatError("mask popcount header mismatch");
        return bv;
    }
};

void write_config(ByteWriter& w, const TrainConfig& cfg) {
    w.str(cfg.arch);
    w.scalar<std::int32_t>(cfg.k);
    w.scalar<std::int32_t>(cfg.pretrain_epochs);
    w.scalar<std::int32_t>(cfg.finetune_epochs);
    w.scalar<std::int32_t>(cfg.prune_epochs);
    w.scalar<double>(cfg.lr);
    w.scalar<double>(cfg.momentum);
    w.scalar<double>(cfg.weight_decay);
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(cfg.lr_milestones.size()));
    for (int m : cfg.lr_milestones) w.scalar<std::int32_t>(m);
    w.scalar<double>(cfg.lr_decay);
    w.scalar<double>(cfg.score_lr);
    w.scalar<double>(cfg.score_momentum);
    w.scalar<std::int32_t>(cfg.batch_size);
    w.scalar<std::uint8_t>(cfg.fixed_classifier);
    w.scalar<std::uint8_t>(cfg.mask_optimization);
    w.scalar<double>(cfg.dropout_rate);
    w.scalar<std::int32_t>(cfg.mc_passes);
    w.scalar<std::uint64_t>(cfg.seed);
}

TrainConfig read_config(ByteReader& r) {
    TrainConfig cfg;
    cfg.arch = r.str();
    cfg.k = r.scalar<std::int32_t>();
    cfg.pretrain_epochs = r.scalar<std::int32_t>();
    cfg.finetune_epochs = r.scalar<std::int32_t>();
    cfg.prune_epochs = r.scalar<std::int32_t>();
    cfg.lr = r.scalar<double>();
    cfg.momentum = r.scalar<double>();
    cfg.weight_decay = r.scalar<double>();
    auto n = r.scalar<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) cfg.lr_milestones.push_back(r.scalar<std::int32_t>());
    cfg.lr_decay = r.scalar<double>();
    cfg.score_lr = r.scalar<double>();
    cfg.score_momentum = r.scalar<double>();
    cfg.batch_size = r.scalar<std::int32_t>();
    cfg.fixed_classifier = r.scalar<std::uint8_t>();
    cfg.mask_optimization = r.scalar<std::uint8_t>();
    cfg.dropout_rate = r.scalar<double>();
    cfg.mc_passes = r.scalar<std::int32_t>();
    cfg.seed = r.scalar<std::uint64_t>();
    return cfg;
}

void write_bundle(ByteWriter& w, const ModelBundle& bundle) {
    w.scalar<std::uint8_t>(static_cast<std::uint8_t>(bundle.method));
    w.scalar<std::uint64_t>(bundle.seed);
    write_config(w, bundle.config);
    w.str(bundle.config_text);
    w.str(bundle.training_log);

    const WeightStore<float>& store = bundle.store;
    w.str(store.arch.text);
    w.scalar<std::uint8_t>(store.classifier_frozen);
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(store.subnet_count));
    for (const auto& layer : store.layers) {
        if (layer.spec.has_weight()) {
            w.tensor(layer.weight);
            w.scalar<std::uint32_t>(static_cast<std::uint32_t>(layer.bias.size()));
            for (const auto& b : layer.bias) w.vec(b);
        } else {
            w.scalar<std::uint32_t>(static_cast<std::uint32_t>(layer.bn.size()));
            for (const auto& v : layer.bn) {
                w.vec(v.gamma);
                w.vec(v.beta);
                w.vec(v.running_mean);
                w.vec(v.running_var);
            }
        }
    }

    w.scalar<std::uint8_t>(bundle.masks.has_value());
    if (bundle.masks) {
        const MaskSet& set = *bundle.masks;
        w.scalar<std::uint32_t>(static_cast<std::uint32_t>(set.k));
        w.scalar<std::uint32_t>(static_cast<std::uint32_t>(set.finalized));
        for (const auto& mask : set.masks)
            for (int li = 0; li < mask.layer_count(); ++li) w.bits(mask.layer(li));
        for (int li = 0; li < set.claimed.layer_count(); ++li) w.bits(set.claimed.layer(li));
    }
}

ModelBundle read_bundle(ByteReader& r) {
    ModelBundle bundle;
    auto method = r.scalar<std::uint8_t>();
    if (method > 2) throw FormatError("unknown training method tag in checkpoint");
    bundle.method = static_cast<TrainMethod>(method);
    bundle.seed = r.scalar<std::uint64_t>();
    bundle.config = read_config(r);
    bundle.config_text = r.str();
    bundle.training_log = r.str();

    auto arch = parse_arch(r.str());
    bool frozen = r.scalar<std::uint8_t>();
    int subnet_count = static_cast<int>(r.scalar<std::uint32_t>());
    bundle.store = init_network<float>(arch, subnet_count, frozen, 0, 0);
    for (auto& layer : bundle.store.layers) {
        if (layer.spec.has_weight()) {
            layer.weight = r.tensor();
            if (layer.weight.rows() != layer.spec.weight_rows() ||
                layer.weight.cols() != layer.spec.weight_cols())
                throw FormatError("tensor shape does not match the architecture");
            auto sets = r.scalar<std::uint32_t>();
            if (sets != layer.bias.size()) throw FormatError("bias set count mismatch");
            for (auto& b : layer.bias) {
                b = r.vec();
                if (b.size() != layer.spec.out_features) throw FormatError("bias length mismatch");
            }
        } else {
            auto variants = r.scalar<std::uint32_t>();
            if (variants != layer.bn.size()) throw FormatError("batchnorm variant count mismatch");
            for (auto& v : layer.bn) {
                v.gamma = r.vec();
                v.beta = r.vec();
                v.running_mean = r.vec();
                v.running_var = r.vec();
                if (v.gamma.size() != layer.spec.channels)
                    throw FormatError("batchnorm channel count mismatch");
            }
        }
    }

    if (r.scalar<std::uint8_t>()) {
        MaskLayout layout = bundle.store.maskable_layout();
        int k = static_cast<int>(r.scalar<std::uint32_t>());
        int finalized = static_cast<int>(r.scalar<std::uint32_t>());
        if (finalized < 0 || finalized > k) throw FormatError("bad finalized mask count");
        MaskSet set = make_mask_set(layout, k);
        for (auto& mask : set.masks)
            for (int li = 0; li < mask.layer_count(); ++li) {
                BitVector bv = r.bits();
                if (bv.size() != layout.layer_sizes[li])
                    throw FormatError("mask layer size does not match the architecture");
                mask.layer(li) = std::move(bv);
            }
        for (int li = 0; li < set.claimed.layer_count(); ++li) set.claimed.layer(li) = r.bits();
        set.finalized = finalized;
        bundle.masks = std::move(set);
    }
    return bundle;
}

}  // namespace

std::string serialize_checkpoint(const std::vector<ModelBundle>& bundles) {
    ByteWriter payload;
    payload.scalar<std::uint32_t>(static_cast<std::uint32_t>(bundles.size()));
    for (const auto& b : bundles) write_bundle(payload, b);

    ByteWriter out;
    out.buf.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    out.scalar<std::uint32_t>(kCheckpointVersion);
    out.scalar<std::uint64_t>(fnv1a64(payload.buf.data(), payload.buf.size()));
    out.buf.append(payload.buf);
    return std::move(out.buf);
}

std::vector<ModelBundle> deserialize_checkpoint(const std::string& bytes) {
    constexpr std::size_t header = sizeof(kCheckpointMagic) + sizeof(std::uint32_t) +
                                   sizeof(std::uint64_t);
    if (bytes.size() < header) throw FormatError("checkpoint shorter than its header");
    if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw FormatError("bad checkpoint magic");
    std::uint32_t version;
    std::memcpy(&version, bytes.data() + sizeof(kCheckpointMagic), sizeof(version));
    if (version != kCheckpointVersion)
        throw VersionError("unsupported checkpoint version " + std::to_string(version));
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + sizeof(kCheckpointMagic) + sizeof(version), sizeof(stored));
    std::uint64_t actual = fnv1a64(bytes.data() + header, bytes.size() - header);
    if (stored != actual) throw ChecksumError("checkpoint checksum mismatch");

    std::string payload = bytes.substr(header);
    ByteReader r{payload};
    auto count = r.scalar<std::uint32_t>();
    std::vector<ModelBundle> bundles;
    bundles.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) bundles.push_back(read_bundle(r));
    if (r.pos != payload.size()) throw FormatError("trailing bytes after checkpoint payload");
    return bundles;
}

void save_checkpoint(const std::vector<ModelBundle>& bundles, const std::string& path) {
    std::string bytes = serialize_checkpoint(bundles);
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed on " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw IoError("cannot rename " + tmp + " to " + path);
    }
}

void save_checkpoint(const ModelBundle& bundle, const std::string& path) {
    save_checkpoint(std::vector<ModelBundle>{bundle}, path);
}

std::vector<ModelBundle> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_checkpoint(buf.str());
}

}  // namespace subnetens
