#include "subnetens/data.hpp"

#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>

namespace subnetens {
namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarRecord = 3073;

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    in.seekg(0, std::ios::end);
    std::streamsize n = in.tellg();
    in.seekg(0);
    std::vector<unsigned char> buf(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(buf.data()), n);
    if (!in) throw IoError("read failed on " + path);
    return buf;
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
    if (off + 4 > b.size()) throw FormatError("truncated header in " + path);
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
           (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace

DataSplit load_idx(const std::string& images_path, const std::string& labels_path) {
    auto img = read_file(images_path);
    auto lab = read_file(labels_path);

    std::ostringstream err;
    std::uint32_t img_magic = read_be32(img, 0, images_path);
    if (img_magic != kIdxImageMagic) {
        err << "bad IDX image magic 0x" << std::hex << img_magic << " in " << images_path;
        throw FormatError(err.str());
    }
    std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
    if (lab_magic != kIdxLabelMagic) {
        err << "bad IDX label magic 0x" << std::hex << lab_magic << " in " << labels_path;
        throw FormatError(err.str());
    }

    std::uint32_t n = read_be32(img, 4, images_path);
    std::uint32_t rows = read_be32(img, 8, images_path);
    std::uint32_t cols = read_be32(img, 12, images_path);
    std::uint32_t n_lab = read_be32(lab, 4, labels_path);
    if (n != n_lab) {
        err << "image count " << n << " does not match label count " << n_lab;
        throw FormatError(err.str());
    }
    std::size_t pixels = std::size_t(n) * rows * cols;
    if (img.size() != 16 + pixels) throw FormatError("truncated image payload in " + images_path);
    if (lab.size() != 8 + n) throw FormatError("truncated label payload in " + labels_path);

    DataSplit split;
    split.shape = {1, static_cast<Index>(rows), static_cast<Index>(cols)};
    split.x.resize(n, static_cast<Index>(rows) * cols);
    split.y.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        for (std::uint32_t p = 0; p < rows * cols; ++p)
            split.x(i, p) = static_cast<float>(img[16 + std::size_t(i) * rows * cols + p]) / 255.0f;
        int label = lab[8 + i];
        split.y[i] = label;
        split.classes = std::max(split.classes, label + 1);
    }
    return split;
}

DataSplit load_cifar_binary(const std::vector<std::string>& paths) {
    DataSplit split;
    split.shape = {3, 32, 32};
    split.classes = 10;
    std::vector<std::vector<unsigned char>> files;
    std::size_t total = 0;
    for (const auto& path : paths) {
        auto buf = read_file(path);
        if (buf.size() % kCifarRecord != 0) {
            std::ostringstream err;
            err << "truncated CIFAR record in " << path << " at byte offset "
                << (buf.size() / kCifarRecord) * kCifarRecord;
            throw FormatError(err.str());
        }
        total += buf.size() / kCifarRecord;
        files.push_back(std::move(buf));
    }
    split.x.resize(static_cast<Index>(total), 3072);
    split.y.resize(static_cast<Index>(total));
    Index row = 0;
    for (const auto& buf : files) {
        for (std::size_t r = 0; r < buf.size() / kCifarRecord; ++r, ++row) {
            const unsigned char* rec = buf.data() + r * kCifarRecord;
            if (rec[0] > 9) throw FormatError("CIFAR label byte out of range");
            split.y[row] = rec[0];
            for (Index p = 0; p < 3072; ++p)
                split.x(row, p) = static_cast<float>(rec[1 + p]) / 255.0f;
        }
    }
    return split;
}

Dataset synth_blobs(const BlobsSpec& spec) {
    if (spec.classes < 2) throw ConfigError("blobs need at least 2 classes");
    if (spec.cluster_std <= 0) throw ConfigError("blob cluster std must be positive");
    if (spec.dim < spec.classes)
        throw ConfigError("blob dimension must be at least the class count");

    // centers on scaled basis vectors: pairwise distance is exactly center_distance
    Matrix<float> centers = Matrix<float>::Zero(spec.classes, spec.dim);
    const float scale = static_cast<float>(spec.center_distance / std::sqrt(2.0));
    for (int c = 0; c < spec.classes; ++c) centers(c, c) = scale;

    auto rng = make_rng(spec.seed, {kStreamBlobs});
    std::normal_distribution<double> noise(0.0, spec.cluster_std);
    std::uniform_int_distribution<int> pick(0, spec.classes - 1);

    auto fill = [&](Matrix<float>& x, Labels& y, Index count) {
        x.resize(count, spec.dim);
        y.resize(count);
        for (Index i = 0; i < count; ++i) {
            int c = spec.balanced ? static_cast<int>(i % spec.classes) : pick(rng);
            y[i] = c;
            for (Index d = 0; d < spec.dim; ++d)
                x(i, d) = centers(c, d) + static_cast<float>(noise(rng));
        }
    };

    Dataset ds;
    ds.class_count = spec.classes;
    ds.feature_shape = {spec.dim};
    fill(ds.train_x, ds.train_y, spec.train_samples);
    fill(ds.test_x, ds.test_y, spec.test_samples);
    return ds;
}

Dataset load_dataset(const DatasetSpec& spec) {
    Dataset ds;
    if (spec.source == "synthetic_blobs") {
        ds = synth_blobs(spec.blobs);
    } else if (spec.source == "idx_images") {
        auto train = load_idx(spec.idx_train_images, spec.idx_train_labels);
        auto test = load_idx(spec.idx_test_images, spec.idx_test_labels);
        if (train.shape != test.shape) throw FormatError("IDX train/test shapes differ");
        ds.train_x = std::move(train.x);
        ds.train_y = std::move(train.y);
        ds.test_x = std::move(test.x);
        ds.test_y = std::move(test.y);
        ds.class_count = std::max(train.classes, test.classes);
        ds.feature_shape = train.shape;
    } else if (spec.source == "cifar_binary") {
        auto train = load_cifar_binary(spec.cifar_train);
        auto test = load_cifar_binary({spec.cifar_test});
        ds.train_x = std::move(train.x);
        ds.train_y = std::move(train.y);
        ds.test_x = std::move(test.x);
        ds.test_y = std::move(test.y);
        ds.class_count = 10;
        ds.feature_shape = train.shape;
    } else {
        throw ConfigError("unknown dataset source '" + spec.source + "'");
    }

    if (spec.normalize_std <= 0) throw ConfigError("normalize_std must be positive");
    if (spec.normalize_mean != 0.0 || spec.normalize_std != 1.0) {
        const float mean = static_cast<float>(spec.normalize_mean);
        const float inv = 1.0f / static_cast<float>(spec.normalize_std);
        ds.train_x = ((ds.train_x.array() - mean) * inv).matrix();
        ds.test_x = ((ds.test_x.array() - mean) * inv).matrix();
    }
    if (spec.limit_train > 0 && spec.limit_train < ds.train_size()) {
        ds.train_x = ds.train_x.topRows(spec.limit_train).eval();
        ds.train_y = ds.train_y.head(spec.limit_train).eval();
    }
    if (spec.limit_test > 0 && spec.limit_test < ds.test_size()) {
        ds.test_x = ds.test_x.topRows(spec.limit_test).eval();
        ds.test_y = ds.test_y.head(spec.limit_test).eval();
    }
    return ds;
}

}  // namespace subnetens
