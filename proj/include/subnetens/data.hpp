#pragma once

#include "subnetens/common.hpp"

#include <string>
#include <vector>

namespace subnetens {

struct BlobsSpec {
    int classes = 2;
    Index dim = 2;
    Index train_samples = 1000;
    Index test_samples = 500;
    double cluster_std = 1.0;
    double center_distance = 4.0;
    bool balanced = true;
    std::uint64_t seed = 1;
};

struct DatasetSpec {
    std::string source;  // idx_images | cifar_binary | synthetic_blobs
    BlobsSpec blobs;
    std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;
    std::vector<std::string> cifar_train;
    std::string cifar_test;
    double normalize_mean = 0.0;
    double normalize_std = 1.0;
    Index limit_train = 0;  // 0 keeps everything
    Index limit_test = 0;
};

struct DataSplit {
    Matrix<float> x;
    Labels y;
    std::vector<Index> shape;  // per-sample feature shape, {d} or {c,h,w}
    int classes = 0;
};

struct Dataset {
    Matrix<float> train_x, test_x;
    Labels train_y, test_y;
    int class_count = 0;
    std::vector<Index> feature_shape;

    Index train_size() const { return train_x.rows(); }
    Index test_size() const { return test_x.rows(); }
};

/// Big-endian IDX pair: image magic 0x00000803, label magic 0x00000801.
/// Pixel bytes are scaled to [0,1].
DataSplit load_idx(const std::string& images_path, const std::string& labels_path);

/// CIFAR-10 binary files: 3073-byte records, one label byte then 3072
/// channel-major pixel bytes.
DataSplit load_cifar_binary(const std::vector<std::string>& paths);

/// Gaussian clusters around equidistant class centers (pairwise distance
/// center_distance; requires dim >= classes).
Dataset synth_blobs(const BlobsSpec& spec);

Dataset load_dataset(const DatasetSpec& spec);

}  // namespace subnetens
