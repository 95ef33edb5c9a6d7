#include "doctest.h"

#include "subnetens/checkpoint.hpp"
#include "subnetens/config.hpp"
#include "subnetens/eval.hpp"
#include "testutil.hpp"

#include <random>

using namespace subnetens;
namespace tu = subnetens::testutil;

namespace {

ModelBundle small_bundle(std::uint64_t seed) {
    BlobsSpec blobs;
    blobs.classes = 3;
    blobs.dim = 6;
    blobs.train_samples = 128;
    blobs.test_samples = 64;
    blobs.cluster_std = 1.0;
    auto ds = synth_blobs(blobs);

    TrainConfig cfg;
    cfg.arch = "input:6 dense:12 bn relu classifier:3";
    cfg.k = 2;
    cfg.pretrain_epochs = 2;
    cfg.finetune_epochs = 2;
    cfg.prune_epochs = 1;
    cfg.batch_size = 32;
    cfg.seed = seed;
    auto bundle = train_orthogonal(cfg, ds);
    bundle.config_text = canonical_config_text({cfg, DatasetSpec{.source = "synthetic_blobs",
                                                                 .blobs = blobs}});
    return bundle;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
    auto dir = tu::scratch_dir("ckpt_rt");
    auto bundle = small_bundle(3);
    save_checkpoint(bundle, dir + "/a.ckpt");
    auto loaded = load_checkpoint(dir + "/a.ckpt");
    REQUIRE(loaded.size() == 1);
    save_checkpoint(loaded[0], dir + "/b.ckpt");

    CHECK(tu::read_bytes(dir + "/a.ckpt") == tu::read_bytes(dir + "/b.ckpt"));

    const auto& b = loaded[0];
    CHECK(b.method == TrainMethod::orthogonal);
    CHECK(b.store.arch.text == bundle.store.arch.text);
    for (std::size_t li = 0; li < b.store.layers.size(); ++li) {
        if (!b.store.layers[li].spec.has_weight()) continue;
        CHECK(b.store.layers[li].weight == bundle.store.layers[li].weight);
    }
    REQUIRE(b.masks.has_value());
    CHECK(b.masks->finalized == 2);
    for (int m = 0; m < 2; ++m) {
        CHECK(b.masks->masks[m] == bundle.masks->masks[m]);
        CHECK(b.masks->masks[m].popcount() == bundle.masks->masks[m].popcount());
    }
    CHECK(b.training_log == bundle.training_log);
    CHECK(b.config_text == bundle.config_text);
    CHECK(b.config.lr == bundle.config.lr);
}

TEST_CASE("every single-byte corruption is detected") {
    auto bundle = small_bundle(5);
    std::string bytes = serialize_checkpoint({bundle});
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        std::string corrupt = bytes;
        std::size_t pos = rng() % corrupt.size();
        std::uint8_t flip = static_cast<std::uint8_t>(1 + rng() % 255);
        corrupt[pos] = static_cast<char>(static_cast<std::uint8_t>(corrupt[pos]) ^ flip);
        CHECK_THROWS_AS(deserialize_checkpoint(corrupt), Error);
    }
}

TEST_CASE("corruption inside the tensor region raises a checksum error") {
    auto bundle = small_bundle(7);
    std::string bytes = serialize_checkpoint({bundle});
    std::string corrupt = bytes;
    corrupt[bytes.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(deserialize_checkpoint(corrupt), ChecksumError);
}

TEST_CASE("magic and version corruption raise their own error classes") {
    auto bundle = small_bundle(9);
    std::string bytes = serialize_checkpoint({bundle});

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), FormatError);

    std::string bad_version = bytes;
    bad_version[10] = 42;
    CHECK_THROWS_AS(deserialize_checkpoint(bad_version), VersionError);

    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, 8)), FormatError);
}

TEST_CASE("multi-bundle checkpoints hold a deep ensemble") {
    auto dir = tu::scratch_dir("ckpt_multi");
    BlobsSpec blobs;
    blobs.classes = 2;
    blobs.dim = 4;
    blobs.train_samples = 64;
    blobs.test_samples = 32;
    auto ds = synth_blobs(blobs);
    TrainConfig cfg;
    cfg.arch = "input:4 dense:8 relu classifier:2";
    cfg.k = 3;
    cfg.pretrain_epochs = 1;
    cfg.batch_size = 32;
    auto members = train_deep_ensemble(cfg, ds);
    save_checkpoint(members, dir + "/ens.ckpt");
    auto loaded = load_checkpoint(dir + "/ens.ckpt");
    REQUIRE(loaded.size() == 3);
    for (int j = 0; j < 3; ++j)
        CHECK(loaded[j].store.layers[0].weight == members[j].store.layers[0].weight);
}

TEST_CASE("identical config and seed give identical checkpoint bytes") {
    auto a = small_bundle(21);
    auto b = small_bundle(21);
    CHECK(serialize_checkpoint({a}) == serialize_checkpoint({b}));
}
