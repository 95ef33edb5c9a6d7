#include "doctest.h"

#include "subnetens/data.hpp"
#include "subnetens/edgepop.hpp"
#include "subnetens/sgd.hpp"
#include "testutil.hpp"

#include <random>

using namespace subnetens;
namespace tu = subnetens::testutil;

namespace {

/// Independent top-quota oracle: repeatedly scans for the largest |score| among
/// still-available candidates, breaking ties toward the lower flat index.
BitVector brute_force_top(const Matrix<double>& scores, const BitVector& avail, Index quota) {
    BitVector sel(scores.size(), false);
    std::vector<bool> taken(scores.size(), false);
    for (Index pick = 0; pick < quota; ++pick) {
        Index best = -1;
        for (Index i = 0; i < scores.size(); ++i) {
            if (!avail.get(i) || taken[i]) continue;
            if (best < 0 || std::abs(scores.data()[i]) > std::abs(scores.data()[best])) best = i;
        }
        taken[best] = true;
        sel.set(best, true);
    }
    return sel;
}

WeightStore<double> single_dense_store(Index in, Index out, std::uint64_t seed) {
    auto arch = parse_arch("input:" + std::to_string(in) + " dense:" + std::to_string(out) +
                           " classifier:2");
    return init_network<double>(arch, 1, false, seed, seed);
}

}  // namespace

TEST_CASE("score init normalizes by the layer maximum magnitude") {
    auto store = single_dense_store(3, 1, 5);
    store.layers[0].weight << 2.0, -4.0, 1.0;
    auto scores = init_scores(store);
    CHECK(scores.layers[0](0, 0) == 0.5);
    CHECK(scores.layers[0](0, 1) == -1.0);
    CHECK(scores.layers[0](0, 2) == 0.25);
    CHECK(scores.layers[0].cwiseAbs().maxCoeff() == 1.0);
}

TEST_CASE("score init tolerates an all-zero layer") {
    auto store = single_dense_store(3, 2, 6);
    store.layers[0].weight.setZero();
    auto scores = init_scores(store);
    CHECK(scores.layers[0].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("score init stays within [-1, 1] on random layers") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto store = single_dense_store(17, 9, seed);
        auto scores = init_scores(store);
        CHECK(scores.layers[0].cwiseAbs().maxCoeff() == 1.0);
        CHECK(scores.layers[0].minCoeff() >= -1.0);
        CHECK(scores.layers[0].maxCoeff() <= 1.0);
    }
}

TEST_CASE("select_mask keeps the top scores by magnitude") {
    PopupScores<double> scores;
    scores.layers.push_back((Matrix<double>(1, 4) << 0.9, 0.1, -0.5, 0.4).finished());
    MaskLayout layout{{4}};

    Mask all(layout, true);
    auto m = select_mask(scores, all, {2});
    CHECK(m.layer(0).get(0));
    CHECK_FALSE(m.layer(0).get(1));
    CHECK(m.layer(0).get(2));
    CHECK_FALSE(m.layer(0).get(3));

    Mask partial(layout, true);
    partial.layer(0).set(0, false);
    auto m2 = select_mask(scores, partial, {2});
    CHECK_FALSE(m2.layer(0).get(0));
    CHECK_FALSE(m2.layer(0).get(1));
    CHECK(m2.layer(0).get(2));
    CHECK(m2.layer(0).get(3));
}

TEST_CASE("select_mask breaks ties toward the lower flat index") {
    PopupScores<double> scores;
    scores.layers.push_back(Matrix<double>::Constant(1, 4, 0.7));
    Mask all(MaskLayout{{4}}, true);
    auto m = select_mask(scores, all, {2});
    CHECK(m.layer(0).get(0));
    CHECK(m.layer(0).get(1));
    CHECK_FALSE(m.layer(0).get(2));
    CHECK_FALSE(m.layer(0).get(3));
}

TEST_CASE("select_mask rejects a quota above the availability") {
    PopupScores<double> scores;
    scores.layers.push_back(Matrix<double>::Constant(1, 4, 0.5));
    Mask avail(MaskLayout{{4}}, false);
    avail.layer(0).set(1, true);
    CHECK_THROWS_AS(select_mask(scores, avail, {2}), MaskError);
}

TEST_CASE("select_mask equals the brute-force oracle on random tensors") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> dist;
    for (int trial = 0; trial < 200; ++trial) {
        Index n = 1 + static_cast<Index>(rng() % 64);
        Matrix<double> s(1, n);
        for (Index i = 0; i < n; ++i) s(0, i) = dist(rng);
        if (trial % 3 == 0) {
            // duplicate magnitudes exercise the tie rule
            for (Index i = 0; i + 1 < n; i += 2) s(0, i + 1) = -s(0, i);
        }
        MaskLayout layout{{n}};
        Mask avail(layout, false);
        Index avail_count = 0;
        for (Index i = 0; i < n; ++i) {
            bool a = rng() % 4 != 0;
            avail.layer(0).set(i, a);
            avail_count += a;
        }
        Index quota = avail_count == 0 ? 0 : static_cast<Index>(rng() % (avail_count + 1));

        PopupScores<double> scores;
        scores.layers.push_back(s);
        auto got = select_mask(scores, avail, {quota});
        auto want = brute_force_top(s, avail.layer(0), quota);
        REQUIRE(got.layer(0) == want);
    }
}

TEST_CASE("selection certificate: no unselected available weight beats a selected one") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> dist;
    for (int trial = 0; trial < 50; ++trial) {
        Index n = 8 + static_cast<Index>(rng() % 32);
        Matrix<double> s(1, n);
        for (Index i = 0; i < n; ++i) s(0, i) = dist(rng);
        MaskLayout layout{{n}};
        Mask avail(layout, true);
        Index quota = n / 2;
        PopupScores<double> scores;
        scores.layers.push_back(s);
        auto m = select_mask(scores, avail, {quota});
        REQUIRE(m.layer(0).count() == quota);

        double min_sel = std::numeric_limits<double>::infinity();
        double max_unsel = 0;
        for (Index i = 0; i < n; ++i) {
            double a = std::abs(s(0, i));
            if (m.layer(0).get(i))
                min_sel = std::min(min_sel, a);
            else
                max_unsel = std::max(max_unsel, a);
        }
        REQUIRE(min_sel >= max_unsel);
    }
}

TEST_CASE("straight-through dense score gradient hand case") {
    Matrix<double> upstream(1, 1);
    upstream << 1.0;
    Matrix<double> w(1, 2);
    w << 2.0, 3.0;
    Matrix<double> x(1, 2);
    x << 4.0, 5.0;
    auto g = ste_score_grads(upstream, w, x);
    CHECK(g(0, 0) == 8.0);
    CHECK(g(0, 1) == 15.0);
}

TEST_CASE("zero input gives zero score gradients") {
    auto g = ste_score_grads(tu::random_batch(3, 4, 1), tu::random_batch(4, 6, 2),
                             Matrix<double>::Zero(3, 6).eval());
    CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dense score gradients match finite differences of the soft relaxation") {
    // relaxed layer: out = (S o W) x, loss = 0.5 * ||out - target||^2
    std::mt19937_64 rng(123);
    std::normal_distribution<double> dist;
    const Index out_n = 5, in_n = 7, batch = 3;
    Matrix<double> w = tu::random_batch(out_n, in_n, 10);
    Matrix<double> s0 = tu::random_batch(out_n, in_n, 11);
    Matrix<double> x = tu::random_batch(batch, in_n, 12);
    Matrix<double> target = tu::random_batch(batch, out_n, 13);

    auto loss_of = [&](const Matrix<double>& s) {
        Matrix<double> out = x * s.cwiseProduct(w).transpose();
        return 0.5 * (out - target).squaredNorm();
    };
    Matrix<double> out0 = x * s0.cwiseProduct(w).transpose();
    Matrix<double> upstream = out0 - target;  // dL/dpre
    auto analytic = ste_score_grads(upstream, w, x);

    const double h = 1e-4;
    for (Index i = 0; i < s0.size(); ++i) {
        Matrix<double> p = s0, m = s0;
        p.data()[i] += h;
        m.data()[i] -= h;
        double fd = (loss_of(p) - loss_of(m)) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(analytic.data()[i]), 1e-4});
        REQUIRE(std::abs(fd - analytic.data()[i]) / denom < 1e-3);
    }
}

TEST_CASE("conv score gradients match finite differences of the soft relaxation") {
    ConvGeom g;
    g.in_c = 2;
    g.in_h = 5;
    g.in_w = 5;
    g.out_c = 3;
    g.kh = 3;
    g.kw = 3;
    g.stride = 1;
    const Index batch = 2;
    Matrix<double> w = tu::random_batch(g.out_c, g.patch_size(), 20);
    Matrix<double> s0 = tu::random_batch(g.out_c, g.patch_size(), 21);
    Matrix<double> x = tu::random_batch(batch, g.in_c * g.in_h * g.in_w, 22);
    Matrix<double> target = tu::random_batch(batch, g.out_size(), 23);

    auto conv_out = [&](const Matrix<double>& kernel) {
        Matrix<double> out(batch, g.out_size());
        Matrix<double> patches;
        for (Index s = 0; s < batch; ++s) {
            detail::im2col(g, x.row(s).data(), patches);
            Eigen::Map<Matrix<double>> om(out.row(s).data(), g.out_c, g.out_h() * g.out_w());
            om.noalias() = kernel * patches;
        }
        return out;
    };
    auto loss_of = [&](const Matrix<double>& s) {
        return 0.5 * (conv_out(s.cwiseProduct(w)) - target).squaredNorm();
    };
    Matrix<double> upstream = conv_out(s0.cwiseProduct(w)) - target;
    auto analytic = ste_score_grads_conv(upstream, w, x, g);

    const double h = 1e-4;
    for (Index i = 0; i < s0.size(); ++i) {
        Matrix<double> p = s0, m = s0;
        p.data()[i] += h;
        m.data()[i] -= h;
        double fd = (loss_of(p) - loss_of(m)) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(analytic.data()[i]), 1e-4});
        REQUIRE(std::abs(fd - analytic.data()[i]) / denom < 1e-3);
    }
}

TEST_CASE("zero-epoch optimize_mask is magnitude pruning") {
    auto arch = parse_arch("input:6 dense:8 relu classifier:2");
    auto store = init_network<double>(arch, 1, false, 31, 31);
    auto layout = store.maskable_layout();
    Mask avail(layout, true);
    auto quotas = quota_table(layout, 2, 0);

    auto ds = synth_blobs({.classes = 2, .dim = 6, .train_samples = 64, .test_samples = 8,
                           .cluster_std = 1.0, .center_distance = 4.0, .balanced = true, .seed = 3});
    Matrix<double> x = ds.train_x.cast<double>();
    PruneConfig cfg;
    cfg.epochs = 0;
    cfg.quotas = quotas;
    auto got = optimize_mask(store, avail, cfg, x, ds.train_y);
    auto want = select_mask(init_scores(store), avail, quotas);
    CHECK(got == want);
}

TEST_CASE("optimize_mask never touches weights and honors availability each epoch") {
    auto arch = parse_arch("input:6 dense:10 relu classifier:2");
    auto store = init_network<double>(arch, 1, false, 41, 41);
    auto layout = store.maskable_layout();

    auto part = random_orthogonal_partition(layout, 3, 42);
    auto set = make_mask_set(layout, 3);
    claim(set, 0, part.masks[0]);
    Mask avail = availability(set, 1);

    auto ds = synth_blobs({.classes = 2, .dim = 6, .train_samples = 128, .test_samples = 8,
                           .cluster_std = 1.2, .center_distance = 4.0, .balanced = true, .seed = 5});
    Matrix<double> x = ds.train_x.cast<double>();

    auto weights_before = store.layers[0].weight;
    auto version_before = store.version;
    PruneConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 32;
    cfg.quotas = quota_table(layout, 3, 1);
    int observed = 0;
    auto mask = optimize_mask(store, avail, cfg, x, ds.train_y,
                              [&](int, const Mask& m) {
                                  ++observed;
                                  CHECK_FALSE(m.intersects(set.claimed));
                              });
    CHECK(observed == 3);
    CHECK(store.layers[0].weight == weights_before);
    CHECK(store.version == version_before);
    CHECK_FALSE(mask.intersects(set.claimed));
    CHECK(mask.is_subset_of(avail));

    claim(set, 1, mask);
    CHECK(verify(set).orthogonal);
}

TEST_CASE("optimized masks beat random masks of equal quota on a separable task") {
    // paired-run experiment: pretrain a 1-hidden-layer net on blobs, then compare
    // train accuracy of the edge-pop mask against a random mask of the same quota
    int wins = 0;
    double sum_opt = 0, sum_rand = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto ds = synth_blobs({.classes = 2, .dim = 8, .train_samples = 256, .test_samples = 32,
                               .cluster_std = 1.6, .center_distance = 5.0, .balanced = true,
                               .seed = seed});
        Matrix<float> x = ds.train_x;
        auto arch = parse_arch("input:8 dense:24 relu classifier:2");
        auto store = init_network<float>(arch, 1, false, seed * 7, seed * 7);

        // short pretraining pass over all weights
        SgdState<float> sgd(SgdConfig{0.05, 0.9, 0.0, {}, 0.1}, store);
        for (int epoch = 0; epoch < 8; ++epoch) {
            ForwardCache<float> cache;
            forward(store, x, {}, 0, FwdMode::train, &cache);
            auto grads = backward(store, cache, ds.train_y);
            sgd_step(store, grads, sgd, 0);
        }

        auto layout = store.maskable_layout();
        Mask avail(layout, true);
        PruneConfig cfg;
        cfg.epochs = 4;
        cfg.batch_size = 64;
        cfg.quotas = quota_table(layout, 4, 0);  // keep 25% of the weights
        cfg.seed = seed;
        auto opt_mask = optimize_mask(store, avail, cfg, x, ds.train_y);
        auto rand_mask = random_orthogonal_partition(layout, 4, seed * 13).masks[0];

        auto accuracy = [&](const Mask& m) {
            MaskApply<float> ma{&m, 1.0f};
            auto logits = forward_eval(store, x, ma, 0);
            int correct = 0;
            for (Index i = 0; i < logits.rows(); ++i) {
                Index arg;
                logits.row(i).maxCoeff(&arg);
                correct += (arg == ds.train_y[i]);
            }
            return static_cast<double>(correct) / static_cast<double>(logits.rows());
        };
        double acc_opt = accuracy(opt_mask);
        double acc_rand = accuracy(rand_mask);
        sum_opt += acc_opt;
        sum_rand += acc_rand;
        wins += acc_opt >= acc_rand;
    }
    CAPTURE(sum_opt / 20.0);
    CAPTURE(sum_rand / 20.0);
    CHECK(sum_opt >= sum_rand);  // averaged over 20 seeds
    CHECK(wins >= 14);
}
