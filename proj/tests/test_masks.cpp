#include "doctest.h"

#include "subnetens/masks.hpp"

#include <random>

using namespace subnetens;

namespace {

MaskLayout layout_of(std::initializer_list<Index> sizes) {
    return MaskLayout{std::vector<Index>(sizes)};
}

}  // namespace

TEST_CASE("quota splits a layer with remainders to the lowest mask indices") {
    // layer of 7 weights, k=5 -> (2,2,1,1,1)
    std::vector<Index> want{2, 2, 1, 1, 1};
    Index total = 0;
    for (int m = 0; m < 5; ++m) {
        CHECK(quota_for(7, 5, m) == want[m]);
        total += quota_for(7, 5, m);
    }
    CHECK(total == 7);
}

TEST_CASE("random partition deals every weight exactly once") {
    auto set = random_orthogonal_partition(layout_of({10}), 5, 42);
    for (int m = 0; m < 5; ++m) CHECK(set.masks[m].popcount() == 2);
    auto rep = verify(set);
    CHECK(rep.orthogonal);
    CHECK(rep.coverage_complete);
    CHECK(rep.max_quota_deviation == 0);
}

TEST_CASE("k=1 partition is a single mask of all ones") {
    auto set = random_orthogonal_partition(layout_of({13, 4}), 1, 7);
    CHECK(set.masks[0].popcount() == 17);
    CHECK(set.masks[0].layer(0).all());
    CHECK(set.masks[0].layer(1).all());
}

TEST_CASE("non-divisible layer respects the remainder rule") {
    auto set = random_orthogonal_partition(layout_of({7}), 5, 3);
    std::vector<Index> want{2, 2, 1, 1, 1};
    Index union_count = 0;
    for (int m = 0; m < 5; ++m) {
        CHECK(set.masks[m].layer(0).count() == want[m]);
        union_count += set.masks[m].layer(0).count();
    }
    CHECK(union_count == 7);
    CHECK(set.claimed.popcount() == 7);
}

TEST_CASE("partition is deterministic in the seed") {
    auto a = random_orthogonal_partition(layout_of({64, 33}), 4, 99);
    auto b = random_orthogonal_partition(layout_of({64, 33}), 4, 99);
    auto c = random_orthogonal_partition(layout_of({64, 33}), 4, 100);
    for (int m = 0; m < 4; ++m) CHECK(a.masks[m] == b.masks[m]);
    bool all_equal = true;
    for (int m = 0; m < 4; ++m) all_equal = all_equal && (a.masks[m] == c.masks[m]);
    CHECK_FALSE(all_equal);
}

TEST_CASE("availability shrinks by one quota per claim") {
    MaskLayout layout = layout_of({100, 50});
    auto part = random_orthogonal_partition(layout, 5, 11);
    auto set = make_mask_set(layout, 5);

    // i=0: everything available
    CHECK(availability(set, 0).popcount() == 150);

    claim(set, 0, part.masks[0]);
    claim(set, 1, part.masks[1]);
    // two of five claimed -> 60% available
    Mask avail = availability(set, 2);
    CHECK(avail.popcount() == 90);
    CHECK(static_cast<double>(avail.popcount()) / 150.0 == doctest::Approx(0.60));

    claim(set, 2, part.masks[2]);
    claim(set, 3, part.masks[3]);
    // the last subnetwork is left with exactly 1/k of the weights
    CHECK(availability(set, 4).popcount() == 30);

    claim(set, 4, part.masks[4]);
    CHECK(set.claimed.popcount() == 150);
    CHECK(verify(set).pass());
}

TEST_CASE("claim rejects overlap and quota violations") {
    MaskLayout layout = layout_of({4});
    auto set = make_mask_set(layout, 2);

    Mask m1(layout, false);
    m1.layer(0).set(0, true);
    m1.layer(0).set(1, true);
    claim(set, 0, m1);

    Mask overlap(layout, false);
    overlap.layer(0).set(1, true);
    overlap.layer(0).set(2, true);
    CHECK_THROWS_AS(claim(set, 1, overlap), MaskError);

    Mask short_mask(layout, false);
    short_mask.layer(0).set(3, true);
    CHECK_THROWS_AS(claim(set, 1, short_mask), MaskError);

    Mask good(layout, false);
    good.layer(0).set(2, true);
    good.layer(0).set(3, true);
    claim(set, 1, good);
    CHECK(verify(set).pass());
}

TEST_CASE("verify flags the first overlapping pair") {
    MaskLayout layout = layout_of({2});
    auto set = make_mask_set(layout, 2);
    // hand-build an inconsistent set, bypassing claim
    set.masks[0].layer(0).set(0, true);
    set.masks[0].layer(0).set(1, true);
    set.masks[1].layer(0).set(1, true);
    set.finalized = 2;
    set.claimed = set.masks[0];

    auto rep = verify(set);
    CHECK_FALSE(rep.orthogonal);
    CHECK(rep.overlap_i == 0);
    CHECK(rep.overlap_j == 1);
    CHECK(rep.overlap_layer == 0);
    CHECK(rep.overlap_index == 1);
    CHECK_FALSE(rep.pass());
}

TEST_CASE("verify on orthogonal masks passes") {
    MaskLayout layout = layout_of({2});
    auto set = make_mask_set(layout, 2);
    set.masks[0].layer(0).set(0, true);
    set.masks[1].layer(0).set(1, true);
    set.finalized = 2;
    set.claimed = set.masks[0];
    set.claimed |= set.masks[1];
    CHECK(verify(set).orthogonal);
}

TEST_CASE("partition property sweep over seeds and k") {
    std::vector<Index> sizes{10, 7, 64, 33, 5, 128, 1};
    MaskLayout layout{sizes};
    for (int k : {2, 3, 5, 10}) {
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            auto set = random_orthogonal_partition(layout, k, seed);
            auto rep = verify(set);
            REQUIRE(rep.orthogonal);
            REQUIRE(rep.coverage_complete);
            REQUIRE(rep.max_quota_deviation == 0);
            REQUIRE(rep.max_layer_spread <= 1);
        }
    }
}

TEST_CASE("availability requires prior finalization") {
    auto set = make_mask_set(layout_of({6}), 3);
    CHECK_THROWS_AS(availability(set, 2), MaskError);
    CHECK_THROWS_AS(availability(set, -1), MaskError);
    CHECK_THROWS_AS(availability(set, 3), MaskError);
}

TEST_CASE("bitvector popcount cache stays exact under mutation") {
    std::mt19937_64 rng(5);
    BitVector bv(257, false);
    Index ref = 0;
    std::vector<bool> shadow(257, false);
    for (int step = 0; step < 2000; ++step) {
        Index i = static_cast<Index>(rng() % 257);
        bool v = rng() & 1;
        if (shadow[i] != v) ref += v ? 1 : -1;
        shadow[i] = v;
        bv.set(i, v);
        REQUIRE(bv.count() == ref);
    }
    CHECK(bv.complement().count() == 257 - ref);
}
