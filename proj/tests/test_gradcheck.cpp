#include "doctest.h"

#include "subnetens/network.hpp"
#include "testutil.hpp"

using namespace subnetens;
namespace tu = subnetens::testutil;

namespace {

// Runs `draws` finite-difference checks, redrawing when a sample lands too close
// to a ReLU kink for central differences to be meaningful.
void run_fd_suite(const std::string& arch_text, int draws, int batch, bool masked,
                  std::uint64_t base_seed, int subnet = 0, int subnet_count = 1) {
    auto arch = parse_arch(arch_text);
    REQUIRE(arch.shared_param_count() <= 500);
    int done = 0;
    std::uint64_t seed = base_seed;
    while (done < draws) {
        ++seed;
        auto store = init_network<double>(arch, subnet_count, false, seed, seed);
        tu::randomize_biases(store, seed + 1);
        auto x = tu::random_batch(batch, arch.input_size(), seed + 2);
        Labels y = tu::random_labels(batch, arch.class_count, seed + 3);
        Mask mask = tu::random_mask(arch.maskable_layout(), 0.6, seed + 4);

        auto res = tu::grad_check(store, x, y, masked ? &mask : nullptr, subnet);
        if (res.relu_margin <= 1e-3) continue;  // kink-adjacent draw, not differentiable
        CAPTURE(arch_text);
        CAPTURE(seed);
        CAPTURE(res.worst);
        REQUIRE(res.max_rel_err < 1e-3);
        ++done;
    }
}

}  // namespace

TEST_CASE("finite differences: dense stack") {
    run_fd_suite("input:6 dense:8 relu dense:6 relu classifier:3", 10, 5, false, 100);
}

TEST_CASE("finite differences: dense stack with batchnorm") {
    run_fd_suite("input:5 dense:7 bn relu dense:6 bn relu classifier:3", 10, 6, false, 200);
}

TEST_CASE("finite differences: conv and batchnorm stack") {
    run_fd_suite("input:1x6x6 conv:2x3x3 bn relu conv:3x3x3 bn relu dense:8 relu classifier:3",
                 8, 4, false, 300);
}

TEST_CASE("finite differences: strided conv") {
    run_fd_suite("input:1x7x7 conv:2x3x3x2 bn relu dense:6 relu classifier:2", 8, 4, false, 400);
}

TEST_CASE("finite differences: masked network") {
    run_fd_suite("input:1x6x6 conv:2x3x3 bn relu dense:8 relu classifier:3", 8, 4, true, 500);
}

TEST_CASE("finite differences: non-default subnetwork variant") {
    run_fd_suite("input:5 dense:6 bn relu classifier:3", 6, 5, false, 600, /*subnet=*/1,
                 /*subnet_count=*/3);
}
