#pragma once

#include <memory>

#include "lens/edge.hpp"
#include "lens/fusion.hpp"

namespace lens::test {

/// Untrained stream models with a fusion SVM fitted on the complementary fixture. Cheap flow
/// settings keep streaming tests fast.
inline std::shared_ptr<const ModelBundle> tiny_bundle(std::uint64_t seed, int stack_length = 4) {
    auto b = std::make_shared<ModelBundle>();
    b->spatial = StreamModel::spatial(seed);
    b->temporal = StreamModel::temporal(seed + 1, stack_length);
    SvmConfig c;
    c.gamma = 2.0;
    c.C = 10.0;
    b->svm = svm_fit(fixture_samples(complementary_fixture(10, seed)), c);
    b->flow_side = 32;
    b->tvl1.warps = 3;
    b->tvl1.iters = 15;
    return b;
}

}  // namespace lens::test
