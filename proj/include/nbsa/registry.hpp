#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "nbsa/gradcheck.hpp"

namespace nbsa {

/// A library op exposed with flattened inputs, plus a sampler for points
/// inside its documented domain.
struct RegisteredOp {
    std::string name;
    DiffOp<double> op;
    std::function<std::vector<Matrix>(std::mt19937_64&)> sample;
};

/// Every differentiable op in the library. Attention ops run in eval mode.
std::vector<RegisteredOp> registered_ops();

}  // namespace nbsa
