#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "rankcount/tensor.hpp"

// Shared between tensor.cpp and losses.cpp; not installed.

namespace rankcount::ag::detail {

/// Builds an op node: output values are precomputed by the caller, the
/// backward rule reads node.grad and accumulates into node.inputs. Applies
/// the finite check and inherits requires_grad from the inputs.
Tensor make_op(Shape shape, std::vector<double> values,
               std::vector<std::shared_ptr<Node>> inputs,
               std::function<void(Node&)> backward_fn, const char* what);

void accumulate_grad(Node& target, const std::vector<double>& contribution);

}  // namespace rankcount::ag::detail
