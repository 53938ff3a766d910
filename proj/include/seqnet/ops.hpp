#pragma once

#include "seqnet/tensor.hpp"

#include <span>
#include <vector>

// Structural and elementwise ops on the gradient graph.
namespace seqnet::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Sum of x weighted by a constant (non-differentiated) vector of equal size.
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);

/// Concatenates [b, c, L_i] tensors along the length axis.
Tensor concat_length(const std::vector<Tensor>& parts);

/// x[:, :, begin:end] for a [b, c, L] tensor.
Tensor slice_length(const Tensor& x, std::size_t begin, std::size_t end);

/// Column `index` of a [b, n] tensor as a [b] tensor.
Tensor select_column(const Tensor& x, std::size_t index);

} // namespace seqnet::ops
