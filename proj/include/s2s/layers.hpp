#pragma once

#include <span>
#include <vector>

#include "s2s/tensor.hpp"

namespace s2s {

enum class LayerKind {
  Conv2d,
  MaxPool2d,
  Relu,
  FullyConnected,
  EltwiseSum,
  StripeSplit,
  Concat,
};

const char* layer_kind_name(LayerKind kind);

// One node's hyperparameters. Which fields matter depends on the kind;
// validate() enforces the per-kind invariants (positive dims, stride >= 1).
struct LayerSpec {
  LayerKind kind{LayerKind::Relu};
  int filters = 0;   // conv: output channels
  int kernel = 0;    // conv / pool: square window
  int stride = 1;    // conv / pool
  int out_dim = 0;   // fully connected
  int stripes = 0;   // stripe split
  int axis = 0;      // concat

  static LayerSpec conv2d(int filters, int kernel, int stride = 1);
  static LayerSpec maxpool2d(int kernel, int stride);
  static LayerSpec relu();
  static LayerSpec fully_connected(int out_dim);
  static LayerSpec eltwise_sum();
  static LayerSpec stripe_split(int stripes);
  static LayerSpec concat(int axis = 0);

  void validate(const std::string& where) const;
};

// Raw layer kernels. Convolutions use valid padding; spatial output extents
// follow floor((in - kernel)/stride) + 1. Parameters live in external flat
// storage, weights first then biases.

Tensor conv2d_forward(const Tensor& in, std::span<const double> weights,
                      std::span<const double> biases, const LayerSpec& spec);
Tensor conv2d_backward(const Tensor& in, std::span<const double> weights,
                       const Tensor& grad_out, const LayerSpec& spec,
                       std::span<double> grad_weights, std::span<double> grad_biases);

// Max pooling records, per output element, the flat index of the input element
// that won the window. Ties break toward the lowest flat index so backward is
// deterministic; backward routes the whole gradient to that single element.
Tensor maxpool_forward(const Tensor& in, const LayerSpec& spec, std::vector<int>& argmax);
Tensor maxpool_backward(const std::vector<int>& in_shape, const std::vector<int>& argmax,
                        const Tensor& grad_out);

Tensor relu_forward(const Tensor& in);
Tensor relu_backward(const Tensor& in, const Tensor& grad_out);

Tensor fc_forward(const Tensor& in, std::span<const double> weights,
                  std::span<const double> biases, const LayerSpec& spec);
Tensor fc_backward(const Tensor& in, std::span<const double> weights, const Tensor& grad_out,
                   const LayerSpec& spec, std::span<double> grad_weights,
                   std::span<double> grad_biases);

Tensor eltwise_sum_forward(const std::vector<const Tensor*>& ins);

std::vector<Tensor> stripe_split_forward(const Tensor& in, int stripes);
Tensor stripe_split_backward(const std::vector<int>& in_shape,
                             const std::vector<Tensor>& grad_outs);

Tensor concat_forward(const std::vector<const Tensor*>& ins, int axis);
std::vector<Tensor> concat_backward(const std::vector<const Tensor*>& ins, int axis,
                                    const Tensor& grad_out);

// Static shape arithmetic used by graph construction.
std::vector<int> conv2d_out_shape(const std::vector<int>& in, const LayerSpec& spec,
                                  const std::string& where);
std::vector<int> maxpool_out_shape(const std::vector<int>& in, const LayerSpec& spec,
                                   const std::string& where);
std::vector<int> stripe_split_out_shape(const std::vector<int>& in, int stripes,
                                        const std::string& where);
std::vector<int> concat_out_shape(const std::vector<std::vector<int>>& ins, int axis,
                                  const std::string& where);

}  // namespace s2s
