#include "s2s/layers.hpp"

#include <algorithm>
#include <cassert>

namespace s2s {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::MaxPool2d: return "maxpool2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::FullyConnected: return "fully_connected";
    case LayerKind::EltwiseSum: return "eltwise_sum";
    case LayerKind::StripeSplit: return "stripe_split";
    case LayerKind::Concat: return "concat";
  }
  return "?";
}

LayerSpec LayerSpec::conv2d(int filters, int kernel, int stride) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.filters = filters;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::maxpool2d(int kernel, int stride) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool2d;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::Relu;
  return s;
}

LayerSpec LayerSpec::fully_connected(int out_dim) {
  LayerSpec s;
  s.kind = LayerKind::FullyConnected;
  s.out_dim = out_dim;
  return s;
}

LayerSpec LayerSpec::eltwise_sum() {
  LayerSpec s;
  s.kind = LayerKind::EltwiseSum;
  return s;
}

LayerSpec LayerSpec::stripe_split(int stripes) {
  LayerSpec s;
  s.kind = LayerKind::StripeSplit;
  s.stripes = stripes;
  return s;
}

LayerSpec LayerSpec::concat(int axis) {
  LayerSpec s;
  s.kind = LayerKind::Concat;
  s.axis = axis;
  return s;
}

void LayerSpec::validate(const std::string& where) const {
  auto fail = [&](const std::string& msg) { throw UsageError("layer '" + where + "': " + msg); };
  switch (kind) {
    case LayerKind::Conv2d:
      if (filters <= 0) fail("conv2d needs filters > 0");
      if (kernel <= 0) fail("conv2d needs kernel > 0");
      if (stride <= 0) fail("conv2d needs stride > 0");
      break;
    case LayerKind::MaxPool2d:
      if (kernel <= 0) fail("maxpool2d needs kernel > 0");
      if (stride <= 0) fail("maxpool2d needs stride > 0");
      break;
    case LayerKind::FullyConnected:
      if (out_dim <= 0) fail("fully_connected needs out_dim > 0");
      break;
    case LayerKind::StripeSplit:
      if (stripes <= 0) fail("stripe_split needs stripes > 0");
      break;
    case LayerKind::Concat:
      if (axis < 0) fail("concat needs axis >= 0");
      break;
    case LayerKind::Relu:
    case LayerKind::EltwiseSum:
      break;
  }
}

static int out_extent(int in, int kernel, int stride) {
  return (in - kernel) / stride + 1;
}

std::vector<int> conv2d_out_shape(const std::vector<int>& in, const LayerSpec& spec,
                                  const std::string& where) {
  if (in.size() != 3)
    throw UsageError("layer '" + where + "': conv2d expects rank-3 input, got " + shape_str(in));
  if (in[1] < spec.kernel || in[2] < spec.kernel)
    throw UsageError("layer '" + where + "': conv2d kernel " + std::to_string(spec.kernel) +
                     " exceeds input " + shape_str(in));
  return {spec.filters, out_extent(in[1], spec.kernel, spec.stride),
          out_extent(in[2], spec.kernel, spec.stride)};
}

std::vector<int> maxpool_out_shape(const std::vector<int>& in, const LayerSpec& spec,
                                   const std::string& where) {
  if (in.size() != 3)
    throw UsageError("layer '" + where + "': maxpool2d expects rank-3 input, got " + shape_str(in));
  if (in[1] < spec.kernel || in[2] < spec.kernel)
    throw UsageError("layer '" + where + "': maxpool2d window " + std::to_string(spec.kernel) +
                     " exceeds input " + shape_str(in));
  return {in[0], out_extent(in[1], spec.kernel, spec.stride),
          out_extent(in[2], spec.kernel, spec.stride)};
}

std::vector<int> stripe_split_out_shape(const std::vector<int>& in, int stripes,
                                        const std::string& where) {
  if (in.size() != 3)
    throw UsageError("layer '" + where + "': stripe_split expects rank-3 input, got " +
                     shape_str(in));
  if (in[1] % stripes != 0)
    throw UsageError("layer '" + where + "': stripe_split requires input height " +
                     std::to_string(in[1]) + " divisible by stripe count " +
                     std::to_string(stripes));
  return {in[0], in[1] / stripes, in[2]};
}

std::vector<int> concat_out_shape(const std::vector<std::vector<int>>& ins, int axis,
                                  const std::string& where) {
  if (ins.empty()) throw UsageError("layer '" + where + "': concat needs at least one input");
  const auto& first = ins[0];
  if (axis >= static_cast<int>(first.size()))
    throw UsageError("layer '" + where + "': concat axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(first.size()));
  std::vector<int> out = first;
  for (size_t k = 1; k < ins.size(); ++k) {
    const auto& s = ins[k];
    if (s.size() != first.size())
      throw UsageError("layer '" + where + "': concat rank mismatch " + shape_str(s) + " vs " +
                       shape_str(first));
    for (size_t a = 0; a < s.size(); ++a) {
      if (static_cast<int>(a) == axis) continue;
      if (s[a] != first[a])
        throw UsageError("layer '" + where + "': concat extent mismatch " + shape_str(s) +
                         " vs " + shape_str(first));
    }
    out[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
  }
  return out;
}

Tensor conv2d_forward(const Tensor& in, std::span<const double> weights,
                      std::span<const double> biases, const LayerSpec& spec) {
  const int ic = in.extent(0), ih = in.extent(1), iw = in.extent(2);
  const int k = spec.kernel, s = spec.stride, f = spec.filters;
  const int oh = out_extent(ih, k, s), ow = out_extent(iw, k, s);
  Tensor out({f, oh, ow});
  // weights layout: [filter][in_channel][ky][kx]
  for (int o = 0; o < f; ++o) {
    const double* wf = weights.data() + static_cast<size_t>(o) * ic * k * k;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = biases[static_cast<size_t>(o)];
        const double* w = wf;
        for (int c = 0; c < ic; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            const double* row = in.data() + (static_cast<long long>(c) * ih + y * s + ky) * iw +
                                x * s;
            for (int kx = 0; kx < k; ++kx) acc += w[kx] * row[kx];
            w += k;
          }
        }
        out.at3(o, y, x) = acc;
      }
    }
  }
  return out;
}

Tensor conv2d_backward(const Tensor& in, std::span<const double> weights, const Tensor& grad_out,
                       const LayerSpec& spec, std::span<double> grad_weights,
                       std::span<double> grad_biases) {
  const int ic = in.extent(0), ih = in.extent(1), iw = in.extent(2);
  const int k = spec.kernel, s = spec.stride, f = spec.filters;
  const int oh = grad_out.extent(1), ow = grad_out.extent(2);
  Tensor grad_in({ic, ih, iw});
  for (int o = 0; o < f; ++o) {
    const size_t wbase = static_cast<size_t>(o) * ic * k * k;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        const double g = grad_out.at3(o, y, x);
        if (g == 0.0) continue;
        grad_biases[static_cast<size_t>(o)] += g;
        size_t wi = wbase;
        for (int c = 0; c < ic; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            const long long base = (static_cast<long long>(c) * ih + y * s + ky) * iw + x * s;
            for (int kx = 0; kx < k; ++kx) {
              grad_weights[wi] += g * in[base + kx];
              grad_in[base + kx] += g * weights[wi];
              ++wi;
            }
          }
        }
      }
    }
  }
  return grad_in;
}

Tensor maxpool_forward(const Tensor& in, const LayerSpec& spec, std::vector<int>& argmax) {
  const int c = in.extent(0), ih = in.extent(1), iw = in.extent(2);
  const int k = spec.kernel, s = spec.stride;
  const int oh = out_extent(ih, k, s), ow = out_extent(iw, k, s);
  Tensor out({c, oh, ow});
  argmax.assign(static_cast<size_t>(out.size()), -1);
  long long oi = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x, ++oi) {
        double best = -1.0;
        long long best_idx = -1;
        for (int ky = 0; ky < k; ++ky) {
          const long long base = (static_cast<long long>(ch) * ih + y * s + ky) * iw + x * s;
          for (int kx = 0; kx < k; ++kx) {
            // strict > keeps the lowest flat index on ties
            const double v = in[base + kx];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = base + kx;
            }
          }
        }
        out[oi] = best;
        argmax[static_cast<size_t>(oi)] = static_cast<int>(best_idx);
      }
    }
  }
  return out;
}

Tensor maxpool_backward(const std::vector<int>& in_shape, const std::vector<int>& argmax,
                        const Tensor& grad_out) {
  Tensor grad_in(in_shape);
  for (long long i = 0; i < grad_out.size(); ++i)
    grad_in[argmax[static_cast<size_t>(i)]] += grad_out[i];
  return grad_in;
}

Tensor relu_forward(const Tensor& in) {
  Tensor out(in.shape());
  for (long long i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& in, const Tensor& grad_out) {
  Tensor grad_in(in.shape());
  for (long long i = 0; i < in.size(); ++i) grad_in[i] = in[i] > 0.0 ? grad_out[i] : 0.0;
  return grad_in;
}

Tensor fc_forward(const Tensor& in, std::span<const double> weights,
                  std::span<const double> biases, const LayerSpec& spec) {
  const long long n = in.size();
  const int m = spec.out_dim;
  Tensor out({m});
  for (int o = 0; o < m; ++o) {
    const double* w = weights.data() + static_cast<long long>(o) * n;
    double acc = biases[static_cast<size_t>(o)];
    for (long long i = 0; i < n; ++i) acc += w[i] * in[i];
    out[o] = acc;
  }
  return out;
}

Tensor fc_backward(const Tensor& in, std::span<const double> weights, const Tensor& grad_out,
                   const LayerSpec& spec, std::span<double> grad_weights,
                   std::span<double> grad_biases) {
  const long long n = in.size();
  const int m = spec.out_dim;
  Tensor grad_in(in.shape());
  for (int o = 0; o < m; ++o) {
    const double g = grad_out[o];
    grad_biases[static_cast<size_t>(o)] += g;
    const long long base = static_cast<long long>(o) * n;
    for (long long i = 0; i < n; ++i) {
      grad_weights[static_cast<size_t>(base + i)] += g * in[i];
      grad_in[i] += g * weights[static_cast<size_t>(base + i)];
    }
  }
  return grad_in;
}

Tensor eltwise_sum_forward(const std::vector<const Tensor*>& ins) {
  if (ins.empty()) throw UsageError("eltwise sum: needs at least one input");
  Tensor out(ins[0]->shape());
  for (const Tensor* t : ins) {
    if (!t->same_shape(out))
      throw UsageError("eltwise sum: input shape " + shape_str(t->shape()) +
                       " does not match " + shape_str(out.shape()));
    for (long long i = 0; i < out.size(); ++i) out[i] += (*t)[i];
  }
  return out;
}

std::vector<Tensor> stripe_split_forward(const Tensor& in, int stripes) {
  const int c = in.extent(0), h = in.extent(1), w = in.extent(2);
  if (stripes <= 0 || h % stripes != 0)
    throw UsageError("stripe split: input height " + std::to_string(h) +
                     " must be divisible by stripe count " + std::to_string(stripes));
  const int hs = h / stripes;
  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>(stripes));
  for (int t = 0; t < stripes; ++t) {
    Tensor out({c, hs, w});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < hs; ++y)
        for (int x = 0; x < w; ++x) out.at3(ch, y, x) = in.at3(ch, t * hs + y, x);
    outs.push_back(std::move(out));
  }
  return outs;
}

Tensor stripe_split_backward(const std::vector<int>& in_shape,
                             const std::vector<Tensor>& grad_outs) {
  Tensor grad_in(in_shape);
  const int stripes = static_cast<int>(grad_outs.size());
  const int hs = in_shape[1] / stripes;
  for (int t = 0; t < stripes; ++t)
    for (int ch = 0; ch < in_shape[0]; ++ch)
      for (int y = 0; y < hs; ++y)
        for (int x = 0; x < in_shape[2]; ++x)
          grad_in.at3(ch, t * hs + y, x) += grad_outs[static_cast<size_t>(t)].at3(ch, y, x);
  return grad_in;
}

// Concat along `axis`: views each input as (outer, extent_axis, inner) and
// interleaves the middle blocks. axis 0 on vectors is plain concatenation;
// axis 1 on feature maps is the inverse of stripe_split.
static void concat_geometry(const std::vector<int>& shape, int axis, long long& outer,
                            long long& mid, long long& inner) {
  outer = 1;
  for (int a = 0; a < axis; ++a) outer *= shape[static_cast<size_t>(a)];
  mid = shape[static_cast<size_t>(axis)];
  inner = 1;
  for (size_t a = static_cast<size_t>(axis) + 1; a < shape.size(); ++a) inner *= shape[a];
}

Tensor concat_forward(const std::vector<const Tensor*>& ins, int axis) {
  std::vector<std::vector<int>> shapes;
  for (const Tensor* t : ins) shapes.push_back(t->shape());
  Tensor out(concat_out_shape(shapes, axis, "concat"));
  long long outer, out_mid, inner;
  concat_geometry(out.shape(), axis, outer, out_mid, inner);
  long long mid_off = 0;
  for (const Tensor* t : ins) {
    long long o2, mid, i2;
    concat_geometry(t->shape(), axis, o2, mid, i2);
    for (long long u = 0; u < outer; ++u)
      for (long long m = 0; m < mid; ++m)
        for (long long i = 0; i < inner; ++i)
          out[(u * out_mid + mid_off + m) * inner + i] = (*t)[(u * mid + m) * inner + i];
    mid_off += mid;
  }
  return out;
}

std::vector<Tensor> concat_backward(const std::vector<const Tensor*>& ins, int axis,
                                    const Tensor& grad_out) {
  long long outer, out_mid, inner;
  concat_geometry(grad_out.shape(), axis, outer, out_mid, inner);
  std::vector<Tensor> grads;
  long long mid_off = 0;
  for (const Tensor* t : ins) {
    Tensor g(t->shape());
    long long o2, mid, i2;
    concat_geometry(t->shape(), axis, o2, mid, i2);
    for (long long u = 0; u < outer; ++u)
      for (long long m = 0; m < mid; ++m)
        for (long long i = 0; i < inner; ++i)
          g[(u * mid + m) * inner + i] = grad_out[(u * out_mid + mid_off + m) * inner + i];
    mid_off += mid;
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace s2s
