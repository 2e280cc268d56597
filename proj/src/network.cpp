#include "s2s/network.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace s2s {

int PartNetwork::add_node(LayerSpec spec, std::vector<NodeInput> inputs, std::string name,
                          int share_params_with) {
  if (finalized_) throw UsageError("network: cannot add nodes after finalize");
  const int id = static_cast<int>(nodes_.size());
  if (name.empty()) name = std::string(layer_kind_name(spec.kind)) + "#" + std::to_string(id);
  spec.validate(name);
  if (inputs.empty()) throw UsageError("layer '" + name + "': needs at least one input");
  for (const NodeInput& in : inputs) {
    if (in.node >= id)
      throw UsageError("layer '" + name + "': input must reference an earlier node");
    if (in.node >= 0) {
      // port range checked at finalize once output counts are known
      if (in.port < 0) throw UsageError("layer '" + name + "': negative input port");
    } else if (in.port != 0) {
      throw UsageError("layer '" + name + "': network input has a single port");
    }
  }
  Node n;
  n.spec = spec;
  n.inputs = std::move(inputs);
  n.name = std::move(name);
  n.share_params_with = share_params_with;
  nodes_.push_back(std::move(n));
  return id;
}

static int param_counts(const LayerSpec& spec, const std::vector<int>& in_shape, int& biases) {
  switch (spec.kind) {
    case LayerKind::Conv2d:
      biases = spec.filters;
      return spec.filters * in_shape[0] * spec.kernel * spec.kernel;
    case LayerKind::FullyConnected: {
      biases = spec.out_dim;
      long long n = 1;
      for (int e : in_shape) n *= e;
      return static_cast<int>(spec.out_dim * n);
    }
    default:
      biases = 0;
      return 0;
  }
}

void PartNetwork::finalize(std::vector<int> input_shape) {
  if (finalized_) throw UsageError("network: finalize called twice");
  if (input_shape.empty()) throw UsageError("network: empty input shape");
  Tensor::count(input_shape);  // validates positivity
  input_shape_ = std::move(input_shape);

  int offset = 0;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    const int arity = static_cast<int>(n.inputs.size());
    auto expect_arity = [&](int want) {
      if (arity != want)
        throw UsageError("layer '" + n.name + "': expects " + std::to_string(want) +
                         " input(s), got " + std::to_string(arity));
    };
    std::vector<std::vector<int>> in_shapes;
    for (const NodeInput& in : n.inputs) {
      if (in.node < 0) {
        in_shapes.push_back(input_shape_);
      } else {
        const Node& p = nodes_[static_cast<size_t>(in.node)];
        if (in.port >= static_cast<int>(p.out_shapes.size()))
          throw UsageError("layer '" + n.name + "': input port " + std::to_string(in.port) +
                           " out of range for layer '" + p.name + "'");
        in_shapes.push_back(p.out_shapes[static_cast<size_t>(in.port)]);
      }
    }

    switch (n.spec.kind) {
      case LayerKind::Conv2d:
        expect_arity(1);
        n.out_shapes = {conv2d_out_shape(in_shapes[0], n.spec, n.name)};
        break;
      case LayerKind::MaxPool2d:
        expect_arity(1);
        n.out_shapes = {maxpool_out_shape(in_shapes[0], n.spec, n.name)};
        break;
      case LayerKind::Relu:
        expect_arity(1);
        n.out_shapes = {in_shapes[0]};
        break;
      case LayerKind::FullyConnected:
        expect_arity(1);
        n.out_shapes = {{n.spec.out_dim}};
        break;
      case LayerKind::EltwiseSum:
        if (arity < 2)
          throw UsageError("layer '" + n.name + "': eltwise_sum expects at least 2 inputs");
        for (size_t k = 1; k < in_shapes.size(); ++k)
          if (in_shapes[k] != in_shapes[0])
            throw UsageError("layer '" + n.name + "': eltwise_sum shape mismatch " +
                             shape_str(in_shapes[k]) + " vs " + shape_str(in_shapes[0]));
        n.out_shapes = {in_shapes[0]};
        break;
      case LayerKind::StripeSplit: {
        expect_arity(1);
        const auto s = stripe_split_out_shape(in_shapes[0], n.spec.stripes, n.name);
        n.out_shapes.assign(static_cast<size_t>(n.spec.stripes), s);
        break;
      }
      case LayerKind::Concat:
        n.out_shapes = {concat_out_shape(in_shapes, n.spec.axis, n.name)};
        break;
    }

    if (n.share_params_with >= 0) {
      const Node& owner = nodes_[static_cast<size_t>(n.share_params_with)];
      int biases = 0;
      const int weights = param_counts(n.spec, in_shapes[0], biases);
      if (weights != owner.weight_count || biases != owner.bias_count)
        throw UsageError("layer '" + n.name + "': shared parameter slice of '" + owner.name +
                         "' has mismatched size");
      n.param_offset = owner.param_offset;
      n.weight_count = weights;
      n.bias_count = biases;
    } else {
      n.param_offset = offset;
      n.weight_count = param_counts(n.spec, in_shapes[0], n.bias_count);
      offset += n.weight_count + n.bias_count;
    }
  }
  params_.assign(static_cast<size_t>(offset), 0.0);
  finalized_ = true;
}

int PartNetwork::output_dim() const {
  if (!finalized_ || nodes_.empty()) throw UsageError("network: not finalized");
  const auto& s = nodes_.back().out_shapes.at(0);
  long long n = 1;
  for (int e : s) n *= e;
  return static_cast<int>(n);
}

int PartNetwork::node_id(const std::string& name) const {
  for (size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].name == name) return static_cast<int>(i);
  return -1;
}

std::span<const double> PartNetwork::node_weights(int id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  return {params_.data() + n.param_offset, static_cast<size_t>(n.weight_count)};
}

std::span<const double> PartNetwork::node_biases(int id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  return {params_.data() + n.param_offset + n.weight_count, static_cast<size_t>(n.bias_count)};
}

std::uint64_t PartNetwork::fingerprint() const {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  auto mix = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const Node& n : nodes_) {
    const int kind = static_cast<int>(n.spec.kind);
    mix(&kind, sizeof kind);
    mix(&n.param_offset, sizeof n.param_offset);
    mix(&n.weight_count, sizeof n.weight_count);
  }
  if (!params_.empty()) mix(params_.data(), params_.size() * sizeof(double));
  return h;
}

std::pair<Tensor, Tape> PartNetwork::forward(const Tensor& input) const {
  if (!finalized_) throw UsageError("network: not finalized");
  if (input.shape() != input_shape_)
    throw UsageError("network: input shape " + shape_str(input.shape()) +
                     " does not match expected " + shape_str(input_shape_));

  Tape tape;
  tape.fingerprint = fingerprint();
  tape.input = input;
  tape.entries.resize(nodes_.size());

  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    TapeEntry& e = tape.entries[i];
    const Tensor& in0 = tape.resolve(n.inputs[0]);
    switch (n.spec.kind) {
      case LayerKind::Conv2d:
        e.outputs = {conv2d_forward(in0, node_weights(static_cast<int>(i)),
                                    node_biases(static_cast<int>(i)), n.spec)};
        break;
      case LayerKind::MaxPool2d:
        e.outputs = {maxpool_forward(in0, n.spec, e.pool_argmax)};
        break;
      case LayerKind::Relu:
        e.outputs = {relu_forward(in0)};
        break;
      case LayerKind::FullyConnected:
        e.outputs = {fc_forward(in0, node_weights(static_cast<int>(i)),
                                node_biases(static_cast<int>(i)), n.spec)};
        break;
      case LayerKind::EltwiseSum: {
        std::vector<const Tensor*> ins;
        for (const NodeInput& r : n.inputs) ins.push_back(&tape.resolve(r));
        e.outputs = {eltwise_sum_forward(ins)};
        break;
      }
      case LayerKind::StripeSplit:
        e.outputs = stripe_split_forward(in0, n.spec.stripes);
        break;
      case LayerKind::Concat: {
        std::vector<const Tensor*> ins;
        for (const NodeInput& r : n.inputs) ins.push_back(&tape.resolve(r));
        e.outputs = {concat_forward(ins, n.spec.axis)};
        break;
      }
    }
  }
  Tensor out = tape.entries.back().outputs[0];
  return {std::move(out), std::move(tape)};
}

BackwardResult PartNetwork::backward(Tape& tape, const Tensor& grad_embedding) const {
  if (!finalized_) throw UsageError("network: not finalized");
  if (tape.consumed) throw UsageError("network: tape already consumed by backward");
  if (tape.fingerprint != fingerprint())
    throw UsageError("network: tape does not match this network (stale parameters?)");
  if (grad_embedding.shape() != nodes_.back().out_shapes[0])
    throw UsageError("network: embedding gradient shape " + shape_str(grad_embedding.shape()) +
                     " does not match output " + shape_str(nodes_.back().out_shapes[0]));
  tape.consumed = true;

  BackwardResult res;
  res.grad_params.assign(params_.size(), 0.0);
  res.grad_input = Tensor(input_shape_);

  // per node, per port accumulated output gradients
  std::vector<std::vector<Tensor>> grads(nodes_.size());
  for (size_t i = 0; i < nodes_.size(); ++i) {
    grads[i].resize(nodes_[i].out_shapes.size());
  }
  auto accum = [&](const NodeInput& ref, const Tensor& g) {
    if (ref.node < 0) {
      for (long long k = 0; k < g.size(); ++k) res.grad_input[k] += g[k];
      return;
    }
    Tensor& slot = grads[static_cast<size_t>(ref.node)][static_cast<size_t>(ref.port)];
    if (slot.size() == 0) slot = Tensor(g.shape());
    for (long long k = 0; k < g.size(); ++k) slot[k] += g[k];
  };

  grads.back()[0] = grad_embedding;

  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    const Node& n = nodes_[static_cast<size_t>(i)];
    auto& out_grads = grads[static_cast<size_t>(i)];
    bool any = false;
    for (auto& g : out_grads) {
      if (g.size() == 0) g = Tensor(n.out_shapes[static_cast<size_t>(&g - out_grads.data())]);
      else any = true;
    }
    if (!any) continue;  // node feeds nothing that received gradient

    const Tensor& in0 = tape.resolve(n.inputs[0]);
    std::span<double> gw{res.grad_params.data() + n.param_offset,
                         static_cast<size_t>(n.weight_count)};
    std::span<double> gb{res.grad_params.data() + n.param_offset + n.weight_count,
                         static_cast<size_t>(n.bias_count)};
    switch (n.spec.kind) {
      case LayerKind::Conv2d:
        accum(n.inputs[0], conv2d_backward(in0, node_weights(i), out_grads[0], n.spec, gw, gb));
        break;
      case LayerKind::MaxPool2d:
        accum(n.inputs[0], maxpool_backward(in0.shape(), tape.entries[static_cast<size_t>(i)]
                                                              .pool_argmax,
                                            out_grads[0]));
        break;
      case LayerKind::Relu:
        accum(n.inputs[0], relu_backward(in0, out_grads[0]));
        break;
      case LayerKind::FullyConnected:
        accum(n.inputs[0], fc_backward(in0, node_weights(i), out_grads[0], n.spec, gw, gb));
        break;
      case LayerKind::EltwiseSum:
        for (const NodeInput& r : n.inputs) accum(r, out_grads[0]);
        break;
      case LayerKind::StripeSplit:
        accum(n.inputs[0], stripe_split_backward(in0.shape(), out_grads));
        break;
      case LayerKind::Concat: {
        std::vector<const Tensor*> ins;
        for (const NodeInput& r : n.inputs) ins.push_back(&tape.resolve(r));
        const auto parts = concat_backward(ins, n.spec.axis, out_grads[0]);
        for (size_t k = 0; k < parts.size(); ++k) accum(n.inputs[k], parts[k]);
        break;
      }
    }
  }
  return res;
}

std::string PartNetwork::describe() const {
  std::ostringstream os;
  os << "input " << shape_str(input_shape_) << "\n";
  for (const Node& n : nodes_) {
    os << n.name << " [" << layer_kind_name(n.spec.kind) << "] ->";
    for (const auto& s : n.out_shapes) os << " " << shape_str(s);
    if (n.weight_count > 0)
      os << "  params " << n.weight_count << "+" << n.bias_count
         << (n.share_params_with >= 0 ? " (shared)" : "");
    os << "\n";
  }
  os << "output dim " << output_dim() << ", total params " << params_.size() << "\n";
  return os.str();
}

PartNetwork build_part_network(const ScaleConfig& cfg) {
  PartNetwork net;
  const NodeInput input{-1, 0};

  const int g_conv = net.add_node(
      LayerSpec::conv2d(cfg.global_filters, cfg.global_kernel, cfg.global_stride), {input},
      "global.conv");
  const int g_pool = net.add_node(LayerSpec::maxpool2d(cfg.global_pool, cfg.global_pool_stride),
                                  {{g_conv, 0}}, "global.pool");
  const int g_relu = net.add_node(LayerSpec::relu(), {{g_pool, 0}}, "global.relu");
  const int split =
      net.add_node(LayerSpec::stripe_split(cfg.stripes), {{g_relu, 0}}, "split");

  std::vector<NodeInput> fc1_taps, fc2_taps;
  for (int t = 0; t < cfg.stripes; ++t) {
    const std::string p = "stripe" + std::to_string(t) + ".";
    // two parallel convs on the same stripe, merged elementwise; the branches
    // deliberately do not share parameters
    const int ca = net.add_node(LayerSpec::conv2d(cfg.local_filters, cfg.local_kernel),
                                {{split, t}}, p + "conv_a");
    const int cb = net.add_node(LayerSpec::conv2d(cfg.local_filters, cfg.local_kernel),
                                {{split, t}}, p + "conv_b");
    const int sum = net.add_node(LayerSpec::eltwise_sum(), {{ca, 0}, {cb, 0}}, p + "sum");
    const int pool = net.add_node(LayerSpec::maxpool2d(cfg.local_pool, cfg.local_pool_stride),
                                  {{sum, 0}}, p + "pool");
    const int relu = net.add_node(LayerSpec::relu(), {{pool, 0}}, p + "relu");
    const int fc1 =
        net.add_node(LayerSpec::fully_connected(cfg.fc_dim), {{relu, 0}}, p + "fc1");
    const int mid = net.add_node(LayerSpec::relu(), {{fc1, 0}}, p + "fc_relu");
    const int fc2 = net.add_node(LayerSpec::fully_connected(cfg.fc_dim), {{mid, 0}}, p + "fc2");
    fc1_taps.push_back({fc1, 0});
    fc2_taps.push_back({fc2, 0});
  }

  const int cat1 = net.add_node(LayerSpec::concat(0), fc1_taps, "fusion.concat");
  const int fuse = net.add_node(LayerSpec::fully_connected(cfg.stripes * cfg.fc_dim), {{cat1, 0}},
                                "fusion.fc");
  std::vector<NodeInput> out_taps{{fuse, 0}};
  for (const NodeInput& r : fc2_taps) out_taps.push_back(r);
  net.add_node(LayerSpec::concat(0), out_taps, "output");

  net.finalize({cfg.in_channels, cfg.in_height, cfg.in_width});
  net.scale = cfg;
  return net;
}

PartNetwork init_params(PartNetwork net, std::uint64_t seed, double conv_std, double fc_std) {
  if (conv_std <= 0.0 || fc_std <= 0.0) throw UsageError("init: weight sigmas must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> conv_dist(0.0, conv_std);
  std::normal_distribution<double> fc_dist(0.0, fc_std);
  auto& p = net.params();
  for (const Node& n : net.nodes()) {
    if (n.weight_count == 0 || n.share_params_with >= 0) continue;
    auto& dist = n.spec.kind == LayerKind::Conv2d ? conv_dist : fc_dist;
    for (int i = 0; i < n.weight_count; ++i)
      p[static_cast<size_t>(n.param_offset + i)] = dist(rng);
    for (int i = 0; i < n.bias_count; ++i)
      p[static_cast<size_t>(n.param_offset + n.weight_count + i)] = 0.0;
  }
  return net;
}

void randomize_params(PartNetwork& net, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (double& v : net.params()) v = dist(rng);
}

namespace {

constexpr char kModelMagic[4] = {'S', '2', 'S', 'M'};
constexpr std::uint32_t kModelVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "model and tensor files are little-endian; big-endian hosts unsupported");

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw DataError("model file: truncated while reading " + what);
  return v;
}

}  // namespace

void save_model(const PartNetwork& net, const std::filesystem::path& path) {
  if (!net.scale)
    throw UsageError("save_model: only builder-produced networks carry a scale config");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("save_model: cannot open " + path.string());
  os.write(kModelMagic, 4);
  write_pod(os, kModelVersion);
  const ScaleConfig& c = *net.scale;
  for (int v : {c.in_channels, c.in_height, c.in_width, c.global_filters, c.global_kernel,
                c.global_stride, c.global_pool, c.global_pool_stride, c.stripes, c.local_filters,
                c.local_kernel, c.local_pool, c.local_pool_stride, c.fc_dim})
    write_pod(os, static_cast<std::uint32_t>(v));
  write_pod(os, static_cast<std::uint64_t>(net.params().size()));
  os.write(reinterpret_cast<const char*>(net.params().data()),
           static_cast<std::streamsize>(net.params().size() * sizeof(double)));
  if (!os) throw DataError("save_model: write failed for " + path.string());
}

PartNetwork load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_model: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kModelMagic, 4) != 0)
    throw DataError("load_model: bad magic in " + path.string());
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kModelVersion)
    throw DataError("load_model: unsupported format version " + std::to_string(version));
  ScaleConfig c;
  int* fields[] = {&c.in_channels, &c.in_height,  &c.in_width,    &c.global_filters,
                   &c.global_kernel, &c.global_stride, &c.global_pool, &c.global_pool_stride,
                   &c.stripes,     &c.local_filters, &c.local_kernel, &c.local_pool,
                   &c.local_pool_stride, &c.fc_dim};
  for (int* f : fields) *f = static_cast<int>(read_pod<std::uint32_t>(is, "scale config"));
  PartNetwork net = build_part_network(c);
  const auto count = read_pod<std::uint64_t>(is, "parameter count");
  if (count != net.params().size())
    throw DataError("load_model: parameter count " + std::to_string(count) +
                    " does not match topology (" + std::to_string(net.params().size()) + ")");
  is.read(reinterpret_cast<char*>(net.params().data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw DataError("load_model: truncated parameter payload in " + path.string());
  return net;
}

}  // namespace s2s
