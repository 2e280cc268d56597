#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "s2s/layers.hpp"
#include "s2s/tensor.hpp"

namespace s2s {

// Structural parameters of the part-based embedding network. The builder
// derives every intermediate shape from these; nothing spatial is hard-coded.
struct ScaleConfig {
  int in_channels = 3;
  int in_height = 230;
  int in_width = 80;
  int global_filters = 64;
  int global_kernel = 7;
  int global_stride = 1;
  int global_pool = 3;
  int global_pool_stride = 3;
  int stripes = 4;
  int local_filters = 32;
  int local_kernel = 3;
  int local_pool = 3;
  int local_pool_stride = 1;
  int fc_dim = 100;

  // Full-resolution geometry (230x80 RGB input, 800-dim output).
  static ScaleConfig full_scale() { return ScaleConfig{}; }
  // Small configuration for fast experiments and the end-to-end tests.
  static ScaleConfig desk_scale() {
    ScaleConfig c;
    c.in_channels = 1;
    c.in_height = 24;
    c.in_width = 8;
    c.global_filters = 8;
    c.global_kernel = 3;
    c.global_stride = 1;
    c.global_pool = 3;
    c.global_pool_stride = 1;
    c.stripes = 4;
    c.local_filters = 4;
    c.local_kernel = 3;
    c.local_pool = 2;
    c.local_pool_stride = 1;
    c.fc_dim = 8;
    return c;
  }
};

struct NodeInput {
  int node = -1;  // -1 refers to the network input
  int port = 0;
};

struct Node {
  LayerSpec spec;
  std::vector<NodeInput> inputs;
  std::string name;
  int share_params_with = -1;  // node id whose parameter slice this node reuses
  // assigned by finalize():
  int param_offset = 0;
  int weight_count = 0;
  int bias_count = 0;
  std::vector<std::vector<int>> out_shapes;
};

struct TapeEntry {
  std::vector<Tensor> outputs;
  std::vector<int> pool_argmax;
};

// Cached activations from one forward pass. Consumed exactly once by
// backward(); reusing it or pairing it with a different network is an error.
struct Tape {
  std::uint64_t fingerprint = 0;
  Tensor input;
  std::vector<TapeEntry> entries;
  bool consumed = false;

  const Tensor& resolve(const NodeInput& ref) const {
    if (ref.node < 0) return input;
    return entries[static_cast<size_t>(ref.node)].outputs[static_cast<size_t>(ref.port)];
  }
};

struct BackwardResult {
  std::vector<double> grad_params;
  Tensor grad_input;
};

class PartNetwork {
 public:
  // Graph assembly: inputs must reference earlier nodes (or the network input),
  // which keeps the node list topologically ordered by construction.
  int add_node(LayerSpec spec, std::vector<NodeInput> inputs, std::string name = {},
               int share_params_with = -1);
  void finalize(std::vector<int> input_shape);

  bool finalized() const { return finalized_; }
  const std::vector<int>& input_shape() const { return input_shape_; }
  int output_dim() const;
  const std::vector<Node>& nodes() const { return nodes_; }
  int node_id(const std::string& name) const;  // -1 when absent

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  std::span<const double> node_weights(int id) const;
  std::span<const double> node_biases(int id) const;

  std::pair<Tensor, Tape> forward(const Tensor& input) const;
  BackwardResult backward(Tape& tape, const Tensor& grad_embedding) const;

  std::uint64_t fingerprint() const;
  std::string describe() const;

  std::optional<ScaleConfig> scale;  // present on builder-made networks

 private:
  std::vector<Node> nodes_;
  std::vector<double> params_;
  std::vector<int> input_shape_;
  bool finalized_ = false;
};

// Standard topology: global conv/pool/relu, stripe split, per-stripe pair of
// parallel convs merged by eltwise sum then pool/relu, per-stripe FC pair with
// relu between, cross-stripe concat + fusion FC, final concat. Output dim is
// 2 * stripes * fc_dim. Parameters start at zero; call init_params.
PartNetwork build_part_network(const ScaleConfig& cfg);

// Gaussian init, biases 0. The default sigmas (conv 0.01, FC 0.001) suit the
// full-resolution geometry; small inputs and fan-ins need larger ones or the
// initial embeddings sit so close to zero that weight decay dominates the
// metric gradient and training never leaves the origin.
PartNetwork init_params(PartNetwork net, std::uint64_t seed, double conv_std = 0.01,
                        double fc_std = 0.001);

// Uniform(-s, s) init for gradient-check fixtures; not the training init.
void randomize_params(PartNetwork& net, std::uint64_t seed, double scale);

void save_model(const PartNetwork& net, const std::filesystem::path& path);
PartNetwork load_model(const std::filesystem::path& path);

}  // namespace s2s
