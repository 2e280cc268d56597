#pragma once

#include <filesystem>
#include <optional>

#include "s2s/dataset.hpp"
#include "s2s/loss.hpp"
#include "s2s/mining.hpp"
#include "s2s/network.hpp"

namespace s2s {

struct TrainConfig {
  double learning_rate = 0.01;  // initial tau
  int max_iterations = 100;
  double momentum = 0.0;
  bool inverse_decay = false;  // tau_h = lr / (1 + h/H), h zero-based
  MarginConfig margins;
  DirectionWeights weights;
  MiningConfig mining;
  LossOptions loss_options;
  // Updates direction weights and triplet gradients identity by identity
  // inside the iteration instead of once per mini-batch. Experimental.
  bool per_unit_updates = false;
  int snapshot_every = 0;  // 0 = no intermediate snapshots
  std::uint64_t rng_seed = 0;
  int threads = 1;
  std::optional<std::filesystem::path> snapshot_dir;

  void validate() const;
};

struct IterationRecord {
  int iter = 0;  // 1-based
  double total = 0.0, l_c = 0.0, l_t = 0.0, l_p = 0.0, reg = 0.0;
  double mu = 0.0, nu = 0.0;  // values after this iteration's update
  int active_t = 0, active_p = 0;
  double step = 0.0;          // tau used this iteration
  double wall_seconds = 0.0;  // in-memory only, never serialized
};

struct TrainHistory {
  std::vector<IterationRecord> records;
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  PartNetwork net;
  DirectionWeights weights;
  TrainHistory history;
};

// One SGD step: v' = momentum * v - tau * grad; params += v'.
struct OptimizerState {
  std::vector<double> velocity;
};
void sgd_step(std::vector<double>& params, std::span<const double> grad, OptimizerState& state,
              double tau, double momentum);

// Embeds a sample batch; tapes are parallel to SampleBatch::samples.
struct EmbeddedBatch {
  SetBatch batch;
  std::vector<Tape> tapes;
};
EmbeddedBatch embed_batch(const PartNetwork& net, const SampleBatch& samples, int threads = 1);

TrainResult train(const Dataset& data, PartNetwork net, const TrainConfig& cfg);

}  // namespace s2s
