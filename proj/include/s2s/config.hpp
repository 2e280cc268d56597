#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "s2s/dataset.hpp"
#include "s2s/evaluator.hpp"
#include "s2s/loss.hpp"
#include "s2s/mining.hpp"
#include "s2s/network.hpp"
#include "s2s/trainer.hpp"

namespace s2s {

// Flat run configuration behind the command line. Every key is settable from
// a "key = value" config file ('#' comments) or a --set override; unknown keys
// are rejected. Defaults carry the published hyperparameter values.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;

  double lr = 0.01;
  int iters = 500;
  double momentum = 0.0;
  bool inverse_decay = false;
  int snapshot_every = 0;
  bool per_unit = false;

  MarginConfig margins;  // m_c=0.1 m_t=1.0 c_p=0.175 m_p=0.325 alpha=0.1 beta=0.01 lambda=0.15
  double mu = 0.6, nu = 0.4, eta = 0.001;
  std::string dir_mode = "gap";          // gap | analytic
  std::string center_mode = "per_view";  // per_view | pooled
  bool frozen_centers = false;

  MiningConfig mining;

  std::string net_preset = "desk";  // desk | full
  // 0 means "derive from the dataset" for the input dims; other net fields
  // start from the preset and can be overridden individually.
  ScaleConfig net = derived_desk();
  double conv_init = 0.01;  // weight init sigmas; the published values match
  double fc_init = 0.001;   // the full-resolution geometry

  SyntheticSpec synth;

  int eval_trials = 10;
  std::string eval_protocol = "single";     // single | multi
  std::string eval_gallery = "single_shot";  // single_shot | all_shot
  std::string eval_agg = "mean";             // mean | max_distance

  double train_fraction = 0.0;

  static ScaleConfig derived_desk() {
    ScaleConfig c = ScaleConfig::desk_scale();
    c.in_channels = c.in_height = c.in_width = 0;
    return c;
  }

  PhiUpdateMode phi_mode() const;
  LossOptions loss_options() const;
  DirectionWeights direction_weights() const;
  TrainConfig train_config() const;
  GalleryMode gallery_mode() const;
  MapProtocol map_protocol() const;
  MultiQueryAgg multi_agg() const;
  // Fills in input dims from the data when they are left at 0.
  ScaleConfig resolved_net(const std::vector<int>& sample_shape) const;
};

// Applies "key = value" lines from a file; unknown keys raise UsageError with
// the offending line number.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

// Applies a single "key=value" assignment (CLI override).
void apply_config_entry(RunConfig& cfg, const std::string& entry);

// One "key<TAB>default<TAB>description" line per key, for --help.
std::string config_key_help();

}  // namespace s2s
