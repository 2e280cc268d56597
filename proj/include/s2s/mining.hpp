#pragma once

#include <random>
#include <vector>

#include "s2s/batch.hpp"
#include "s2s/dataset.hpp"

namespace s2s {

struct MiningConfig {
  int ids_per_batch = 8;
  int samples_per_view = 4;
  int triplets_per_anchor = 2;
  int k_marginal = 2;
  bool symmetrized = false;  // also mine with the views' roles swapped

  void validate() const;
};

// Draws ids_per_batch identities and samples_per_view samples per view,
// all without replacement; deterministic for a fixed rng state.
SampleBatch build_minibatch(const Dataset& data, const MiningConfig& cfg, std::mt19937_64& rng);

// For every anchor slot in view A (all N*M of them), draws triplets_per_anchor
// units: the positive uniformly from the anchor identity's view-B samples, the
// negative uniformly from all other identities' view-B samples.
std::vector<TripletUnit> sample_triplets(const SetBatch& batch, const MiningConfig& cfg,
                                         std::mt19937_64& rng);

struct PairProvenance {
  enum Rule { FarthestPositive, NearestNegative } rule = FarthestPositive;
  int anchor_identity = 0;   // batch position
  int partner_identity = 0;  // batch position
};

struct MarginalSelection {
  std::vector<MarginalPair> pairs;
  std::vector<PairProvenance> provenance;  // parallel to pairs
};

// Per identity: the k_marginal cross-view same-identity pairs with the largest
// squared distance (hard positives) and the k_marginal different-identity
// pairs with the smallest (hard negatives). Distance ties break toward the
// lowest (identity, sample) indices. Purely deterministic.
MarginalSelection select_marginal_pairs(const SetBatch& batch, const MiningConfig& cfg);

struct MiningOutput {
  std::vector<TripletUnit> triplets;
  std::vector<MarginalPair> pairs;
  std::vector<PairProvenance> provenance;
};

MiningOutput mine(const SetBatch& batch, const MiningConfig& cfg, std::mt19937_64& rng);

}  // namespace s2s
