#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "s2s/batch.hpp"
#include "s2s/tensor.hpp"

namespace s2s {

struct DatasetRecord {
  int identity = 0;
  View view = View::A;
  Tensor sample;
};

// Two-view labeled sample collection. validate() enforces what training and
// evaluation assume: uniform sample dims and every identity present in both
// views.
struct Dataset {
  std::vector<DatasetRecord> records;

  std::vector<int> identities() const;
  std::vector<int> indices_of(int identity, View view) const;
  std::vector<int> sample_shape() const;  // from the first record
  void validate() const;
};

struct SyntheticSpec {
  int n_identities = 20;
  int per_view = 4;
  std::vector<int> dims = {1, 24, 8};  // sample tensor shape; {d} for flat vectors
  double separation = 10.0;            // minimum pairwise distance between class centers
  double sigma = 0.5;                  // per-dimension sample noise
  double cross_view_shift = 1.0;       // systematic offset applied to view B
  std::uint64_t seed = 0;

  void validate() const;
};

// Gaussian clusters with enforced center separation; view B samples carry a
// fixed random-direction offset of length cross_view_shift.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Manifest format: one "identity,view,relative-path" line per record, paths
// resolved against the manifest's directory, '#' comments allowed. Tensor
// files: magic "S2SD", u32 rank, u32 extents, f64 payload, little-endian.
// Files named *.csv are instead read as inline vectors: identity,view,v0,v1,...
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& data, const std::filesystem::path& dir,
                  const std::string& manifest_name = "dataset.manifest");

Tensor load_tensor(const std::filesystem::path& path);
void save_tensor(const Tensor& t, const std::filesystem::path& path);

struct SplitResult {
  Dataset train;
  Dataset probe;    // view-A records of the held-out identities
  Dataset gallery;  // view-B records of the held-out identities
};

// Identity-disjoint split; train_fraction 0 sends every identity to the test
// side. The test side must end up non-empty.
SplitResult split_protocol(const Dataset& data, double train_fraction, std::uint64_t seed);

}  // namespace s2s
