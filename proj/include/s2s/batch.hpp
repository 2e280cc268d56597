#pragma once

#include <span>
#include <vector>

#include "s2s/tensor.hpp"

namespace s2s {

enum class View : int { A = 0, B = 1 };

inline View opposite(View v) { return v == View::A ? View::B : View::A; }
inline const char* view_name(View v) { return v == View::A ? "A" : "B"; }

// A mini-batch of embeddings arranged as identities x views x samples.
// identity indices below always refer to positions in this batch, not to
// dataset labels; identity_ids carries the original labels.
struct SetBatch {
  Tensor embeddings;              // shape (N, 2, M, D)
  std::vector<int> identity_ids;  // length N

  int n() const { return embeddings.extent(0); }
  int m() const { return embeddings.extent(2); }
  int dim() const { return embeddings.extent(3); }

  long long offset(int i, View v, int j) const {
    return ((static_cast<long long>(i) * 2 + static_cast<int>(v)) * m() + j) * dim();
  }
  std::span<const double> at(int i, View v, int j) const {
    return {embeddings.data() + offset(i, v, j), static_cast<size_t>(dim())};
  }
  std::span<double> at(int i, View v, int j) {
    return {embeddings.data() + offset(i, v, j), static_cast<size_t>(dim())};
  }

  void validate() const {
    if (embeddings.rank() != 4 || embeddings.extent(1) != 2)
      throw UsageError("set batch: embeddings must have shape (N,2,M,D), got " +
                       shape_str(embeddings.shape()));
    if (static_cast<int>(identity_ids.size()) != n())
      throw UsageError("set batch: identity_ids length does not match N");
  }
};

struct SampleRef {
  int identity = 0;  // batch position
  View view = View::A;
  int index = 0;  // sample slot within the (identity, view) cell
};

// Anchor comes from one view, positive and negative from the other; the
// positive shares the anchor's identity, the negative must not.
struct TripletUnit {
  SampleRef anchor, positive, negative;
};

// sign = +1 for a same-identity pair, -1 otherwise.
struct MarginalPair {
  SampleRef a, b;
  int sign = 1;
};

void validate_triplet(const TripletUnit& t, const SetBatch& batch);
void validate_pair(const MarginalPair& p, const SetBatch& batch);

// Raw input samples in the same identities x views x samples arrangement,
// before they are pushed through the network.
struct SampleBatch {
  std::vector<int> identity_ids;      // length N
  std::vector<Tensor> samples;        // length N*2*M, index (i*2 + view)*M + j
  int n_identities = 0;
  int per_view = 0;

  const Tensor& at(int i, View v, int j) const {
    return samples[static_cast<size_t>((i * 2 + static_cast<int>(v)) * per_view + j)];
  }
  Tensor& at(int i, View v, int j) {
    return samples[static_cast<size_t>((i * 2 + static_cast<int>(v)) * per_view + j)];
  }
};

}  // namespace s2s
