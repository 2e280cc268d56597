#include "s2s/mining.hpp"

#include <algorithm>
#include <string>
#include <tuple>

namespace s2s {

void MiningConfig::validate() const {
  if (ids_per_batch < 2)
    throw UsageError("mining: ids_per_batch must be >= 2 (triplets need a negative identity)");
  if (samples_per_view < 1) throw UsageError("mining: samples_per_view must be >= 1");
  if (triplets_per_anchor < 1) throw UsageError("mining: triplets_per_anchor must be >= 1");
  if (k_marginal < 1) throw UsageError("mining: k_marginal must be >= 1");
}

SampleBatch build_minibatch(const Dataset& data, const MiningConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::vector<int> ids = data.identities();
  if (static_cast<int>(ids.size()) < cfg.ids_per_batch)
    throw DataError("build_minibatch: dataset has " + std::to_string(ids.size()) +
                    " identities, batch wants " + std::to_string(cfg.ids_per_batch));

  // partial Fisher-Yates over identity positions
  std::vector<int> order(ids.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (int i = 0; i < cfg.ids_per_batch; ++i) {
    std::uniform_int_distribution<int> pick(i, static_cast<int>(order.size()) - 1);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(pick(rng))]);
  }

  SampleBatch batch;
  batch.n_identities = cfg.ids_per_batch;
  batch.per_view = cfg.samples_per_view;
  batch.samples.resize(static_cast<size_t>(cfg.ids_per_batch) * 2 * cfg.samples_per_view);
  for (int i = 0; i < cfg.ids_per_batch; ++i) {
    const int id = ids[static_cast<size_t>(order[static_cast<size_t>(i)])];
    batch.identity_ids.push_back(id);
    for (View v : {View::A, View::B}) {
      std::vector<int> pool = data.indices_of(id, v);
      if (static_cast<int>(pool.size()) < cfg.samples_per_view)
        throw DataError("build_minibatch: identity " + std::to_string(id) + " has " +
                        std::to_string(pool.size()) + " samples in view " + view_name(v) +
                        ", batch wants " + std::to_string(cfg.samples_per_view));
      for (int j = 0; j < cfg.samples_per_view; ++j) {
        std::uniform_int_distribution<int> pick(j, static_cast<int>(pool.size()) - 1);
        std::swap(pool[static_cast<size_t>(j)], pool[static_cast<size_t>(pick(rng))]);
        batch.at(i, v, j) = data.records[static_cast<size_t>(pool[static_cast<size_t>(j)])].sample;
      }
    }
  }
  return batch;
}

namespace {

void sample_triplets_oriented(const SetBatch& batch, const MiningConfig& cfg,
                              std::mt19937_64& rng, View anchor_view,
                              std::vector<TripletUnit>& out) {
  const int n = batch.n(), m = batch.m();
  const View partner = opposite(anchor_view);
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < m; ++l) {
      for (int t = 0; t < cfg.triplets_per_anchor; ++t) {
        std::uniform_int_distribution<int> pos_pick(0, m - 1);
        // negatives: uniform over all other identities' partner-view slots
        std::uniform_int_distribution<int> neg_pick(0, (n - 1) * m - 1);
        const int s = pos_pick(rng);
        const int flat = neg_pick(rng);
        int k = flat / m;
        if (k >= i) ++k;  // skip the anchor identity
        const int r = flat % m;
        out.push_back(TripletUnit{{i, anchor_view, l}, {i, partner, s}, {k, partner, r}});
      }
    }
  }
}

}  // namespace

std::vector<TripletUnit> sample_triplets(const SetBatch& batch, const MiningConfig& cfg,
                                         std::mt19937_64& rng) {
  batch.validate();
  cfg.validate();
  if (batch.n() < 2) throw UsageError("sample_triplets: batch needs at least two identities");
  std::vector<TripletUnit> out;
  sample_triplets_oriented(batch, cfg, rng, View::A, out);
  if (cfg.symmetrized) sample_triplets_oriented(batch, cfg, rng, View::B, out);
  return out;
}

namespace {

void select_pairs_oriented(const SetBatch& batch, int k_marginal, View a_view,
                           MarginalSelection& sel) {
  const int n = batch.n(), m = batch.m();
  const View b_view = opposite(a_view);

  // candidate = (d2, partner identity, a index, b index); sorting the tuple
  // realizes the lowest-(identity, sample)-index tie rule
  using Cand = std::tuple<double, int, int, int>;
  std::vector<Cand> pos, neg;
  for (int i = 0; i < n; ++i) {
    pos.clear();
    neg.clear();
    for (int l = 0; l < m; ++l) {
      const auto a = batch.at(i, a_view, l);
      for (int k = 0; k < n; ++k) {
        for (int s = 0; s < m; ++s) {
          const double d2 = squared_distance(a, batch.at(k, b_view, s));
          if (k == i)
            pos.emplace_back(-d2, k, l, s);  // negated: farthest first
          else
            neg.emplace_back(d2, k, l, s);
        }
      }
    }
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    const int kp = std::min<int>(k_marginal, static_cast<int>(pos.size()));
    const int kn = std::min<int>(k_marginal, static_cast<int>(neg.size()));
    for (int q = 0; q < kp; ++q) {
      const auto& [d2, k, l, s] = pos[static_cast<size_t>(q)];
      sel.pairs.push_back(MarginalPair{{i, a_view, l}, {k, b_view, s}, +1});
      sel.provenance.push_back({PairProvenance::FarthestPositive, i, k});
    }
    for (int q = 0; q < kn; ++q) {
      const auto& [d2, k, l, s] = neg[static_cast<size_t>(q)];
      sel.pairs.push_back(MarginalPair{{i, a_view, l}, {k, b_view, s}, -1});
      sel.provenance.push_back({PairProvenance::NearestNegative, i, k});
    }
  }
}

}  // namespace

MarginalSelection select_marginal_pairs(const SetBatch& batch, const MiningConfig& cfg) {
  batch.validate();
  cfg.validate();
  if (batch.n() < 2)
    throw UsageError("select_marginal_pairs: batch needs at least two identities");
  MarginalSelection sel;
  select_pairs_oriented(batch, cfg.k_marginal, View::A, sel);
  if (cfg.symmetrized) select_pairs_oriented(batch, cfg.k_marginal, View::B, sel);
  return sel;
}

MiningOutput mine(const SetBatch& batch, const MiningConfig& cfg, std::mt19937_64& rng) {
  MiningOutput out;
  out.triplets = sample_triplets(batch, cfg, rng);
  MarginalSelection sel = select_marginal_pairs(batch, cfg);
  out.pairs = std::move(sel.pairs);
  out.provenance = std::move(sel.provenance);
  return out;
}

}  // namespace s2s
