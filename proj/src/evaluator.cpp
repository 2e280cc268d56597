#include "s2s/evaluator.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "s2s/parallel.hpp"

namespace s2s {

RankingResult rank(const EmbeddedItem& query, const std::vector<EmbeddedItem>& gallery) {
  if (gallery.empty()) throw UsageError("rank: empty gallery");
  for (const auto& g : gallery)
    if (g.embedding.size() != query.embedding.size())
      throw UsageError("rank: embedding dimension mismatch");

  RankingResult res;
  res.order.reserve(gallery.size());
  for (size_t i = 0; i < gallery.size(); ++i) {
    GalleryHit h;
    h.identity = gallery[i].identity;
    h.gallery_index = static_cast<int>(i);
    h.distance = squared_distance(query.embedding, gallery[i].embedding);
    h.match = gallery[i].identity == query.identity;
    res.order.push_back(h);
  }
  std::stable_sort(res.order.begin(), res.order.end(), [](const GalleryHit& a, const GalleryHit& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.gallery_index < b.gallery_index;
  });
  for (size_t r = 0; r < res.order.size(); ++r) {
    if (res.order[r].match) {
      res.first_match_rank = static_cast<int>(r) + 1;
      break;
    }
  }
  return res;
}

namespace {

// Same-view entries of the query identity never compete with the query.
std::vector<EmbeddedItem> visible_gallery(const EmbeddedItem& query,
                                          const std::vector<EmbeddedItem>& gallery) {
  std::vector<EmbeddedItem> out;
  out.reserve(gallery.size());
  for (const auto& g : gallery)
    if (!(g.identity == query.identity && g.view == query.view)) out.push_back(g);
  return out;
}

std::map<int, std::vector<int>> gallery_by_identity(const std::vector<EmbeddedItem>& gallery) {
  std::map<int, std::vector<int>> by_id;
  for (size_t i = 0; i < gallery.size(); ++i)
    by_id[gallery[i].identity].push_back(static_cast<int>(i));
  return by_id;
}

void require_probes_covered(const std::vector<EmbeddedItem>& probe,
                            const std::map<int, std::vector<int>>& by_id) {
  for (const auto& p : probe)
    if (!by_id.count(p.identity))
      throw DataError("evaluator: probe identity " + std::to_string(p.identity) +
                      " is absent from the gallery");
}

}  // namespace

void CmcCurve::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cmc: cannot open " + path.string());
  os << "rank,match_rate\n";
  char buf[64];
  for (size_t r = 0; r < match_rate.size(); ++r) {
    std::snprintf(buf, sizeof buf, "%zu,%.4f\n", r + 1, match_rate[r]);
    os << buf;
  }
  if (!os) throw DataError("cmc: write failed for " + path.string());
}

CmcCurve cmc(const std::vector<EmbeddedItem>& probe, const std::vector<EmbeddedItem>& gallery,
             int trials, std::mt19937_64& rng, GalleryMode mode) {
  if (probe.empty()) throw UsageError("cmc: empty probe set");
  if (gallery.empty()) throw UsageError("cmc: empty gallery");
  if (trials < 1) throw UsageError("cmc: trials must be >= 1");

  const auto by_id = gallery_by_identity(gallery);
  require_probes_covered(probe, by_id);

  if (mode == GalleryMode::AllShot) trials = 1;

  std::vector<double> accum;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<EmbeddedItem> trial_gallery;
    if (mode == GalleryMode::SingleShot) {
      for (const auto& [id, idxs] : by_id) {
        std::uniform_int_distribution<size_t> pick(0, idxs.size() - 1);
        trial_gallery.push_back(gallery[static_cast<size_t>(idxs[pick(rng)])]);
      }
    } else {
      trial_gallery = gallery;
    }
    if (accum.empty()) accum.assign(trial_gallery.size(), 0.0);

    std::vector<int> rank_counts(trial_gallery.size() + 1, 0);
    for (const auto& q : probe) {
      const auto visible = visible_gallery(q, trial_gallery);
      if (visible.empty())
        throw DataError("cmc: gallery for probe identity " + std::to_string(q.identity) +
                        " is empty after same-view exclusion");
      const RankingResult r = rank(q, visible);
      if (r.first_match_rank > 0) ++rank_counts[static_cast<size_t>(r.first_match_rank)];
    }
    double cum = 0.0;
    for (size_t r = 1; r <= accum.size(); ++r) {
      if (r < rank_counts.size()) cum += rank_counts[r];
      accum[r - 1] += cum / static_cast<double>(probe.size());
    }
  }
  CmcCurve curve;
  curve.trials = trials;
  curve.match_rate.resize(accum.size());
  for (size_t r = 0; r < accum.size(); ++r)
    curve.match_rate[r] = accum[r] / static_cast<double>(trials);
  return curve;
}

namespace {

double average_precision(const EmbeddedItem& query, const std::vector<EmbeddedItem>& gallery) {
  const auto visible = visible_gallery(query, gallery);
  if (visible.empty())
    throw DataError("map: gallery for probe identity " + std::to_string(query.identity) +
                    " is empty after same-view exclusion");
  const RankingResult r = rank(query, visible);
  int relevant = 0;
  for (const auto& h : r.order) relevant += h.match ? 1 : 0;
  if (relevant == 0)
    throw DataError("map: probe identity " + std::to_string(query.identity) +
                    " is absent from the gallery");
  double ap = 0.0;
  int seen = 0;
  for (size_t k = 0; k < r.order.size(); ++k) {
    if (r.order[k].match) {
      ++seen;
      ap += static_cast<double>(seen) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(relevant);
}

}  // namespace

double map_score(const std::vector<EmbeddedItem>& probe, const std::vector<EmbeddedItem>& gallery,
                 MapProtocol protocol, MultiQueryAgg agg) {
  if (probe.empty()) throw UsageError("map: empty probe set");
  if (gallery.empty()) throw UsageError("map: empty gallery");
  require_probes_covered(probe, gallery_by_identity(gallery));

  if (protocol == MapProtocol::Single) {
    double sum = 0.0;
    for (const auto& q : probe) sum += average_precision(q, gallery);
    return sum / static_cast<double>(probe.size());
  }

  // multi-query: group probes by identity
  std::map<int, std::vector<const EmbeddedItem*>> groups;
  for (const auto& q : probe) groups[q.identity].push_back(&q);
  double sum = 0.0;
  for (const auto& [id, members] : groups) {
    if (agg == MultiQueryAgg::MeanEmbedding) {
      EmbeddedItem q;
      q.identity = id;
      q.view = members[0]->view;
      q.embedding.assign(members[0]->embedding.size(), 0.0);
      for (const EmbeddedItem* m : members)
        for (size_t k = 0; k < q.embedding.size(); ++k) q.embedding[k] += m->embedding[k];
      for (double& v : q.embedding) v /= static_cast<double>(members.size());
      sum += average_precision(q, gallery);
    } else {
      // max-distance pooling: score each gallery item by its farthest probe
      const auto visible = visible_gallery(*members[0], gallery);
      if (visible.empty())
        throw DataError("map: gallery for probe identity " + std::to_string(id) +
                        " is empty after same-view exclusion");
      std::vector<GalleryHit> order;
      for (size_t i = 0; i < visible.size(); ++i) {
        double dist = 0.0;
        for (const EmbeddedItem* m : members)
          dist = std::max(dist, squared_distance(m->embedding, visible[i].embedding));
        order.push_back({visible[i].identity, static_cast<int>(i), dist,
                         visible[i].identity == id});
      }
      std::stable_sort(order.begin(), order.end(), [](const GalleryHit& a, const GalleryHit& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.gallery_index < b.gallery_index;
      });
      int relevant = 0;
      for (const auto& h : order) relevant += h.match ? 1 : 0;
      if (relevant == 0)
        throw DataError("map: probe identity " + std::to_string(id) +
                        " is absent from the gallery");
      double ap = 0.0;
      int seen = 0;
      for (size_t k = 0; k < order.size(); ++k) {
        if (order[k].match) {
          ++seen;
          ap += static_cast<double>(seen) / static_cast<double>(k + 1);
        }
      }
      sum += ap / static_cast<double>(relevant);
    }
  }
  return sum / static_cast<double>(groups.size());
}

std::vector<EmbeddedItem> embed_dataset(const PartNetwork& net, const Dataset& data,
                                        int threads) {
  // probe and gallery sets hold a single view each, so the full two-view
  // dataset invariant does not apply here; only the shapes must agree
  if (data.records.empty()) throw DataError("embed: empty dataset");
  const auto shape = data.records[0].sample.shape();
  for (const auto& r : data.records)
    if (r.sample.shape() != shape)
      throw DataError("embed: sample dims " + shape_str(r.sample.shape()) + " for identity " +
                      std::to_string(r.identity) + " differ from " + shape_str(shape));
  std::vector<EmbeddedItem> out(data.records.size());
  parallel_for(static_cast<int>(data.records.size()), threads, [&](int i) {
    const auto& rec = data.records[static_cast<size_t>(i)];
    auto [emb, tape] = net.forward(rec.sample);
    EmbeddedItem item;
    item.identity = rec.identity;
    item.view = rec.view;
    item.embedding.assign(emb.data(), emb.data() + emb.size());
    out[static_cast<size_t>(i)] = std::move(item);
  });
  return out;
}

CmcCurve cmc(const Dataset& probe, const Dataset& gallery, const PartNetwork& net, int trials,
             std::mt19937_64& rng, GalleryMode mode, int threads) {
  return cmc(embed_dataset(net, probe, threads), embed_dataset(net, gallery, threads), trials,
             rng, mode);
}

double map_score(const Dataset& probe, const Dataset& gallery, const PartNetwork& net,
                 MapProtocol protocol, MultiQueryAgg agg, int threads) {
  return map_score(embed_dataset(net, probe, threads), embed_dataset(net, gallery, threads),
                   protocol, agg);
}

}  // namespace s2s
