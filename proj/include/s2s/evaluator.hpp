#pragma once

#include <filesystem>
#include <random>
#include <vector>

#include "s2s/dataset.hpp"
#include "s2s/network.hpp"

namespace s2s {

struct EmbeddedItem {
  int identity = 0;
  View view = View::A;
  std::vector<double> embedding;
};

struct GalleryHit {
  int identity = 0;
  int gallery_index = 0;  // position in the gallery list passed to rank()
  double distance = 0.0;  // squared Euclidean
  bool match = false;
};

struct RankingResult {
  std::vector<GalleryHit> order;  // ascending distance, ties by gallery index
  int first_match_rank = 0;       // 1-based; 0 when the query identity is absent
};

RankingResult rank(const EmbeddedItem& query, const std::vector<EmbeddedItem>& gallery);

enum class GalleryMode { SingleShot, AllShot };

struct CmcCurve {
  std::vector<double> match_rate;  // match_rate[r-1] = P(first match within rank r)
  int trials = 0;

  void write_csv(const std::filesystem::path& path) const;
};

// Single-shot protocol: every trial samples one gallery item per identity and
// ranks each probe against it; the curve averages over trials. All-shot uses
// the full gallery in a single pass. Gallery items sharing both identity and
// view with the query are excluded before ranking.
CmcCurve cmc(const std::vector<EmbeddedItem>& probe, const std::vector<EmbeddedItem>& gallery,
             int trials, std::mt19937_64& rng, GalleryMode mode = GalleryMode::SingleShot);

enum class MapProtocol { Single, Multi };
enum class MultiQueryAgg { MeanEmbedding, MaxDistance };

// Mean average precision over the full gallery. Single: each probe is its own
// query. Multi: one query per probe identity, either the mean probe embedding
// or max-distance pooling over the identity's probes.
double map_score(const std::vector<EmbeddedItem>& probe, const std::vector<EmbeddedItem>& gallery,
                 MapProtocol protocol, MultiQueryAgg agg = MultiQueryAgg::MeanEmbedding);

std::vector<EmbeddedItem> embed_dataset(const PartNetwork& net, const Dataset& data,
                                        int threads = 1);

// Model-level conveniences used by the command-line front end.
CmcCurve cmc(const Dataset& probe, const Dataset& gallery, const PartNetwork& net, int trials,
             std::mt19937_64& rng, GalleryMode mode = GalleryMode::SingleShot, int threads = 1);
double map_score(const Dataset& probe, const Dataset& gallery, const PartNetwork& net,
                 MapProtocol protocol, MultiQueryAgg agg = MultiQueryAgg::MeanEmbedding,
                 int threads = 1);

}  // namespace s2s
