#include "s2s/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace s2s {

PhiUpdateMode RunConfig::phi_mode() const {
  if (dir_mode == "gap") return PhiUpdateMode::GapDescent;
  if (dir_mode == "analytic") return PhiUpdateMode::AnalyticAscent;
  throw UsageError("config: dir.mode must be 'gap' or 'analytic', got '" + dir_mode + "'");
}

LossOptions RunConfig::loss_options() const {
  LossOptions o;
  o.phi_mode = phi_mode();
  o.frozen_centers = frozen_centers;
  if (center_mode == "per_view")
    o.center_mode = CenterMode::PerView;
  else if (center_mode == "pooled")
    o.center_mode = CenterMode::Pooled;
  else
    throw UsageError("config: loss.center_mode must be 'per_view' or 'pooled', got '" +
                     center_mode + "'");
  return o;
}

DirectionWeights RunConfig::direction_weights() const {
  return DirectionWeights::from_mu_nu(mu, nu, eta);
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.learning_rate = lr;
  t.max_iterations = iters;
  t.momentum = momentum;
  t.inverse_decay = inverse_decay;
  t.margins = margins;
  t.weights = direction_weights();
  t.mining = mining;
  t.loss_options = loss_options();
  t.per_unit_updates = per_unit;
  t.snapshot_every = snapshot_every;
  t.rng_seed = seed;
  t.threads = threads;
  return t;
}

GalleryMode RunConfig::gallery_mode() const {
  if (eval_gallery == "single_shot") return GalleryMode::SingleShot;
  if (eval_gallery == "all_shot") return GalleryMode::AllShot;
  throw UsageError("config: eval.gallery must be 'single_shot' or 'all_shot', got '" +
                   eval_gallery + "'");
}

MapProtocol RunConfig::map_protocol() const {
  if (eval_protocol == "single") return MapProtocol::Single;
  if (eval_protocol == "multi") return MapProtocol::Multi;
  throw UsageError("config: eval.protocol must be 'single' or 'multi', got '" + eval_protocol +
                   "'");
}

MultiQueryAgg RunConfig::multi_agg() const {
  if (eval_agg == "mean") return MultiQueryAgg::MeanEmbedding;
  if (eval_agg == "max_distance") return MultiQueryAgg::MaxDistance;
  throw UsageError("config: eval.agg must be 'mean' or 'max_distance', got '" + eval_agg + "'");
}

ScaleConfig RunConfig::resolved_net(const std::vector<int>& sample_shape) const {
  ScaleConfig c = net;
  if (c.in_channels == 0 && c.in_height == 0 && c.in_width == 0) {
    if (sample_shape.size() != 3)
      throw UsageError(
          "config: network input dims can only be derived from rank-3 samples; set "
          "net.in_channels/net.in_height/net.in_width for " +
          shape_str(sample_shape) + " data");
    c.in_channels = sample_shape[0];
    c.in_height = sample_shape[1];
    c.in_width = sample_shape[2];
  } else if (!sample_shape.empty()) {
    const std::vector<int> want{c.in_channels, c.in_height, c.in_width};
    if (sample_shape != want)
      throw UsageError("config: net input dims " + shape_str(want) +
                       " do not match dataset samples " + shape_str(sample_shape));
  }
  return c;
}

namespace {

struct KeySpec {
  std::string name;
  std::string description;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw UsageError("config: key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw UsageError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw UsageError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw UsageError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

#define INT_KEY(name, field, desc)                                                  \
  {name, desc, [](const RunConfig& c) { return std::to_string(c.field); },           \
   [](RunConfig& c, const std::string& v) { c.field = to_int(name, v); }}
#define DBL_KEY(name, field, desc)                                                  \
  {name, desc, [](const RunConfig& c) { return fmt_double(c.field); },               \
   [](RunConfig& c, const std::string& v) { c.field = to_double(name, v); }}
#define BOOL_KEY(name, field, desc)                                                 \
  {name, desc, [](const RunConfig& c) { return c.field ? "true" : "false"; },        \
   [](RunConfig& c, const std::string& v) { c.field = to_bool(name, v); }}
#define STR_KEY(name, field, desc)                                                  \
  {name, desc, [](const RunConfig& c) { return c.field; },                           \
   [](RunConfig& c, const std::string& v) { c.field = v; }}

const std::vector<KeySpec>& key_registry() {
  static const std::vector<KeySpec> keys = {
      {"seed", "master RNG seed",
       [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, const std::string& v) { c.seed = to_u64("seed", v); }},
      INT_KEY("threads", threads, "worker thread cap"),
      DBL_KEY("train.lr", lr, "initial SGD step size (omega)"),
      INT_KEY("train.iters", iters, "training iterations"),
      DBL_KEY("train.momentum", momentum, "momentum coefficient, 0 disables"),
      BOOL_KEY("train.inverse_decay", inverse_decay, "step decays as lr/(1+h/H)"),
      INT_KEY("train.snapshot_every", snapshot_every, "snapshot cadence, 0 = final only"),
      BOOL_KEY("train.per_unit", per_unit,
               "experimental: per-identity direction updates inside an iteration"),
      DBL_KEY("margin.m_c", margins.m_c, "class compactness margin"),
      DBL_KEY("margin.m_t", margins.m_t, "triplet margin"),
      DBL_KEY("margin.c_p", margins.c_p, "pairwise half-width"),
      DBL_KEY("margin.m_p", margins.m_p, "pairwise center margin"),
      DBL_KEY("weight.alpha", margins.alpha, "class term weight"),
      DBL_KEY("weight.beta", margins.beta, "regularization weight"),
      DBL_KEY("weight.lambda", margins.lambda, "pairwise term weight"),
      DBL_KEY("dir.mu", mu, "anchor-negative pull weight"),
      DBL_KEY("dir.nu", nu, "positive-negative pull weight"),
      DBL_KEY("dir.eta", eta, "direction-weight step size"),
      STR_KEY("dir.mode", dir_mode, "phi update rule: gap | analytic"),
      STR_KEY("loss.center_mode", center_mode, "class centers: per_view | pooled"),
      BOOL_KEY("loss.frozen_centers", frozen_centers,
               "treat class centers as constants in the gradient"),
      INT_KEY("mining.ids_per_batch", mining.ids_per_batch, "identities per mini-batch"),
      INT_KEY("mining.samples_per_view", mining.samples_per_view,
              "samples per identity per view"),
      INT_KEY("mining.triplets_per_anchor", mining.triplets_per_anchor,
              "triplets drawn per anchor slot"),
      INT_KEY("mining.k_marginal", mining.k_marginal, "hard pairs kept per identity per rule"),
      BOOL_KEY("mining.symmetrized", mining.symmetrized, "also mine with views swapped"),
      {"net.preset", "structure preset: desk | full (resets the net.* group)",
       [](const RunConfig& c) { return c.net_preset; },
       [](RunConfig& c, const std::string& v) {
         if (v == "desk") {
           c.net = RunConfig::derived_desk();
         } else if (v == "full") {
           c.net = ScaleConfig::full_scale();
         } else {
           throw UsageError("config: net.preset must be 'desk' or 'full', got '" + v + "'");
         }
         c.net_preset = v;
       }},
      INT_KEY("net.in_channels", net.in_channels, "input channels, 0 = derive from data"),
      INT_KEY("net.in_height", net.in_height, "input height, 0 = derive from data"),
      INT_KEY("net.in_width", net.in_width, "input width, 0 = derive from data"),
      INT_KEY("net.global_filters", net.global_filters, "global conv filters"),
      INT_KEY("net.global_kernel", net.global_kernel, "global conv kernel"),
      INT_KEY("net.global_stride", net.global_stride, "global conv stride"),
      INT_KEY("net.global_pool", net.global_pool, "global pool window"),
      INT_KEY("net.global_pool_stride", net.global_pool_stride, "global pool stride"),
      INT_KEY("net.stripes", net.stripes, "horizontal stripe count"),
      INT_KEY("net.local_filters", net.local_filters, "per-stripe conv filters"),
      INT_KEY("net.local_kernel", net.local_kernel, "per-stripe conv kernel"),
      INT_KEY("net.local_pool", net.local_pool, "per-stripe pool window"),
      INT_KEY("net.local_pool_stride", net.local_pool_stride, "per-stripe pool stride"),
      INT_KEY("net.fc_dim", net.fc_dim, "per-stripe FC width; output dim = 2*stripes*fc_dim"),
      DBL_KEY("init.conv_std", conv_init, "conv weight init sigma"),
      DBL_KEY("init.fc_std", fc_init, "FC weight init sigma"),
      INT_KEY("synth.identities", synth.n_identities, "synthetic identity count"),
      INT_KEY("synth.per_view", synth.per_view, "synthetic samples per identity per view"),
      {"synth.dims", "synthetic sample shape, e.g. 1x24x8 or 16 for flat vectors",
       [](const RunConfig& c) {
         std::string s;
         for (size_t i = 0; i < c.synth.dims.size(); ++i)
           s += (i ? "x" : "") + std::to_string(c.synth.dims[i]);
         return s;
       },
       [](RunConfig& c, const std::string& v) {
         std::vector<int> dims;
         std::string cur;
         for (char ch : v + "x") {
           if (ch == 'x') {
             dims.push_back(to_int("synth.dims", cur));
             cur.clear();
           } else {
             cur += ch;
           }
         }
         if (dims.empty()) throw UsageError("config: synth.dims is empty");
         c.synth.dims = std::move(dims);
       }},
      DBL_KEY("synth.separation", synth.separation, "minimum center separation"),
      DBL_KEY("synth.sigma", synth.sigma, "per-dimension sample noise"),
      DBL_KEY("synth.shift", synth.cross_view_shift, "systematic view-B offset length"),
      INT_KEY("eval.trials", eval_trials, "CMC trials (single-shot resampling)"),
      STR_KEY("eval.protocol", eval_protocol, "mAP protocol: single | multi"),
      STR_KEY("eval.gallery", eval_gallery, "CMC gallery: single_shot | all_shot"),
      STR_KEY("eval.agg", eval_agg, "multi-query pooling: mean | max_distance"),
      DBL_KEY("split.train_fraction", train_fraction, "identity fraction for the train side"),
  };
  return keys;
}

#undef INT_KEY
#undef DBL_KEY
#undef BOOL_KEY
#undef STR_KEY

const KeySpec* find_key(const std::string& name) {
  for (const KeySpec& k : key_registry())
    if (k.name == name) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

void apply_config_entry(RunConfig& cfg, const std::string& entry) {
  const auto eq = entry.find('=');
  if (eq == std::string::npos)
    throw UsageError("config: expected key=value, got '" + entry + "'");
  const std::string key = trim(entry.substr(0, eq));
  const std::string value = trim(entry.substr(eq + 1));
  const KeySpec* spec = find_key(key);
  if (!spec) throw UsageError("config: unknown key '" + key + "'");
  spec->set(cfg, value);
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("config: cannot open " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_config_entry(cfg, line);
    } catch (const UsageError& e) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::string config_key_help() {
  const RunConfig defaults;
  std::ostringstream os;
  for (const KeySpec& k : key_registry()) {
    std::string pad(std::max<size_t>(1, 26 - k.name.size()), ' ');
    os << "  " << k.name << pad << "[" << k.get(defaults) << "] " << k.description << "\n";
  }
  return os.str();
}

}  // namespace s2s
