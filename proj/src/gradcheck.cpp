#include "s2s/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "s2s/loss.hpp"
#include "s2s/mining.hpp"

namespace s2s {

double relative_error(double analytic, double central) {
  return std::fabs(analytic - central) /
         std::max({std::fabs(analytic), std::fabs(central), 1e-3});
}

double central_difference_max_err(std::span<double> x, const std::function<double()>& value,
                                  std::span<const double> analytic, double eps) {
  if (!(eps > 0.0)) throw UsageError("gradient check: eps must be positive");
  if (analytic.size() != x.size())
    throw UsageError("gradient check: analytic gradient length mismatch");
  double worst = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = value();
    x[i] = saved - eps;
    const double down = value();
    x[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericalError("gradient check: non-finite loss at component " + std::to_string(i));
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

double gradient_check(const PartNetwork& net,
                      const std::function<LossEval(const PartNetwork&)>& objective, double eps) {
  const LossEval base = objective(net);
  if (!std::isfinite(base.value)) throw NumericalError("gradient check: loss is not finite");
  PartNetwork work = net;
  return central_difference_max_err(
      std::span<double>(work.params()), [&] { return objective(work).value; },
      base.grad_params, eps);
}

namespace {

// ---- random instance generation -------------------------------------------

struct Instance {
  SetBatch batch;
  std::vector<TripletUnit> triplets;
  std::vector<MarginalPair> pairs;
  std::vector<double> reg_params;
};

SetBatch random_batch(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_dist(2, 3), m_dist(2, 3), d_dist(3, 16);
  const int n = n_dist(rng), m = m_dist(rng), d = d_dist(rng);
  // Log-uniform scale so small batches land on both sides of every hinge.
  std::uniform_real_distribution<double> log_scale(std::log(0.05), std::log(1.5));
  const double scale = std::exp(log_scale(rng));
  std::uniform_real_distribution<double> coord(-scale, scale);

  SetBatch batch;
  batch.embeddings = Tensor({n, 2, m, d});
  for (long long i = 0; i < batch.embeddings.size(); ++i) batch.embeddings[i] = coord(rng);
  batch.identity_ids.resize(n);
  for (int i = 0; i < n; ++i) batch.identity_ids[i] = 100 + i;
  return batch;
}

Instance random_instance(std::mt19937_64& rng) {
  Instance inst;
  inst.batch = random_batch(rng);
  MiningConfig cfg;
  cfg.ids_per_batch = inst.batch.n();
  cfg.samples_per_view = inst.batch.m();
  cfg.triplets_per_anchor = 2;
  cfg.k_marginal = 1;
  inst.triplets = sample_triplets(inst.batch, cfg, rng);
  inst.pairs = select_marginal_pairs(inst.batch, cfg).pairs;
  std::uniform_real_distribution<double> p(-1.0, 1.0);
  inst.reg_params.resize(10);
  for (double& v : inst.reg_params) v = p(rng);
  return inst;
}

// The hinge losses are only piecewise differentiable; reject instances where
// any unit sits within `slack` of its boundary so central differences are
// taken on a smooth piece.
constexpr double kBoundarySlack = 1e-3;

bool class_term_safe(const SetBatch& b, const MarginConfig& mc, const LossOptions& opt) {
  const int d = b.dim();
  std::vector<double> center(static_cast<size_t>(d));
  auto group_safe = [&](int i, const std::vector<std::pair<View, int>>& members) {
    std::fill(center.begin(), center.end(), 0.0);
    for (const auto& [v, j] : members) {
      const auto x = b.at(i, v, j);
      for (int k = 0; k < d; ++k) center[static_cast<size_t>(k)] += x[k];
    }
    for (double& c : center) c /= static_cast<double>(members.size());
    for (const auto& [v, j] : members)
      if (std::fabs(squared_distance(center, b.at(i, v, j)) - mc.m_c) < kBoundarySlack)
        return false;
    return true;
  };
  for (int i = 0; i < b.n(); ++i) {
    if (opt.center_mode == CenterMode::Pooled) {
      std::vector<std::pair<View, int>> members;
      for (int v = 0; v < 2; ++v)
        for (int j = 0; j < b.m(); ++j) members.emplace_back(static_cast<View>(v), j);
      if (!group_safe(i, members)) return false;
    } else {
      for (int v = 0; v < 2; ++v) {
        std::vector<std::pair<View, int>> members;
        for (int j = 0; j < b.m(); ++j) members.emplace_back(static_cast<View>(v), j);
        if (!group_safe(i, members)) return false;
      }
    }
  }
  return true;
}

bool triplet_term_safe(const SetBatch& b, const std::vector<TripletUnit>& ts, double mu,
                       double nu, double m_t) {
  for (const TripletUnit& t : ts)
    if (std::fabs(triplet_slack(b, t, mu, nu) - m_t) < kBoundarySlack) return false;
  return true;
}

bool conventional_term_safe(const SetBatch& b, const std::vector<TripletUnit>& ts, double m_t) {
  for (const TripletUnit& t : ts) {
    const auto a = b.at(t.anchor.identity, t.anchor.view, t.anchor.index);
    const auto p = b.at(t.positive.identity, t.positive.view, t.positive.index);
    const auto n = b.at(t.negative.identity, t.negative.view, t.negative.index);
    const double arg = m_t + squared_distance(a, p) - squared_distance(a, n);
    if (std::fabs(arg) < kBoundarySlack) return false;
  }
  return true;
}

bool pairwise_term_safe(const SetBatch& b, const std::vector<MarginalPair>& ps, double c_p,
                        double m_p) {
  for (const MarginalPair& pr : ps) {
    const double d2 = squared_distance(b.at(pr.a.identity, pr.a.view, pr.a.index),
                                       b.at(pr.b.identity, pr.b.view, pr.b.index));
    const double arg = c_p - pr.sign * (m_p - d2);
    if (std::fabs(arg) < kBoundarySlack) return false;
  }
  return true;
}

Instance draw_safe_instance(std::mt19937_64& rng, const std::string& term,
                            const MarginConfig& mc, const DirectionWeights& w,
                            const LossOptions& opt) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    Instance inst = random_instance(rng);
    bool ok = true;
    if (term == "class" || term == "total")
      ok = ok && class_term_safe(inst.batch, mc, opt);
    if (term == "triplet" || term == "total" || term == "network")
      ok = ok && triplet_term_safe(inst.batch, inst.triplets, w.mu(), w.nu(), mc.m_t);
    if (term == "conventional")
      ok = ok && conventional_term_safe(inst.batch, inst.triplets, mc.m_t);
    if (term == "pairwise" || term == "total" || term == "network")
      ok = ok && pairwise_term_safe(inst.batch, inst.pairs, mc.c_p, mc.m_p);
    if (ok) return inst;
  }
  throw NumericalError("gradient check: could not draw an instance away from hinge boundaries");
}

double check_direct_term(const std::string& term, const Instance& inst, const MarginConfig& mc,
                         const DirectionWeights& w, const LossOptions& opt, double eps) {
  SetBatch work = inst.batch;  // FD perturbs the embeddings in place
  Tensor analytic({1});
  std::function<double()> value;

  if (term == "class") {
    analytic = class_identity_loss(work, mc.m_c, opt.center_mode, opt.frozen_centers).grad;
    value = [&] {
      return class_identity_loss(work, mc.m_c, opt.center_mode, opt.frozen_centers).loss;
    };
  } else if (term == "triplet") {
    analytic = symmetric_triplet_loss(work, inst.triplets, w, mc.m_t).grad;
    value = [&] { return symmetric_triplet_loss(work, inst.triplets, w, mc.m_t).loss; };
  } else if (term == "conventional") {
    analytic = conventional_triplet_loss(work, inst.triplets, mc.m_t).grad;
    value = [&] { return conventional_triplet_loss(work, inst.triplets, mc.m_t).loss; };
  } else if (term == "pairwise") {
    analytic = marginal_pairwise_loss(work, inst.pairs, mc.c_p, mc.m_p).grad;
    value = [&] { return marginal_pairwise_loss(work, inst.pairs, mc.c_p, mc.m_p).loss; };
  } else if (term == "total") {
    analytic = total_loss(work, inst.triplets, inst.pairs, inst.reg_params, mc, w, opt)
                   .grad_embeddings;
    value = [&] {
      return total_loss(work, inst.triplets, inst.pairs, inst.reg_params, mc, w, opt).total;
    };
  } else {
    throw UsageError("gradient check: unknown term '" + term + "'");
  }

  return central_difference_max_err(work.embeddings.flat(), value, analytic.flat(), eps);
}

double check_reg(std::mt19937_64& rng, double eps) {
  std::uniform_real_distribution<double> p(-1.0, 1.0);
  std::vector<double> params(24);
  for (double& v : params) v = p(rng);
  const RegResult base = regularization(params);
  return central_difference_max_err(
      params, [&] { return regularization(params).value; }, base.grad, eps);
}

// Small three-layer net (conv -> relu -> fc) for the chained check. Parameters
// start at O(1) so no unit sits near the ReLU kink by construction of scale.
PartNetwork tiny_net(std::mt19937_64& rng, int emb_dim) {
  PartNetwork net;
  const int conv = net.add_node(LayerSpec::conv2d(2, 3), {{-1, 0}}, "conv");
  const int relu = net.add_node(LayerSpec::relu(), {{conv, 0}}, "relu");
  net.add_node(LayerSpec::fully_connected(emb_dim), {{relu, 0}}, "fc");
  net.finalize({1, 6, 5});
  randomize_params(net, rng(), 0.5);
  return net;
}

double check_network(std::mt19937_64& rng, const MarginConfig& mc, const DirectionWeights& w,
                     const LossOptions& opt, double eps) {
  const int n = 2, m = 2, d = 6;
  PartNetwork net = tiny_net(rng, d);

  std::uniform_real_distribution<double> coord(-1.0, 1.0);
  std::vector<Tensor> images;
  for (int i = 0; i < n * 2 * m; ++i) {
    Tensor img({1, 6, 5});
    for (long long k = 0; k < img.size(); ++k) img[k] = coord(rng);
    images.push_back(std::move(img));
  }

  SetBatch proto;
  proto.embeddings = Tensor({n, 2, m, d});
  proto.identity_ids = {7, 9};

  MiningConfig mcfg;
  mcfg.ids_per_batch = n;
  mcfg.samples_per_view = m;
  mcfg.triplets_per_anchor = 1;
  mcfg.k_marginal = 1;

  // Units are fixed once from the unperturbed embeddings so the objective is
  // smooth in the parameters.
  auto embed_all = [&](const PartNetwork& nn, SetBatch& out, std::vector<Tape>* tapes) {
    long long slot = 0;
    for (int i = 0; i < n; ++i)
      for (int v = 0; v < 2; ++v)
        for (int j = 0; j < m; ++j, ++slot) {
          auto [emb, tape] = nn.forward(images[static_cast<size_t>(slot)]);
          std::copy(emb.data(), emb.data() + d, out.embeddings.data() + slot * d);
          if (tapes) tapes->push_back(std::move(tape));
        }
  };
  embed_all(net, proto, nullptr);
  std::mt19937_64 unit_rng(rng());
  const std::vector<TripletUnit> triplets = sample_triplets(proto, mcfg, unit_rng);
  const std::vector<MarginalPair> pairs = select_marginal_pairs(proto, mcfg).pairs;

  auto objective = [&](const PartNetwork& nn) {
    SetBatch batch = proto;
    std::vector<Tape> tapes;
    embed_all(nn, batch, &tapes);
    const LossReport rep = total_loss(batch, triplets, pairs, nn.params(), mc, w, opt);
    LossEval ev;
    ev.value = rep.total;
    ev.grad_params.assign(nn.params().size(), 0.0);
    long long slot = 0;
    for (int i = 0; i < n; ++i)
      for (int v = 0; v < 2; ++v)
        for (int j = 0; j < m; ++j, ++slot) {
          Tensor gemb({d});
          std::copy(rep.grad_embeddings.data() + slot * d,
                    rep.grad_embeddings.data() + (slot + 1) * d, gemb.data());
          const BackwardResult br = nn.backward(tapes[static_cast<size_t>(slot)], gemb);
          for (size_t k = 0; k < ev.grad_params.size(); ++k)
            ev.grad_params[k] += br.grad_params[k];
        }
    for (size_t k = 0; k < ev.grad_params.size(); ++k)
      ev.grad_params[k] += mc.beta * 2.0 * nn.params()[k];
    return ev;
  };

  // Reject draws whose units sit on a hinge boundary.
  if (!triplet_term_safe(proto, triplets, w.mu(), w.nu(), mc.m_t) ||
      !pairwise_term_safe(proto, pairs, mc.c_p, mc.m_p) ||
      !class_term_safe(proto, mc, opt))
    return -1.0;  // caller redraws

  return gradient_check(net, objective, eps);
}

}  // namespace

const std::vector<std::string>& gradcheck_terms() {
  static const std::vector<std::string> terms = {"class",    "triplet", "conventional",
                                                 "pairwise", "reg",     "total",
                                                 "network"};
  return terms;
}

TermCheck run_term_check(const std::string& term, std::uint64_t seed, double eps,
                         int instances) {
  if (!(eps > 0.0)) throw UsageError("gradient check: eps must be positive");
  const auto& known = gradcheck_terms();
  if (std::find(known.begin(), known.end(), term) == known.end())
    throw UsageError("gradient check: unknown term '" + term + "'");
  if (instances < 1) throw UsageError("gradient check: instances must be >= 1");

  MarginConfig mc;
  DirectionWeights w;
  LossOptions opt;

  TermCheck out;
  out.term = term;
  out.instances = instances;
  out.threshold = term == "network" ? 1e-4 : 1e-6;

  std::mt19937_64 rng(seed ^ std::hash<std::string>{}(term));
  for (int k = 0; k < instances; ++k) {
    double err;
    if (term == "reg") {
      err = check_reg(rng, eps);
    } else if (term == "network") {
      do {
        err = check_network(rng, mc, w, opt, eps);
      } while (err < 0.0);
    } else {
      const Instance inst = draw_safe_instance(rng, term, mc, w, opt);
      err = check_direct_term(term, inst, mc, w, opt, eps);
    }
    out.max_rel_err = std::max(out.max_rel_err, err);
  }
  return out;
}

}  // namespace s2s
