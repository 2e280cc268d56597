#include "s2s/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace s2s {

void MarginConfig::validate() const {
  if (!(m_c >= 0.0)) throw UsageError("margins: m_c must be >= 0");
  if (!(m_t > 0.0)) throw UsageError("margins: m_t must be > 0");
  if (!(c_p > 0.0)) throw UsageError("margins: c_p must be > 0");
  if (!(m_p > c_p))
    throw UsageError("margins: m_p must exceed c_p so the down-margin m_p - c_p stays positive");
  if (alpha < 0.0 || beta < 0.0 || lambda < 0.0)
    throw UsageError("margins: term weights must be non-negative");
}

DirectionWeights DirectionWeights::from_mu_nu(double mu, double nu, double eta) {
  DirectionWeights w;
  w.psi = 0.5 * (mu + nu);
  w.phi = 0.5 * (mu - nu);
  w.eta = eta;
  w.validate();
  return w;
}

void DirectionWeights::validate() const {
  if (!(psi > 0.0)) throw UsageError("direction weights: psi must be > 0");
  if (!(phi >= -psi && phi <= psi))
    throw UsageError("direction weights: phi must lie in [-psi, psi]");
  if (eta < 0.0) throw UsageError("direction weights: eta must be >= 0");
}

void validate_triplet(const TripletUnit& t, const SetBatch& batch) {
  auto in_range = [&](const SampleRef& r) {
    return r.identity >= 0 && r.identity < batch.n() && r.index >= 0 && r.index < batch.m();
  };
  if (!in_range(t.anchor) || !in_range(t.positive) || !in_range(t.negative))
    throw UsageError("triplet: sample reference out of range");
  if (t.positive.view != opposite(t.anchor.view) || t.negative.view != opposite(t.anchor.view))
    throw UsageError("triplet: positive and negative must come from the view opposite the anchor");
  if (t.positive.identity != t.anchor.identity)
    throw UsageError("triplet: positive must share the anchor identity");
  if (t.negative.identity == t.anchor.identity)
    throw UsageError("triplet: negative must differ from the anchor identity");
}

void validate_pair(const MarginalPair& p, const SetBatch& batch) {
  auto in_range = [&](const SampleRef& r) {
    return r.identity >= 0 && r.identity < batch.n() && r.index >= 0 && r.index < batch.m();
  };
  if (!in_range(p.a) || !in_range(p.b)) throw UsageError("pair: sample reference out of range");
  if (p.b.view != opposite(p.a.view))
    throw UsageError("pair: the two embeddings must come from different views");
  if (p.sign != 1 && p.sign != -1) throw UsageError("pair: sign must be +1 or -1");
  if ((p.a.identity == p.b.identity) != (p.sign == 1))
    throw UsageError("pair: sign does not match the identity relation");
}

Tensor class_centers(const SetBatch& batch, View view) {
  batch.validate();
  const int n = batch.n(), m = batch.m(), d = batch.dim();
  Tensor centers({n, d});
  for (int i = 0; i < n; ++i) {
    double* c = centers.data() + static_cast<long long>(i) * d;
    for (int j = 0; j < m; ++j) {
      const auto x = batch.at(i, view, j);
      for (int k = 0; k < d; ++k) c[k] += x[k];
    }
    for (int k = 0; k < d; ++k) c[k] /= m;
  }
  return centers;
}

TermResult class_identity_loss(const SetBatch& batch, double m_c, CenterMode mode,
                               bool frozen_centers) {
  batch.validate();
  if (m_c < 0.0) throw UsageError("class_identity_loss: m_c must be >= 0");
  const int n = batch.n(), m = batch.m(), d = batch.dim();

  TermResult res;
  res.grad = Tensor(batch.embeddings.shape());
  res.units = n * m * 2;

  double hinge_sum = 0.0;
  const double z = static_cast<double>(res.units);

  std::vector<double> center(static_cast<size_t>(d));
  std::vector<double> mean_dev(static_cast<size_t>(d));  // sum of (c - x_j) over active j

  auto run_group = [&](int i, const std::vector<std::pair<View, int>>& members) {
    std::fill(center.begin(), center.end(), 0.0);
    for (const auto& [v, j] : members) {
      const auto x = batch.at(i, v, j);
      for (int k = 0; k < d; ++k) center[static_cast<size_t>(k)] += x[k];
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    for (double& c : center) c *= inv;

    std::fill(mean_dev.begin(), mean_dev.end(), 0.0);
    for (const auto& [v, j] : members) {
      const auto x = batch.at(i, v, j);
      double d2 = 0.0;
      for (int k = 0; k < d; ++k) {
        const double t = center[static_cast<size_t>(k)] - x[k];
        d2 += t * t;
      }
      if (d2 - m_c > 0.0) {
        hinge_sum += d2 - m_c;
        ++res.active;
        auto g = res.grad.flat().subspan(static_cast<size_t>(batch.offset(i, v, j)),
                                         static_cast<size_t>(d));
        for (int k = 0; k < d; ++k) {
          const double dev = center[static_cast<size_t>(k)] - x[k];
          g[k] += -2.0 * dev / z;  // direct pull toward the center
          mean_dev[static_cast<size_t>(k)] += dev;
        }
      }
    }
    if (!frozen_centers) {
      // every member moves the center: d c / d x_j = I / |members|
      for (const auto& [v, j] : members) {
        auto g = res.grad.flat().subspan(static_cast<size_t>(batch.offset(i, v, j)),
                                         static_cast<size_t>(d));
        for (int k = 0; k < d; ++k)
          g[k] += 2.0 * inv * mean_dev[static_cast<size_t>(k)] / z;
      }
    }
  };

  for (int i = 0; i < n; ++i) {
    if (mode == CenterMode::PerView) {
      for (View v : {View::A, View::B}) {
        std::vector<std::pair<View, int>> members;
        for (int j = 0; j < m; ++j) members.emplace_back(v, j);
        run_group(i, members);
      }
    } else {
      std::vector<std::pair<View, int>> members;
      for (View v : {View::A, View::B})
        for (int j = 0; j < m; ++j) members.emplace_back(v, j);
      run_group(i, members);
    }
  }
  res.loss = hinge_sum / z;
  return res;
}

double triplet_slack(const SetBatch& batch, const TripletUnit& t, double mu, double nu) {
  const auto a = batch.at(t.anchor.identity, t.anchor.view, t.anchor.index);
  const auto p = batch.at(t.positive.identity, t.positive.view, t.positive.index);
  const auto n = batch.at(t.negative.identity, t.negative.view, t.negative.index);
  return mu * squared_distance(a, n) + nu * squared_distance(p, n) - squared_distance(a, p);
}

namespace {

void axpy_into(std::span<double> dst, double scale, std::span<const double> x,
               std::span<const double> y) {
  for (size_t k = 0; k < dst.size(); ++k) dst[k] += scale * (x[k] - y[k]);
}

}  // namespace

TermResult symmetric_triplet_loss(const SetBatch& batch, const std::vector<TripletUnit>& triplets,
                                  const DirectionWeights& weights, double m_t) {
  batch.validate();
  weights.validate();
  TermResult res;
  res.grad = Tensor(batch.embeddings.shape());
  res.units = static_cast<int>(triplets.size());
  if (triplets.empty()) return res;

  const double mu = weights.mu(), nu = weights.nu();
  const double z = static_cast<double>(res.units);
  double sum = 0.0;
  for (const TripletUnit& t : triplets) {
    validate_triplet(t, batch);
    const double T = triplet_slack(batch, t, mu, nu);
    if (T >= m_t) continue;  // hinge inactive
    sum += m_t - T;
    ++res.active;
    const auto a = batch.at(t.anchor.identity, t.anchor.view, t.anchor.index);
    const auto p = batch.at(t.positive.identity, t.positive.view, t.positive.index);
    const auto n = batch.at(t.negative.identity, t.negative.view, t.negative.index);
    auto ga = res.grad.flat().subspan(
        static_cast<size_t>(batch.offset(t.anchor.identity, t.anchor.view, t.anchor.index)),
        a.size());
    auto gp = res.grad.flat().subspan(
        static_cast<size_t>(batch.offset(t.positive.identity, t.positive.view, t.positive.index)),
        a.size());
    auto gn = res.grad.flat().subspan(
        static_cast<size_t>(batch.offset(t.negative.identity, t.negative.view, t.negative.index)),
        a.size());
    // d(m_t - T)/d endpoint, scaled by 1/Z
    axpy_into(ga, 2.0 / z, a, p);
    axpy_into(ga, -2.0 * mu / z, a, n);
    axpy_into(gp, -2.0 / z, a, p);
    axpy_into(gp, -2.0 * nu / z, p, n);
    axpy_into(gn, 2.0 * mu / z, a, n);
    axpy_into(gn, 2.0 * nu / z, p, n);
  }
  res.loss = sum / z;
  return res;
}

TermResult conventional_triplet_loss(const SetBatch& batch,
                                     const std::vector<TripletUnit>& triplets, double m_t) {
  batch.validate();
  TermResult res;
  res.grad = Tensor(batch.embeddings.shape());
  res.units = static_cast<int>(triplets.size());
  if (triplets.empty()) return res;

  const double z = static_cast<double>(res.units);
  double sum = 0.0;
  for (const TripletUnit& t : triplets) {
    validate_triplet(t, batch);
    const auto a = batch.at(t.anchor.identity, t.anchor.view, t.anchor.index);
    const auto p = batch.at(t.positive.identity, t.positive.view, t.positive.index);
    const auto n = batch.at(t.negative.identity, t.negative.view, t.negative.index);
    const double v = m_t + squared_distance(a, p) - squared_distance(a, n);
    if (v <= 0.0) continue;
    sum += v;
    ++res.active;
    auto ga = res.grad.flat().subspan(
        static_cast<size_t>(batch.offset(t.anchor.identity, t.anchor.view, t.anchor.index)),
        a.size());
    auto gp = res.grad.flat().subspan(
        static_cast<size_t>(batch.offset(t.positive.identity, t.positive.view, t.positive.index)),
        a.size());
    auto gn = res.grad.flat().subspan(
        static_cast<size_t>(batch.offset(t.negative.identity, t.negative.view, t.negative.index)),
        a.size());
    axpy_into(ga, 2.0 / z, a, p);
    axpy_into(ga, -2.0 / z, a, n);
    axpy_into(gp, -2.0 / z, a, p);
    axpy_into(gn, 2.0 / z, a, n);
  }
  res.loss = sum / z;
  return res;
}

TermResult marginal_pairwise_loss(const SetBatch& batch, const std::vector<MarginalPair>& pairs,
                                  double c_p, double m_p) {
  batch.validate();
  if (!(c_p > 0.0) || !(m_p > c_p))
    throw UsageError("marginal_pairwise_loss: need m_p > c_p > 0");
  TermResult res;
  res.grad = Tensor(batch.embeddings.shape());
  res.units = static_cast<int>(pairs.size());
  if (pairs.empty()) return res;

  const double z = static_cast<double>(res.units);
  double sum = 0.0;
  for (const MarginalPair& p : pairs) {
    validate_pair(p, batch);
    const auto a = batch.at(p.a.identity, p.a.view, p.a.index);
    const auto b = batch.at(p.b.identity, p.b.view, p.b.index);
    const double g = static_cast<double>(p.sign);
    const double v = c_p - g * (m_p - squared_distance(a, b));
    if (v <= 0.0) continue;
    sum += v;
    ++res.active;
    auto ga = res.grad.flat().subspan(
        static_cast<size_t>(batch.offset(p.a.identity, p.a.view, p.a.index)), a.size());
    auto gb = res.grad.flat().subspan(
        static_cast<size_t>(batch.offset(p.b.identity, p.b.view, p.b.index)), a.size());
    axpy_into(ga, 2.0 * g / z, a, b);
    axpy_into(gb, -2.0 * g / z, a, b);
  }
  res.loss = sum / z;
  return res;
}

RegResult regularization(std::span<const double> params) {
  RegResult res;
  res.grad.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    res.value += params[i] * params[i];
    res.grad[i] = 2.0 * params[i];
  }
  return res;
}

PhiStats phi_statistic(const SetBatch& batch, const std::vector<TripletUnit>& triplets,
                       const DirectionWeights& weights, double m_t, PhiUpdateMode mode) {
  batch.validate();
  const double mu = weights.mu(), nu = weights.nu();
  PhiStats st;
  double sum = 0.0;
  for (const TripletUnit& t : triplets) {
    validate_triplet(t, batch);
    if (triplet_slack(batch, t, mu, nu) >= m_t) continue;
    const auto a = batch.at(t.anchor.identity, t.anchor.view, t.anchor.index);
    const auto p = batch.at(t.positive.identity, t.positive.view, t.positive.index);
    const auto n = batch.at(t.negative.identity, t.negative.view, t.negative.index);
    if (mode == PhiUpdateMode::GapDescent)
      sum += 2.0 * (squared_distance(a, p) - squared_distance(p, n));
    else
      sum += 2.0 * (squared_distance(a, n) - squared_distance(p, n));
    ++st.active;
  }
  if (st.active > 0) st.r = sum / static_cast<double>(st.active);
  return st;
}

DirectionWeights update_direction_weights(const DirectionWeights& weights, const SetBatch& batch,
                                          const std::vector<TripletUnit>& triplets, double m_t,
                                          PhiUpdateMode mode) {
  weights.validate();
  const PhiStats st = phi_statistic(batch, triplets, weights, m_t, mode);
  if (!std::isfinite(st.r))
    throw NumericalError("direction weights: non-finite update statistic");
  DirectionWeights next = weights;
  const double raw = mode == PhiUpdateMode::GapDescent ? weights.phi - weights.eta * st.r
                                                         : weights.phi + weights.eta * st.r;
  next.phi = std::clamp(raw, -weights.psi, weights.psi);
  return next;
}

LossReport total_loss(const SetBatch& batch, const std::vector<TripletUnit>& triplets,
                      const std::vector<MarginalPair>& pairs, std::span<const double> params,
                      const MarginConfig& margins, const DirectionWeights& weights,
                      const LossOptions& options) {
  margins.validate();
  weights.validate();

  const TermResult c =
      class_identity_loss(batch, margins.m_c, options.center_mode, options.frozen_centers);
  const TermResult t = symmetric_triplet_loss(batch, triplets, weights, margins.m_t);
  const TermResult p = marginal_pairwise_loss(batch, pairs, margins.c_p, margins.m_p);
  const RegResult r = regularization(params);

  LossReport rep;
  rep.l_c = c.loss;
  rep.l_t = t.loss;
  rep.l_p = p.loss;
  rep.reg = r.value;
  rep.total = margins.alpha * c.loss + (t.loss + margins.lambda * p.loss) + margins.beta * r.value;
  rep.active_c = c.active;
  rep.active_t = t.active;
  rep.active_p = p.active;
  rep.z_c = c.units;
  rep.z_t = t.units;
  rep.z_p = p.units;
  rep.grad_phi = phi_statistic(batch, triplets, weights, margins.m_t, options.phi_mode).r;

  rep.grad_embeddings = Tensor(batch.embeddings.shape());
  for (long long i = 0; i < rep.grad_embeddings.size(); ++i)
    rep.grad_embeddings[i] =
        margins.alpha * c.grad[i] + t.grad[i] + margins.lambda * p.grad[i];
  return rep;
}

}  // namespace s2s
