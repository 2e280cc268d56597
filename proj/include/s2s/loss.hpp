#pragma once

#include <span>
#include <vector>

#include "s2s/batch.hpp"

namespace s2s {

// Margins and mixing weights of the combined objective
//   total = alpha * L_C + (L_T + lambda * L_P) + beta * R.
struct MarginConfig {
  double m_c = 0.1;    // class compactness margin
  double m_t = 1.0;    // triplet margin
  double c_p = 0.175;  // pairwise half-width
  double m_p = 0.325;  // pairwise center margin
  double alpha = 0.1;
  double beta = 0.01;
  double lambda = 0.15;

  void validate() const;
};

// Asymmetric pull weights of the triplet term, parameterized as mu = psi + phi,
// nu = psi - phi with phi clamped to [-psi, psi]; mu + nu == 2 psi always.
struct DirectionWeights {
  double psi = 0.5;
  double phi = 0.1;
  double eta = 0.001;  // step size of the phi update

  double mu() const { return psi + phi; }
  double nu() const { return psi - phi; }

  static DirectionWeights from_mu_nu(double mu, double nu, double eta);
  void validate() const;
};

enum class PhiUpdateMode {
  GapDescent,     // r averages 2(d2(a,p) - d2(p,n)) over active triplets, descent on phi
  AnalyticAscent, // r averages 2(d2(a,n) - d2(p,n)) = dT/dphi, applied as ascent on the slack T
};

enum class CenterMode { PerView, Pooled };

struct TermResult {
  double loss = 0.0;   // already normalized by the unit count
  Tensor grad;         // d loss / d embeddings, shape (N,2,M,D)
  int active = 0;      // hinge-active units
  int units = 0;       // normalizer Z
};

struct RegResult {
  double value = 0.0;
  std::vector<double> grad;  // 2 * params
};

struct LossReport {
  double l_c = 0.0, l_t = 0.0, l_p = 0.0, reg = 0.0, total = 0.0;
  Tensor grad_embeddings;  // gradient of total w.r.t. embeddings
  double grad_phi = 0.0;   // r statistic for the configured update mode
  int active_c = 0, active_t = 0, active_p = 0;
  int z_c = 0, z_t = 0, z_p = 0;
};

// Per-identity per-view sample means.
Tensor class_centers(const SetBatch& batch, View view);

// L_C = (1/Z_c) sum over views, identities, samples of
//       max(||c_i - x_ij||^2 - m_c, 0), Z_c = N*M*2.
// The gradient chains through the centers (d c_i / d x_ij = I/M) unless
// frozen_centers is set, which treats the centers as constants.
TermResult class_identity_loss(const SetBatch& batch, double m_c,
                               CenterMode mode = CenterMode::PerView,
                               bool frozen_centers = false);

// Slack of one triplet: T = mu d2(a,n) + nu d2(p,n) - d2(a,p).
double triplet_slack(const SetBatch& batch, const TripletUnit& t, double mu, double nu);

// L_T = (1/Z_t) sum of max(m_t - T, 0); a triplet is active iff T < m_t.
TermResult symmetric_triplet_loss(const SetBatch& batch, const std::vector<TripletUnit>& triplets,
                                  const DirectionWeights& weights, double m_t);

// Classic formulation max(m_t + d2(a,p) - d2(a,n), 0); no (p-n) pull.
TermResult conventional_triplet_loss(const SetBatch& batch,
                                     const std::vector<TripletUnit>& triplets, double m_t);

// L_P = (1/Z_p) sum of max(c_p - g (m_p - d2(a,b)), 0): same-identity pairs
// hinge once d2 exceeds m_p - c_p, different-identity pairs once d2 falls
// below m_p + c_p.
TermResult marginal_pairwise_loss(const SetBatch& batch, const std::vector<MarginalPair>& pairs,
                                  double c_p, double m_p);

// R = sum of squares of every weight and bias; gradient 2 * params.
RegResult regularization(std::span<const double> params);

struct PhiStats {
  double r = 0.0;
  int active = 0;
};

PhiStats phi_statistic(const SetBatch& batch, const std::vector<TripletUnit>& triplets,
                       const DirectionWeights& weights, double m_t, PhiUpdateMode mode);

// One step of the direction-weight dynamics; active set is evaluated with the
// incoming weights. mu + nu is conserved exactly and phi stays inside
// [-psi, psi].
DirectionWeights update_direction_weights(const DirectionWeights& weights, const SetBatch& batch,
                                          const std::vector<TripletUnit>& triplets, double m_t,
                                          PhiUpdateMode mode = PhiUpdateMode::GapDescent);

struct LossOptions {
  CenterMode center_mode = CenterMode::PerView;
  bool frozen_centers = false;
  PhiUpdateMode phi_mode = PhiUpdateMode::GapDescent;
};

LossReport total_loss(const SetBatch& batch, const std::vector<TripletUnit>& triplets,
                      const std::vector<MarginalPair>& pairs, std::span<const double> params,
                      const MarginConfig& margins, const DirectionWeights& weights,
                      const LossOptions& options = {});

}  // namespace s2s
