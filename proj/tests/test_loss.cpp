#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "s2s/loss.hpp"
#include "s2s/mining.hpp"

using namespace s2s;

namespace {

SetBatch make_batch(int n, int m, int d) {
  SetBatch b;
  b.embeddings = Tensor({n, 2, m, d});
  b.identity_ids.resize(static_cast<size_t>(n));
  std::iota(b.identity_ids.begin(), b.identity_ids.end(), 100);
  return b;
}

void set_sample(SetBatch& b, int i, View v, int j, std::initializer_list<double> vals) {
  auto s = b.at(i, v, j);
  size_t k = 0;
  for (double x : vals) s[k++] = x;
}

SetBatch random_batch(int n, int m, int d, std::mt19937_64& rng, double scale = 1.0) {
  SetBatch b = make_batch(n, m, d);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (long long i = 0; i < b.embeddings.size(); ++i) b.embeddings[i] = u(rng);
  return b;
}

double grad_abs_sum(const Tensor& g) {
  double s = 0.0;
  for (long long i = 0; i < g.size(); ++i) s += std::fabs(g[i]);
  return s;
}

}  // namespace

TEST_CASE("class term: two-point groups in both views give 0.15") {
  // both views hold {(0,0), (1,0)}: per-view center (0.5, 0), each member
  // deviates by 0.25, hinge 0.25 - 0.1 = 0.15, four members, Z = 4.
  SetBatch b = make_batch(1, 2, 2);
  for (View v : {View::A, View::B}) {
    set_sample(b, 0, v, 0, {0.0, 0.0});
    set_sample(b, 0, v, 1, {1.0, 0.0});
  }
  const TermResult r = class_identity_loss(b, 0.1);
  CHECK(r.loss == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(r.active == 4);
  CHECK(r.units == 4);

  // pooled centers coincide here, so the pooled-mode loss matches
  const TermResult p = class_identity_loss(b, 0.1, CenterMode::Pooled);
  CHECK(p.loss == doctest::Approx(0.15).epsilon(1e-12));
}

TEST_CASE("class term: margin at least the spread means zero loss and gradient") {
  SetBatch b = make_batch(1, 2, 2);
  for (View v : {View::A, View::B}) {
    set_sample(b, 0, v, 0, {0.0, 0.0});
    set_sample(b, 0, v, 1, {1.0, 0.0});
  }
  const TermResult r = class_identity_loss(b, 0.25);  // hinge exactly at the boundary
  CHECK(r.loss == 0.0);
  CHECK(grad_abs_sum(r.grad) == 0.0);
  CHECK(r.active == 0);
}

TEST_CASE("class term: frozen centers drop exactly the coupling gradient") {
  std::mt19937_64 rng(21);
  SetBatch b = random_batch(2, 3, 4, rng);
  const TermResult full = class_identity_loss(b, 0.1, CenterMode::PerView, false);
  const TermResult frozen = class_identity_loss(b, 0.1, CenterMode::PerView, true);
  CHECK(full.loss == frozen.loss);

  // coupling: every member of a (identity, view) group receives
  // (2 / M) * sum over that group's active members of (c - x) / Z.
  const int n = b.n(), m = b.m(), d = b.dim();
  const double z = static_cast<double>(n * m * 2);
  for (int i = 0; i < n; ++i) {
    for (View v : {View::A, View::B}) {
      Tensor centers = class_centers(b, v);
      std::vector<double> coupling(static_cast<size_t>(d), 0.0);
      for (int j = 0; j < m; ++j) {
        const auto x = b.at(i, v, j);
        double d2 = 0.0;
        std::vector<double> dev(static_cast<size_t>(d));
        for (int k = 0; k < d; ++k) {
          dev[static_cast<size_t>(k)] = centers[i * d + k] - x[k];
          d2 += dev[static_cast<size_t>(k)] * dev[static_cast<size_t>(k)];
        }
        if (d2 - 0.1 > 0.0)
          for (int k = 0; k < d; ++k)
            coupling[static_cast<size_t>(k)] += 2.0 / m * dev[static_cast<size_t>(k)] / z;
      }
      for (int j = 0; j < m; ++j) {
        const long long off = b.offset(i, v, j);
        for (int k = 0; k < d; ++k)
          CHECK(full.grad[off + k] - frozen.grad[off + k] ==
                doctest::Approx(coupling[static_cast<size_t>(k)]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("symmetric triplet: degenerate coincident triplet costs the margin") {
  SetBatch b = make_batch(2, 1, 2);  // all embeddings zero
  const TripletUnit t{{0, View::A, 0}, {0, View::B, 0}, {1, View::B, 0}};
  const TermResult r = symmetric_triplet_loss(b, {t}, DirectionWeights{}, 1.0);
  CHECK(r.loss == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.active == 1);
}

TEST_CASE("symmetric triplet: slack exactly at the margin is inactive") {
  // d2(a,p)=1, d2(a,n)=2, d2(p,n)=2 with mu=.6 nu=.4: T = 1.2 + .8 - 1 = 1.0
  SetBatch b = make_batch(2, 1, 2);
  set_sample(b, 0, View::A, 0, {0.0, 0.0});                 // a
  set_sample(b, 0, View::B, 0, {1.0, 0.0});                 // p
  set_sample(b, 1, View::B, 0, {1.0 / 2, std::sqrt(7) / 2});  // n: d2(a,n)=2, d2(p,n)=2
  const TripletUnit t{{0, View::A, 0}, {0, View::B, 0}, {1, View::B, 0}};

  CHECK(triplet_slack(b, t, 0.6, 0.4) == doctest::Approx(1.0).epsilon(1e-12));
  const TermResult r =
      symmetric_triplet_loss(b, {t}, DirectionWeights::from_mu_nu(0.6, 0.4, 0.001), 1.0);
  CHECK(r.loss == 0.0);
  CHECK(grad_abs_sum(r.grad) == 0.0);
}

TEST_CASE("symmetric triplet at mu=1 nu=0 equals the conventional loss") {
  std::mt19937_64 rng(31);
  const DirectionWeights w = DirectionWeights::from_mu_nu(1.0, 0.0, 0.0);
  for (int rep = 0; rep < 100; ++rep) {
    SetBatch b = random_batch(3, 2, 5, rng);
    MiningConfig cfg;
    cfg.ids_per_batch = 3;
    cfg.samples_per_view = 2;
    cfg.triplets_per_anchor = 2;
    const std::vector<TripletUnit> ts = sample_triplets(b, cfg, rng);
    const TermResult sym = symmetric_triplet_loss(b, ts, w, 1.0);
    const TermResult conv = conventional_triplet_loss(b, ts, 1.0);
    CHECK(sym.loss == doctest::Approx(conv.loss).epsilon(1e-12));
    for (long long i = 0; i < sym.grad.size(); ++i)
      CHECK(sym.grad[i] == doctest::Approx(conv.grad[i]).epsilon(1e-12));
  }
}

TEST_CASE("marginal pairwise frozen examples") {
  SetBatch b = make_batch(2, 2, 1);
  // positive pair at squared distance 0.5
  set_sample(b, 0, View::A, 0, {0.0});
  set_sample(b, 0, View::B, 0, {std::sqrt(0.5)});
  // negative pairs at squared distances 0.2 and 0.6
  set_sample(b, 0, View::A, 1, {0.0});
  set_sample(b, 1, View::B, 0, {std::sqrt(0.2)});
  set_sample(b, 1, View::B, 1, {std::sqrt(0.6)});

  const MarginalPair pos{{0, View::A, 0}, {0, View::B, 0}, +1};
  const MarginalPair neg_close{{0, View::A, 1}, {1, View::B, 0}, -1};
  const MarginalPair neg_far{{0, View::A, 1}, {1, View::B, 1}, -1};

  CHECK(marginal_pairwise_loss(b, {pos}, 0.175, 0.325).loss ==
        doctest::Approx(0.35).epsilon(1e-12));
  CHECK(marginal_pairwise_loss(b, {neg_close}, 0.175, 0.325).loss ==
        doctest::Approx(0.30).epsilon(1e-12));
  const TermResult far = marginal_pairwise_loss(b, {neg_far}, 0.175, 0.325);
  CHECK(far.loss == 0.0);
  CHECK(grad_abs_sum(far.grad) == 0.0);

  // all three together: mean of the hinges
  const TermResult all = marginal_pairwise_loss(b, {pos, neg_close, neg_far}, 0.175, 0.325);
  CHECK(all.loss == doctest::Approx((0.35 + 0.30 + 0.0) / 3.0).epsilon(1e-12));
  CHECK(all.active == 2);
}

TEST_CASE("regularization frozen example") {
  const std::vector<double> p{1.0, 1.0, 1.0, 1.0};
  const RegResult r = regularization(p);
  CHECK(r.value == 4.0);
  for (double g : r.grad) CHECK(g == 2.0);
}

TEST_CASE("empty unit lists cost nothing") {
  SetBatch b = make_batch(2, 2, 3);
  const TermResult t = symmetric_triplet_loss(b, {}, DirectionWeights{}, 1.0);
  CHECK(t.loss == 0.0);
  CHECK(t.units == 0);
  CHECK(grad_abs_sum(t.grad) == 0.0);
  const TermResult p = marginal_pairwise_loss(b, {}, 0.175, 0.325);
  CHECK(p.loss == 0.0);
  CHECK(grad_abs_sum(p.grad) == 0.0);
}

TEST_CASE("triplet and pair validation reject malformed units") {
  SetBatch b = make_batch(2, 2, 3);
  // positive from the anchor's own view
  CHECK_THROWS_AS(
      validate_triplet({{0, View::A, 0}, {0, View::A, 1}, {1, View::B, 0}}, b), UsageError);
  // negative sharing the anchor identity
  CHECK_THROWS_AS(
      validate_triplet({{0, View::A, 0}, {0, View::B, 0}, {0, View::B, 1}}, b), UsageError);
  // out of range
  CHECK_THROWS_AS(
      validate_triplet({{0, View::A, 0}, {0, View::B, 2}, {1, View::B, 0}}, b), UsageError);
  // pair within one view
  CHECK_THROWS_AS(validate_pair({{0, View::A, 0}, {1, View::A, 0}, -1}, b), UsageError);
  // sign contradicting identities
  CHECK_THROWS_AS(validate_pair({{0, View::A, 0}, {0, View::B, 0}, -1}, b), UsageError);
  CHECK_THROWS_AS(validate_pair({{0, View::A, 0}, {1, View::B, 0}, +1}, b), UsageError);
}

TEST_CASE("translation invariance of the embedding terms") {
  std::mt19937_64 rng(41);
  SetBatch b = random_batch(3, 2, 4, rng);
  MiningConfig cfg;
  cfg.ids_per_batch = 3;
  cfg.samples_per_view = 2;
  const std::vector<TripletUnit> ts = sample_triplets(b, cfg, rng);
  const std::vector<MarginalPair> ps = select_marginal_pairs(b, cfg).pairs;

  SetBatch shifted = b;
  for (long long i = 0; i < shifted.embeddings.size(); ++i)
    shifted.embeddings[i] += (i % 4 == 0) ? 3.7 : (i % 4 == 1) ? -1.2 : (i % 4 == 2) ? 0.5 : 9.0;

  const DirectionWeights w;
  CHECK(class_identity_loss(shifted, 0.1).loss ==
        doctest::Approx(class_identity_loss(b, 0.1).loss).epsilon(1e-12));
  CHECK(symmetric_triplet_loss(shifted, ts, w, 1.0).loss ==
        doctest::Approx(symmetric_triplet_loss(b, ts, w, 1.0).loss).epsilon(1e-12));
  CHECK(marginal_pairwise_loss(shifted, ps, 0.175, 0.325).loss ==
        doctest::Approx(marginal_pairwise_loss(b, ps, 0.175, 0.325).loss).epsilon(1e-12));
}

TEST_CASE("total loss recomposes from its terms") {
  std::mt19937_64 rng(51);
  SetBatch b = random_batch(3, 2, 4, rng);
  MiningConfig cfg;
  cfg.ids_per_batch = 3;
  cfg.samples_per_view = 2;
  const std::vector<TripletUnit> ts = sample_triplets(b, cfg, rng);
  const std::vector<MarginalPair> ps = select_marginal_pairs(b, cfg).pairs;
  std::vector<double> params(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : params) v = u(rng);

  MarginConfig mc;
  const DirectionWeights w;
  const LossOptions opt;
  const LossReport rep = total_loss(b, ts, ps, params, mc, w, opt);

  const double recomposed = mc.alpha * rep.l_c + (rep.l_t + mc.lambda * rep.l_p) +
                            mc.beta * rep.reg;
  CHECK(rep.total == doctest::Approx(recomposed).epsilon(1e-12));

  const TermResult c = class_identity_loss(b, mc.m_c);
  const TermResult t = symmetric_triplet_loss(b, ts, w, mc.m_t);
  const TermResult p = marginal_pairwise_loss(b, ps, mc.c_p, mc.m_p);
  for (long long i = 0; i < rep.grad_embeddings.size(); ++i)
    CHECK(rep.grad_embeddings[i] ==
          doctest::Approx(mc.alpha * c.grad[i] + t.grad[i] + mc.lambda * p.grad[i])
              .epsilon(1e-12));
}

TEST_CASE("direction weight worked example") {
  // one active triplet: a=(0,0), p=(1,0), n=(1, sqrt(.5)):
  // d2(a,p)=1, d2(p,n)=.5, d2(a,n)=1.5, T = .6*1.5+.4*.5-1 = 0.1 < 1 (active)
  SetBatch b = make_batch(2, 1, 2);
  set_sample(b, 0, View::A, 0, {0.0, 0.0});
  set_sample(b, 0, View::B, 0, {1.0, 0.0});
  set_sample(b, 1, View::B, 0, {1.0, std::sqrt(0.5)});
  const TripletUnit t{{0, View::A, 0}, {0, View::B, 0}, {1, View::B, 0}};

  DirectionWeights w;
  w.psi = 0.5;
  w.phi = 0.1;
  w.eta = 0.001;

  const PhiStats st = phi_statistic(b, {t}, w, 1.0, PhiUpdateMode::GapDescent);
  CHECK(st.active == 1);
  CHECK(st.r == doctest::Approx(1.0).epsilon(1e-12));

  const DirectionWeights w2 = update_direction_weights(w, b, {t}, 1.0);
  CHECK(w2.phi == doctest::Approx(0.099).epsilon(1e-12));
  CHECK(w2.mu() == doctest::Approx(0.599).epsilon(1e-12));
  CHECK(w2.nu() == doctest::Approx(0.401).epsilon(1e-12));
}

TEST_CASE("direction weight update conserves mu + nu and respects the clamp") {
  std::mt19937_64 rng(61);
  DirectionWeights w;
  for (int rep = 0; rep < 50; ++rep) {
    SetBatch b = random_batch(3, 2, 4, rng);
    MiningConfig cfg;
    cfg.ids_per_batch = 3;
    cfg.samples_per_view = 2;
    const std::vector<TripletUnit> ts = sample_triplets(b, cfg, rng);
    w = update_direction_weights(w, b, ts, 1.0);
    CHECK(w.mu() + w.nu() == 2.0 * w.psi);  // exact: mu, nu derive from psi and phi
    CHECK(w.mu() >= 0.0);
    CHECK(w.mu() <= 2.0 * w.psi);
    CHECK(w.nu() >= 0.0);
    CHECK(w.nu() <= 2.0 * w.psi);
  }

  // huge eta forces the clamp
  DirectionWeights big;
  big.eta = 100.0;
  SetBatch b = random_batch(3, 2, 4, rng, 2.0);
  MiningConfig cfg;
  cfg.ids_per_batch = 3;
  cfg.samples_per_view = 2;
  const std::vector<TripletUnit> ts = sample_triplets(b, cfg, rng);
  const DirectionWeights after = update_direction_weights(big, b, ts, 1.0);
  CHECK(std::fabs(after.phi) <= after.psi);
}

TEST_CASE("eta = 0 never changes the weights") {
  std::mt19937_64 rng(71);
  DirectionWeights w = DirectionWeights::from_mu_nu(0.6, 0.4, 0.0);
  SetBatch b = random_batch(3, 2, 4, rng);
  MiningConfig cfg;
  cfg.ids_per_batch = 3;
  cfg.samples_per_view = 2;
  const std::vector<TripletUnit> ts = sample_triplets(b, cfg, rng);
  const DirectionWeights after = update_direction_weights(w, b, ts, 1.0);
  CHECK(after.phi == w.phi);
  CHECK(after.mu() == w.mu());
}

TEST_CASE("no active triplets leaves r at zero") {
  // far-apart identities: every triplet satisfied, T >> m_t
  SetBatch b = make_batch(2, 1, 2);
  set_sample(b, 0, View::A, 0, {0.0, 0.0});
  set_sample(b, 0, View::B, 0, {0.1, 0.0});
  set_sample(b, 1, View::B, 0, {100.0, 0.0});
  const TripletUnit t{{0, View::A, 0}, {0, View::B, 0}, {1, View::B, 0}};
  const PhiStats st = phi_statistic(b, {t}, DirectionWeights{}, 1.0, PhiUpdateMode::GapDescent);
  CHECK(st.active == 0);
  CHECK(st.r == 0.0);
  const DirectionWeights after = update_direction_weights(DirectionWeights{}, b, {t}, 1.0);
  CHECK(after.phi == DirectionWeights{}.phi);
}

TEST_CASE("analytic mode uses the anchor-negative gap as ascent") {
  // same geometry as the worked example: d2(a,n)=1.5, d2(p,n)=0.5
  SetBatch b = make_batch(2, 1, 2);
  set_sample(b, 0, View::A, 0, {0.0, 0.0});
  set_sample(b, 0, View::B, 0, {1.0, 0.0});
  set_sample(b, 1, View::B, 0, {1.0, std::sqrt(0.5)});
  const TripletUnit t{{0, View::A, 0}, {0, View::B, 0}, {1, View::B, 0}};

  DirectionWeights w;
  w.psi = 0.5;
  w.phi = 0.1;
  w.eta = 0.001;
  const PhiStats st = phi_statistic(b, {t}, w, 1.0, PhiUpdateMode::AnalyticAscent);
  CHECK(st.r == doctest::Approx(2.0 * (1.5 - 0.5)).epsilon(1e-12));

  const DirectionWeights w2 =
      update_direction_weights(w, b, {t}, 1.0, PhiUpdateMode::AnalyticAscent);
  CHECK(w2.phi == doctest::Approx(0.1 + 0.001 * 2.0).epsilon(1e-12));
}

TEST_CASE("margin and weight validation") {
  MarginConfig mc;
  mc.m_p = 0.1;  // below c_p
  CHECK_THROWS_AS(mc.validate(), UsageError);
  mc = MarginConfig{};
  mc.m_t = 0.0;
  CHECK_THROWS_AS(mc.validate(), UsageError);
  CHECK_THROWS_AS(DirectionWeights::from_mu_nu(1.4, -0.4, 0.001), UsageError);
}
