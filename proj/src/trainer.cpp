#include "s2s/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "s2s/parallel.hpp"

namespace s2s {

void TrainConfig::validate() const {
  if (learning_rate < 0.0) throw UsageError("train: learning_rate must be >= 0");
  if (max_iterations < 1) throw UsageError("train: max_iterations must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw UsageError("train: momentum must lie in [0, 1)");
  if (snapshot_every < 0) throw UsageError("train: snapshot_every must be >= 0");
  if (threads < 1) throw UsageError("train: threads must be >= 1");
  margins.validate();
  weights.validate();
  mining.validate();
}

void sgd_step(std::vector<double>& params, std::span<const double> grad, OptimizerState& state,
              double tau, double momentum) {
  if (grad.size() != params.size()) throw UsageError("sgd_step: gradient length mismatch");
  if (state.velocity.size() != params.size()) state.velocity.assign(params.size(), 0.0);
  for (size_t i = 0; i < params.size(); ++i) {
    state.velocity[i] = momentum * state.velocity[i] - tau * grad[i];
    params[i] += state.velocity[i];
  }
}

EmbeddedBatch embed_batch(const PartNetwork& net, const SampleBatch& samples, int threads) {
  const int n = samples.n_identities, m = samples.per_view;
  const int total = n * 2 * m;
  if (total == 0) throw UsageError("embed_batch: empty batch");

  EmbeddedBatch out;
  out.tapes.resize(static_cast<size_t>(total));
  std::vector<Tensor> embs(static_cast<size_t>(total));
  parallel_for(total, threads, [&](int s) {
    auto [emb, tape] = net.forward(samples.samples[static_cast<size_t>(s)]);
    embs[static_cast<size_t>(s)] = std::move(emb);
    out.tapes[static_cast<size_t>(s)] = std::move(tape);
  });

  const int d = static_cast<int>(embs[0].size());
  out.batch.identity_ids = samples.identity_ids;
  out.batch.embeddings = Tensor({n, 2, m, d});
  for (int s = 0; s < total; ++s)
    for (int k = 0; k < d; ++k)
      out.batch.embeddings[static_cast<long long>(s) * d + k] = embs[static_cast<size_t>(s)][k];
  return out;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("train history: cannot open " + path.string());
  os << "iter,total,l_c,l_t,l_p,reg,mu,nu,active_t,active_p,step\n";
  char buf[512];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d,%.17g\n",
                  r.iter, r.total, r.l_c, r.l_t, r.l_p, r.reg, r.mu, r.nu, r.active_t, r.active_p,
                  r.step);
    os << buf;
  }
  if (!os) throw DataError("train history: write failed for " + path.string());
}

namespace {

struct TripletTermOutcome {
  double loss = 0.0;
  Tensor grad;
  int active = 0;
  DirectionWeights weights;  // after this iteration's update(s)
  double r_stat = 0.0;
};

// Default path: one direction-weight update from the whole batch, then one
// evaluation of the triplet term. Experimental per-unit path: walk identities
// in order, updating the weights from each identity's triplets before scoring
// them, mirroring a unit-by-unit traversal of the batch.
TripletTermOutcome triplet_term(const SetBatch& batch, const std::vector<TripletUnit>& triplets,
                                const DirectionWeights& weights, const MarginConfig& margins,
                                const TrainConfig& cfg) {
  TripletTermOutcome out;
  if (!cfg.per_unit_updates) {
    out.weights = update_direction_weights(weights, batch, triplets, margins.m_t,
                                           cfg.loss_options.phi_mode);
    out.r_stat =
        phi_statistic(batch, triplets, weights, margins.m_t, cfg.loss_options.phi_mode).r;
    const TermResult t = symmetric_triplet_loss(batch, triplets, out.weights, margins.m_t);
    out.loss = t.loss;
    out.grad = t.grad;
    out.active = t.active;
    return out;
  }

  std::vector<std::vector<TripletUnit>> by_identity(static_cast<size_t>(batch.n()));
  for (const TripletUnit& t : triplets)
    by_identity[static_cast<size_t>(t.anchor.identity)].push_back(t);

  out.grad = Tensor(batch.embeddings.shape());
  out.weights = weights;
  const int total_units = static_cast<int>(triplets.size());
  double unnormalized = 0.0;
  for (int i = 0; i < batch.n(); ++i) {
    const auto& unit = by_identity[static_cast<size_t>(i)];
    if (unit.empty()) continue;
    out.weights = update_direction_weights(out.weights, batch, unit, margins.m_t,
                                           cfg.loss_options.phi_mode);
    const TermResult t = symmetric_triplet_loss(batch, unit, out.weights, margins.m_t);
    // symmetric_triplet_loss normalizes by its own unit count; fold the
    // per-identity slices back into the batch-level 1/Z_t normalization
    const double scale = static_cast<double>(t.units) / static_cast<double>(total_units);
    unnormalized += t.loss * static_cast<double>(t.units);
    out.active += t.active;
    for (long long k = 0; k < out.grad.size(); ++k) out.grad[k] += t.grad[k] * scale;
  }
  if (total_units > 0) out.loss = unnormalized / static_cast<double>(total_units);
  return out;
}

}  // namespace

TrainResult train(const Dataset& data, PartNetwork net, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (!net.finalized()) throw UsageError("train: network not finalized");
  if (data.sample_shape() != net.input_shape())
    throw UsageError("train: dataset sample shape " + shape_str(data.sample_shape()) +
                     " does not match network input " + shape_str(net.input_shape()));

  std::mt19937_64 rng(cfg.rng_seed);
  DirectionWeights weights = cfg.weights;
  OptimizerState opt;
  TrainHistory history;

  const int n_params = static_cast<int>(net.params().size());
  std::vector<double> grad(static_cast<size_t>(n_params));

  for (int h = 0; h < cfg.max_iterations; ++h) {
    const auto t0 = std::chrono::steady_clock::now();

    SampleBatch samples = build_minibatch(data, cfg.mining, rng);
    EmbeddedBatch embedded = embed_batch(net, samples, cfg.threads);
    const SetBatch& batch = embedded.batch;
    if (!batch.embeddings.all_finite())
      throw NumericalError("train: non-finite embeddings at iteration " + std::to_string(h + 1));

    MiningOutput mined;
    mined.triplets = sample_triplets(batch, cfg.mining, rng);
    MarginalSelection sel = select_marginal_pairs(batch, cfg.mining);
    mined.pairs = std::move(sel.pairs);

    // direction weights move before the gradients are taken
    TripletTermOutcome trips = triplet_term(batch, mined.triplets, weights, cfg.margins, cfg);
    weights = trips.weights;

    const TermResult cls = class_identity_loss(batch, cfg.margins.m_c,
                                               cfg.loss_options.center_mode,
                                               cfg.loss_options.frozen_centers);
    const TermResult pairs =
        marginal_pairwise_loss(batch, mined.pairs, cfg.margins.c_p, cfg.margins.m_p);
    const RegResult reg = regularization(net.params());

    IterationRecord rec;
    rec.iter = h + 1;
    rec.l_c = cls.loss;
    rec.l_t = trips.loss;
    rec.l_p = pairs.loss;
    rec.reg = reg.value;
    rec.total = cfg.margins.alpha * cls.loss + (trips.loss + cfg.margins.lambda * pairs.loss) +
                cfg.margins.beta * reg.value;
    rec.mu = weights.mu();
    rec.nu = weights.nu();
    rec.active_t = trips.active;
    rec.active_p = pairs.active;

    if (!std::isfinite(rec.total))
      throw NumericalError("train: non-finite loss at iteration " + std::to_string(rec.iter) +
                           " (l_c=" + std::to_string(rec.l_c) + " l_t=" +
                           std::to_string(rec.l_t) + " l_p=" + std::to_string(rec.l_p) + ")");

    // d total / d embedding, then chain through the network sample by sample
    Tensor grad_emb(batch.embeddings.shape());
    for (long long k = 0; k < grad_emb.size(); ++k)
      grad_emb[k] = cfg.margins.alpha * cls.grad[k] + trips.grad[k] +
                    cfg.margins.lambda * pairs.grad[k];

    std::fill(grad.begin(), grad.end(), 0.0);
    const int n = batch.n(), m = batch.m(), d = batch.dim();
    const int total_samples = n * 2 * m;
    // identity-major accumulation order, independent of thread count: chunks
    // are computed in parallel but reduced sequentially
    std::vector<BackwardResult> chunk(static_cast<size_t>(std::max(1, cfg.threads)));
    for (int base = 0; base < total_samples; base += cfg.threads) {
      const int count = std::min(cfg.threads, total_samples - base);
      parallel_for(count, cfg.threads, [&](int off) {
        const int s = base + off;
        Tensor g({d});
        for (int k = 0; k < d; ++k) g[k] = grad_emb[static_cast<long long>(s) * d + k];
        chunk[static_cast<size_t>(off)] =
            net.backward(embedded.tapes[static_cast<size_t>(s)], g);
      });
      for (int off = 0; off < count; ++off) {
        const auto& gp = chunk[static_cast<size_t>(off)].grad_params;
        for (int k = 0; k < n_params; ++k) grad[static_cast<size_t>(k)] += gp[static_cast<size_t>(k)];
      }
    }
    for (int k = 0; k < n_params; ++k)
      grad[static_cast<size_t>(k)] += cfg.margins.beta * reg.grad[static_cast<size_t>(k)];

    const double tau = cfg.inverse_decay
                           ? cfg.learning_rate /
                                 (1.0 + static_cast<double>(h) /
                                            static_cast<double>(cfg.max_iterations))
                           : cfg.learning_rate;
    rec.step = tau;
    sgd_step(net.params(), grad, opt, tau, cfg.momentum);

    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.records.push_back(rec);

    if (cfg.snapshot_every > 0 && cfg.snapshot_dir && rec.iter % cfg.snapshot_every == 0)
      save_model(net, *cfg.snapshot_dir /
                           ("model_iter" + std::to_string(rec.iter) + ".s2sm"));
  }

  return {std::move(net), weights, std::move(history)};
}

}  // namespace s2s
