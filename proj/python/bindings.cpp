#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <random>

#include "s2s/config.hpp"
#include "s2s/gradcheck.hpp"

namespace py = pybind11;
using namespace s2s;

namespace {

Tensor tensor_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int> shape(static_cast<size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) {
    if (a.shape(i) <= 0) throw UsageError("array extents must be positive");
    shape[static_cast<size_t>(i)] = static_cast<int>(a.shape(i));
  }
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> tensor_to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

// the single-integer array_t constructor yields a stride-0 view under
// pybind11 3.x, so 1-d results must go through an explicit shape vector
py::array_t<double> vector_to_numpy(std::span<const double> v) {
  py::array_t<double> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

SetBatch batch_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& emb,
                    const std::vector<int>& identity_ids) {
  if (emb.ndim() != 4 || emb.shape(1) != 2)
    throw UsageError("embeddings must have shape (identities, 2, samples, dim)");
  SetBatch b;
  b.embeddings = tensor_from_numpy(emb);
  b.identity_ids = identity_ids;
  b.validate();
  return b;
}

SampleRef ref_from(const py::tuple& t) {
  if (t.size() != 3) throw UsageError("sample reference must be (identity, view, index)");
  const int v = t[1].cast<int>();
  if (v != 0 && v != 1) throw UsageError("view must be 0 or 1");
  return {t[0].cast<int>(), static_cast<View>(v), t[2].cast<int>()};
}

py::tuple ref_to(const SampleRef& r) {
  return py::make_tuple(r.identity, static_cast<int>(r.view), r.index);
}

std::vector<TripletUnit> triplets_from(const py::list& items) {
  std::vector<TripletUnit> out;
  for (const auto& item : items) {
    const py::tuple t = item.cast<py::tuple>();
    if (t.size() != 3) throw UsageError("triplet must be (anchor, positive, negative)");
    out.push_back({ref_from(t[0].cast<py::tuple>()), ref_from(t[1].cast<py::tuple>()),
                   ref_from(t[2].cast<py::tuple>())});
  }
  return out;
}

std::vector<MarginalPair> pairs_from(const py::list& items) {
  std::vector<MarginalPair> out;
  for (const auto& item : items) {
    const py::tuple t = item.cast<py::tuple>();
    if (t.size() != 3) throw UsageError("pair must be (a, b, sign)");
    out.push_back({ref_from(t[0].cast<py::tuple>()), ref_from(t[1].cast<py::tuple>()),
                   t[2].cast<int>()});
  }
  return out;
}

py::dict term_to_dict(const TermResult& r) {
  py::dict d;
  d["loss"] = r.loss;
  d["grad"] = tensor_to_numpy(r.grad);
  d["active"] = r.active;
  d["units"] = r.units;
  return d;
}

}  // namespace

PYBIND11_MODULE(_s2s, m) {
  m.doc() = "set-to-set metric learning core";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::enum_<CenterMode>(m, "CenterMode")
      .value("PER_VIEW", CenterMode::PerView)
      .value("POOLED", CenterMode::Pooled);
  py::enum_<PhiUpdateMode>(m, "PhiUpdateMode")
      .value("GAP_DESCENT", PhiUpdateMode::GapDescent)
      .value("ANALYTIC_ASCENT", PhiUpdateMode::AnalyticAscent);
  py::enum_<GalleryMode>(m, "GalleryMode")
      .value("SINGLE_SHOT", GalleryMode::SingleShot)
      .value("ALL_SHOT", GalleryMode::AllShot);
  py::enum_<MapProtocol>(m, "MapProtocol")
      .value("SINGLE", MapProtocol::Single)
      .value("MULTI", MapProtocol::Multi);
  py::enum_<MultiQueryAgg>(m, "MultiQueryAgg")
      .value("MEAN_EMBEDDING", MultiQueryAgg::MeanEmbedding)
      .value("MAX_DISTANCE", MultiQueryAgg::MaxDistance);

  py::class_<ScaleConfig>(m, "ScaleConfig")
      .def(py::init<>())
      .def_readwrite("in_channels", &ScaleConfig::in_channels)
      .def_readwrite("in_height", &ScaleConfig::in_height)
      .def_readwrite("in_width", &ScaleConfig::in_width)
      .def_readwrite("global_filters", &ScaleConfig::global_filters)
      .def_readwrite("global_kernel", &ScaleConfig::global_kernel)
      .def_readwrite("global_stride", &ScaleConfig::global_stride)
      .def_readwrite("global_pool", &ScaleConfig::global_pool)
      .def_readwrite("global_pool_stride", &ScaleConfig::global_pool_stride)
      .def_readwrite("stripes", &ScaleConfig::stripes)
      .def_readwrite("local_filters", &ScaleConfig::local_filters)
      .def_readwrite("local_kernel", &ScaleConfig::local_kernel)
      .def_readwrite("local_pool", &ScaleConfig::local_pool)
      .def_readwrite("local_pool_stride", &ScaleConfig::local_pool_stride)
      .def_readwrite("fc_dim", &ScaleConfig::fc_dim)
      .def_static("full_scale", &ScaleConfig::full_scale)
      .def_static("desk_scale", &ScaleConfig::desk_scale);

  py::class_<MarginConfig>(m, "MarginConfig")
      .def(py::init<>())
      .def_readwrite("m_c", &MarginConfig::m_c)
      .def_readwrite("m_t", &MarginConfig::m_t)
      .def_readwrite("c_p", &MarginConfig::c_p)
      .def_readwrite("m_p", &MarginConfig::m_p)
      .def_readwrite("alpha", &MarginConfig::alpha)
      .def_readwrite("beta", &MarginConfig::beta)
      .def_readwrite("lambda_", &MarginConfig::lambda)
      .def("validate", &MarginConfig::validate);

  py::class_<DirectionWeights>(m, "DirectionWeights")
      .def(py::init<>())
      .def_readwrite("psi", &DirectionWeights::psi)
      .def_readwrite("phi", &DirectionWeights::phi)
      .def_readwrite("eta", &DirectionWeights::eta)
      .def_property_readonly("mu", &DirectionWeights::mu)
      .def_property_readonly("nu", &DirectionWeights::nu)
      .def_static("from_mu_nu", &DirectionWeights::from_mu_nu, py::arg("mu"), py::arg("nu"),
                  py::arg("eta") = 0.001);

  py::class_<MiningConfig>(m, "MiningConfig")
      .def(py::init<>())
      .def_readwrite("ids_per_batch", &MiningConfig::ids_per_batch)
      .def_readwrite("samples_per_view", &MiningConfig::samples_per_view)
      .def_readwrite("triplets_per_anchor", &MiningConfig::triplets_per_anchor)
      .def_readwrite("k_marginal", &MiningConfig::k_marginal)
      .def_readwrite("symmetrized", &MiningConfig::symmetrized);

  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_readwrite("n_identities", &SyntheticSpec::n_identities)
      .def_readwrite("per_view", &SyntheticSpec::per_view)
      .def_readwrite("dims", &SyntheticSpec::dims)
      .def_readwrite("separation", &SyntheticSpec::separation)
      .def_readwrite("sigma", &SyntheticSpec::sigma)
      .def_readwrite("cross_view_shift", &SyntheticSpec::cross_view_shift)
      .def_readwrite("seed", &SyntheticSpec::seed);

  py::class_<LossOptions>(m, "LossOptions")
      .def(py::init<>())
      .def_readwrite("center_mode", &LossOptions::center_mode)
      .def_readwrite("frozen_centers", &LossOptions::frozen_centers)
      .def_readwrite("phi_mode", &LossOptions::phi_mode);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("max_iterations", &TrainConfig::max_iterations)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("inverse_decay", &TrainConfig::inverse_decay)
      .def_readwrite("margins", &TrainConfig::margins)
      .def_readwrite("weights", &TrainConfig::weights)
      .def_readwrite("mining", &TrainConfig::mining)
      .def_readwrite("loss_options", &TrainConfig::loss_options)
      .def_readwrite("per_unit_updates", &TrainConfig::per_unit_updates)
      .def_readwrite("snapshot_every", &TrainConfig::snapshot_every)
      .def_readwrite("rng_seed", &TrainConfig::rng_seed)
      .def_readwrite("threads", &TrainConfig::threads);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<>())
      .def("__len__", [](const Dataset& d) { return d.records.size(); })
      .def("identities", &Dataset::identities)
      .def("sample_shape", &Dataset::sample_shape)
      .def("sample",
           [](const Dataset& d, size_t i) {
             if (i >= d.records.size()) throw py::index_error();
             const DatasetRecord& r = d.records[i];
             return py::make_tuple(r.identity, static_cast<int>(r.view),
                                   tensor_to_numpy(r.sample));
           })
      .def("validate", &Dataset::validate);

  py::class_<PartNetwork>(m, "PartNetwork")
      .def_property_readonly("output_dim", &PartNetwork::output_dim)
      .def("describe", &PartNetwork::describe)
      .def_property(
          "params",
          [](const PartNetwork& n) { return vector_to_numpy(n.params()); },
          [](PartNetwork& n, const py::array_t<double, py::array::c_style>& a) {
            if (static_cast<size_t>(a.size()) != n.params().size())
              throw UsageError("parameter vector length mismatch");
            std::copy(a.data(), a.data() + a.size(), n.params().begin());
          })
      .def("forward",
           [](const PartNetwork& n, const py::array_t<double>& img) {
             return tensor_to_numpy(n.forward(tensor_from_numpy(img)).first);
           })
      .def("save", [](const PartNetwork& n, const std::filesystem::path& p) { save_model(n, p); });

  m.def(
      "build_network",
      [](const ScaleConfig& cfg, std::uint64_t seed, double conv_std, double fc_std) {
        return init_params(build_part_network(cfg), seed, conv_std, fc_std);
      },
      py::arg("scale"), py::arg("seed") = 0, py::arg("conv_std") = 0.01,
      py::arg("fc_std") = 0.001);
  m.def("load_model", &load_model, py::arg("path"));

  m.def(
      "class_loss",
      [](const py::array_t<double>& emb, const std::vector<int>& ids, double m_c,
         CenterMode mode, bool frozen) {
        return term_to_dict(class_identity_loss(batch_from(emb, ids), m_c, mode, frozen));
      },
      py::arg("embeddings"), py::arg("identity_ids"), py::arg("m_c") = 0.1,
      py::arg("center_mode") = CenterMode::PerView, py::arg("frozen_centers") = false);

  m.def(
      "triplet_loss",
      [](const py::array_t<double>& emb, const std::vector<int>& ids, const py::list& triplets,
         double mu, double nu, double m_t) {
        return term_to_dict(symmetric_triplet_loss(batch_from(emb, ids),
                                                   triplets_from(triplets),
                                                   DirectionWeights::from_mu_nu(mu, nu, 0.0),
                                                   m_t));
      },
      py::arg("embeddings"), py::arg("identity_ids"), py::arg("triplets"), py::arg("mu") = 0.6,
      py::arg("nu") = 0.4, py::arg("m_t") = 1.0);

  m.def(
      "conventional_triplet_loss",
      [](const py::array_t<double>& emb, const std::vector<int>& ids, const py::list& triplets,
         double m_t) {
        return term_to_dict(
            conventional_triplet_loss(batch_from(emb, ids), triplets_from(triplets), m_t));
      },
      py::arg("embeddings"), py::arg("identity_ids"), py::arg("triplets"), py::arg("m_t") = 1.0);

  m.def(
      "pairwise_loss",
      [](const py::array_t<double>& emb, const std::vector<int>& ids, const py::list& pairs,
         double c_p, double m_p) {
        return term_to_dict(
            marginal_pairwise_loss(batch_from(emb, ids), pairs_from(pairs), c_p, m_p));
      },
      py::arg("embeddings"), py::arg("identity_ids"), py::arg("pairs"), py::arg("c_p") = 0.175,
      py::arg("m_p") = 0.325);

  m.def(
      "regularization",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& params) {
        const std::vector<double> p(params.data(), params.data() + params.size());
        const RegResult r = regularization(p);
        return py::make_tuple(r.value, vector_to_numpy(r.grad));
      },
      py::arg("params"));

  m.def(
      "total_loss",
      [](const py::array_t<double>& emb, const std::vector<int>& ids, const py::list& triplets,
         const py::list& pairs, const py::array_t<double, py::array::c_style>& params,
         const MarginConfig& margins, const DirectionWeights& weights,
         const LossOptions& options) {
        const std::vector<double> p(params.data(), params.data() + params.size());
        const LossReport rep = total_loss(batch_from(emb, ids), triplets_from(triplets),
                                          pairs_from(pairs), p, margins, weights, options);
        py::dict d;
        d["total"] = rep.total;
        d["l_c"] = rep.l_c;
        d["l_t"] = rep.l_t;
        d["l_p"] = rep.l_p;
        d["reg"] = rep.reg;
        d["grad_embeddings"] = tensor_to_numpy(rep.grad_embeddings);
        d["grad_phi"] = rep.grad_phi;
        d["active_t"] = rep.active_t;
        d["active_p"] = rep.active_p;
        return d;
      },
      py::arg("embeddings"), py::arg("identity_ids"), py::arg("triplets"), py::arg("pairs"),
      py::arg("params"), py::arg("margins") = MarginConfig{},
      py::arg("weights") = DirectionWeights{}, py::arg("options") = LossOptions{});

  m.def(
      "update_direction_weights",
      [](const DirectionWeights& w, const py::array_t<double>& emb, const std::vector<int>& ids,
         const py::list& triplets, double m_t, PhiUpdateMode mode) {
        return update_direction_weights(w, batch_from(emb, ids), triplets_from(triplets), m_t,
                                        mode);
      },
      py::arg("weights"), py::arg("embeddings"), py::arg("identity_ids"), py::arg("triplets"),
      py::arg("m_t") = 1.0, py::arg("mode") = PhiUpdateMode::GapDescent);

  m.def(
      "sample_triplets",
      [](const py::array_t<double>& emb, const std::vector<int>& ids, const MiningConfig& cfg,
         std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        py::list out;
        for (const TripletUnit& t : sample_triplets(batch_from(emb, ids), cfg, rng))
          out.append(py::make_tuple(ref_to(t.anchor), ref_to(t.positive), ref_to(t.negative)));
        return out;
      },
      py::arg("embeddings"), py::arg("identity_ids"), py::arg("config") = MiningConfig{},
      py::arg("seed") = 0);

  m.def(
      "select_marginal_pairs",
      [](const py::array_t<double>& emb, const std::vector<int>& ids, const MiningConfig& cfg) {
        py::list out;
        for (const MarginalPair& p : select_marginal_pairs(batch_from(emb, ids), cfg).pairs)
          out.append(py::make_tuple(ref_to(p.a), ref_to(p.b), p.sign));
        return out;
      },
      py::arg("embeddings"), py::arg("identity_ids"), py::arg("config") = MiningConfig{});

  m.def("generate_synthetic", &generate_synthetic, py::arg("spec"));
  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("save_dataset", &save_dataset, py::arg("data"), py::arg("dir"),
        py::arg("manifest_name") = "dataset.manifest");
  m.def(
      "split_protocol",
      [](const Dataset& d, double frac, std::uint64_t seed) {
        SplitResult s = split_protocol(d, frac, seed);
        return py::make_tuple(std::move(s.train), std::move(s.probe), std::move(s.gallery));
      },
      py::arg("data"), py::arg("train_fraction"), py::arg("seed") = 0);

  m.def(
      "train",
      [](const Dataset& data, const PartNetwork& net, const TrainConfig& cfg) {
        TrainResult res = train(data, net, cfg);
        py::list history;
        for (const IterationRecord& r : res.history.records) {
          py::dict row;
          row["iter"] = r.iter;
          row["total"] = r.total;
          row["l_c"] = r.l_c;
          row["l_t"] = r.l_t;
          row["l_p"] = r.l_p;
          row["reg"] = r.reg;
          row["mu"] = r.mu;
          row["nu"] = r.nu;
          row["active_t"] = r.active_t;
          row["active_p"] = r.active_p;
          row["step"] = r.step;
          history.append(std::move(row));
        }
        return py::make_tuple(std::move(res.net), res.weights, std::move(history));
      },
      py::arg("data"), py::arg("net"), py::arg("config"));

  m.def(
      "cmc",
      [](const Dataset& probe, const Dataset& gallery, const PartNetwork& net, int trials,
         std::uint64_t seed, GalleryMode mode, int threads) {
        std::mt19937_64 rng(seed);
        const CmcCurve c = cmc(probe, gallery, net, trials, rng, mode, threads);
        return vector_to_numpy(c.match_rate);
      },
      py::arg("probe"), py::arg("gallery"), py::arg("net"), py::arg("trials") = 10,
      py::arg("seed") = 0, py::arg("mode") = GalleryMode::SingleShot, py::arg("threads") = 1);

  m.def(
      "map_score",
      [](const Dataset& probe, const Dataset& gallery, const PartNetwork& net,
         MapProtocol protocol, MultiQueryAgg agg, int threads) {
        return map_score(probe, gallery, net, protocol, agg, threads);
      },
      py::arg("probe"), py::arg("gallery"), py::arg("net"),
      py::arg("protocol") = MapProtocol::Single,
      py::arg("agg") = MultiQueryAgg::MeanEmbedding, py::arg("threads") = 1);

  m.def(
      "run_gradient_check",
      [](const std::string& term, std::uint64_t seed, double eps, int instances) {
        const TermCheck c = run_term_check(term, seed, eps, instances);
        py::dict d;
        d["term"] = c.term;
        d["instances"] = c.instances;
        d["max_rel_err"] = c.max_rel_err;
        d["threshold"] = c.threshold;
        d["pass"] = c.pass();
        return d;
      },
      py::arg("term"), py::arg("seed") = 0, py::arg("eps") = 1e-5, py::arg("instances") = 10);
}
