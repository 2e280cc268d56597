#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "s2s/config.hpp"
#include "s2s/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace s2s;

namespace {

struct SharedArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_shared(CLI::App* cmd, SharedArgs& sh) {
  cmd->add_option("--config", sh.config_path, "key = value configuration file");
  cmd->add_option("--set", sh.overrides, "override a single key, e.g. --set train.lr=0.02")
      ->take_all();
  cmd->add_option("--seed", sh.seed, "RNG seed (overrides config)");
  cmd->add_option("--threads", sh.threads, "worker thread cap (overrides config)");
  cmd->add_option("--out", sh.out_dir, "output directory")->capture_default_str();
}

RunConfig make_config(const SharedArgs& sh) {
  RunConfig cfg;
  if (!sh.config_path.empty()) apply_config_file(cfg, sh.config_path);
  for (const std::string& s : sh.overrides) apply_config_entry(cfg, s);
  if (sh.seed) cfg.seed = *sh.seed;
  if (sh.threads) cfg.threads = *sh.threads;
  return cfg;
}

fs::path ensure_out(const SharedArgs& sh) {
  fs::path out(sh.out_dir);
  fs::create_directories(out);
  return out;
}

int cmd_train(const SharedArgs& sh, const std::string& data_path) {
  const RunConfig cfg = make_config(sh);
  const fs::path out = ensure_out(sh);

  const Dataset data = load_dataset(data_path);
  PartNetwork net = init_params(build_part_network(cfg.resolved_net(data.sample_shape())),
                                cfg.seed, cfg.conv_init, cfg.fc_init);

  TrainConfig tc = cfg.train_config();
  if (tc.snapshot_every > 0) tc.snapshot_dir = out;

  const TrainResult res = train(data, std::move(net), tc);

  const fs::path model_path = out / "model.s2sm";
  const fs::path history_path = out / "history.csv";
  save_model(res.net, model_path);
  res.history.write_csv(history_path);

  const IterationRecord& last = res.history.records.back();
  std::printf("trained %d iterations: total=%.6g mu=%.4f nu=%.4f\n", last.iter, last.total,
              last.mu, last.nu);
  std::printf("model:   %s\nhistory: %s\n", model_path.string().c_str(),
              history_path.string().c_str());
  return 0;
}

int cmd_eval(const SharedArgs& sh, const std::string& model_path, const std::string& data_path) {
  const RunConfig cfg = make_config(sh);
  const fs::path out = ensure_out(sh);

  const PartNetwork net = load_model(model_path);
  const Dataset data = load_dataset(data_path);
  // Fraction 0 sends every identity to the test side: probe = view A,
  // gallery = view B.
  const SplitResult split = split_protocol(data, 0.0, cfg.seed);

  std::mt19937_64 rng(cfg.seed);
  const CmcCurve curve =
      cmc(split.probe, split.gallery, net, cfg.eval_trials, rng, cfg.gallery_mode(), cfg.threads);
  const double map =
      map_score(split.probe, split.gallery, net, cfg.map_protocol(), cfg.multi_agg(), cfg.threads);

  const fs::path cmc_path = out / "cmc.csv";
  curve.write_csv(cmc_path);

  const fs::path summary_path = out / "summary.csv";
  std::ofstream summary(summary_path);
  if (!summary) throw DataError("eval: cannot write " + summary_path.string());
  char line[128];
  std::string text = "protocol,metric,value\n";
  std::snprintf(line, sizeof line, "%s,top1,%.4f\n", cfg.eval_protocol.c_str(),
                curve.match_rate.empty() ? 0.0 : curve.match_rate.front());
  text += line;
  std::snprintf(line, sizeof line, "%s,map,%.4f\n", cfg.eval_protocol.c_str(), map);
  text += line;
  summary << text;
  summary.close();

  std::fputs(text.c_str(), stdout);
  std::printf("cmc: %s\n", cmc_path.string().c_str());
  return 0;
}

int cmd_gradcheck(const SharedArgs& sh, const std::string& term, double eps, int instances) {
  const RunConfig cfg = make_config(sh);
  if (!(eps > 0.0)) throw UsageError("gradcheck: --eps must be positive");

  std::vector<std::string> terms;
  if (term.empty() || term == "all")
    terms = gradcheck_terms();
  else
    terms.push_back(term);

  bool all_pass = true;
  std::string first_fail;
  for (const std::string& t : terms) {
    const int count = instances > 0 ? instances : (t == "network" ? 3 : 50);
    const TermCheck chk = run_term_check(t, cfg.seed, eps, count);
    std::printf("%-13s instances=%-3d max_rel_err=%.3e threshold=%.0e %s\n", chk.term.c_str(),
                chk.instances, chk.max_rel_err, chk.threshold, chk.pass() ? "PASS" : "FAIL");
    if (!chk.pass() && all_pass) {
      all_pass = false;
      first_fail = t;
    }
  }
  if (!all_pass) {
    std::fprintf(stderr, "error: gradient check failed for term '%s'\n", first_fail.c_str());
    return 1;
  }
  return 0;
}

int cmd_synth(const SharedArgs& sh) {
  const RunConfig cfg = make_config(sh);
  const fs::path out = ensure_out(sh);

  SyntheticSpec spec = cfg.synth;
  spec.seed = cfg.seed;
  const Dataset data = generate_synthetic(spec);
  save_dataset(data, out);

  std::printf("wrote %d identities x 2 views x %d samples (%s) to %s\n", spec.n_identities,
              spec.per_view, shape_str(data.sample_shape()).c_str(),
              (out / "dataset.manifest").string().c_str());
  return 0;
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

int cmd_plot(const SharedArgs& sh, const std::string& input, const std::string& column) {
  const fs::path out = ensure_out(sh);

  std::ifstream is(input);
  if (!is) throw DataError("plot: cannot open " + input);
  std::string line;
  if (!std::getline(is, line)) throw DataError("plot: " + input + " is empty");

  const std::vector<std::string> header = split_csv_row(line);
  size_t col = header.size();
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == column) col = i;
  if (col == header.size())
    throw UsageError("plot: no column named '" + column + "' in " + input);

  std::vector<std::string> xs;
  std::vector<double> ys;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_row(line);
    if (cells.size() != header.size())
      throw DataError("plot: " + input + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(header.size()) + " cells, got " +
                      std::to_string(cells.size()));
    try {
      ys.push_back(std::stod(cells[col]));
    } catch (const std::exception&) {
      throw DataError("plot: " + input + ":" + std::to_string(lineno) +
                      ": cannot parse value '" + cells[col] + "'");
    }
    xs.push_back(cells[0]);
  }
  if (ys.empty()) throw DataError("plot: " + input + " has no data rows");

  const fs::path csv_path = out / "plot.csv";
  std::ofstream os(csv_path);
  if (!os) throw DataError("plot: cannot write " + csv_path.string());
  os << header[0] << "," << column << "\n";
  for (size_t i = 0; i < ys.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", ys[i]);
    os << xs[i] << "," << buf << "\n";
  }
  os.close();

  // Text sparkline: bucket means mapped onto 8 glyph levels.
  static const char* kLevels[] = {"▁", "▂", "▃", "▄",
                                  "▅", "▆", "▇", "█"};
  const size_t width = std::min<size_t>(ys.size(), 60);
  double lo = ys[0], hi = ys[0];
  for (double v : ys) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::string spark;
  for (size_t b = 0; b < width; ++b) {
    const size_t begin = b * ys.size() / width, end = (b + 1) * ys.size() / width;
    double mean = 0.0;
    for (size_t i = begin; i < std::max(end, begin + 1); ++i) mean += ys[i];
    mean /= static_cast<double>(std::max(end, begin + 1) - begin);
    const int level =
        hi > lo ? std::min(7, static_cast<int>((mean - lo) / (hi - lo) * 8.0)) : 0;
    spark += kLevels[level];
  }
  std::printf("%s\n", spark.c_str());
  std::printf("%s: min=%.6g max=%.6g first=%.6g last=%.6g n=%zu\n", column.c_str(), lo, hi,
              ys.front(), ys.back(), ys.size());
  std::printf("csv: %s\n", csv_path.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"set-to-set deep metric learning for cross-view re-identification"};
  app.require_subcommand(1);
  const std::string footer =
      "configuration keys (settable via --config file or --set key=value):\n" +
      config_key_help();
  app.footer(footer);

  SharedArgs sh_train, sh_eval, sh_grad, sh_synth, sh_plot;
  std::string train_data, eval_model, eval_data, grad_term, plot_input, plot_col = "total";
  double grad_eps = 1e-5;
  int grad_instances = 0;

  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  add_shared(train_cmd, sh_train);
  train_cmd->add_option("--data", train_data, "dataset manifest or csv");

  CLI::App* eval_cmd = app.add_subcommand("eval", "compute CMC and mAP for a trained model");
  add_shared(eval_cmd, sh_eval);
  eval_cmd->add_option("--model", eval_model, "model file from train")->required();
  eval_cmd->add_option("--data", eval_data, "dataset manifest or csv")->required();
  eval_cmd->add_option_function<std::string>(
      "--protocol",
      [&](const std::string& v) { sh_eval.overrides.push_back("eval.protocol=" + v); },
      "mAP protocol: single | multi");

  CLI::App* grad_cmd =
      app.add_subcommand("gradcheck", "verify analytic gradients against central differences");
  add_shared(grad_cmd, sh_grad);
  grad_cmd->add_option("--term", grad_term,
                       "class | triplet | conventional | pairwise | reg | total | network "
                       "(default: all)");
  grad_cmd->add_option("--eps", grad_eps, "finite-difference step")->capture_default_str();
  grad_cmd->add_option("--instances", grad_instances, "random instances per term (0 = auto)");

  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic two-view dataset");
  add_shared(synth_cmd, sh_synth);

  CLI::App* plot_cmd = app.add_subcommand("plot", "render a history column as CSV + sparkline");
  add_shared(plot_cmd, sh_plot);
  plot_cmd->add_option("--input", plot_input, "history CSV from train")->required();
  plot_cmd->add_option("--col", plot_col, "column to plot")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train_cmd->parsed()) {
      if (train_data.empty()) throw UsageError("train: --data is required");
      return cmd_train(sh_train, train_data);
    }
    if (eval_cmd->parsed()) return cmd_eval(sh_eval, eval_model, eval_data);
    if (grad_cmd->parsed()) return cmd_gradcheck(sh_grad, grad_term, grad_eps, grad_instances);
    if (synth_cmd->parsed()) return cmd_synth(sh_synth);
    if (plot_cmd->parsed()) return cmd_plot(sh_plot, plot_input, plot_col);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
