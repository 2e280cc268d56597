#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "s2s/network.hpp"

using namespace s2s;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(S2S_BINARY) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult res;
  std::array<char, 4096> buf;
  while (size_t n = fread(buf.data(), 1, buf.size(), pipe)) res.output.append(buf.data(), n);
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

fs::path work_root() {
  static const fs::path root = [] {
    const fs::path dir = fs::temp_directory_path() / "s2s_test_cli";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
  }();
  return root;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

const std::string kSmallTrainArgs =
    " --set train.iters=3 --set mining.ids_per_batch=3 --set mining.samples_per_view=2";

}  // namespace

TEST_CASE("synth, train, eval round trip") {
  const fs::path root = work_root();
  const fs::path data = root / "data";
  const CliResult synth = run_cli("synth --out " + q(data) +
                                  " --seed 3 --set synth.identities=4 --set synth.per_view=2");
  INFO(synth.output);
  CHECK(synth.exit_code == 0);
  CHECK(fs::exists(data / "dataset.manifest"));
  CHECK(synth.output.find("4 identities") != std::string::npos);

  const fs::path run = root / "run";
  const CliResult train = run_cli("train --data " + q(data / "dataset.manifest") + " --out " +
                                  q(run) + " --seed 5" + kSmallTrainArgs);
  INFO(train.output);
  CHECK(train.exit_code == 0);
  CHECK(fs::exists(run / "model.s2sm"));
  CHECK(fs::exists(run / "history.csv"));
  CHECK(train.output.find("trained 3 iterations") != std::string::npos);

  const std::string history = read_file(run / "history.csv");
  CHECK(history.rfind("iter,total,l_c,l_t,l_p,reg,mu,nu,active_t,active_p,step\n", 0) == 0);
  CHECK(std::count(history.begin(), history.end(), '\n') == 4);  // header + 3 rows

  const fs::path eval_dir = root / "eval";
  const CliResult eval = run_cli("eval --model " + q(run / "model.s2sm") + " --data " +
                                 q(data / "dataset.manifest") + " --out " + q(eval_dir) +
                                 " --seed 7");
  INFO(eval.output);
  CHECK(eval.exit_code == 0);
  CHECK(eval.output.find("single,top1,") != std::string::npos);
  CHECK(eval.output.find("single,map,") != std::string::npos);
  const std::string summary = read_file(eval_dir / "summary.csv");
  CHECK(summary.rfind("protocol,metric,value\n", 0) == 0);
  const std::string cmc_csv = read_file(eval_dir / "cmc.csv");
  CHECK(cmc_csv.rfind("rank,match_rate\n", 0) == 0);

  // the multi protocol flag flows into the summary rows
  const CliResult multi = run_cli("eval --model " + q(run / "model.s2sm") + " --data " +
                                  q(data / "dataset.manifest") + " --out " +
                                  q(root / "eval_multi") + " --seed 7 --protocol multi");
  CHECK(multi.exit_code == 0);
  CHECK(multi.output.find("multi,map,") != std::string::npos);
}

TEST_CASE("training twice with one seed gives identical history files") {
  const fs::path root = work_root();
  const fs::path data = root / "data";  // from the round-trip case
  REQUIRE(fs::exists(data / "dataset.manifest"));
  const std::string base = "train --data " + q(data / "dataset.manifest") + " --seed 11" +
                           kSmallTrainArgs + " --out ";
  CHECK(run_cli(base + q(root / "det_a")).exit_code == 0);
  CHECK(run_cli(base + q(root / "det_b")).exit_code == 0);
  CHECK(read_file(root / "det_a" / "history.csv") == read_file(root / "det_b" / "history.csv"));
  CHECK(read_file(root / "det_a" / "model.s2sm") == read_file(root / "det_b" / "model.s2sm"));
}

TEST_CASE("one iteration at zero learning rate returns the initial parameters") {
  const fs::path root = work_root();
  const fs::path data = root / "data";
  REQUIRE(fs::exists(data / "dataset.manifest"));
  const fs::path run = root / "frozen";
  const CliResult train = run_cli("train --data " + q(data / "dataset.manifest") + " --out " +
                                  q(run) + " --seed 5 --set train.iters=1 --set train.lr=0" +
                                  " --set mining.ids_per_batch=3 --set mining.samples_per_view=2");
  INFO(train.output);
  REQUIRE(train.exit_code == 0);

  const PartNetwork saved = load_model(run / "model.s2sm");
  const PartNetwork fresh = init_params(build_part_network(ScaleConfig::desk_scale()), 5);
  REQUIRE(saved.params().size() == fresh.params().size());
  for (size_t i = 0; i < fresh.params().size(); ++i)
    CHECK(saved.params()[i] == fresh.params()[i]);
}

TEST_CASE("a geometrically collapsed dataset evaluates to a perfect first rank") {
  // zero noise, zero cross-view shift: each probe embedding coincides exactly
  // with its gallery counterpart, so every first match lands at rank 1
  const fs::path root = work_root();
  const fs::path data = root / "data_exact";
  CHECK(run_cli("synth --out " + q(data) +
                " --seed 13 --set synth.identities=4 --set synth.per_view=2" +
                " --set synth.sigma=0 --set synth.shift=0")
            .exit_code == 0);
  const fs::path run = root / "run_exact";
  CHECK(run_cli("train --data " + q(data / "dataset.manifest") + " --out " + q(run) +
                " --seed 5 --set train.iters=1 --set train.lr=0" +
                " --set mining.ids_per_batch=3 --set mining.samples_per_view=2")
            .exit_code == 0);
  const fs::path eval_dir = root / "eval_exact";
  const CliResult eval = run_cli("eval --model " + q(run / "model.s2sm") + " --data " +
                                 q(data / "dataset.manifest") + " --out " + q(eval_dir) +
                                 " --seed 7");
  INFO(eval.output);
  CHECK(eval.exit_code == 0);
  const std::string cmc_csv = read_file(eval_dir / "cmc.csv");
  CHECK(cmc_csv.rfind("rank,match_rate\n1,1.0000\n", 0) == 0);
  CHECK(eval.output.find("single,top1,1.0000") != std::string::npos);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run_cli("train").exit_code == 2);
  const CliResult missing = run_cli("train");
  CHECK(missing.output.find("--data") != std::string::npos);

  CHECK(run_cli("").exit_code == 2);             // a subcommand is required
  CHECK(run_cli("bogus").exit_code == 2);        // unknown subcommand
  CHECK(run_cli("eval --model m").exit_code == 2);  // --data required by the parser

  const CliResult bad_key = run_cli("synth --out /tmp/s2s_cli_badkey --set no.such=1");
  CHECK(bad_key.exit_code == 2);
  CHECK(bad_key.output.find("usage error") != std::string::npos);
}

TEST_CASE("data errors exit with 3") {
  const fs::path root = work_root();
  const fs::path run = root / "run";
  REQUIRE(fs::exists(run / "model.s2sm"));

  // corrupt the magic of a copied model file
  const fs::path broken = root / "broken.s2sm";
  fs::copy_file(run / "model.s2sm", broken, fs::copy_options::overwrite_existing);
  {
    std::fstream f(broken, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  const CliResult eval = run_cli("eval --model " + q(broken) + " --data " +
                                 q(root / "data" / "dataset.manifest") + " --out " +
                                 q(root / "eval_broken"));
  CHECK(eval.exit_code == 3);
  CHECK(eval.output.find("data error") != std::string::npos);

  CHECK(run_cli("train --data /nonexistent.manifest --out " + q(root / "x")).exit_code == 3);
}

TEST_CASE("gradient checking from the command line") {
  const CliResult all = run_cli("gradcheck --seed 2024");
  INFO(all.output);
  CHECK(all.exit_code == 0);
  size_t passes = 0, pos = 0;
  while ((pos = all.output.find("PASS", pos)) != std::string::npos) {
    ++passes;
    pos += 4;
  }
  CHECK(passes == 7);
  for (const char* term :
       {"class", "triplet", "conventional", "pairwise", "reg", "total", "network"})
    CHECK(all.output.find(term) != std::string::npos);

  CHECK(run_cli("gradcheck --eps 0").exit_code == 2);
  CHECK(run_cli("gradcheck --term no_such").exit_code == 2);

  // a huge step straddles hinge boundaries, so the check must fail honestly
  const CliResult fail = run_cli("gradcheck --term triplet --eps 50 --instances 5");
  INFO(fail.output);
  CHECK(fail.exit_code == 1);
  CHECK(fail.output.find("gradient check failed for term 'triplet'") != std::string::npos);
  CHECK(fail.output.find("FAIL") != std::string::npos);
}

TEST_CASE("plotting a history column") {
  const fs::path root = work_root();
  const fs::path run = root / "run";
  REQUIRE(fs::exists(run / "history.csv"));

  const fs::path plot_dir = root / "plot";
  const CliResult plot = run_cli("plot --input " + q(run / "history.csv") + " --col total" +
                                 " --out " + q(plot_dir));
  INFO(plot.output);
  CHECK(plot.exit_code == 0);
  CHECK(plot.output.find("n=3") != std::string::npos);
  CHECK(plot.output.find("min=") != std::string::npos);
  const std::string csv = read_file(plot_dir / "plot.csv");
  CHECK(csv.rfind("iter,total\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

  CHECK(run_cli("plot --input " + q(run / "history.csv") + " --col nope --out " +
                q(plot_dir))
            .exit_code == 2);
  CHECK(run_cli("plot --input /nonexistent.csv --out " + q(plot_dir)).exit_code == 3);
}

TEST_CASE("help text names the subcommands and every config key") {
  const CliResult help = run_cli("--help");
  CHECK(help.exit_code == 0);
  for (const char* needle : {"train", "eval", "gradcheck", "synth", "plot",
                             "configuration keys", "train.lr", "net.preset", "dir.mode",
                             "synth.dims", "split.train_fraction"})
    CHECK(help.output.find(needle) != std::string::npos);
}
