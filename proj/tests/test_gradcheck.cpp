#include <cmath>
#include <random>

#include "doctest.h"
#include "s2s/gradcheck.hpp"

using namespace s2s;

TEST_CASE("relative error uses an absolute floor near zero") {
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  // rounding noise on a truly-zero gradient must not register
  CHECK(relative_error(0.0, 1e-11) == doctest::Approx(1e-8));
  CHECK(relative_error(1e-11, 0.0) < 1e-6);
}

TEST_CASE("central differences are near-exact on a quadratic") {
  std::vector<double> x{0.3, -1.2, 2.5, 0.0};
  auto value = [&] {
    double s = 0.0;
    for (double v : x) s += v * v + 0.7 * v;
    return s;
  };
  std::vector<double> analytic(x.size());
  for (size_t i = 0; i < x.size(); ++i) analytic[i] = 2.0 * x[i] + 0.7;
  CHECK(central_difference_max_err(x, value, analytic, 1e-5) < 1e-8);
  // sweep must restore x
  CHECK(x[0] == 0.3);
  CHECK(x[3] == 0.0);

  // a deliberately wrong gradient is flagged
  analytic[2] += 0.5;
  CHECK(central_difference_max_err(x, value, analytic, 1e-5) > 0.05);
}

TEST_CASE("network-parameter sweep on a quadratic objective") {
  PartNetwork net;
  net.add_node(LayerSpec::fully_connected(3), {{-1, 0}}, "fc");
  net.finalize({4});
  net = init_params(net, 7);

  auto objective = [](const PartNetwork& n) {
    LossEval e;
    const auto p = n.params();
    e.grad_params.resize(p.size());
    for (size_t i = 0; i < p.size(); ++i) {
      e.value += p[i] * p[i];
      e.grad_params[i] = 2.0 * p[i];
    }
    return e;
  };
  CHECK(gradient_check(net, objective, 1e-5) < 1e-8);
}

TEST_CASE("every direct term verifies against central differences") {
  for (const std::string& term : gradcheck_terms()) {
    if (term == "network") continue;
    const TermCheck c = run_term_check(term, 2024, 1e-5, 10);
    INFO("term ", term, " max_rel_err ", c.max_rel_err);
    CHECK(c.threshold == 1e-6);
    CHECK(c.instances == 10);
    CHECK(c.pass());
  }
}

TEST_CASE("network-chained gradient verifies end to end") {
  const TermCheck c = run_term_check("network", 2024, 1e-5, 2);
  INFO("max_rel_err ", c.max_rel_err);
  CHECK(c.threshold == 1e-4);
  CHECK(c.pass());
}

TEST_CASE("term check rejects bad arguments") {
  CHECK_THROWS_AS(run_term_check("total", 1, 0.0, 5), UsageError);
  CHECK_THROWS_AS(run_term_check("total", 1, -1e-5, 5), UsageError);
  CHECK_THROWS_AS(run_term_check("no_such_term", 1, 1e-5, 5), UsageError);
  CHECK_THROWS_AS(run_term_check("total", 1, 1e-5, 0), UsageError);
}

TEST_CASE("term checks are deterministic in the seed") {
  const TermCheck a = run_term_check("triplet", 99, 1e-5, 5);
  const TermCheck b = run_term_check("triplet", 99, 1e-5, 5);
  CHECK(a.max_rel_err == b.max_rel_err);
  const TermCheck c = run_term_check("triplet", 100, 1e-5, 5);
  CHECK(a.max_rel_err != c.max_rel_err);  // different draws, different noise
}
