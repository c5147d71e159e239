#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "udeoc/error.hpp"
#include "udeoc/models.hpp"
#include "udeoc/objective.hpp"
#include "udeoc/ode.hpp"

using namespace udeoc;

namespace {

OdeProblem Exponential(double rate, double t1 = 1.0) {
  OdeProblem p;
  p.rhs = [rate](double, std::span<const double> y, std::span<double> d) { d[0] = rate * y[0]; };
  p.t1 = t1;
  p.y0 = {1.0};
  return p;
}

double MaxError(const Trajectory& tr, double rate) {
  double err = 0.0;
  for (std::size_t i = 0; i < tr.size(); ++i)
    err = std::max(err, std::abs(tr.state(i)[0] - std::exp(rate * tr.times()[i])));
  return err;
}

OdeProblem Immuno(double t1) {
  const ImmunoParams params;
  OdeProblem p;
  p.rhs = [params](double t, std::span<const double> y, std::span<double> d) {
    const StateVector s = immuno_rhs(t, to_state(y), 1.0, 1.0, params);
    std::copy(s.begin(), s.end(), d.begin());
  };
  p.t1 = t1;
  const StateVector y0 = baseline_initial_state();
  p.y0.assign(y0.begin(), y0.end());
  return p;
}

}  // namespace

TEST_CASE("rk4 keeps a constant solution exactly") {
  OdeProblem p;
  p.rhs = [](double, std::span<const double>, std::span<double> d) { d[0] = 0.0; d[1] = 0.0; };
  p.y0 = {3.5, -2.0};
  const Trajectory tr = solve_rk4(p, 17);
  REQUIRE(tr.size() == 18);
  for (std::size_t i = 0; i < tr.size(); ++i) {
    CHECK(tr.state(i)[0] == 3.5);
    CHECK(tr.state(i)[1] == -2.0);
  }
  CHECK(tr.t0() == 0.0);
  CHECK(tr.t1() == 1.0);
}

TEST_CASE("rk4 on y'=y reaches e") {
  const Trajectory tr = solve_rk4(Exponential(1.0), 100);
  CHECK(std::abs(tr.back()[0] - std::exp(1.0)) < 1e-8);
}

TEST_CASE("rk4 order on y'=-2y") {
  const double e1 = MaxError(solve_rk4(Exponential(-2.0), 20), -2.0);
  const double e2 = MaxError(solve_rk4(Exponential(-2.0), 40), -2.0);
  const double e3 = MaxError(solve_rk4(Exponential(-2.0), 80), -2.0);
  CHECK(std::log2(e1 / e2) == doctest::Approx(4.0).epsilon(0.05));
  CHECK(std::log2(e2 / e3) == doctest::Approx(4.0).epsilon(0.05));
  CHECK(e1 / e2 == doctest::Approx(16.0).epsilon(0.1));
}

TEST_CASE("rk4 reports divergence") {
  OdeProblem p;
  p.rhs = [](double, std::span<const double> y, std::span<double> d) { d[0] = y[0] * y[0]; };
  p.t1 = 2.0;
  p.y0 = {1.0};
  CHECK_THROWS_AS(solve_rk4(p, 200), DivergenceError);
  CHECK_THROWS_AS(solve_rk4(p, 0), InvalidArgument);
}

TEST_CASE("reversal returns to the start") {
  OdeProblem fwd;
  fwd.rhs = [](double, std::span<const double> y, std::span<double> d) {
    d[0] = y[1];
    d[1] = -y[0] + 0.1 * std::sin(y[0]);
  };
  fwd.y0 = {1.0, 0.0};
  fwd.t1 = 3.0;
  const Trajectory a = solve_rk4(fwd, 600);
  OdeProblem rev = fwd;
  rev.rhs = [f = fwd.rhs](double t, std::span<const double> y, std::span<double> d) {
    f(3.0 - t, y, d);
    for (double& x : d) x = -x;
  };
  rev.y0.assign(a.back().begin(), a.back().end());
  const Trajectory b = solve_rk4(rev, 600);
  CHECK(std::abs(b.back()[0] - 1.0) < 1e-6);
  CHECK(std::abs(b.back()[1]) < 1e-6);
}

TEST_CASE("dp45 basics") {
  OdeProblem flat;
  flat.rhs = [](double, std::span<const double>, std::span<double> d) { d[0] = 0.0; };
  flat.y0 = {2.0};
  const Trajectory tf = solve_dp45(flat, 1e-6, 1e-8);
  CHECK(tf.size() == 2);
  CHECK(tf.back()[0] == 2.0);

  const Trajectory te = solve_dp45(Exponential(1.0), 1e-8, 1e-10);
  CHECK(std::abs(te.back()[0] - std::exp(1.0)) < 1e-7);
  CHECK(te.t1() == 1.0);

  CHECK_THROWS_AS(solve_dp45(Exponential(1.0), 0.0, 1e-8), InvalidArgument);
}

TEST_CASE("dp45 on the immunotherapy model matches fine rk4") {
  const OdeProblem p = Immuno(2.0);
  const Trajectory ref = solve_rk4(p, 10000);
  const Trajectory tr = solve_dp45(p, 1e-9, 1e-11);
  for (std::size_t k = 0; k < kStateDim; ++k)
    CHECK(std::abs(tr.back()[k] - ref.back()[k]) < 1e-5 * std::max(1e-3, std::abs(ref.back()[k])));
}

TEST_CASE("dp45 raises a stiffness error when the step collapses") {
  OdeProblem p;
  p.rhs = [](double t, std::span<const double>, std::span<double> d) { d[0] = 1.0 / (0.5 - t); };
  p.y0 = {0.0};
  CHECK_THROWS_AS(solve_dp45(p, 1e-10, 1e-12), Error);
}

TEST_CASE("sample") {
  const Trajectory tr = solve_rk4(Exponential(1.0), 200);
  for (std::size_t i : {0, 7, 200}) CHECK(sample(tr, tr.times()[i])[0] == tr.state(i)[0]);
  const double h = 1.0 / 200;
  const double bound = h * h * std::exp(1.0) / 8 + 1e-10;
  for (double t : {0.0012, 0.3337, 0.77771, 0.999}) CHECK(std::abs(sample(tr, t)[0] - std::exp(t)) < bound);
  CHECK_THROWS_AS(sample(tr, -0.1), RangeError);
  CHECK_THROWS_AS(sample(tr, 1.0001), RangeError);

  OdeProblem flat;
  flat.rhs = [](double, std::span<const double>, std::span<double> d) { d[0] = 0.0; };
  flat.y0 = {4.0};
  const Trajectory tc = solve_rk4(flat, 5);
  CHECK(sample(tc, 0.123)[0] == 4.0);
}

TEST_CASE("trajectory grid checks") {
  Trajectory tr(2);
  const double y[] = {1.0, 2.0};
  tr.push_back(0.0, y);
  CHECK_THROWS_AS(tr.push_back(0.0, y), InvalidArgument);
  const double short_y[] = {1.0};
  CHECK_THROWS_AS(tr.push_back(1.0, short_y), InvalidArgument);
}

TEST_CASE("csv columns") {
  Trajectory tr(2, 1);
  const double y[] = {1.0, 0.1};
  const double u[] = {0.25};
  tr.push_back(0.0, y, u);
  tr.push_back(0.5, y, u);
  std::ostringstream os;
  write_csv(os, tr);
  std::istringstream is(os.str());
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  CHECK(header == "t,y1,y2,u1");
  CHECK(row == "0,1,0.10000000000000001,0.25");
  const std::string names[] = {"C", "A"};
  std::ostringstream named;
  write_csv(named, tr, names, std::vector<std::string>{"w"});
  CHECK(named.str().rfind("t,C,A,w\n", 0) == 0);
}
