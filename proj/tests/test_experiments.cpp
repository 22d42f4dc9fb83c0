#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "htar/error.hpp"
#include "htar/experiments.hpp"
#include "oracles.hpp"

using namespace htar;

namespace {

std::string rows_csv(const StudyTable& table) {
  std::ostringstream out;
  write_rows_csv(table, out);
  return out.str();
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

StudySpec small_scaling() {
  StudySpec spec;
  spec.kind = StudyKind::scaling_c;
  spec.grid = {300, 450, 600};
  spec.replications = 2;
  spec.noises = {NoiseKind::iid_gaussian};
  spec.seed = 17;
  return spec;
}

} // namespace

TEST_CASE("study names") {
  for (const StudyKind kind : {StudyKind::scaling_a, StudyKind::scaling_b, StudyKind::scaling_c, StudyKind::misspec}) {
    CHECK(parse_study(study_name(kind)) == kind);
  }
  CHECK_THROWS_AS(parse_study("d"), InvalidArgument);
}

TEST_CASE("study spec validation") {
  StudySpec spec;
  CHECK_NOTHROW(spec.validate());
  CHECK(spec.axis() == std::vector<Index>{833, 1000, 1250, 1670, 2500});
  spec.replications = 0;
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
  spec = StudySpec{};
  spec.noises.clear();
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
  spec = StudySpec{};
  spec.kind = StudyKind::scaling_b;
  spec.grid = {1, 2};
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
  spec = StudySpec{};
  spec.kind = StudyKind::misspec;
  spec.grid = {7};
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
}

TEST_CASE("scaling settings") {
  const ModelShape a = scaling_shape(StudyKind::scaling_a, 12);
  CHECK(a.lag == 2);
  CHECK(a.response_dims == Shape{12, 12, 12});
  CHECK(a.predictor.size() == 2);
  CHECK(a.predictor[0].ranks == std::vector<Index>{3, 3, 3});
  CHECK(a.response[0].ranks == std::vector<Index>{2, 2, 2});
  const ModelShape b = scaling_shape(StudyKind::scaling_b, 5);
  CHECK(b.response_dims == Shape{10, 10, 10});
  CHECK(b.predictor[1].ranks == std::vector<Index>{5, 5, 5});
  CHECK(b.response[1].ranks == std::vector<Index>{4, 4, 4});
  CHECK(scaling_samples(StudyKind::scaling_c, 1250) == 1250);
  CHECK(scaling_samples(StudyKind::scaling_a, 12) == 2500);
  CHECK_THROWS_AS(scaling_shape(StudyKind::misspec, 1), InvalidArgument);
}

TEST_CASE("coefficient distance matches the materialized coefficients") {
  ModelShape shape;
  shape.lag = 2;
  shape.response_dims = shape.predictor_dims = {2, 3, 2};
  shape.response = {{ActionOrder::from_one_based({2, 1, 3}), {1, 2, 2}}};
  shape.predictor = {{ActionOrder::from_one_based({1, 2, 3}), {2, 2, 2}},
                     {ActionOrder::from_one_based({3, 1, 2}), {1, 1, 1}}};
  ModelShape other = shape;
  other.response = {{ActionOrder::from_one_based({1, 2, 3}), {2, 2, 2}}};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const HtarModel a = random_model(shape, seed);
    const HtarModel b = random_model(other, 100 + seed);
    const double explicit_distance = (coefficient_matrix(a) - coefficient_matrix(b)).norm();
    CHECK(coefficient_distance(a, b) == doctest::Approx(explicit_distance).epsilon(1e-10));
    CHECK(coefficient_distance(a, a) <= 1e-10 * coefficient_matrix(a).norm());
  }
  ModelShape lag_one = shape;
  lag_one.lag = 1;
  CHECK_THROWS_AS(coefficient_distance(random_model(shape, 1), random_model(lag_one, 1)), InvalidArgument);
}

TEST_CASE("rate slopes") {
  const std::vector<double> axis{2, 3, 5, 8};
  std::vector<double> value;
  for (const double a : axis) value.push_back(4.0 * a);
  const RateFit exact = fit_rate_slope(axis, value);
  CHECK(std::abs(exact.slope - 1.0) <= 1e-12);
  CHECK(exact.intercept == doctest::Approx(std::log(4.0)));
  CHECK(exact.r_squared == doctest::Approx(1.0));

  value.clear();
  for (const double a : axis) value.push_back(std::pow(a, -1.5));
  CHECK(std::abs(fit_rate_slope(axis, value).slope + 1.5) <= 1e-12);

  CHECK_THROWS_AS(fit_rate_slope({2, 2, 3}, {1, 2, 3}), InvalidArgument);
  CHECK_THROWS_AS(fit_rate_slope({1, 2}, {1, 2}), InvalidArgument);
  CHECK_THROWS_AS(fit_rate_slope({1, 2, 3}, {1, 0, 3}), InvalidArgument);
  CHECK_THROWS_AS(fit_rate_slope({1, 2, 3}, {1, 2}), InvalidArgument);
}

TEST_CASE("summaries") {
  StudyTable table;
  table.value_name = "error_frob";
  table.rows = {{"c", "iid_gaussian", 10, 0, 1.0}, {"c", "iid_gaussian", 10, 1, 3.0}, {"c", "iid_gaussian", 20, 0, 2.0}};
  const auto summary = table.summary();
  REQUIRE(summary.size() == 2);
  CHECK(summary[0].axis_value == 10);
  CHECK(summary[0].mean == doctest::Approx(2.0));
  CHECK(summary[0].stderr_ == doctest::Approx(1.0));
  CHECK(summary[1].mean == doctest::Approx(2.0));
  CHECK(table.squared_summary()[0].mean == doctest::Approx(5.0));

  std::ostringstream out;
  write_summary_csv(table, out);
  CHECK(first_line(out.str()) == "setting,noise,axis_value,mean,stderr");
  CHECK(first_line(rows_csv(table)) == "setting,noise,axis_value,replication,error_frob");
}

TEST_CASE("scaling study is deterministic and shrinks with the sample size") {
  const StudySpec spec = small_scaling();
  const StudyTable table = run_scaling_study(spec);
  REQUIRE(table.rows.size() == 6);
  std::set<Index> axis;
  for (const auto& row : table.rows) {
    CHECK(row.value > 0.0);
    CHECK(std::isfinite(row.value));
    axis.insert(row.axis_value);
  }
  CHECK(axis == std::set<Index>{300, 450, 600});
  const auto summary = table.summary();
  CHECK(summary.front().mean > summary.back().mean);

  CHECK(rows_csv(run_scaling_study(spec)) == rows_csv(table));
  StudySpec reseeded = spec;
  reseeded.seed = 18;
  CHECK(rows_csv(run_scaling_study(reseeded)) != rows_csv(table));
}

TEST_CASE("misspecification study") {
  StudySpec spec;
  spec.kind = StudyKind::misspec;
  spec.replications = 1;
  spec.noises = {NoiseKind::iid_gaussian};
  spec.grid = {2, 6};
  spec.samples = 300;
  spec.test_samples = 200;
  spec.seed = 3;
  const StudyTable table = run_misspec_study(spec);
  CHECK(table.value_name == "mse");
  REQUIRE(table.rows.size() == 12);
  std::set<std::string> settings;
  for (const auto& row : table.rows) {
    CHECK(row.value > 0.0);
    settings.insert(row.setting);
  }
  CHECK(settings.size() == 6);
  CHECK(settings.count("misspec/1-2-3"));
  CHECK(rows_csv(run_misspec_study(spec)) == rows_csv(table));
}
