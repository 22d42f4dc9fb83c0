#include <doctest.h>

#include <cmath>

#include "htar/error.hpp"
#include "htar/selection.hpp"
#include "planted.hpp"

using namespace htar;

namespace {

ActionOrder order(std::initializer_list<Index> one_based) { return ActionOrder::from_one_based(one_based); }

/// Largest per-sample prediction gap relative to the sample's prediction norm.
double relative_prediction_gap(const HtarModel& a, const HtarModel& b, std::uint64_t seed) {
  const Shape& dims = a.response.dims;
  Rng rng(seed);
  const LaggedData data(dims, Matrix::Zero(shape_size(dims), 50), dims, gaussian_matrix(shape_size(dims), 49 + a.lag, rng), a.lag);
  const Matrix pa = predict(a, data);
  const Matrix pb = predict(b, data);
  double worst = 0.0;
  for (Index t = 0; t < pa.cols(); ++t) {
    worst = std::max(worst, (pa.col(t) - pb.col(t)).norm() / std::max(pa.col(t).norm(), 1e-300));
  }
  return worst;
}

LaggedData random_regression(const Shape& dims, Index samples, std::uint64_t seed) {
  Rng rng(seed);
  const Index size = shape_size(dims);
  return LaggedData(dims, gaussian_matrix(size, samples, rng), dims, gaussian_matrix(size, samples + 1, rng), 2);
}

HtarModel with_stacks(const Shape& dims, Index lag, std::vector<LoadingStack> response,
                      std::vector<LoadingStack> predictor, std::uint64_t seed) {
  LoadingSpec y(Side::response, dims, std::move(response));
  LoadingSpec x(Side::predictor, dims, std::move(predictor));
  Rng rng(seed);
  Matrix core = gaussian_matrix(y.feature_count(), x.feature_count() * lag, rng);
  return HtarModel(lag, std::move(y), std::move(x), std::move(core));
}

} // namespace

TEST_CASE("action set state") {
  ActionSetState state(planted::candidates(), {order({1, 2, 3})});
  CHECK(state.active_pairs() == 0);
  state.response_counts[2] = 1;
  state.predictor_counts[0] = 2;
  CHECK(state.active_pairs() == 1);
  const ModelShape shape = shape_for(state, {3, 4, 5}, {2, 2, 2}, 2);
  REQUIRE(shape.response.size() == 1);
  CHECK(shape.response[0].order == planted::candidates()[2]);
  CHECK(shape.response[0].ranks == std::vector<Index>{1, 1, 1});
  CHECK(shape.predictor[0].ranks == std::vector<Index>{2, 2, 2});
  state.predictor_counts[0] = -1;
  CHECK_THROWS_AS(state.validate(), InvalidArgument);
  CHECK_THROWS_AS(ActionSetState({}, {order({1, 2})}), InvalidArgument);
  CHECK(default_candidates(3).size() == 6);
  CHECK(default_candidates(4).size() == 24);
  CHECK_THROWS_AS(default_candidates(5), InvalidArgument);
}

TEST_CASE("selection config validation") {
  SelectionConfig config;
  CHECK_NOTHROW(config.validate());
  config.max_lag = 0;
  CHECK_THROWS_AS(config.validate(), InvalidArgument);
  config = {};
  config.phi = -1.0;
  CHECK_THROWS_AS(config.validate(), InvalidArgument);
}

TEST_CASE("weak learners") {
  const Shape dims{2, 3, 4};
  const auto data = random_regression(dims, 300, 1);
  SelectionConfig config;

  SUBCASE("parameter count is the sum of the dims plus the lag") {
    const auto weak = fit_weak_learner(data.responses(), data, order({2, 1, 3}), order({3, 1, 2}), config, 5);
    CHECK(param_count(weak.model) == (2 + 3 + 4) * 2 + 2);
    CHECK(weak.bic == doctest::Approx(bic(weak.loss, param_count(weak.model), data.samples())).epsilon(1e-12));
  }

  SUBCASE("zero residuals give a zero core") {
    const Matrix zero = Matrix::Zero(shape_size(dims), data.samples());
    const auto weak = fit_weak_learner(zero, data, order({1, 2, 3}), order({1, 2, 3}), config, 5);
    CHECK(weak.model.core.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(weak.bic < 0.0);
  }

  SUBCASE("residuals must match the data") {
    CHECK_THROWS_AS(fit_weak_learner(Matrix::Zero(3, data.samples()), data, order({1, 2, 3}), order({1, 2, 3}), config, 5),
                    InvalidArgument);
  }

  SUBCASE("rank-one learners of every pair are equivalent") {
    // Rank-one stacks are Kronecker products, so a warm start carried to another order loses nothing.
    const auto reference = fit_weak_learner(data.responses(), data, order({1, 2, 3}), order({1, 2, 3}), config, 5);
    for (const auto& beta : default_candidates(3)) {
      const auto y = reexpress(reference.model.response.stacks[0], beta);
      const auto x = reexpress(reference.model.predictor.stacks[0], order({3, 2, 1}));
      Matrix core = reference.model.core;
      for (Index l = 1; l <= 2; ++l) core.col(l - 1) = y.feature_map * reference.model.core.col(l - 1) * x.feature_map(0, 0);
      HtarModel warm(2, LoadingSpec(Side::response, dims, {y.stack}), LoadingSpec(Side::predictor, dims, {x.stack}), core);
      const auto moved = fit_weak_learner(data.responses(), data, beta, order({3, 2, 1}), config, 6, warm);
      CHECK(moved.bic <= reference.bic + 1e-6 * std::abs(reference.bic));
    }
  }
}

TEST_CASE("boosting on pure noise keeps the smallest model") {
  const auto data = random_regression({2, 3, 4}, 400, 11);
  SelectionConfig config;
  config.seed = 2;
  const ActionSetState candidates({order({1, 2, 3}), order({3, 2, 1})}, {order({1, 2, 3}), order({2, 3, 1})});
  const auto result = boost_select(data, candidates, config);
  CHECK(result.state.iteration == 0);
  CHECK(result.state.active_pairs() == 0);
  CHECK(result.bic_trajectory.size() == 1);
  CHECK(result.model.core.size() == 0);
}

TEST_CASE("boosting recovers a planted count-2 pair") {
  const auto planted = planted::regression(0, 2000);
  const auto candidates = planted::candidates();
  SelectionConfig config;
  const auto result = boost_select(planted.data, ActionSetState(candidates, candidates), config);
  CHECK(result.state.iteration == 2);
  CHECK(result.state.response_counts == std::vector<Index>{2, 0, 0});
  CHECK(result.state.predictor_counts == std::vector<Index>{0, 0, 2});
  for (std::size_t v = 1; v < result.bic_trajectory.size(); ++v) {
    CHECK(result.bic_trajectory[v] < result.bic_trajectory[v - 1]);
  }
  CHECK(result.bic == doctest::Approx(result.bic_trajectory.back()));
  CHECK(result.bic == doctest::Approx(bic(result.loss, param_count(result.model), planted.data.samples())).epsilon(1e-12));
}

TEST_CASE("boosting from a given state starts with its refit") {
  const auto planted = planted::regression(1, 600);
  const auto candidates = planted::candidates();
  ActionSetState start(candidates, candidates);
  start.response_counts[0] = 2;
  start.predictor_counts[2] = 2;
  SelectionConfig config;
  config.max_iterations = 1;
  const auto result = boost_select(planted.data, start, config);
  CHECK(result.model.response.stacks[0].order() == planted::response_order());
  CHECK(result.bic_trajectory.size() <= 2);
  CHECK(result.loss <= loss(planted.truth, planted.data));
}

TEST_CASE("two boosted units fit inside one count-2 stack") {
  const auto planted = planted::regression(2, 500);
  const auto& data = planted.data;
  SelectionConfig config;
  const auto beta = planted::response_order();
  const auto alpha = planted::predictor_order();
  const auto first = fit_weak_learner(data.responses(), data, beta, alpha, config, 1);
  const Matrix residual = data.responses() - predict(first.model, data);
  const auto second = fit_weak_learner(residual, data, beta, alpha, config, 2);
  const double boosted = (residual - predict(second.model, data)).squaredNorm() / static_cast<double>(data.samples());

  const LoadingStack y = block_embed(first.model.response.stacks[0], second.model.response.stacks[0]);
  const LoadingStack x = block_embed(first.model.predictor.stacks[0], second.model.predictor.stacks[0]);
  Matrix core = Matrix::Zero(2, 2);
  core(0, 0) = first.model.core(0, 0);
  core(1, 1) = second.model.core(0, 0);
  HtarModel joined(1, LoadingSpec(Side::response, data.response_dims(), {y}), LoadingSpec(Side::predictor, data.response_dims(), {x}), core);
  CHECK(loss(joined, data) == doctest::Approx(boosted).epsilon(1e-10));

  FitConfig fit;
  fit.warm = joined;
  fit.restarts = 0;
  const auto refit = fit_als(data, joined.shape(), fit);
  CHECK(refit.report.final_loss <= boosted + 1e-8);
}

TEST_CASE("rank reduction") {
  const Shape dims{3, 3, 4};
  Rng rng(21);

  SUBCASE("identical stacks of one order merge") {
    const auto s = random_stack(order({2, 1, 3}), dims, {2, 2, 2}, rng);
    const auto t = random_stack(order({1, 2, 3}), dims, {1, 1, 1}, rng);
    const auto model = with_stacks(dims, 2, {s, s}, {t}, 3);
    const auto reduced = rank_reduce(model);
    CHECK(reduced.merges == 1);
    CHECK(reduced.model.response.stack_count() == 1);
    CHECK(reduced.params_after < reduced.params_before);
    CHECK(reduced.params_after == param_count(reduced.model));
    CHECK(relative_prediction_gap(model, reduced.model, 22) <= 10 * kDefaultRankTol);
  }

  SUBCASE("a single stack per side is left alone") {
    const auto s = random_stack(order({3, 1, 2}), dims, {2, 3, 2}, rng);
    const auto t = random_stack(order({1, 3, 2}), dims, {2, 2, 1}, rng);
    const auto model = with_stacks(dims, 1, {s}, {t}, 4);
    const auto reduced = rank_reduce(model);
    CHECK(reduced.merges == 0);
    CHECK(reduced.params_after == reduced.params_before);
    CHECK((coefficient_matrix(reduced.model) - coefficient_matrix(model)).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("a stack contained in another order's stack is absorbed") {
    // Features of u lie in the column space of the wider stack w.
    const auto w = random_stack(order({1, 2, 3}), dims, {3, 6, 4}, rng);
    const Matrix basis = assemble_block(w) * random_orthonormal(4, 1, rng);
    const auto u = sequential_svd(basis, dims, order({3, 2, 1}), kDefaultRankTol).stack;
    const auto t = random_stack(order({2, 3, 1}), dims, {1, 2, 1}, rng);
    const auto model = with_stacks(dims, 1, {w, u}, {t}, 5);
    const auto reduced = rank_reduce(model);
    CHECK(reduced.model.response.stack_count() == 1);
    CHECK(reduced.params_after < reduced.params_before);
    CHECK(relative_prediction_gap(model, reduced.model, 22) <= 10 * kDefaultRankTol);
  }

  SUBCASE("random multi-stack models never grow") {
    const auto all = default_candidates(3);
    for (std::uint64_t seed = 0; seed < 15; ++seed) {
      std::vector<LoadingStack> ys;
      std::vector<LoadingStack> xs;
      for (int k = 0; k < 2 + static_cast<int>(seed % 2); ++k) {
        const Index c = 1 + static_cast<Index>((seed + k) % 2);
        ys.push_back(random_stack(all[(seed + 2 * k) % 6], dims, {c, c, c}, rng));
        xs.push_back(random_stack(all[(seed + 3 * k + 1) % 6], dims, {c, c, c}, rng));
      }
      const auto model = with_stacks(dims, 1 + static_cast<Index>(seed % 2), ys, xs, seed);
      const auto reduced = rank_reduce(model);
      CHECK(reduced.params_after <= reduced.params_before);
      CHECK(relative_prediction_gap(model, reduced.model, 22) <= 10 * kDefaultRankTol);
    }
  }
}

TEST_CASE("lag selection") {
  const auto candidates = planted::lag_candidates();
  const ActionSetState state(candidates, candidates);

  SUBCASE("a single lag is returned unconditionally") {
    const auto series = simulate(planted::lag_model(0, 1), 300, 100, 1);
    SelectionConfig config;
    config.max_lag = 1;
    const auto chosen = select_lag(series, state, config);
    CHECK(chosen.lag == 1);
    CHECK(chosen.bic.size() == 1);
  }

  SUBCASE("planted lag two") {
    const auto series = simulate(planted::lag_model(1, 2), 1500, 200, 2);
    SelectionConfig config;
    config.max_lag = 2;
    const auto chosen = select_lag(series, state, config);
    CHECK(chosen.lag == 2);
    REQUIRE(chosen.bic.size() == 2);
    CHECK(chosen.bic[1] < chosen.bic[0]);
    CHECK(chosen.best.model.lag == 2);
  }
}
