#include "htar/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>

#include "htar/error.hpp"
#include "htar/parallel.hpp"

namespace htar {

void SelectionConfig::validate() const {
  if (!(phi >= 0.0)) throw InvalidArgument("phi must be non-negative");
  if (max_iterations < 1) throw InvalidArgument("max_iterations must be at least 1");
  if (max_lag < 1) throw InvalidArgument("max_lag must be at least 1");
  if (!(tie_tol >= 0.0)) throw InvalidArgument("tie_tol must be non-negative");
  if (!(rank_tol > 0.0)) throw InvalidArgument("rank_tol must be positive");
}

ActionSetState::ActionSetState(std::vector<ActionOrder> response, std::vector<ActionOrder> predictor)
    : response_candidates(std::move(response)),
      predictor_candidates(std::move(predictor)),
      response_counts(response_candidates.size(), 0),
      predictor_counts(predictor_candidates.size(), 0) {
  validate();
}

void ActionSetState::validate() const {
  if (response_candidates.empty() || predictor_candidates.empty()) {
    throw InvalidArgument("need at least one candidate order per side");
  }
  if (response_counts.size() != response_candidates.size() || predictor_counts.size() != predictor_candidates.size()) {
    throw InvalidArgument("one count per candidate order is required");
  }
  const auto negative = [](Index c) { return c < 0; };
  if (std::any_of(response_counts.begin(), response_counts.end(), negative) ||
      std::any_of(predictor_counts.begin(), predictor_counts.end(), negative)) {
    throw InvalidArgument("counts must be non-negative");
  }
}

Index ActionSetState::active_pairs() const {
  const auto active = [](const std::vector<Index>& counts) {
    return static_cast<Index>(std::count_if(counts.begin(), counts.end(), [](Index c) { return c > 0; }));
  };
  return active(response_counts) * active(predictor_counts);
}

ModelShape shape_for(const ActionSetState& state, const Shape& response_dims, const Shape& predictor_dims, Index lag) {
  ModelShape shape;
  shape.lag = lag;
  shape.response_dims = response_dims;
  shape.predictor_dims = predictor_dims;
  for (std::size_t k = 0; k < state.response_candidates.size(); ++k) {
    const Index c = state.response_counts[k];
    if (c > 0) shape.response.push_back({state.response_candidates[k], std::vector<Index>(response_dims.size(), c)});
  }
  for (std::size_t k = 0; k < state.predictor_candidates.size(); ++k) {
    const Index c = state.predictor_counts[k];
    if (c > 0) shape.predictor.push_back({state.predictor_candidates[k], std::vector<Index>(predictor_dims.size(), c)});
  }
  return shape;
}

std::vector<ActionOrder> default_candidates(Index modes) {
  if (modes > 4) throw InvalidArgument("candidate orders are required for tensors with more than four modes");
  return ActionOrder::all(modes);
}

WeakLearner fit_weak_learner(const Matrix& residuals, const LaggedData& data, const ActionOrder& response_order,
                             const ActionOrder& predictor_order, const SelectionConfig& config,
                             std::uint64_t seed, const std::optional<HtarModel>& warm) {
  if (residuals.rows() != shape_size(data.response_dims()) || residuals.cols() != data.samples()) {
    throw InvalidArgument("residuals are not aligned with the data");
  }
  const LaggedData target = data.with_responses(residuals);
  ModelShape shape;
  shape.lag = data.lag();
  shape.response_dims = data.response_dims();
  shape.predictor_dims = data.predictor_dims();
  shape.response.push_back({response_order, std::vector<Index>(shape.response_dims.size(), 1)});
  shape.predictor.push_back({predictor_order, std::vector<Index>(shape.predictor_dims.size(), 1)});
  FitConfig fit = config.weak;
  fit.seed = seed;
  fit.phi = config.phi;
  if (warm) {
    fit.warm = warm;
    fit.restarts = 0;
  }
  auto result = fit_als(target, shape, fit);
  return {std::move(result.model), result.report.final_loss, result.report.bic};
}

namespace {

struct Candidate {
  HtarModel model;
  double loss = 0.0;
  double bic = std::numeric_limits<double>::infinity();
};

using CountKey = std::pair<std::vector<Index>, std::vector<Index>>;

/// `previous` grown to `shape`. The stacks sharing an order with the weak learner `unit` take its
/// features first; any remaining new directions are random. The core is refit.
HtarModel grow_model(const HtarModel& previous, const ModelShape& shape, const LaggedData& data,
                     const HtarModel* unit, Rng& rng, double ridge) {
  const auto grow_side = [&](const LoadingSpec& old, const LoadingSpec* seed, const std::vector<StackShape>& wanted,
                             const Shape& dims, Side side) {
    std::vector<LoadingStack> stacks;
    for (const auto& w : wanted) {
      const auto it = std::find_if(old.stacks.begin(), old.stacks.end(),
                                   [&](const LoadingStack& s) { return s.order() == w.order; });
      const LoadingStack* extra = seed && seed->stacks.front().order() == w.order ? &seed->stacks.front() : nullptr;
      if (it == old.stacks.end() && !extra) {
        stacks.push_back(random_stack(w.order, dims, w.ranks, rng));
      } else if (!extra) {
        stacks.push_back(pad_stack(*it, w.ranks, rng));
      } else {
        const LoadingStack base = it == old.stacks.end() ? *extra : block_embed(*it, *extra);
        stacks.push_back(pad_stack(compress_stack(base).stack, w.ranks, rng));
      }
    }
    return LoadingSpec(side, dims, std::move(stacks));
  };
  LoadingSpec response = grow_side(previous.response, unit ? &unit->response : nullptr, shape.response,
                                   shape.response_dims, Side::response);
  LoadingSpec predictor = grow_side(previous.predictor, unit ? &unit->predictor : nullptr, shape.predictor,
                                    shape.predictor_dims, Side::predictor);
  Matrix core = Matrix::Zero(response.feature_count(), predictor.feature_count() * shape.lag);
  HtarModel grown(shape.lag, std::move(response), std::move(predictor), std::move(core), previous.noise);
  update_core(grown, data, ridge);
  return grown;
}

class Booster {
public:
  Booster(const LaggedData& data, const SelectionConfig& config) : data_(data), config_(config) {}

  /// Full refit for `state`, warm-started from `from` grown by `unit`; cached by counts.
  const Candidate& refit(const ActionSetState& state, const HtarModel& from, const HtarModel* unit = nullptr) {
    const CountKey key{state.response_counts, state.predictor_counts};
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const ModelShape shape = shape_for(state, data_.response_dims(), data_.predictor_dims(), data_.lag());
    Rng rng(derived_seed(config_.seed, 7919 + cache_.size()));
    FitConfig fit = config_.full;
    fit.phi = config_.phi;
    fit.seed = derived_seed(config_.seed, 104729 + cache_.size());
    Candidate out;
    try {
      fit.warm = grow_model(from, shape, data_, unit, rng, fit.ridge_eps);
      auto result = fit_als(data_, shape, fit);
      out = {std::move(result.model), result.report.final_loss, result.report.bic};
    } catch (const NumericalError&) {
      fit.warm.reset();
      fit.restarts = std::max(fit.restarts, 1);
      auto result = fit_als(data_, shape, fit);
      out = {std::move(result.model), result.report.final_loss, result.report.bic};
    }
    return cache_.emplace(key, std::move(out)).first->second;
  }

  /// Index pairs (response, predictor) into the candidate lists.
  std::vector<std::pair<std::size_t, std::size_t>> pairs(const ActionSetState& state) const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t b = 0; b < state.response_candidates.size(); ++b)
      for (std::size_t a = 0; a < state.predictor_candidates.size(); ++a) out.emplace_back(b, a);
    return out;
  }

  bool ties(double x, double best) const {
    return x - best <= config_.tie_tol * static_cast<double>(data_.samples());
  }

  /// Lowest-scoring pair among `subset` (first wins exact ties) and the members within tolerance of it.
  std::vector<std::size_t> within_tolerance(const std::vector<std::size_t>& subset, const std::vector<double>& score) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto i : subset) best = std::min(best, score[i]);
    std::vector<std::size_t> out;
    for (const auto i : subset)
      if (ties(score[i], best)) out.push_back(i);
    return out;
  }

private:
  const LaggedData& data_;
  const SelectionConfig& config_;
  std::map<CountKey, Candidate> cache_;
};

ActionSetState incremented(ActionSetState state, std::size_t b, std::size_t a, Index by) {
  state.response_counts[b] += by;
  state.predictor_counts[a] += by;
  return state;
}

/// A weak learner moved to other orders. Rank-1 stacks are Kronecker products, so this is exact.
HtarModel reoriented(const HtarModel& weak, const ActionOrder& response_order, const ActionOrder& predictor_order,
                     double tol) {
  const auto move = [tol](const LoadingSpec& spec, const ActionOrder& order, Matrix& map) {
    Reduction re = reexpress(spec.stacks.front(), order, tol);
    map = std::move(re.feature_map);
    return LoadingSpec(spec.side, spec.dims, {std::move(re.stack)});
  };
  Matrix ymap;
  Matrix xmap;
  LoadingSpec response = move(weak.response, response_order, ymap);
  LoadingSpec predictor = move(weak.predictor, predictor_order, xmap);
  const Index r_old = weak.predictor_features();
  const Index r_new = predictor.feature_count();
  Matrix core(response.feature_count(), r_new * weak.lag);
  for (Index l = 0; l < weak.lag; ++l) {
    core.middleCols(l * r_new, r_new) = ymap * weak.core.middleCols(l * r_old, r_old) * xmap.transpose();
  }
  return HtarModel(weak.lag, std::move(response), std::move(predictor), std::move(core), weak.noise);
}

std::size_t argmin(const std::vector<std::size_t>& subset, const std::vector<double>& score) {
  std::size_t best = subset.front();
  for (const auto i : subset)
    if (score[i] < score[best]) best = i;
  return best;
}

} // namespace

SelectionResult boost_select(const LaggedData& data, ActionSetState candidates, const SelectionConfig& config) {
  config.validate();
  candidates.validate();
  for (const auto& o : candidates.response_candidates) {
    if (o.size() != static_cast<Index>(data.response_dims().size())) throw InvalidArgument("response candidate " + o.label() + " has the wrong number of modes");
  }
  for (const auto& o : candidates.predictor_candidates) {
    if (o.size() != static_cast<Index>(data.predictor_dims().size())) throw InvalidArgument("predictor candidate " + o.label() + " has the wrong number of modes");
  }

  const Index n = data.samples();
  Booster booster(data, config);
  SelectionResult result;
  result.state = candidates;
  if (result.state.active_pairs() == 0) {
    std::fill(result.state.response_counts.begin(), result.state.response_counts.end(), 0);
    std::fill(result.state.predictor_counts.begin(), result.state.predictor_counts.end(), 0);
    result.model = empty_model(data.response_dims(), data.predictor_dims(), data.lag());
    result.loss = loss(result.model, data);
    result.bic = bic(std::max(result.loss, kLossFloor), 0, n, config.phi);
  } else {
    const Candidate& start = booster.refit(result.state, empty_model(data.response_dims(), data.predictor_dims(), data.lag()));
    result.model = start.model;
    result.loss = start.loss;
    result.bic = bic(std::max(result.loss, kLossFloor), param_count(result.model), n, config.phi);
  }
  result.bic_trajectory.push_back(result.bic);

  const auto pairs = booster.pairs(result.state);
  std::vector<std::size_t> all(pairs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  for (int v = 0; v < config.max_iterations; ++v) {
    const Matrix residuals = data.responses() - predict(result.model, data);
    // Every pair starts from the same reference learner, so order-equivalent pairs tie.
    const auto [b0, a0] = pairs.front();
    const WeakLearner reference =
        fit_weak_learner(residuals, data, result.state.response_candidates[b0], result.state.predictor_candidates[a0],
                         config, derived_seed(config.seed, static_cast<std::uint64_t>(1000 * (v + 1))));
    std::vector<double> weak(pairs.size());
    std::vector<HtarModel> units(pairs.size());
    parallel_for(static_cast<Index>(pairs.size()), [&](Index i) {
      const auto [b, a] = pairs[static_cast<std::size_t>(i)];
      const auto learner = fit_weak_learner(
          residuals, data, result.state.response_candidates[b], result.state.predictor_candidates[a], config,
          derived_seed(config.seed, static_cast<std::uint64_t>(1000 * (v + 1) + i)),
          reoriented(reference.model, result.state.response_candidates[b], result.state.predictor_candidates[a],
                     config.rank_tol));
      weak[static_cast<std::size_t>(i)] = learner.bic;
      units[static_cast<std::size_t>(i)] = learner.model;
    });

    auto tied = booster.within_tolerance(all, weak);
    std::size_t chosen = argmin(tied, weak);
    for (Index depth = 1; depth <= 2 && tied.size() > 1; ++depth) {
      std::vector<double> ahead(pairs.size(), std::numeric_limits<double>::infinity());
      for (const auto i : tied) {
        const auto [b, a] = pairs[i];
        ahead[i] = booster.refit(incremented(result.state, b, a, depth), result.model, &units[i]).bic;
      }
      chosen = argmin(tied, ahead);
      tied = booster.within_tolerance(tied, ahead);
    }

    const auto [b, a] = pairs[chosen];
    const ActionSetState next = incremented(result.state, b, a, 1);
    const Candidate& refit = booster.refit(next, result.model, &units[chosen]);
    if (!(refit.bic < result.bic)) break;
    result.state = next;
    result.state.iteration = v + 1;
    result.model = refit.model;
    result.loss = refit.loss;
    result.bic = refit.bic;
    result.bic_trajectory.push_back(result.bic);
  }
  return result;
}

namespace {

struct SideReduction {
  LoadingSpec spec;
  Matrix map;  // original loading ~= reduced loading * map
  int merges = 0;
};

SideReduction reduce_side(const LoadingSpec& spec, double tol) {
  SideReduction out{spec, Matrix::Identity(spec.feature_count(), spec.feature_count()), 0};
  while (true) {
    auto& stacks = out.spec.stacks;
    Index best_saving = 0;
    std::size_t best_k = 0;
    std::size_t best_j = 0;
    Reduction best_re;
    Reduction best_merged;
    for (std::size_t k = 0; k < stacks.size(); ++k) {
      for (std::size_t j = 0; j < stacks.size(); ++j) {
        if (j == k) continue;
        Reduction re = reexpress(stacks[k], stacks[j].order(), tol);
        Reduction merged = merge_same_order(stacks[j], re.stack, tol);
        const Index saving = param_count_block(stacks[j]) + param_count_block(stacks[k]) - param_count_block(merged.stack);
        if (saving > best_saving) {
          best_saving = saving;
          best_k = k;
          best_j = j;
          best_re = std::move(re);
          best_merged = std::move(merged);
        }
      }
    }
    if (best_saving <= 0) return out;

    // Step map (new features x current features).
    const Index current = out.spec.feature_count();
    const Index rj = stacks[best_j].feature_count();
    std::vector<LoadingStack> next;
    std::vector<Index> new_offsets;
    Index offset = 0;
    for (std::size_t i = 0; i < stacks.size(); ++i) {
      if (i == best_k) {
        new_offsets.push_back(-1);
        continue;
      }
      new_offsets.push_back(offset);
      next.push_back(i == best_j ? best_merged.stack : stacks[i]);
      offset += next.back().feature_count();
    }
    Matrix step = Matrix::Zero(offset, current);
    for (std::size_t i = 0; i < stacks.size(); ++i) {
      const Index from = out.spec.feature_offset(static_cast<Index>(i));
      const Index width = stacks[i].feature_count();
      if (i == best_j) {
        step.block(new_offsets[i], from, best_merged.stack.feature_count(), width) = best_merged.feature_map.leftCols(rj);
      } else if (i == best_k) {
        const Index to = new_offsets[best_j];
        step.block(to, from, best_merged.stack.feature_count(), width) =
            best_merged.feature_map.rightCols(best_re.stack.feature_count()) * best_re.feature_map;
      } else {
        step.block(new_offsets[i], from, width, width).setIdentity();
      }
    }
    out.map = step * out.map;
    out.spec = LoadingSpec(out.spec.side, out.spec.dims, std::move(next));
    ++out.merges;
  }
}

} // namespace

RankReduction rank_reduce(const HtarModel& model, double tol) {
  model.validate();
  RankReduction out;
  out.params_before = param_count(model);
  SideReduction y = reduce_side(model.response, tol);
  SideReduction x = reduce_side(model.predictor, tol);
  const Index r_old = model.predictor_features();
  const Index r_new = x.spec.feature_count();
  Matrix core(y.spec.feature_count(), r_new * model.lag);
  for (Index l = 1; l <= model.lag; ++l) {
    core.middleCols((l - 1) * r_new, r_new) = y.map * model.core.middleCols((l - 1) * r_old, r_old) * x.map.transpose();
  }
  out.model = HtarModel(model.lag, std::move(y.spec), std::move(x.spec), std::move(core), model.noise);
  out.params_after = param_count(out.model);
  out.merges = y.merges + x.merges;
  return out;
}

LagSelection select_lag(const TensorSeries& series, const ActionSetState& candidates, const SelectionConfig& config) {
  config.validate();
  LagSelection out;
  double best = std::numeric_limits<double>::infinity();
  for (Index lag = 1; lag <= config.max_lag; ++lag) {
    const LaggedData data = LaggedData::autoregressive(series, lag, config.max_lag - lag);
    SelectionResult result = boost_select(data, candidates, config);
    out.bic.push_back(result.bic);
    if (result.bic < best) {
      best = result.bic;
      out.lag = lag;
      out.best = std::move(result);
    }
  }
  return out;
}

} // namespace htar
