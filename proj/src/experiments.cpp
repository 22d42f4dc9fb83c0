#include "htar/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <tuple>

#include <Eigen/Cholesky>

#include "htar/als.hpp"
#include "htar/error.hpp"
#include "htar/parallel.hpp"

namespace htar {

namespace {

constexpr Index kBurnIn = 200;
const Index kMisspecDim = 6;

std::uint64_t simulation_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

} // namespace

const char* study_name(StudyKind kind) {
  switch (kind) {
  case StudyKind::scaling_a: return "a";
  case StudyKind::scaling_b: return "b";
  case StudyKind::scaling_c: return "c";
  case StudyKind::misspec: return "misspec";
  }
  return "?";
}

StudyKind parse_study(const std::string& name) {
  if (name == "a") return StudyKind::scaling_a;
  if (name == "b") return StudyKind::scaling_b;
  if (name == "c") return StudyKind::scaling_c;
  if (name == "misspec") return StudyKind::misspec;
  throw InvalidArgument("unknown study '" + name + "' (expected a, b, c or misspec)");
}

void StudySpec::validate() const {
  if (replications < 1) throw InvalidArgument("replications must be at least 1");
  if (noises.empty()) throw InvalidArgument("at least one noise kind is required");
  if (!(rel_loss_tol > 0.0)) throw InvalidArgument("rel_loss_tol must be positive");
  for (const Index v : axis()) {
    if (v < 1) throw InvalidArgument("grid values must be positive");
  }
  if (kind == StudyKind::scaling_b) {
    for (const Index r : axis()) {
      if (r < 2) throw InvalidArgument("setting b needs r >= 2 so that s = r - 1 >= 1");
    }
  }
  if (kind == StudyKind::misspec) {
    if (true_rank < 1 || true_rank > kMisspecDim) throw InvalidArgument("true_rank must lie in 1..6");
    if (samples < 2 || test_samples < 1) throw InvalidArgument("misspec needs samples >= 2 and test_samples >= 1");
    if (restarts < 1) throw InvalidArgument("restarts must be at least 1");
    for (const Index r : axis()) {
      if (r > kMisspecDim) throw InvalidArgument("working ranks must lie in 1..6");
    }
  }
}

std::vector<Index> StudySpec::axis() const {
  if (!grid.empty()) return grid;
  switch (kind) {
  case StudyKind::scaling_a: return {10, 11, 12, 13, 14};
  case StudyKind::scaling_b: return {3, 4, 5, 6, 7};
  case StudyKind::scaling_c: return {833, 1000, 1250, 1670, 2500};
  case StudyKind::misspec: return {1, 2, 3, 4, 5, 6};
  }
  return {};
}

ModelShape scaling_shape(StudyKind kind, Index axis_value) {
  Index q = 10;
  Index r = 3;
  if (kind == StudyKind::scaling_a) q = axis_value;
  if (kind == StudyKind::scaling_b) r = axis_value;
  if (kind == StudyKind::misspec) throw InvalidArgument("misspec is not a scaling setting");
  const Index s = r - 1;
  ModelShape shape;
  shape.lag = 2;
  shape.response_dims = shape.predictor_dims = {q, q, q};
  shape.predictor = {{ActionOrder::from_one_based({1, 2, 3}), {r, r, r}},
                     {ActionOrder::from_one_based({3, 2, 1}), {r, r, r}}};
  shape.response = {{ActionOrder::from_one_based({1, 2, 3}), {s, s, s}},
                    {ActionOrder::from_one_based({2, 1, 3}), {s, s, s}}};
  return shape;
}

Index scaling_samples(StudyKind kind, Index axis_value) { return kind == StudyKind::scaling_c ? axis_value : 2500; }

double coefficient_distance(const HtarModel& a, const HtarModel& b) {
  if (a.lag != b.lag || a.response.dims != b.response.dims || a.predictor.dims != b.predictor.dims) {
    throw InvalidArgument("models differ in lag or dims");
  }
  const Matrix ya = assemble_loading(a.response);
  const Matrix xa = assemble_loading(a.predictor);
  const Matrix yb = assemble_loading(b.response);
  const Matrix xb = assemble_loading(b.predictor);
  const Matrix yaa = ya.transpose() * ya;
  const Matrix xaa = xa.transpose() * xa;
  const Matrix ybb = yb.transpose() * yb;
  const Matrix xbb = xb.transpose() * xb;
  const Matrix yab = ya.transpose() * yb;
  const Matrix xba = xb.transpose() * xa;
  double total = 0.0;
  for (Index l = 1; l <= a.lag; ++l) {
    const Matrix ta = a.lag_block(l);
    const Matrix tb = b.lag_block(l);
    total += (ta.transpose() * yaa * ta * xaa).trace() + (tb.transpose() * ybb * tb * xbb).trace() -
             2.0 * (ta.transpose() * yab * tb * xba).trace();
  }
  return std::sqrt(std::max(total, 0.0));
}

StudyTable run_scaling_study(const StudySpec& spec) {
  spec.validate();
  if (spec.kind == StudyKind::misspec) throw InvalidArgument("run_scaling_study needs setting a, b or c");
  const auto axis = spec.axis();
  const Index noises = static_cast<Index>(spec.noises.size());
  const Index reps = spec.replications;
  const Index total = static_cast<Index>(axis.size()) * noises * reps;

  StudyTable table;
  table.value_name = "error_frob";
  table.rows.resize(static_cast<std::size_t>(total));
  parallel_for(total, [&](Index job) {
    const Index point = job / (noises * reps);
    const Index noise = (job / reps) % noises;
    const Index rep = job % reps;
    const Index value = axis[static_cast<std::size_t>(point)];
    const std::uint64_t seed = derived_seed(spec.seed, static_cast<std::uint64_t>(job));

    const ModelShape shape = scaling_shape(spec.kind, value);
    HtarModel truth = random_model(shape, seed);
    truth.noise.kind = spec.noises[static_cast<std::size_t>(noise)];
    const TensorSeries series = simulate(truth, scaling_samples(spec.kind, value), kBurnIn, simulation_seed(seed));
    FitConfig config;
    config.rel_loss_tol = spec.rel_loss_tol;
    config.restarts = 0;
    config.warm = truth;
    const auto fit = fit_als(LaggedData::autoregressive(series, shape.lag), shape, config);

    table.rows[static_cast<std::size_t>(job)] = {study_name(spec.kind), noise_name(truth.noise.kind), value,
                                                 static_cast<int>(rep), coefficient_distance(fit.model, truth)};
  });
  return table;
}

StudyTable run_misspec_study(const StudySpec& spec) {
  spec.validate();
  if (spec.kind != StudyKind::misspec) throw InvalidArgument("run_misspec_study needs the misspec kind");
  const Shape dims(3, kMisspecDim);
  const Index size = shape_size(dims);
  const Index rank = spec.true_rank;
  const auto axis = spec.axis();
  const auto orders = ActionOrder::all(3);
  const Index noises = static_cast<Index>(spec.noises.size());
  const Index reps = spec.replications;
  const Index per_rep = static_cast<Index>(orders.size() * axis.size());

  StudyTable table;
  table.value_name = "mse";
  table.rows.resize(static_cast<std::size_t>(noises * reps * per_rep));
  parallel_for(noises * reps, [&](Index job) {
    const Index noise = job / reps;
    const Index rep = job % reps;
    const std::uint64_t seed = derived_seed(spec.seed, static_cast<std::uint64_t>(job));
    Rng rng(seed);
    const LoadingStack truth = random_stack(ActionOrder::identity(3), dims, {rank, rank, rank}, rng);
    const Matrix mixing = gaussian_matrix(size, size, rng);
    const Matrix covariance = mixing * mixing.transpose() / static_cast<double>(size) + 0.1 * Matrix::Identity(size, size);
    const Matrix root = Eigen::LLT<Matrix>(covariance).matrixL();
    const Matrix x = root * gaussian_matrix(size, spec.samples, rng);
    const Matrix x_test = root * gaussian_matrix(size, spec.test_samples, rng);
    const Matrix f = extract_features(truth, x);
    const Matrix f_test = extract_features(truth, x_test);
    NoiseSpec noise_spec;
    noise_spec.kind = spec.noises[static_cast<std::size_t>(noise)];
    noise_spec.scale = std::sqrt(f.squaredNorm() / static_cast<double>(f.size()));
    const Matrix y = f + draw_noise(noise_spec, rank, spec.samples, rng);
    const Matrix y_test = f_test + draw_noise(noise_spec, rank, spec.test_samples, rng);
    const LaggedData train({rank}, y, dims, x, 1);
    const LaggedData test({rank}, y_test, dims, x_test, 1);

    for (std::size_t k = 0; k < orders.size(); ++k) {
      for (std::size_t g = 0; g < axis.size(); ++g) {
        const Index r = axis[g];
        ModelShape shape;
        shape.lag = 1;
        shape.response_dims = {rank};
        shape.predictor_dims = dims;
        shape.response = {{ActionOrder::identity(1), {rank}}};
        shape.predictor = {{orders[k], {r, r, r}}};
        FitConfig config;
        config.rel_loss_tol = spec.rel_loss_tol;
        config.restarts = spec.restarts;
        config.seed = seed;
        const auto fit = fit_als(train, shape, config);
        const Index row = job * per_rep + static_cast<Index>(k * axis.size() + g);
        table.rows[static_cast<std::size_t>(row)] = {"misspec/" + orders[k].label(), noise_name(noise_spec.kind), r,
                                                     static_cast<int>(rep),
                                                     loss(fit.model, test) / static_cast<double>(rank)};
      }
    }
  });
  return table;
}

StudyTable run_study(const StudySpec& spec) {
  return spec.kind == StudyKind::misspec ? run_misspec_study(spec) : run_scaling_study(spec);
}

namespace {

std::vector<StudyPoint> group(const StudyTable& table, bool squared) {
  using Key = std::tuple<std::string, std::string, Index>;
  std::map<Key, std::size_t> index;
  std::vector<StudyPoint> points;
  std::vector<std::vector<double>> values;
  for (const auto& row : table.rows) {
    const Key key{row.setting, row.noise, row.axis_value};
    auto [it, fresh] = index.emplace(key, points.size());
    if (fresh) {
      points.push_back({row.setting, row.noise, row.axis_value, 0.0, 0.0});
      values.emplace_back();
    }
    values[it->second].push_back(squared ? row.value * row.value : row.value);
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& v = values[i];
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (const double x : v) mean += x;
    mean /= n;
    double ss = 0.0;
    for (const double x : v) ss += (x - mean) * (x - mean);
    points[i].mean = mean;
    points[i].stderr_ = v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  }
  return points;
}

} // namespace

std::vector<StudyPoint> StudyTable::summary() const { return group(*this, false); }

std::vector<StudyPoint> StudyTable::squared_summary() const { return group(*this, true); }

RateFit fit_rate_slope(const std::vector<double>& axis, const std::vector<double>& value) {
  if (axis.size() != value.size()) throw InvalidArgument("axis and values differ in length");
  std::vector<double> sorted = axis;
  std::sort(sorted.begin(), sorted.end());
  if (std::unique(sorted.begin(), sorted.end()) - sorted.begin() < 3) {
    throw InvalidArgument("a rate fit needs at least three distinct grid points");
  }
  const Index n = static_cast<Index>(axis.size());
  Vector lx(n);
  Vector ly(n);
  for (Index i = 0; i < n; ++i) {
    const double a = axis[static_cast<std::size_t>(i)];
    const double v = value[static_cast<std::size_t>(i)];
    if (!(a > 0.0) || !(v > 0.0)) throw InvalidArgument("rate fits need positive axis values and errors");
    lx[i] = std::log(a);
    ly[i] = std::log(v);
  }
  const double mx = lx.mean();
  const double my = ly.mean();
  const Vector dx = lx.array() - mx;
  const Vector dy = ly.array() - my;
  RateFit out;
  out.slope = dx.dot(dy) / dx.squaredNorm();
  out.intercept = my - out.slope * mx;
  const double total = dy.squaredNorm();
  out.r_squared = total > 0.0 ? 1.0 - (dy - out.slope * dx).squaredNorm() / total : 1.0;
  return out;
}

RateFit fit_rate_slope(const StudyTable& table, const std::string& setting, const std::string& noise) {
  std::vector<double> axis;
  std::vector<double> value;
  for (const auto& p : table.squared_summary()) {
    if (p.setting == setting && p.noise == noise) {
      axis.push_back(static_cast<double>(p.axis_value));
      value.push_back(p.mean);
    }
  }
  if (axis.empty()) throw InvalidArgument("no rows for setting '" + setting + "' and noise '" + noise + "'");
  return fit_rate_slope(axis, value);
}

void write_rows_csv(const StudyTable& table, std::ostream& out) {
  out.precision(17);
  out << "setting,noise,axis_value,replication," << table.value_name << '\n';
  for (const auto& r : table.rows) {
    out << r.setting << ',' << r.noise << ',' << r.axis_value << ',' << r.replication << ',' << r.value << '\n';
  }
}

void write_summary_csv(const StudyTable& table, std::ostream& out) {
  out.precision(17);
  out << "setting,noise,axis_value,mean,stderr\n";
  for (const auto& p : table.summary()) {
    out << p.setting << ',' << p.noise << ',' << p.axis_value << ',' << p.mean << ',' << p.stderr_ << '\n';
  }
}

} // namespace htar
