#include "htar/io.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <system_error>

#include <unistd.h>

#include "htar/error.hpp"

namespace htar {

namespace {

std::string format_double(double x) {
  char buffer[32];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, x);
  return std::string(buffer, result.ptr);
}

std::optional<double> parse_double(std::string_view token) {
  double value = 0.0;
  const auto result = std::from_chars(token.data(), token.data() + token.size(), value);
  if (result.ec != std::errc() || result.ptr != token.data() + token.size()) return std::nullopt;
  return value;
}

std::optional<Index> parse_index(std::string_view token) {
  Index value = 0;
  const auto result = std::from_chars(token.data(), token.data() + token.size(), value);
  if (result.ec != std::errc() || result.ptr != token.data() + token.size()) return std::nullopt;
  return value;
}

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string word; in >> word;) out.push_back(word);
  return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return in;
}

/// Line reader that tracks line numbers for messages.
class LineReader {
public:
  LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  bool next(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++number_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  }

  std::string require() {
    std::string line;
    if (!next(line)) fail("unexpected end of file");
    return line;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(source_ + ":" + std::to_string(number_) + ": " + what);
  }

  Index number() const { return number_; }

private:
  std::istream& in_;
  std::string source_;
  Index number_ = 0;
};

} // namespace

ActionOrder parse_order(const std::string& text) {
  std::vector<Index> perm;
  const bool separated = text.find_first_of("-,") != std::string::npos;
  std::string token;
  const auto flush = [&] {
    const auto v = parse_index(token);
    if (!v) throw InvalidArgument("action order '" + text + "' must list mode numbers");
    perm.push_back(*v);
    token.clear();
  };
  for (const char c : text) {
    if (c == '-' || c == ',') {
      flush();
    } else {
      token.push_back(c);
      if (!separated) flush();
    }
  }
  if (separated) flush();
  if (perm.empty()) throw InvalidArgument("empty action order");
  return ActionOrder::from_one_based(perm);
}

void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  static std::atomic<unsigned> counter{0};
  std::filesystem::path temp = path;
  temp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  try {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + temp.string() + "'");
    body(out);
    out.flush();
    if (!out) throw DataError("write to '" + temp.string() + "' failed");
    out.close();
    std::filesystem::rename(temp, path);
  } catch (...) {
    std::error_code ignored;
    std::filesystem::remove(temp, ignored);
    throw;
  }
}

// ---------------------------------------------------------------------------
// Series files

TensorSeries read_series(std::istream& in, const std::string& source) {
  LineReader reader(in, source);
  const auto header = split_words(reader.require());
  if (header.empty() || header[0] != "dims:") reader.fail("expected 'dims: p1 ... pN'");
  if (header.size() < 2) reader.fail("dims must list at least one mode");
  Shape dims;
  for (std::size_t i = 1; i < header.size(); ++i) {
    const auto p = parse_index(header[i]);
    if (!p || *p < 1) reader.fail("dims entries must be positive integers, got '" + header[i] + "'");
    dims.push_back(*p);
  }
  const auto count_line = split_words(reader.require());
  if (count_line.size() != 2 || count_line[0] != "T:") reader.fail("expected 'T: <count>'");
  const auto length = parse_index(count_line[1]);
  if (!length || *length < 0) reader.fail("T must be a non-negative integer");

  const Index q = shape_size(dims);
  Matrix values(q, *length);
  std::vector<Index> first_line(static_cast<std::size_t>(*length));
  std::vector<bool> missing(static_cast<std::size_t>(q * *length), false);
  bool any_missing = false;
  for (Index t = 0; t < *length; ++t) {
    const std::string line = reader.require();
    first_line[static_cast<std::size_t>(t)] = reader.number();
    const auto words = split_words(line);
    if (static_cast<Index>(words.size()) != q) {
      reader.fail("expected " + std::to_string(q) + " values, found " + std::to_string(words.size()));
    }
    for (Index i = 0; i < q; ++i) {
      const auto& w = words[static_cast<std::size_t>(i)];
      if (w == "NA") {
        missing[static_cast<std::size_t>(t * q + i)] = true;
        any_missing = true;
        values(i, t) = 0.0;
        continue;
      }
      const auto v = parse_double(w);
      if (!v || !std::isfinite(*v)) reader.fail("value " + std::to_string(i + 1) + " is not a finite number: '" + w + "'");
      values(i, t) = *v;
    }
  }
  std::string rest;
  while (reader.next(rest)) {
    if (!split_words(rest).empty()) reader.fail("unexpected data after " + std::to_string(*length) + " records");
  }

  if (any_missing) {
    const auto is_missing = [&](Index i, Index t) { return missing[static_cast<std::size_t>(t * q + i)]; };
    for (Index i = 0; i < q; ++i) {
      Index t = 0;
      while (t < *length) {
        if (!is_missing(i, t)) {
          ++t;
          continue;
        }
        Index end = t;
        while (end < *length && is_missing(i, end)) ++end;
        if (t == 0 || end == *length) {
          const Index at = t == 0 ? t : end - 1;
          throw DataError(source + ":" + std::to_string(first_line[static_cast<std::size_t>(at)]) +
                          ": missing value " + std::to_string(i + 1) + " has no observed neighbour on both sides");
        }
        const double before = values(i, t - 1);
        const double after = values(i, end);
        const double span = static_cast<double>(end - t + 1);
        for (Index k = t; k < end; ++k) {
          values(i, k) = before + (after - before) * static_cast<double>(k - t + 1) / span;
        }
        t = end;
      }
    }
  }
  return TensorSeries(std::move(dims), std::move(values));
}

TensorSeries read_series(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_series(in, path.string());
}

void write_series(std::ostream& out, const TensorSeries& series) {
  out << "dims:";
  for (const Index p : series.dims) out << ' ' << p;
  out << "\nT: " << series.length() << '\n';
  for (Index t = 0; t < series.length(); ++t) {
    for (Index i = 0; i < series.size(); ++i) {
      if (i > 0) out << ' ';
      out << format_double(series.values(i, t));
    }
    out << '\n';
  }
}

void write_series(const std::filesystem::path& path, const TensorSeries& series) {
  atomic_write(path, [&](std::ostream& out) { write_series(out, series); });
}

// ---------------------------------------------------------------------------
// Model files

namespace {

constexpr const char* kModelTag = "htar-model";
constexpr int kModelVersion = 1;

void write_matrix(std::ostream& out, const Matrix& m) {
  out << m.rows() << ' ' << m.cols() << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ' ';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

void write_side(std::ostream& out, const char* name, const LoadingSpec& spec) {
  out << name << " dims";
  for (const Index p : spec.dims) out << ' ' << p;
  out << "\n" << name << " stacks " << spec.stack_count() << '\n';
  for (const auto& stack : spec.stacks) {
    out << "order " << stack.order().label() << "\nprofile";
    for (const Index r : stack.profile()) out << ' ' << r;
    out << '\n';
    for (const auto& g : stack.components()) {
      out << "component ";
      write_matrix(out, g);
    }
  }
}

/// Whitespace-token reader over a model file.
class TokenReader {
public:
  TokenReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::string word() {
    std::string w;
    if (!(in_ >> w)) fail("unexpected end of file");
    return w;
  }

  void expect(const std::string& keyword) {
    const std::string w = word();
    if (w != keyword) fail("expected '" + keyword + "', found '" + w + "'");
  }

  Index index() {
    const std::string w = word();
    const auto v = parse_index(w);
    if (!v || *v < 0) fail("expected a non-negative integer, found '" + w + "'");
    return *v;
  }

  double number() {
    const std::string w = word();
    const auto v = parse_double(w);
    if (!v) fail("expected a number, found '" + w + "'");
    return *v;
  }

  Matrix matrix() {
    const Index rows = index();
    const Index cols = index();
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = number();
    return m;
  }

  [[noreturn]] void fail(const std::string& what) const { throw DataError(source_ + ": " + what); }

private:
  std::istream& in_;
  std::string source_;
};

LoadingSpec read_side(TokenReader& in, const char* name, Side side) {
  in.expect(name);
  in.expect("dims");
  Shape dims;
  // dims run until the next keyword
  std::string w = in.word();
  while (w != name) {
    const auto p = parse_index(w);
    if (!p || *p < 1) in.fail(std::string(name) + " dims must be positive integers, found '" + w + "'");
    dims.push_back(*p);
    w = in.word();
  }
  in.expect("stacks");
  const Index count = in.index();
  std::vector<LoadingStack> stacks;
  for (Index k = 0; k < count; ++k) {
    in.expect("order");
    const ActionOrder order = parse_order(in.word());
    in.expect("profile");
    RankProfile profile;
    for (std::size_t m = 0; m <= dims.size(); ++m) profile.push_back(in.index());
    std::vector<Matrix> components;
    for (std::size_t m = 0; m < dims.size(); ++m) {
      in.expect("component");
      components.push_back(in.matrix());
    }
    try {
      LoadingStack stack(order, dims, std::move(components));
      if (stack.profile() != profile) in.fail("profile of stack " + std::to_string(k + 1) + " does not match its components");
      stacks.push_back(std::move(stack));
    } catch (const InvalidArgument& e) {
      in.fail(std::string(name) + " stack " + std::to_string(k + 1) + ": " + e.what());
    }
  }
  return LoadingSpec(side, std::move(dims), std::move(stacks));
}

} // namespace

void write_model(std::ostream& out, const HtarModel& model) {
  model.validate();
  out << kModelTag << ' ' << kModelVersion << "\nlag " << model.lag << '\n';
  write_side(out, "response", model.response);
  write_side(out, "predictor", model.predictor);
  out << "core ";
  write_matrix(out, model.core);
  out << "noise " << noise_name(model.noise.kind) << " scale " << format_double(model.noise.scale) << " correlation "
      << format_double(model.noise.correlation) << '\n';
  if (model.noise.factor) {
    out << "factor ";
    write_matrix(out, *model.noise.factor);
  }
  out << "end\n";
}

void write_model(const std::filesystem::path& path, const HtarModel& model) {
  atomic_write(path, [&](std::ostream& out) { write_model(out, model); });
}

HtarModel read_model(std::istream& in, const std::string& source) {
  TokenReader reader(in, source);
  reader.expect(kModelTag);
  const Index version = reader.index();
  if (version != kModelVersion) reader.fail("unsupported model file version " + std::to_string(version));
  reader.expect("lag");
  const Index lag = reader.index();
  if (lag < 1) reader.fail("lag must be positive");
  LoadingSpec response = read_side(reader, "response", Side::response);
  LoadingSpec predictor = read_side(reader, "predictor", Side::predictor);
  reader.expect("core");
  Matrix core = reader.matrix();
  reader.expect("noise");
  NoiseSpec noise;
  try {
    noise.kind = parse_noise(reader.word());
  } catch (const InvalidArgument& e) {
    reader.fail(e.what());
  }
  reader.expect("scale");
  noise.scale = reader.number();
  reader.expect("correlation");
  noise.correlation = reader.number();
  std::string w = reader.word();
  if (w == "factor") {
    noise.factor = reader.matrix();
    w = reader.word();
  }
  if (w != "end") reader.fail("expected 'end', found '" + w + "'");
  try {
    return HtarModel(lag, std::move(response), std::move(predictor), std::move(core), std::move(noise));
  } catch (const InvalidArgument& e) {
    reader.fail(e.what());
  }
}

HtarModel read_model(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_model(in, path.string());
}

void write_fit_report(std::ostream& out, const FitReport& report) {
  out << "sweep,loss\n0," << format_double(report.initial_loss) << '\n';
  for (std::size_t i = 0; i < report.loss_trajectory.size(); ++i) {
    out << i + 1 << ',' << format_double(report.loss_trajectory[i]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Preprocessing

Preprocessed preprocess(const TensorSeries& series, bool difference, bool center) {
  Preprocessed out;
  out.transform.differenced = difference;
  out.transform.centered = center;
  Matrix values = series.values;
  if (difference) {
    if (series.length() < 2) throw InvalidArgument("differencing needs at least two observations");
    out.transform.first_level = series.values.col(0);
    values = (series.values.rightCols(series.length() - 1) - series.values.leftCols(series.length() - 1)).eval();
  }
  if (center) {
    if (values.cols() < 1) throw InvalidArgument("centering needs at least one observation");
    out.transform.mean = values.rowwise().mean();
    values.colwise() -= out.transform.mean;
  }
  out.series = TensorSeries(series.dims, std::move(values));
  return out;
}

TensorSeries invert(const Transform& transform, const TensorSeries& series) {
  Matrix values = series.values;
  if (transform.centered) {
    if (transform.mean.size() != values.rows()) throw InvalidArgument("transform does not match the series size");
    values.colwise() += transform.mean;
  }
  if (transform.differenced) {
    if (transform.first_level.size() != values.rows()) throw InvalidArgument("transform does not match the series size");
    Matrix levels(values.rows(), values.cols() + 1);
    levels.col(0) = transform.first_level;
    for (Index t = 0; t < values.cols(); ++t) levels.col(t + 1) = levels.col(t) + values.col(t);
    values = std::move(levels);
  }
  return TensorSeries(series.dims, std::move(values));
}

Vector to_level(const Transform& transform, const Vector& forecast, const Vector& previous_level) {
  Vector out = forecast;
  if (transform.centered) out += transform.mean;
  if (transform.differenced) out += previous_level;
  return out;
}

// ---------------------------------------------------------------------------
// Rolling forecasts

ForecastReport rolling_forecast(const TensorSeries& series, Index split, const RollingConfig& config) {
  const Index length = series.length();
  if (split >= length) throw InvalidArgument("split must leave at least one test observation");

  ModelShape shape;
  std::optional<HtarModel> current = config.initial;
  if (config.shape) {
    shape = *config.shape;
  } else if (config.initial) {
    shape = config.initial->shape();
  } else {
    const TensorSeries training(series.dims, series.values.leftCols(split));
    const LagSelection chosen = select_lag(training, config.candidates, config.selection);
    if (chosen.best.state.active_pairs() == 0) {
      throw NumericalError("selection kept the empty model; nothing to forecast with");
    }
    current = rank_reduce(chosen.best.model, config.selection.rank_tol).model;
    shape = current->shape();
  }
  if (split < shape.lag + 10) throw InvalidArgument("split must leave at least lag + 10 training observations");
  if (shape.response_dims != series.dims || shape.predictor_dims != series.dims) {
    throw InvalidArgument("model dims do not match the series");
  }

  ForecastReport report;
  report.lag = shape.lag;
  for (Index t = split - 1; t + 1 < length; ++t) {
    const TensorSeries window(series.dims, series.values.leftCols(t + 1));
    FitConfig fit = config.fit;
    if (current) fit.warm = *current;
    current = fit_als(LaggedData::autoregressive(window, shape.lag), shape, fit).model;

    std::vector<DenseTensor> history;
    for (Index l = 1; l <= shape.lag; ++l) history.push_back(series.at(t + 1 - l));
    const Vector forecast = predict(*current, history).data();
    const Vector actual = series.values.col(t + 1);
    report.targets.push_back(t + 1);
    report.squared.push_back((actual - forecast).squaredNorm());
    report.absolute.push_back((actual - forecast).cwiseAbs().sum());
    report.null_squared.push_back(actual.squaredNorm());
    report.msfe += report.squared.back();
    report.mafe += report.absolute.back();
    report.null_msfe += report.null_squared.back();
    report.null_mafe += actual.cwiseAbs().sum();
  }
  return report;
}

void write_forecast_report(std::ostream& out, const ForecastReport& report) {
  out << "target,squared_error,absolute_error,null_squared_error\n";
  for (std::size_t i = 0; i < report.targets.size(); ++i) {
    out << report.targets[i] + 1 << ',' << format_double(report.squared[i]) << ',' << format_double(report.absolute[i])
        << ',' << format_double(report.null_squared[i]) << '\n';
  }
}

} // namespace htar
