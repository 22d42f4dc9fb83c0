#include "htar/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "htar/error.hpp"
#include "htar/io.hpp"

namespace htar {

namespace {

using boost::property_tree::ptree;

class SectionReader {
public:
  SectionReader(const ptree& tree, std::string name, std::string source)
      : tree_(tree), name_(std::move(name)), source_(std::move(source)) {}

  void allow(std::initializer_list<const char*> keys) {
    const std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [key, value] : tree_) {
      if (!value.empty()) fail(key, "nested sections are not supported");
      if (!known.count(key)) fail(key, "unknown key");
    }
  }

  bool has(const std::string& key) const { return tree_.find(key) != tree_.not_found(); }

  std::string text(const std::string& key) const { return boost::trim_copy(tree_.get<std::string>(key)); }

  template <class T>
  void read(const std::string& key, T& out) const {
    if (!has(key)) return;
    const std::string value = text(key);
    std::istringstream in(value);
    T parsed{};
    if (!(in >> parsed) || !(in >> std::ws).eof()) fail(key, "cannot parse '" + value + "'");
    out = parsed;
  }

  void read_bool(const std::string& key, bool& out) const {
    if (!has(key)) return;
    const std::string value = boost::to_lower_copy(text(key));
    if (value == "true" || value == "yes" || value == "1") {
      out = true;
    } else if (value == "false" || value == "no" || value == "0") {
      out = false;
    } else {
      fail(key, "expected true or false, got '" + value + "'");
    }
  }

  std::vector<Index> indices(const std::string& key) const {
    std::vector<Index> out;
    std::string value = text(key);
    std::replace(value.begin(), value.end(), ',', ' ');
    std::istringstream in(value);
    for (std::string word; in >> word;) {
      try {
        std::size_t used = 0;
        out.push_back(std::stol(word, &used));
        if (used != word.size()) throw std::invalid_argument(word);
      } catch (const std::exception&) {
        fail(key, "'" + word + "' is not an integer");
      }
    }
    return out;
  }

  /// Items separated by ';' (or ',' when `commas`).
  std::vector<std::string> items(const std::string& key, bool commas) const {
    std::vector<std::string> parts;
    boost::split(parts, text(key), [commas](char c) { return c == ';' || (commas && c == ','); });
    std::vector<std::string> out;
    for (auto& p : parts) {
      boost::trim(p);
      if (!p.empty()) out.push_back(p);
    }
    return out;
  }

  std::vector<ActionOrder> orders(const std::string& key) const {
    std::vector<ActionOrder> out;
    for (const auto& item : items(key, false)) {
      try {
        out.push_back(parse_order(item));
      } catch (const InvalidArgument& e) {
        fail(key, e.what());
      }
    }
    return out;
  }

  std::vector<StackShape> stacks(const std::string& key) const {
    std::vector<StackShape> out;
    for (const auto& item : items(key, false)) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) fail(key, "stack '" + item + "' must read order:ranks, e.g. 1-2-3:2,2,2");
      StackShape stack;
      try {
        stack.order = parse_order(boost::trim_copy(item.substr(0, colon)));
      } catch (const InvalidArgument& e) {
        fail(key, e.what());
      }
      std::string ranks = item.substr(colon + 1);
      std::replace(ranks.begin(), ranks.end(), ',', ' ');
      std::istringstream in(ranks);
      for (Index r; in >> r;) stack.ranks.push_back(r);
      if (!(in >> std::ws).eof()) fail(key, "ranks of stack '" + item + "' must be integers");
      out.push_back(std::move(stack));
    }
    return out;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw DataError(source_ + ": [" + name_ + "] " + key + ": " + what);
  }

private:
  const ptree& tree_;
  std::string name_;
  std::string source_;
};

void read_model(const SectionReader& in, ModelSection& model) {
  model.present = true;
  if (!in.has("dims")) in.fail("dims", "required");
  const auto dims = in.indices("dims");
  if (dims.empty()) in.fail("dims", "at least one mode is required");
  for (const Index p : dims) {
    if (p < 1) in.fail("dims", "entries must be positive");
  }
  model.shape.response_dims = model.shape.predictor_dims = dims;
  in.read("lag", model.shape.lag);
  if (model.shape.lag < 1) in.fail("lag", "must be at least 1");
  for (const char* side : {"response", "predictor"}) {
    if (!in.has(side)) in.fail(side, "required");
    auto stacks = in.stacks(side);
    if (stacks.empty()) in.fail(side, "at least one stack is required");
    for (const auto& s : stacks) {
      if (s.order.size() != static_cast<Index>(dims.size()) || s.ranks.size() != dims.size()) {
        in.fail(side, "stack " + s.order.label() + " needs one rank per mode");
      }
      for (const Index r : s.ranks) {
        if (r < 1) in.fail(side, "ranks must be positive");
      }
    }
    (std::string(side) == "response" ? model.shape.response : model.shape.predictor) = std::move(stacks);
  }
  in.read("rho", model.rho);
  if (in.has("noise")) {
    try {
      model.noise.kind = parse_noise(in.text("noise"));
    } catch (const InvalidArgument& e) {
      in.fail("noise", e.what());
    }
  }
  in.read("noise_scale", model.noise.scale);
  in.read("noise_correlation", model.noise.correlation);
  in.read("length", model.length);
  in.read("burn_in", model.burn_in);
  if (!(model.rho > 0.0 && model.rho < 1.0)) in.fail("rho", "must lie in (0, 1)");
  if (!(model.noise.scale > 0.0)) in.fail("noise_scale", "must be positive");
  if (model.length < 1) in.fail("length", "must be positive");
  if (model.burn_in < 0) in.fail("burn_in", "must be non-negative");
}

void read_fit(const SectionReader& in, FitConfig& fit) {
  in.read("max_sweeps", fit.max_sweeps);
  in.read("rel_loss_tol", fit.rel_loss_tol);
  in.read("restarts", fit.restarts);
  in.read("ridge_eps", fit.ridge_eps);
  in.read("phi", fit.phi);
  if (fit.max_sweeps < 1) in.fail("max_sweeps", "must be at least 1");
  if (!(fit.rel_loss_tol > 0.0)) in.fail("rel_loss_tol", "must be positive");
  if (fit.restarts < 1) in.fail("restarts", "must be at least 1");
  if (!(fit.ridge_eps >= 0.0)) in.fail("ridge_eps", "must be non-negative");
}

void read_select(const SectionReader& in, SelectSection& select) {
  auto& c = select.config;
  in.read("phi", c.phi);
  in.read("max_iterations", c.max_iterations);
  in.read("max_lag", c.max_lag);
  in.read("rank_tol", c.rank_tol);
  in.read("tie_tol", c.tie_tol);
  in.read_bool("reduce", select.reduce);
  if (in.has("response_candidates")) select.response_candidates = in.orders("response_candidates");
  if (in.has("predictor_candidates")) select.predictor_candidates = in.orders("predictor_candidates");
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    in.fail("select", e.what());
  }
}

void read_study(const SectionReader& in, StudySpec& study) {
  if (in.has("setting")) {
    try {
      study.kind = parse_study(in.text("setting"));
    } catch (const InvalidArgument& e) {
      in.fail("setting", e.what());
    }
  }
  in.read("replications", study.replications);
  if (in.has("noises")) {
    study.noises.clear();
    for (const auto& name : in.items("noises", true)) {
      try {
        study.noises.push_back(parse_noise(name));
      } catch (const InvalidArgument& e) {
        in.fail("noises", e.what());
      }
    }
  }
  if (in.has("grid")) study.grid = in.indices("grid");
  in.read("rel_loss_tol", study.rel_loss_tol);
  in.read("true_rank", study.true_rank);
  in.read("samples", study.samples);
  in.read("test_samples", study.test_samples);
  in.read("restarts", study.restarts);
  try {
    study.validate();
  } catch (const InvalidArgument& e) {
    in.fail("study", e.what());
  }
}

} // namespace

void AppConfig::set_seed(std::uint64_t value) {
  seed = value;
  fit.seed = value;
  select.config.seed = value;
  select.config.weak.seed = value;
  select.config.full.seed = value;
  study.seed = value;
}

AppConfig parse_config(std::istream& in, const std::string& source) {
  ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw DataError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  AppConfig config;
  std::uint64_t seed = 0;
  for (const auto& [key, value] : tree) {
    if (value.empty()) {
      if (key != "seed") throw DataError(source + ": unknown top-level key '" + key + "'");
      SectionReader(tree, "top", source).read("seed", seed);
      continue;
    }
    const SectionReader section(value, key, source);
    if (key == "model") {
      SectionReader(value, key, source).allow({"dims", "lag", "response", "predictor", "rho", "noise", "noise_scale",
                                               "noise_correlation", "length", "burn_in"});
      read_model(section, config.model);
    } else if (key == "fit") {
      SectionReader(value, key, source).allow({"max_sweeps", "rel_loss_tol", "restarts", "ridge_eps", "phi"});
      read_fit(section, config.fit);
    } else if (key == "select") {
      SectionReader(value, key, source).allow({"phi", "max_iterations", "max_lag", "rank_tol", "tie_tol", "reduce",
                                               "response_candidates", "predictor_candidates"});
      read_select(section, config.select);
    } else if (key == "study") {
      SectionReader(value, key, source).allow({"setting", "replications", "noises", "grid", "rel_loss_tol",
                                               "true_rank", "samples", "test_samples", "restarts"});
      read_study(section, config.study);
    } else if (key == "forecast") {
      SectionReader(value, key, source).allow({"difference", "center"});
      section.read_bool("difference", config.forecast.difference);
      section.read_bool("center", config.forecast.center);
    } else {
      throw DataError(source + ": unknown section [" + key + "]");
    }
  }
  config.set_seed(seed);
  return config;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config '" + path.string() + "'");
  return parse_config(in, path.string());
}

} // namespace htar
