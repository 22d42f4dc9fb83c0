#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "htar/config.hpp"
#include "htar/error.hpp"
#include "htar/experiments.hpp"
#include "htar/io.hpp"

namespace fs = std::filesystem;
using namespace htar;

namespace {

enum ExitCode { ok = 0, usage = 1, data_error = 2, numerical = 3 };

struct Options {
  std::string config;
  std::string data;
  std::string model;
  std::string out;
  std::string report;
  std::string study;
  std::string setting;
  Index split = 0;
  std::optional<std::uint64_t> seed;
};

AppConfig config_from(const Options& opt) {
  AppConfig config = opt.config.empty() ? AppConfig{} : load_config(opt.config);
  if (opt.seed) config.set_seed(*opt.seed);
  return config;
}

void print_shape(std::ostream& out, const ModelShape& shape) {
  out << "lag " << shape.lag << '\n';
  for (const auto& [name, stacks] : {std::pair{"response", &shape.response}, std::pair{"predictor", &shape.predictor}}) {
    for (const auto& s : *stacks) {
      out << name << ' ' << s.order.label() << " ranks";
      for (const Index r : s.ranks) out << ' ' << r;
      out << '\n';
    }
  }
}

const ModelSection& require_model(const AppConfig& config) {
  if (!config.model.present) throw DataError("config needs a [model] section");
  return config.model;
}

void run_simulate(const Options& opt) {
  const AppConfig config = config_from(opt);
  const ModelSection& section = require_model(config);
  HtarModel truth = random_model(section.shape, config.seed, section.rho);
  truth.noise = section.noise;
  const TensorSeries series = simulate(truth, section.length, section.burn_in, config.seed + 1);
  write_series(opt.out, series);
  if (!opt.model.empty()) write_model(opt.model, truth);
}

void run_fit(const Options& opt) {
  const AppConfig config = config_from(opt);
  const ModelShape& shape = require_model(config).shape;
  const TensorSeries series = read_series(opt.data);
  if (series.dims != shape.response_dims) throw DataError("series dims do not match [model] dims");
  const FitResult result = fit_als(LaggedData::autoregressive(series, shape.lag), shape, config.fit);
  write_model(opt.out, result.model);
  const fs::path report = opt.report.empty() ? fs::path(opt.out + ".report.csv") : fs::path(opt.report);
  atomic_write(report, [&](std::ostream& out) { write_fit_report(out, result.report); });
  std::cout << "loss " << result.report.final_loss << " bic " << result.report.bic << " sweeps "
            << result.report.sweeps_used << (result.report.converged ? " converged" : " not converged") << '\n';
}

ActionSetState candidates_for(const AppConfig& config, Index modes) {
  auto response = config.select.response_candidates;
  auto predictor = config.select.predictor_candidates;
  if (response.empty()) response = default_candidates(modes);
  if (predictor.empty()) predictor = default_candidates(modes);
  return {std::move(response), std::move(predictor)};
}

void run_select(const Options& opt) {
  const AppConfig config = config_from(opt);
  const TensorSeries series = read_series(opt.data);
  const auto candidates = candidates_for(config, static_cast<Index>(series.dims.size()));
  const LagSelection chosen = select_lag(series, candidates, config.select.config);
  if (chosen.best.state.active_pairs() == 0) throw NumericalError("selection kept the empty model");
  HtarModel model = chosen.best.model;
  if (config.select.reduce) model = rank_reduce(model, config.select.config.rank_tol).model;
  write_model(opt.out, model);
  for (std::size_t l = 0; l < chosen.bic.size(); ++l) std::cout << "bic lag " << l + 1 << ' ' << chosen.bic[l] << '\n';
  print_shape(std::cout, model.shape());
}

void run_forecast(const Options& opt) {
  const AppConfig config = config_from(opt);
  const Preprocessed data =
      preprocess(read_series(opt.data), config.forecast.difference, config.forecast.center);
  RollingConfig rolling;
  rolling.fit = config.fit;
  rolling.initial = read_model(fs::path(opt.model));
  const ForecastReport report = rolling_forecast(data.series, opt.split, rolling);
  atomic_write(opt.out, [&](std::ostream& out) { write_forecast_report(out, report); });
  std::cout << "msfe " << report.msfe << " mafe " << report.mafe << " null_msfe " << report.null_msfe
            << " null_mafe " << report.null_mafe << '\n';
}

void run_study_command(const Options& opt) {
  AppConfig config = config_from(opt);
  StudySpec spec = config.study;
  if (opt.study == "misspec") {
    spec.kind = StudyKind::misspec;
  } else if (!opt.setting.empty()) {
    spec.kind = parse_study(opt.setting);
  } else if (spec.kind == StudyKind::misspec) {
    throw InvalidArgument("study scaling needs a scaling setting (a, b or c)");
  }
  spec.validate();
  const StudyTable table = run_study(spec);
  fs::create_directories(opt.out);
  const std::string stem = spec.kind == StudyKind::misspec ? "misspec" : std::string("scaling_") + study_name(spec.kind);
  atomic_write(fs::path(opt.out) / (stem + "_rows.csv"), [&](std::ostream& out) { write_rows_csv(table, out); });
  atomic_write(fs::path(opt.out) / (stem + "_summary.csv"), [&](std::ostream& out) { write_summary_csv(table, out); });
  if (spec.kind != StudyKind::misspec) {
    for (const NoiseKind noise : spec.noises) {
      const RateFit rate = fit_rate_slope(table, table.rows.front().setting, noise_name(noise));
      std::cout << noise_name(noise) << " slope " << rate.slope << " r2 " << rate.r_squared << '\n';
    }
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical tensor autoregression: simulate, fit, select, forecast and simulation studies"};
  app.require_subcommand(1);
  Options opt;
  auto add_seed = [&](CLI::App* cmd) { cmd->add_option("--seed", opt.seed, "Seed for every random draw"); };

  auto* simulate_cmd = app.add_subcommand("simulate", "Draw a random stationary model from [model] and simulate it");
  simulate_cmd->add_option("--config", opt.config, "INI configuration")->required()->check(CLI::ExistingFile);
  simulate_cmd->add_option("--out", opt.out, "Series file to write")->required();
  simulate_cmd->add_option("--model", opt.model, "Also write the true model here");
  add_seed(simulate_cmd);

  auto* fit_cmd = app.add_subcommand("fit", "Fit the [model] hyperparameters by alternating least squares");
  fit_cmd->add_option("--data", opt.data, "Series file")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--config", opt.config, "INI configuration")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--out", opt.out, "Model file to write")->required();
  fit_cmd->add_option("--report", opt.report, "Loss trajectory CSV (default <out>.report.csv)");
  add_seed(fit_cmd);

  auto* select_cmd = app.add_subcommand("select", "Choose lag, orders and ranks by boosting, then reduce ranks");
  select_cmd->add_option("--data", opt.data, "Series file")->required()->check(CLI::ExistingFile);
  select_cmd->add_option("--config", opt.config, "INI configuration")->check(CLI::ExistingFile);
  select_cmd->add_option("--out", opt.out, "Model file to write")->required();
  add_seed(select_cmd);

  auto* forecast_cmd = app.add_subcommand("forecast", "Rolling one-step forecasts with warm refits");
  forecast_cmd->add_option("--data", opt.data, "Series file")->required()->check(CLI::ExistingFile);
  forecast_cmd->add_option("--model", opt.model, "Model file giving the hyperparameters and first start")
      ->required()
      ->check(CLI::ExistingFile);
  forecast_cmd->add_option("--split", opt.split, "Number of training observations before the first forecast")
      ->required();
  forecast_cmd->add_option("--out", opt.out, "Forecast CSV to write")->required();
  forecast_cmd->add_option("--config", opt.config, "INI configuration ([fit], [forecast])")->check(CLI::ExistingFile);
  add_seed(forecast_cmd);

  auto* study_cmd = app.add_subcommand("study", "Run a simulation study and write CSV tables");
  study_cmd->add_option("kind", opt.study, "scaling or misspec")->required()->check(CLI::IsMember({"scaling", "misspec"}));
  study_cmd->add_option("--config", opt.config, "INI configuration ([study])")->check(CLI::ExistingFile);
  study_cmd->add_option("--out", opt.out, "Output directory")->required();
  study_cmd->add_option("--setting", opt.setting, "Scaling setting")->check(CLI::IsMember({"a", "b", "c"}));
  add_seed(study_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (*simulate_cmd) run_simulate(opt);
    if (*fit_cmd) run_fit(opt);
    if (*select_cmd) run_select(opt);
    if (*forecast_cmd) run_forecast(opt);
    if (*study_cmd) run_study_command(opt);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data_error;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return data_error;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return numerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return data_error;
  }
  return ok;
}
