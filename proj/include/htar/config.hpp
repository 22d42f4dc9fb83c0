#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "htar/als.hpp"
#include "htar/experiments.hpp"
#include "htar/model.hpp"
#include "htar/selection.hpp"

namespace htar {

/// [model]: what `simulate` draws and what `fit` estimates.
struct ModelSection {
  ModelShape shape;
  double rho = 0.8;  ///< spectral radius of the simulated model
  NoiseSpec noise;
  Index length = 500;
  Index burn_in = kDefaultBurnIn;
  bool present = false;
};

/// [select]: candidate orders (both default to every order) and boosting settings.
struct SelectSection {
  SelectionConfig config;
  std::vector<ActionOrder> response_candidates;
  std::vector<ActionOrder> predictor_candidates;
  bool reduce = true;
};

/// [forecast]: preprocessing of the series before rolling forecasts.
struct ForecastSection {
  bool difference = false;
  bool center = false;
};

/**
 * INI configuration with sections [model], [fit], [select], [study] and
 * [forecast]. Keys outside the known set are errors.
 *
 *   [model]  dims = 3 4 5; lag; response = 1-2-3:2,2,2 ; 2-1-3:1,1,1; predictor = ...;
 *            rho; noise; noise_scale; noise_correlation; length; burn_in
 *   [fit]    max_sweeps; rel_loss_tol; restarts; ridge_eps; phi
 *   [select] phi; max_iterations; max_lag; rank_tol; tie_tol; reduce;
 *            response_candidates = 1-2-3 ; 3-2-1; predictor_candidates
 *   [study]  setting; replications; noises = uniform, gaussian; grid; rel_loss_tol;
 *            true_rank; samples; test_samples; restarts
 */
struct AppConfig {
  ModelSection model;
  FitConfig fit;
  SelectSection select;
  StudySpec study;
  ForecastSection forecast;
  std::uint64_t seed = 0;

  /// Sets every seed (fit, selection, study, simulation).
  void set_seed(std::uint64_t seed);
};

AppConfig parse_config(std::istream& in, const std::string& source = "<config>");
AppConfig load_config(const std::filesystem::path& path);

} // namespace htar
