#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ophmm/forecasting.hpp"
#include "ophmm/pipeline.hpp"
#include "ophmm/training.hpp"

namespace ophmm {

struct BacktestResult {
  std::vector<int> exceptions;  // I_t = 1 iff realized >= predicted
  double exception_rate = 0.0;
  // Mean of (realized - predicted)^2 over exception periods; empty when there
  // are no exceptions.
  std::optional<double> mse_exceedance;
  int n_periods = 0;
  int n_exceptions = 0;
};

BacktestResult exceedances(std::span<const double> realized, std::span<const double> predicted);

// Two-sided 99% normal-approximation binomial band around 1 - level.
constexpr double kCoverageZ = 2.5758293035489004;

struct CoverageResult {
  double expected_rate = 0.0;
  double observed_rate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  int n_periods = 0;
  int n_exceptions = 0;
  bool pass = false;
};

CoverageResult coverage_check(const BacktestResult& result, double level);

/// Simulate n_periods + 1 observations from `model`, forecast each period
/// 2..n_periods+1 with `forecast` and test the exception rate against
/// `test_level`.
CoverageResult calibration_coverage_test(const HmmModel& model, int n_periods,
                                         const ForecastConfig& forecast, double test_level,
                                         std::uint64_t simulation_seed);

struct GridCell {
  EventType event_type = EventType::internal_fraud;
  Frequency frequency = Frequency::quarterly;
  int n_states = 2;
  bool include_covariate = false;

  // "Q-2" without the covariate, "Q-2-M" with it.
  std::string label() const;
};

struct GridSpec {
  std::vector<Frequency> aggregations{Frequency::quarterly, Frequency::monthly, Frequency::weekly};
  std::vector<int> state_counts{2, 3, 4};
  std::vector<bool> covariate_modes{false, true};
  std::vector<EventType> event_types{EventType::internal_fraud};

  void validate() const;
  std::vector<GridCell> cells() const;
};

struct GridRow {
  GridCell cell;
  bool fitted = false;
  std::string failure;
  std::optional<double> mse_exceedance;
  double exception_rate = 0.0;
  int n_periods = 0;
  int n_exceptions = 0;
  double log_likelihood = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  int n_iterations = 0;
  bool converged = false;
};

struct GridReport {
  std::vector<GridRow> rows;
};

struct GridOptions {
  std::optional<std::filesystem::path> run_dir;  // per-cell artifacts + resume cache
  int workers = 1;
  int start_index = 1;
  bool iqr_filter = true;
  bool log_transform = false;
};

/// Seed stream for a cell, stable under adding or removing other cells.
std::uint64_t cell_stream(const GridCell& cell);

GridRow run_cell(const GridCell& cell, const std::vector<LossEvent>& events, const MacroSeries* macro,
                 const TrainingConfig& training, const ForecastConfig& forecast,
                 const GridOptions& options);

GridReport run_grid(const std::vector<LossEvent>& events, const MacroSeries* macro, const GridSpec& spec,
                    const TrainingConfig& training, const ForecastConfig& forecast,
                    const GridOptions& options = {});

void write_grid_csv(std::ostream& out, const GridReport& report);
GridReport read_grid_csv(std::istream& in);
/// Aligned text table: one block per event type, K rows, (aggregation x
/// excl/incl) columns of MSE-on-exceedance; unfit cells shown as "-".
void write_grid_table(std::ostream& out, const GridReport& report);

}  // namespace ophmm
