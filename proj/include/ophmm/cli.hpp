#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ophmm/backtest.hpp"
#include "ophmm/forecasting.hpp"
#include "ophmm/pipeline.hpp"
#include "ophmm/training.hpp"

namespace ophmm {

enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 2,
  kExitCalibration = 3,
  kExitNumeric = 4,
  kExitIo = 5,
};

struct DataConfig {
  std::optional<std::filesystem::path> losses;
  std::optional<std::filesystem::path> macro;
  Frequency frequency = Frequency::monthly;
  std::optional<EventType> event_type;
  bool iqr_filter = true;
  bool log_transform = false;
  // Unset: use the covariate whenever a macro file is configured.
  std::optional<bool> include_covariate;
};

struct SimulateConfig {
  std::optional<HmmModel> model;
  int n_periods = 0;
  Frequency frequency = Frequency::weekly;
  Date start_date{};
  EventType event_type = EventType::internal_fraud;
  int max_events_per_period = 3;

  void validate() const;
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::filesystem::path output_dir = "out";
  int workers = 1;
  bool quiet = false;
  DataConfig data;
  TrainingConfig training;
  ForecastConfig forecast;
  int start_index = 1;
  GridSpec grid;
  std::optional<std::filesystem::path> model_path;
  std::optional<std::filesystem::path> quantile_path;
  std::optional<std::filesystem::path> grid_csv;
  SimulateConfig simulate;
  // Digest of the config document and overrides; stored in model metadata.
  std::string fingerprint;
};

/// Parse a JSON run configuration. Relative paths resolve against base_dir.
/// Unknown keys are rejected.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir);

struct SimulatedFixture {
  std::vector<LossEvent> events;  // sorted by date
  MacroSeries macro;              // empty for d = 1 models
  std::vector<std::string> periods;
  std::vector<int> states;
  std::vector<double> loss_totals;  // event amounts summed in file order
  std::vector<double> covariate;
};

/// Simulate the configured model and split each period's (clipped, cent
/// rounded) loss into 1..max_events_per_period dated events.
SimulatedFixture simulate_fixture(const SimulateConfig& config, std::uint64_t seed);

void write_events(std::ostream& out, const std::vector<LossEvent>& events);
void write_macro(std::ostream& out, const MacroSeries& macro);

/// Entry point behind the `ophmm` executable. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ophmm
