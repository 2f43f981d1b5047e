#include "ophmm/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "ophmm/errors.hpp"
#include "ophmm/model_io.hpp"
#include "ophmm/util.hpp"

namespace ophmm {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config parsing

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw InputError("config: " + where + " must be an object");
  for (const auto& item : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; })) {
      throw InputError("config: unknown key '" + (where.empty() ? "" : where + ".") + item.key() + "'");
    }
  }
}

std::string key_path(const std::string& where, const char* key) {
  return where.empty() ? key : where + "." + key;
}

long long get_int(const json& obj, const char* key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_number_integer()) throw InputError("config: " + key_path(where, key) + " must be an integer");
  return v.get<long long>();
}

double get_double(const json& obj, const char* key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_number()) throw InputError("config: " + key_path(where, key) + " must be a number");
  return v.get<double>();
}

bool get_bool(const json& obj, const char* key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_boolean()) throw InputError("config: " + key_path(where, key) + " must be true or false");
  return v.get<bool>();
}

std::string get_string(const json& obj, const char* key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_string()) throw InputError("config: " + key_path(where, key) + " must be a string");
  return v.get<std::string>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

Frequency to_frequency(const std::string& s, const std::string& where) {
  const auto f = parse_frequency(s);
  if (!f) throw InputError("config: " + where + ": unknown aggregation '" + s + "'");
  return *f;
}

EventType to_event_type(const std::string& s, const std::string& where) {
  const auto t = parse_event_type(s);
  if (!t) throw InputError("config: " + where + ": unknown event type '" + s + "'");
  return *t;
}

void parse_data(const json& j, const fs::path& base, DataConfig& d) {
  check_keys(j, {"losses", "macro", "frequency", "event_type", "iqr_filter", "log_transform", "include_covariate"},
             "data");
  if (j.contains("losses")) d.losses = resolve(base, get_string(j, "losses", "data"));
  if (j.contains("macro")) d.macro = resolve(base, get_string(j, "macro", "data"));
  if (j.contains("frequency")) d.frequency = to_frequency(get_string(j, "frequency", "data"), "data.frequency");
  if (j.contains("event_type")) d.event_type = to_event_type(get_string(j, "event_type", "data"), "data.event_type");
  if (j.contains("iqr_filter")) d.iqr_filter = get_bool(j, "iqr_filter", "data");
  if (j.contains("log_transform")) d.log_transform = get_bool(j, "log_transform", "data");
  if (j.contains("include_covariate")) d.include_covariate = get_bool(j, "include_covariate", "data");
}

void parse_training(const json& j, TrainingConfig& t) {
  check_keys(j, {"n_states", "max_iterations", "tolerance", "n_restarts", "ridge_epsilon", "sticky_diag_init"},
             "training");
  const std::string w = "training";
  if (j.contains("n_states")) t.n_states = static_cast<int>(get_int(j, "n_states", w));
  if (j.contains("max_iterations")) t.max_iterations = static_cast<int>(get_int(j, "max_iterations", w));
  if (j.contains("tolerance")) t.loglik_rel_tolerance = get_double(j, "tolerance", w);
  if (j.contains("n_restarts")) t.n_restarts = static_cast<int>(get_int(j, "n_restarts", w));
  if (j.contains("ridge_epsilon")) t.ridge_epsilon = get_double(j, "ridge_epsilon", w);
  if (j.contains("sticky_diag_init")) t.sticky_diag_init = get_double(j, "sticky_diag_init", w);
}

void parse_forecast(const json& j, ForecastConfig& f, int& start_index) {
  check_keys(j, {"quantile_level", "n_samples", "method", "loss_component", "start_index"}, "forecast");
  const std::string w = "forecast";
  if (j.contains("quantile_level")) f.quantile_level = get_double(j, "quantile_level", w);
  if (j.contains("n_samples")) f.n_samples = static_cast<int>(get_int(j, "n_samples", w));
  if (j.contains("loss_component")) f.loss_component = static_cast<int>(get_int(j, "loss_component", w));
  if (j.contains("start_index")) start_index = static_cast<int>(get_int(j, "start_index", w));
  if (j.contains("method")) {
    const std::string m = get_string(j, "method", w);
    if (m == "sampling") {
      f.method = QuantileMethod::sampling;
    } else if (m == "exact") {
      f.method = QuantileMethod::exact;
    } else {
      throw InputError("config: forecast.method must be 'sampling' or 'exact'");
    }
  }
}

template <class T, class Fn>
std::vector<T> parse_list(const json& j, const char* key, Fn convert) {
  const json& v = j.at(key);
  if (!v.is_array()) throw InputError(std::string("config: grid.") + key + " must be a list");
  std::vector<T> out;
  for (const auto& item : v) out.push_back(convert(item));
  return out;
}

void parse_grid(const json& j, GridSpec& g) {
  check_keys(j, {"aggregations", "state_counts", "covariate_modes", "event_types"}, "grid");
  auto str = [](const json& v, const char* key) {
    if (!v.is_string()) throw InputError(std::string("config: grid.") + key + " entries must be strings");
    return v.get<std::string>();
  };
  if (j.contains("aggregations")) {
    g.aggregations = parse_list<Frequency>(
        j, "aggregations", [&](const json& v) { return to_frequency(str(v, "aggregations"), "grid.aggregations"); });
  }
  if (j.contains("state_counts")) {
    g.state_counts = parse_list<int>(j, "state_counts", [](const json& v) {
      if (!v.is_number_integer()) throw InputError("config: grid.state_counts entries must be integers");
      return v.get<int>();
    });
  }
  if (j.contains("covariate_modes")) {
    g.covariate_modes = parse_list<bool>(j, "covariate_modes", [&](const json& v) {
      const std::string s = str(v, "covariate_modes");
      if (s == "included") return true;
      if (s == "excluded") return false;
      throw InputError("config: grid.covariate_modes entries must be 'excluded' or 'included'");
    });
  }
  if (j.contains("event_types")) {
    g.event_types = parse_list<EventType>(
        j, "event_types", [&](const json& v) { return to_event_type(str(v, "event_types"), "grid.event_types"); });
  }
  g.validate();
}

void parse_simulate(const json& j, const fs::path& base, SimulateConfig& s) {
  check_keys(j, {"model", "n_periods", "frequency", "start_date", "event_type", "max_events_per_period"},
             "simulate");
  const std::string w = "simulate";
  if (j.contains("model")) {
    const json& m = j.at("model");
    if (m.is_string()) {
      const fs::path p = resolve(base, m.get<std::string>());
      if (!fs::exists(p)) throw InputError("config: simulate.model file not found: " + p.string());
      s.model = load_model(p).model;
    } else {
      s.model = parse_model(m.dump()).model;
    }
  }
  if (j.contains("n_periods")) s.n_periods = static_cast<int>(get_int(j, "n_periods", w));
  if (j.contains("frequency")) s.frequency = to_frequency(get_string(j, "frequency", w), "simulate.frequency");
  if (j.contains("start_date")) {
    const std::string text = get_string(j, "start_date", w);
    const auto d = parse_iso_date(text);
    if (!d) throw InputError("config: simulate.start_date '" + text + "' is not YYYY-MM-DD");
    s.start_date = *d;
  }
  if (j.contains("event_type")) s.event_type = to_event_type(get_string(j, "event_type", w), "simulate.event_type");
  if (j.contains("max_events_per_period")) {
    s.max_events_per_period = static_cast<int>(get_int(j, "max_events_per_period", w));
  }
}

// ---------------------------------------------------------------------------
// Command helpers

struct Session {
  RunConfig cfg;
  std::ostream& out;
  std::ostream& err;

  std::ostream& log() {
    static std::ostream null_stream(nullptr);
    return cfg.quiet ? null_stream : out;
  }
};

fs::path require_input(const std::optional<fs::path>& p, const std::string& what) {
  if (!p) throw InputError("no " + what + " configured");
  if (!fs::exists(*p)) throw InputError(what + " not found: " + p->string());
  return *p;
}

std::uint64_t require_seed(const RunConfig& cfg) {
  if (!cfg.seed) throw InputError("a seed is required (config 'seed' or --seed)");
  return *cfg.seed;
}

std::vector<LossEvent> load_events(const RunConfig& cfg) {
  const fs::path p = require_input(cfg.data.losses, "loss event file (data.losses)");
  std::istringstream in(read_text_file(p));
  try {
    return ingest_losses(in);
  } catch (const IngestionError& e) {
    throw IngestionError(p.string() + ": " + e.what(), e.line());
  }
}

std::optional<MacroSeries> load_macro(const RunConfig& cfg) {
  if (!cfg.data.macro) return std::nullopt;
  const fs::path p = require_input(cfg.data.macro, "macro file (data.macro)");
  std::istringstream in(read_text_file(p));
  try {
    return ingest_macro(in);
  } catch (const IngestionError& e) {
    throw IngestionError(p.string() + ": " + e.what(), e.line());
  }
}

PipelineOptions pipeline_options(const RunConfig& cfg) {
  PipelineOptions o;
  o.frequency = cfg.data.frequency;
  o.event_type = cfg.data.event_type;
  o.iqr_filter = cfg.data.iqr_filter;
  o.log_transform = cfg.data.log_transform;
  return o;
}

AlignedSeries build_series(const RunConfig& cfg, bool include_covariate) {
  const auto events = load_events(cfg);
  std::optional<MacroSeries> macro;
  if (include_covariate) {
    if (!cfg.data.macro) throw InputError("covariate requested but data.macro is not set");
    macro = load_macro(cfg);
  }
  return prepare_series(events, macro ? &*macro : nullptr, pipeline_options(cfg));
}

bool wants_covariate(const RunConfig& cfg) {
  return cfg.data.include_covariate.value_or(cfg.data.macro.has_value());
}

std::string series_text(const AlignedSeries& s) {
  std::ostringstream ss;
  write_series(ss, s);
  return ss.str();
}

// ---------------------------------------------------------------------------
// Commands

int cmd_fit(Session& s) {
  const std::uint64_t seed = require_seed(s.cfg);
  const bool include = wants_covariate(s.cfg);
  const AlignedSeries series = build_series(s.cfg, include);
  const ObservationSequence obs = series.observations(include);
  TrainingConfig training = s.cfg.training;
  training.base_seed = seed;
  const FitResult fr = fit(obs, training);

  const fs::path dir = s.cfg.output_dir;
  const std::string data = series_text(series);
  write_text_file(dir / "series.csv", data);
  save_model(dir / "model.json", fr.model,
             ModelMetadata{s.cfg.fingerprint, hex_digest(fnv1a64(data)), series.periods.back()});

  std::ostringstream log_csv;
  log_csv << "restart,iteration,log_likelihood\n";
  json restarts = json::array();
  for (const auto& r : fr.restarts) {
    for (std::size_t i = 0; i < r.loglik_trace.size(); ++i) {
      log_csv << r.restart << ',' << i << ',' << format_double(r.loglik_trace[i]) << '\n';
    }
    restarts.push_back({{"restart", r.restart},
                        {"seed", r.seed},
                        {"ok", r.ok},
                        {"failure", r.failure},
                        {"n_iterations", r.n_iterations},
                        {"converged", r.converged},
                        {"starvation_events", r.starvation_events},
                        {"final_log_likelihood", r.loglik_trace.empty() ? json(nullptr) : json(r.loglik_trace.back())}});
  }
  write_text_file(dir / "training_log.csv", log_csv.str());

  const json summary{{"n_states", fr.model.n_states()},
                     {"dim", fr.model.dim()},
                     {"n_observations", obs.length()},
                     {"first_period", series.periods.front()},
                     {"last_period", series.periods.back()},
                     {"dropped_front_periods", series.dropped_front},
                     {"final_log_likelihood", fr.final_log_likelihood},
                     {"n_parameters", fr.n_parameters},
                     {"aic", fr.aic},
                     {"bic", fr.bic},
                     {"n_iterations", fr.n_iterations},
                     {"converged", fr.converged},
                     {"restart_index", fr.restart_index},
                     {"starvation_reinit", fr.starvation_reinit},
                     {"restarts", restarts}};
  write_text_file(dir / "fit_summary.json", summary.dump(2) + "\n");

  s.log() << "fit: K=" << fr.model.n_states() << " d=" << fr.model.dim() << " N=" << obs.length()
          << " loglik=" << format_double(fr.final_log_likelihood) << " aic=" << format_double(fr.aic)
          << " bic=" << format_double(fr.bic) << " (restart " << fr.restart_index << ")\n"
          << "wrote " << (dir / "model.json").string() << '\n';
  return kExitOk;
}

fs::path default_path(const std::optional<fs::path>& configured, const fs::path& dir, const char* name) {
  return configured ? *configured : dir / name;
}

int cmd_forecast(Session& s) {
  const std::uint64_t seed = require_seed(s.cfg);
  const fs::path model_path = require_input(default_path(s.cfg.model_path, s.cfg.output_dir, "model.json"),
                                            "model file");
  const HmmModel model = load_model(model_path).model;
  if (model.dim() != 1 && model.dim() != 2) {
    throw InputError("model has dimension " + std::to_string(model.dim()) +
                     " but series have dimension 1 (loss) or 2 (covariate, loss)");
  }
  const bool include = model.dim() == 2;
  if (include && !s.cfg.data.macro) {
    throw InputError("model has dimension 2 but the series has dimension 1 (data.macro is not set)");
  }
  const AlignedSeries series = build_series(s.cfg, include);
  const ObservationSequence obs = series.observations(include);
  ForecastConfig fc = s.cfg.forecast;
  fc.seed = seed;
  const QuantilePath path = quantile_path(model, obs, fc, s.cfg.start_index);

  std::ostringstream qp;
  write_quantile_path(qp, path);
  write_text_file(s.cfg.output_dir / "quantile_path.csv", qp.str());

  std::vector<double> sorted = series.loss;
  std::sort(sorted.begin(), sorted.end());
  const double historical = quantile_type7(sorted, fc.quantile_level);
  std::ostringstream plot;
  plot << "period,realized_loss,predicted_quantile,historical_quantile,high_state_prob,covariate\n";
  for (std::size_t i = 0; i < path.periods.size(); ++i) {
    const std::size_t n = i + static_cast<std::size_t>(s.cfg.start_index);
    plot << path.periods[i] << ',' << format_double(series.loss[n]) << ','
         << format_double(path.predicted_quantiles[i]) << ',' << format_double(historical) << ','
         << format_double(path.high_state_probability[i]) << ',';
    if (series.has_covariate()) plot << format_double(series.covariate[n]);
    plot << '\n';
  }
  write_text_file(s.cfg.output_dir / "plot_data.csv", plot.str());
  s.log() << "forecast: " << path.periods.size() << " periods at level " << format_double(fc.quantile_level)
          << "\nwrote " << (s.cfg.output_dir / "quantile_path.csv").string() << '\n';
  return kExitOk;
}

int cmd_backtest(Session& s, std::optional<double> level_override) {
  const fs::path qp_path = require_input(
      default_path(s.cfg.quantile_path, s.cfg.output_dir, "quantile_path.csv"), "quantile path file");
  std::istringstream qin(read_text_file(qp_path));
  const QuantilePath path = read_quantile_path(qin);
  // Loss-only view: the widest period range, winsorized identically.
  const AlignedSeries series = build_series(s.cfg, false);
  std::map<std::string, double> by_period;
  for (std::size_t i = 0; i < series.size(); ++i) by_period.emplace(series.periods[i], series.loss[i]);
  std::vector<double> realized;
  for (const auto& p : path.periods) {
    const auto it = by_period.find(p);
    if (it == by_period.end()) throw InputError("quantile path period " + p + " is not in the loss series");
    realized.push_back(it->second);
  }
  const BacktestResult bt = exceedances(realized, path.predicted_quantiles);
  const double level = level_override.value_or(s.cfg.forecast.quantile_level);
  const CoverageResult cov = coverage_check(bt, level);

  std::ostringstream csv;
  csv << "period,realized_loss,predicted_quantile,exception\n";
  for (std::size_t i = 0; i < realized.size(); ++i) {
    csv << path.periods[i] << ',' << format_double(realized[i]) << ',' << format_double(path.predicted_quantiles[i])
        << ',' << bt.exceptions[i] << '\n';
  }
  write_text_file(s.cfg.output_dir / "backtest.csv", csv.str());
  const json summary{{"n_periods", bt.n_periods},
                     {"n_exceptions", bt.n_exceptions},
                     {"exception_rate", bt.exception_rate},
                     {"mse_exceedance", bt.mse_exceedance ? json(*bt.mse_exceedance) : json(nullptr)},
                     {"level", level},
                     {"expected_rate", cov.expected_rate},
                     {"interval_lower", cov.lower},
                     {"interval_upper", cov.upper},
                     {"coverage_pass", cov.pass}};
  write_text_file(s.cfg.output_dir / "backtest_summary.json", summary.dump(2) + "\n");
  s.log() << "backtest: " << bt.n_exceptions << "/" << bt.n_periods << " exceptions (rate "
          << format_double(bt.exception_rate) << ", 99% band [" << format_double(cov.lower) << ", "
          << format_double(cov.upper) << "]) mse_exceedance="
          << (bt.mse_exceedance ? format_double(*bt.mse_exceedance) : std::string("NA")) << '\n';
  return kExitOk;
}

int cmd_grid(Session& s) {
  const std::uint64_t seed = require_seed(s.cfg);
  const auto events = load_events(s.cfg);
  const auto macro = load_macro(s.cfg);
  TrainingConfig training = s.cfg.training;
  training.base_seed = seed;
  ForecastConfig fc = s.cfg.forecast;
  fc.seed = seed;
  GridOptions opt;
  opt.run_dir = s.cfg.output_dir;
  opt.workers = s.cfg.workers;
  opt.start_index = s.cfg.start_index;
  opt.iqr_filter = s.cfg.data.iqr_filter;
  opt.log_transform = s.cfg.data.log_transform;
  const GridReport report = run_grid(events, macro ? &*macro : nullptr, s.cfg.grid, training, fc, opt);

  std::ostringstream csv;
  write_grid_csv(csv, report);
  write_text_file(s.cfg.output_dir / "grid.csv", csv.str());
  std::ostringstream table;
  write_grid_table(table, report);
  write_text_file(s.cfg.output_dir / "grid_table.txt", table.str());
  const auto fitted = std::count_if(report.rows.begin(), report.rows.end(), [](const GridRow& r) { return r.fitted; });
  s.log() << table.str() << "grid: " << report.rows.size() << " cells, " << fitted << " calibrated\n";
  return kExitOk;
}

int cmd_report(Session& s) {
  const fs::path p = require_input(default_path(s.cfg.grid_csv, s.cfg.output_dir, "grid.csv"), "grid report");
  std::istringstream in(read_text_file(p));
  const GridReport report = read_grid_csv(in);
  std::ostringstream table;
  write_grid_table(table, report);
  for (const auto& r : report.rows) {
    if (!r.fitted) {
      table << event_type_code(r.cell.event_type) << ' ' << r.cell.label() << ": not calibrated (" << r.failure
            << ")\n";
    }
  }
  write_text_file(s.cfg.output_dir / "report.txt", table.str());
  s.out << table.str();
  return kExitOk;
}

int cmd_simulate(Session& s) {
  const std::uint64_t seed = require_seed(s.cfg);
  const SimulatedFixture fx = simulate_fixture(s.cfg.simulate, seed);
  const fs::path dir = s.cfg.output_dir;
  std::ostringstream ev;
  write_events(ev, fx.events);
  write_text_file(dir / "events.csv", ev.str());
  if (!fx.macro.observations.empty()) {
    std::ostringstream mc;
    write_macro(mc, fx.macro);
    write_text_file(dir / "macro.csv", mc.str());
  }
  std::ostringstream truth;
  truth << "period,state,loss_total,covariate\n";
  for (std::size_t i = 0; i < fx.periods.size(); ++i) {
    truth << fx.periods[i] << ',' << fx.states[i] << ',' << format_double(fx.loss_totals[i]) << ',';
    if (!fx.covariate.empty()) truth << format_double(fx.covariate[i]);
    truth << '\n';
  }
  write_text_file(dir / "truth.csv", truth.str());
  s.log() << "simulate: " << fx.periods.size() << " periods, " << fx.events.size() << " events\nwrote "
          << (dir / "events.csv").string() << '\n';
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const TrainingError*>(&e)) return kExitCalibration;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  return kExitValidation;
}

const char* kExitHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  2  validation error (bad flags, config, input data or dimensions)\n"
    "  3  calibration failure (every EM restart failed)\n"
    "  4  numeric failure\n"
    "  5  I/O failure\n";

}  // namespace

void SimulateConfig::validate() const {
  if (!model) throw InputError("simulate.model is required");
  if (model->dim() > 2) throw InputError("simulate supports models of dimension 1 or 2");
  if (n_periods < 1) throw InputError("simulate.n_periods must be >= 1");
  if (max_events_per_period < 1) throw InputError("simulate.max_events_per_period must be >= 1");
}

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, {"seed", "output_dir", "workers", "data", "training", "forecast", "grid", "model", "quantile_path",
                 "grid_csv", "simulate"},
             "");
  RunConfig cfg;
  cfg.fingerprint = hex_digest(fnv1a64(j.dump()));
  if (j.contains("seed")) {
    const json& v = j.at("seed");
    if (!v.is_number_unsigned()) throw InputError("config: seed must be a non-negative integer");
    cfg.seed = v.get<std::uint64_t>();
  }
  if (j.contains("output_dir")) cfg.output_dir = resolve(base_dir, get_string(j, "output_dir", ""));
  if (j.contains("workers")) cfg.workers = static_cast<int>(get_int(j, "workers", ""));
  if (j.contains("data")) parse_data(j.at("data"), base_dir, cfg.data);
  if (j.contains("training")) parse_training(j.at("training"), cfg.training);
  if (j.contains("forecast")) parse_forecast(j.at("forecast"), cfg.forecast, cfg.start_index);
  if (j.contains("grid")) parse_grid(j.at("grid"), cfg.grid);
  if (j.contains("model")) cfg.model_path = resolve(base_dir, get_string(j, "model", ""));
  if (j.contains("quantile_path")) cfg.quantile_path = resolve(base_dir, get_string(j, "quantile_path", ""));
  if (j.contains("grid_csv")) cfg.grid_csv = resolve(base_dir, get_string(j, "grid_csv", ""));
  if (j.contains("simulate")) parse_simulate(j.at("simulate"), base_dir, cfg.simulate);
  cfg.training.validate();
  cfg.forecast.validate();
  if (cfg.start_index < 1) throw InputError("config: forecast.start_index must be >= 1");
  if (cfg.workers < 1) throw InputError("config: workers must be >= 1");
  return cfg;
}

SimulatedFixture simulate_fixture(const SimulateConfig& config, std::uint64_t seed) {
  config.validate();
  const HmmModel& model = *config.model;
  Rng rng(seed);
  const Simulation sim = simulate(model, config.n_periods, rng);
  Rng split(derive_seed(seed, 1));
  const int loss_c = model.dim() - 1;
  const int p0 = period_index(config.start_date, config.frequency);

  SimulatedFixture fx;
  std::uniform_int_distribution<int> n_events(1, config.max_events_per_period);
  std::uniform_real_distribution<double> weight(0.0, 1.0);
  for (int n = 0; n < config.n_periods; ++n) {
    const int p = p0 + n;
    const Date first = period_start(p, config.frequency);
    const int n_days = static_cast<int>((period_end(p, config.frequency) - first).count()) + 1;
    const double y = sim.obs.values()(n, loss_c);
    const long long cents = std::llround(std::max(0.0, y) * 100.0);
    const long long m = std::max<long long>(1, std::min<long long>(n_events(split), cents));

    std::vector<double> w(static_cast<std::size_t>(m));
    double w_total = 0.0;
    for (double& v : w) w_total += (v = weight(split));
    std::vector<long long> parts(static_cast<std::size_t>(m));
    long long assigned = 0;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      parts[i] = static_cast<long long>(std::floor(static_cast<double>(cents) * w[i] / w_total));
      assigned += parts[i];
    }
    parts.back() = cents - assigned;

    std::uniform_int_distribution<int> day(0, n_days - 1);
    std::vector<std::pair<int, long long>> dated;
    for (long long c : parts) dated.emplace_back(day(split), c);
    std::stable_sort(dated.begin(), dated.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    double total = 0.0;
    for (const auto& [offset, c] : dated) {
      LossEvent ev;
      ev.date = first + std::chrono::days(offset);
      ev.amount = static_cast<double>(c) / 100.0;
      ev.type = config.event_type;
      total += ev.amount;
      fx.events.push_back(ev);
    }
    fx.periods.push_back(period_label(p, config.frequency));
    fx.states.push_back(sim.states[static_cast<std::size_t>(n)]);
    fx.loss_totals.push_back(total);
    if (model.dim() == 2) {
      const double x = sim.obs.values()(n, 0);
      fx.covariate.push_back(x);
      fx.macro.observations.emplace_back(period_end(p, config.frequency), x);
    }
  }
  return fx;
}

void write_events(std::ostream& out, const std::vector<LossEvent>& events) {
  out << "date,amount,event_type\n";
  for (const auto& e : events) {
    out << format_iso_date(e.date) << ',' << format_double(e.amount) << ',' << event_type_code(e.type) << '\n';
  }
}

void write_macro(std::ostream& out, const MacroSeries& macro) {
  out << "date,value\n";
  for (const auto& [d, v] : macro.observations) out << format_iso_date(d) << ',' << format_double(v) << '\n';
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Regime-switching Gaussian HMM toolkit for operational-loss forecasting.", "ophmm"};
  app.footer(kExitHelp);
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  int workers = 1;
  bool quiet = false;
  app.add_option("--config", config_path, "JSON run configuration file");
  auto* seed_opt = app.add_option("--seed", seed, "Base seed (overrides config)");
  auto* out_opt = app.add_option("--out", out_dir, "Output directory (overrides config)");
  auto* workers_opt = app.add_option("--workers", workers, "Grid worker threads (overrides config)")
                          ->check(CLI::PositiveNumber);
  app.add_flag("--quiet", quiet, "Suppress progress output");

  auto* fit_cmd = app.add_subcommand("fit", "Aggregate losses and calibrate an HMM by multi-restart EM");
  int states = 0;
  auto* states_opt = fit_cmd->add_option("--states", states, "Number of hidden states (overrides config)")
                         ->check(CLI::Range(1, 6));
  auto* forecast_cmd = app.add_subcommand("forecast", "Recursive one-step-ahead predictive quantile path");
  std::string model_path;
  auto* model_opt = forecast_cmd->add_option("--model", model_path, "Model file (default OUT/model.json)");
  auto* backtest_cmd = app.add_subcommand("backtest", "Exception rate and MSE-on-exceedance of a quantile path");
  std::string qp_path;
  double level = 0.0;
  auto* qp_opt =
      backtest_cmd->add_option("--quantile-path", qp_path, "Quantile path file (default OUT/quantile_path.csv)");
  auto* level_opt =
      backtest_cmd->add_option("--level", level, "Coverage level (default forecast.quantile_level)")
          ->check(CLI::Range(0.0, 1.0));
  auto* grid_cmd = app.add_subcommand("grid", "Run the aggregation x states x covariate experiment grid");
  auto* simulate_cmd = app.add_subcommand("simulate", "Generate synthetic loss events, macro series and truth");
  auto* report_cmd = app.add_subcommand("report", "Render a grid report as a text table");
  std::string grid_csv;
  auto* grid_csv_opt = report_cmd->add_option("--grid-csv", grid_csv, "Grid report (default OUT/grid.csv)");
  for (auto* sub : {fit_cmd, forecast_cmd, backtest_cmd, grid_cmd, simulate_cmd, report_cmd}) sub->fallthrough();

  std::vector<const char*> argv{"ophmm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    RunConfig cfg;
    std::string overrides;
    if (!config_path.empty()) {
      const fs::path p(config_path);
      if (!fs::exists(p)) throw InputError("config file not found: " + config_path);
      cfg = parse_run_config(read_text_file(p), p.parent_path());
    }
    if (seed_opt->count()) {
      cfg.seed = seed;
      overrides += "|seed=" + std::to_string(seed);
    }
    if (out_opt->count()) cfg.output_dir = out_dir;
    if (workers_opt->count()) cfg.workers = workers;
    if (states_opt->count()) {
      cfg.training.n_states = states;
      overrides += "|states=" + std::to_string(states);
    }
    if (model_opt->count()) cfg.model_path = model_path;
    if (qp_opt->count()) cfg.quantile_path = qp_path;
    if (grid_csv_opt->count()) cfg.grid_csv = grid_csv;
    cfg.quiet = quiet;
    if (!overrides.empty()) cfg.fingerprint = hex_digest(fnv1a64(cfg.fingerprint + overrides));

    Session s{std::move(cfg), out, err};
    if (*fit_cmd) return cmd_fit(s);
    if (*forecast_cmd) return cmd_forecast(s);
    if (*backtest_cmd) return cmd_backtest(s, level_opt->count() ? std::optional<double>(level) : std::nullopt);
    if (*grid_cmd) return cmd_grid(s);
    if (*simulate_cmd) return cmd_simulate(s);
    return cmd_report(s);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
}

}  // namespace ophmm
