#include "ophmm/backtest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <istream>
#include <json.hpp>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "ophmm/errors.hpp"
#include "ophmm/model_io.hpp"
#include "ophmm/util.hpp"

namespace ophmm {

namespace {

using nlohmann::json;

std::string sanitize(std::string text) {
  for (char& ch : text) {
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  }
  return text;
}

std::string cell_key(const GridCell& cell, const std::string& series_csv, const TrainingConfig& t,
                     const ForecastConfig& f, const GridOptions& o) {
  std::ostringstream ss;
  ss << event_type_code(cell.event_type) << '|' << cell.label() << '|' << t.max_iterations << '|'
     << format_double(t.loglik_rel_tolerance) << '|' << t.n_restarts << '|' << format_double(t.ridge_epsilon)
     << '|' << t.base_seed << '|' << format_double(t.sticky_diag_init) << '|'
     << format_double(f.quantile_level) << '|' << f.n_samples << '|' << f.seed << '|'
     << f.loss_component.value_or(-1) << '|' << static_cast<int>(f.method) << '|' << o.start_index << '|'
     << series_csv;
  return hex_digest(fnv1a64(ss.str()));
}

json row_to_json(const GridRow& r) {
  json j;
  j["fitted"] = r.fitted;
  j["failure"] = r.failure;
  j["mse_exceedance"] = r.mse_exceedance ? json(*r.mse_exceedance) : json(nullptr);
  j["exception_rate"] = r.exception_rate;
  j["n_periods"] = r.n_periods;
  j["n_exceptions"] = r.n_exceptions;
  j["log_likelihood"] = r.log_likelihood;
  j["aic"] = r.aic;
  j["bic"] = r.bic;
  j["n_iterations"] = r.n_iterations;
  j["converged"] = r.converged;
  return j;
}

void row_from_json(const json& j, GridRow& r) {
  r.fitted = j.at("fitted").get<bool>();
  r.failure = j.at("failure").get<std::string>();
  if (j.at("mse_exceedance").is_null()) {
    r.mse_exceedance.reset();
  } else {
    r.mse_exceedance = j.at("mse_exceedance").get<double>();
  }
  r.exception_rate = j.at("exception_rate").get<double>();
  r.n_periods = j.at("n_periods").get<int>();
  r.n_exceptions = j.at("n_exceptions").get<int>();
  r.log_likelihood = j.at("log_likelihood").get<double>();
  r.aic = j.at("aic").get<double>();
  r.bic = j.at("bic").get<double>();
  r.n_iterations = j.at("n_iterations").get<int>();
  r.converged = j.at("converged").get<bool>();
}

std::string frequency_heading(Frequency f) {
  switch (f) {
    case Frequency::quarterly: return "Quarterly";
    case Frequency::monthly: return "Monthly";
    case Frequency::weekly: return "Weekly";
  }
  return "";
}

std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace

BacktestResult exceedances(std::span<const double> realized, std::span<const double> predicted) {
  if (realized.size() != predicted.size()) {
    throw InputError("realized has " + std::to_string(realized.size()) + " periods, predicted has " +
                     std::to_string(predicted.size()));
  }
  if (realized.empty()) throw InputError("backtest needs at least one period");
  BacktestResult res;
  res.n_periods = static_cast<int>(realized.size());
  res.exceptions.resize(realized.size());
  double sq = 0.0;
  for (std::size_t t = 0; t < realized.size(); ++t) {
    const int hit = realized[t] >= predicted[t] ? 1 : 0;
    res.exceptions[t] = hit;
    if (hit) {
      ++res.n_exceptions;
      const double gap = realized[t] - predicted[t];
      sq += gap * gap;
    }
  }
  res.exception_rate = static_cast<double>(res.n_exceptions) / static_cast<double>(res.n_periods);
  if (res.n_exceptions > 0) res.mse_exceedance = sq / static_cast<double>(res.n_exceptions);
  return res;
}

CoverageResult coverage_check(const BacktestResult& result, double level) {
  CoverageResult c;
  c.expected_rate = 1.0 - level;
  c.n_periods = result.n_periods;
  c.n_exceptions = result.n_exceptions;
  c.observed_rate = result.exception_rate;
  const double half =
      kCoverageZ * std::sqrt(c.expected_rate * (1.0 - c.expected_rate) / static_cast<double>(result.n_periods));
  c.lower = c.expected_rate - half;
  c.upper = c.expected_rate + half;
  c.pass = c.observed_rate >= c.lower && c.observed_rate <= c.upper;
  return c;
}

CoverageResult calibration_coverage_test(const HmmModel& model, int n_periods,
                                         const ForecastConfig& forecast, double test_level,
                                         std::uint64_t simulation_seed) {
  if (n_periods < 1) throw InputError("coverage test needs at least one period");
  Rng rng(simulation_seed);
  const Simulation sim = simulate(model, n_periods + 1, rng);
  const QuantilePath path = quantile_path(model, sim.obs, forecast, 1);
  const int c = forecast.resolve_loss_component(model.dim());
  std::vector<double> realized;
  realized.reserve(static_cast<std::size_t>(n_periods));
  for (int n = 1; n <= n_periods; ++n) realized.push_back(sim.obs.values()(n, c));
  return coverage_check(exceedances(realized, path.predicted_quantiles), test_level);
}

std::string GridCell::label() const {
  std::string s(1, frequency_letter(frequency));
  s += "-" + std::to_string(n_states);
  if (include_covariate) s += "-M";
  return s;
}

void GridSpec::validate() const {
  if (aggregations.empty() || state_counts.empty() || covariate_modes.empty() || event_types.empty()) {
    throw InputError("grid spec needs at least one value on every axis");
  }
  for (int k : state_counts) {
    if (k < 2 || k > 6) throw InputError("grid state counts must lie in 2..6, got " + std::to_string(k));
  }
}

std::vector<GridCell> GridSpec::cells() const {
  validate();
  std::vector<GridCell> out;
  for (EventType et : event_types) {
    for (Frequency f : aggregations) {
      for (int k : state_counts) {
        for (bool cov : covariate_modes) out.push_back(GridCell{et, f, k, cov});
      }
    }
  }
  return out;
}

std::uint64_t cell_stream(const GridCell& cell) {
  return fnv1a64(event_type_code(cell.event_type) + "/" + cell.label());
}

GridRow run_cell(const GridCell& cell, const std::vector<LossEvent>& events, const MacroSeries* macro,
                 const TrainingConfig& training, const ForecastConfig& forecast,
                 const GridOptions& options) {
  GridRow row;
  row.cell = cell;
  std::optional<std::filesystem::path> dir;
  if (options.run_dir) {
    dir = *options.run_dir / "cells" / event_type_code(cell.event_type) / cell.label();
  }
  try {
    if (cell.include_covariate && macro == nullptr) {
      throw InputError("covariate requested but no macro series supplied");
    }
    PipelineOptions popt;
    popt.frequency = cell.frequency;
    popt.event_type = cell.event_type;
    popt.iqr_filter = options.iqr_filter;
    popt.log_transform = options.log_transform;
    // Both covariate modes use the aligned periods so that matched cells are
    // backtested on the same window.
    const AlignedSeries series = prepare_series(events, macro, popt);
    std::ostringstream series_csv;
    write_series(series_csv, series);

    const std::uint64_t stream = cell_stream(cell);
    TrainingConfig tcfg = training;
    tcfg.n_states = cell.n_states;
    tcfg.base_seed = derive_seed(training.base_seed, stream);
    ForecastConfig fcfg = forecast;
    fcfg.seed = derive_seed(forecast.seed, stream);
    const std::string key = cell_key(cell, series_csv.str(), tcfg, fcfg, options);

    if (dir && std::filesystem::exists(*dir / "cell.json")) {
      try {
        const json cached = json::parse(read_text_file(*dir / "cell.json"));
        if (cached.value("key", std::string{}) == key) {
          row_from_json(cached.at("row"), row);
          return row;
        }
      } catch (const json::exception&) {
        // stale or truncated cache entry: recompute
      }
    }

    try {
      const ObservationSequence obs = series.observations(cell.include_covariate);
      const FitResult fr = fit(obs, tcfg);
      const QuantilePath path = quantile_path(fr.model, obs, fcfg, options.start_index);
      if (path.predicted_quantiles.empty()) throw InputError("series too short to backtest");
      std::vector<double> realized(series.loss.begin() + options.start_index, series.loss.end());
      const BacktestResult bt = exceedances(realized, path.predicted_quantiles);

      row.fitted = true;
      row.mse_exceedance = bt.mse_exceedance;
      row.exception_rate = bt.exception_rate;
      row.n_periods = bt.n_periods;
      row.n_exceptions = bt.n_exceptions;
      row.log_likelihood = fr.final_log_likelihood;
      row.aic = fr.aic;
      row.bic = fr.bic;
      row.n_iterations = fr.n_iterations;
      row.converged = fr.converged;

      if (dir) {
        save_model(*dir / "model.json", fr.model,
                   ModelMetadata{hex_digest(fnv1a64(key)), hex_digest(fnv1a64(series_csv.str())),
                                 series.periods.back()});
        std::ostringstream p;
        write_quantile_path(p, path);
        write_text_file(*dir / "quantile_path.csv", p.str());
      }
    } catch (const Error& e) {
      row = GridRow{};
      row.cell = cell;
      row.failure = e.what();
    }
    if (dir) {
      json doc{{"key", key}, {"label", cell.label()}, {"event_type", event_type_code(cell.event_type)},
               {"row", row_to_json(row)}};
      write_text_file(*dir / "cell.json", doc.dump(2) + "\n");
    }
  } catch (const Error& e) {
    row = GridRow{};
    row.cell = cell;
    row.failure = e.what();
  }
  return row;
}

GridReport run_grid(const std::vector<LossEvent>& events, const MacroSeries* macro, const GridSpec& spec,
                    const TrainingConfig& training, const ForecastConfig& forecast,
                    const GridOptions& options) {
  training.validate();
  forecast.validate();
  const std::vector<GridCell> cells = spec.cells();
  GridReport report;
  report.rows.resize(cells.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      report.rows[i] = run_cell(cells[i], events, macro, training, forecast, options);
    }
  };
  const int n_workers = std::clamp(options.workers, 1, static_cast<int>(std::max<std::size_t>(cells.size(), 1)));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return report;
}

void write_grid_csv(std::ostream& out, const GridReport& report) {
  out << "event_type,label,aggregation,n_states,covariate,status,mse_exceedance,exception_rate,"
         "n_periods,n_exceptions,log_likelihood,aic,bic,n_iterations,converged,failure\n";
  for (const auto& r : report.rows) {
    out << event_type_code(r.cell.event_type) << ',' << r.cell.label() << ','
        << frequency_name(r.cell.frequency) << ',' << r.cell.n_states << ','
        << (r.cell.include_covariate ? "included" : "excluded") << ',';
    if (!r.fitted) {
      out << "unfit,-,-,-,-,-,-,-,-,-," << sanitize(r.failure) << '\n';
      continue;
    }
    out << "ok," << (r.mse_exceedance ? format_double(*r.mse_exceedance) : std::string("NA")) << ','
        << format_double(r.exception_rate) << ',' << r.n_periods << ',' << r.n_exceptions << ','
        << format_double(r.log_likelihood) << ',' << format_double(r.aic) << ',' << format_double(r.bic)
        << ',' << r.n_iterations << ',' << (r.converged ? 1 : 0) << ",\n";
  }
}

GridReport read_grid_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line).rfind("event_type,label,", 0) != 0) {
    throw IngestionError("not a grid report (bad header)", 1);
  }
  GridReport report;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 16) throw IngestionError("expected 16 fields", line_no);
    GridRow r;
    const auto et = parse_event_type(f[0]);
    const auto freq = parse_frequency(f[2]);
    if (!et || !freq) throw IngestionError("bad event type or aggregation", line_no);
    r.cell.event_type = *et;
    r.cell.frequency = *freq;
    r.cell.n_states = std::stoi(f[3]);
    r.cell.include_covariate = f[4] == "included";
    r.fitted = f[5] == "ok";
    if (r.fitted) {
      if (f[6] != "NA") r.mse_exceedance = parse_double(f[6]);
      auto num = [&](const std::string& s) {
        const auto v = parse_double(s);
        if (!v) throw IngestionError("unparseable number '" + s + "'", line_no);
        return *v;
      };
      r.exception_rate = num(f[7]);
      r.n_periods = std::stoi(f[8]);
      r.n_exceptions = std::stoi(f[9]);
      r.log_likelihood = num(f[10]);
      r.aic = num(f[11]);
      r.bic = num(f[12]);
      r.n_iterations = std::stoi(f[13]);
      r.converged = f[14] == "1";
    } else {
      r.failure = f[15];
    }
    report.rows.push_back(std::move(r));
  }
  return report;
}

void write_grid_table(std::ostream& out, const GridReport& report) {
  std::vector<EventType> types;
  std::vector<Frequency> freqs;
  std::vector<int> ks;
  for (const auto& r : report.rows) {
    if (std::find(types.begin(), types.end(), r.cell.event_type) == types.end()) types.push_back(r.cell.event_type);
    if (std::find(freqs.begin(), freqs.end(), r.cell.frequency) == freqs.end()) freqs.push_back(r.cell.frequency);
    if (std::find(ks.begin(), ks.end(), r.cell.n_states) == ks.end()) ks.push_back(r.cell.n_states);
  }
  constexpr int kFirst = 10;
  constexpr int kCol = 11;
  auto cell_text = [&](EventType et, Frequency f, int k, bool cov) -> std::string {
    for (const auto& r : report.rows) {
      if (r.cell.event_type == et && r.cell.frequency == f && r.cell.n_states == k &&
          r.cell.include_covariate == cov) {
        if (!r.fitted) return "-";
        return r.mse_exceedance ? format_metric(*r.mse_exceedance) : "n/a";
      }
    }
    return "";
  };

  for (EventType et : types) {
    out << event_type_code(et) << " -- " << event_type_name(et) << '\n';
    out << std::left << std::setw(kFirst) << "";
    for (Frequency f : freqs) out << std::setw(2 * kCol) << frequency_heading(f);
    out << '\n' << std::setw(kFirst) << "Model";
    for (std::size_t i = 0; i < freqs.size(); ++i) out << std::setw(kCol) << "Excl." << std::setw(kCol) << "Incl.";
    out << '\n';
    for (int k : ks) {
      out << std::setw(kFirst) << (std::to_string(k) + "-State");
      for (Frequency f : freqs) {
        out << std::setw(kCol) << cell_text(et, f, k, false) << std::setw(kCol) << cell_text(et, f, k, true);
      }
      out << '\n';
    }
    out << '\n';
  }
  out << std::right;
}

}  // namespace ophmm
