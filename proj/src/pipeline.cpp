#include "ophmm/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>

#include "ophmm/errors.hpp"
#include "ophmm/util.hpp"

namespace ophmm {

namespace chr = std::chrono;

namespace {

// 1970-01-01 is a Thursday; the ISO week containing it starts on day -3.
constexpr int kEpochMondayOffset = 3;

int floor_div(int a, int b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); }

std::string pad(int value, int width) {
  std::string s = std::to_string(value);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

// Column positions by lower-cased header name.
std::map<std::string, int> header_index(const std::string& header) {
  std::map<std::string, int> idx;
  const auto fields = split_fields(header);
  for (std::size_t i = 0; i < fields.size(); ++i) {
    std::string name = fields[i];
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    idx[name] = static_cast<int>(i);
  }
  return idx;
}

int require_column(const std::map<std::string, int>& idx, const std::string& name) {
  auto it = idx.find(name);
  if (it == idx.end()) throw IngestionError("header lacks column '" + name + "'", 1);
  return it->second;
}

}  // namespace

std::optional<Date> parse_iso_date(std::string_view text) {
  text = trim(text);
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  auto num = [](std::string_view s, auto& out) {
    auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc{} && r.ptr == s.data() + s.size();
  };
  if (!num(text.substr(0, 4), y) || !num(text.substr(5, 2), m) || !num(text.substr(8, 2), d)) {
    return std::nullopt;
  }
  const chr::year_month_day ymd{chr::year{y}, chr::month{m}, chr::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return Date{ymd};
}

std::string format_iso_date(Date date) {
  const chr::year_month_day ymd{date};
  return pad(static_cast<int>(ymd.year()), 4) + "-" + pad(static_cast<int>(static_cast<unsigned>(ymd.month())), 2) +
         "-" + pad(static_cast<int>(static_cast<unsigned>(ymd.day())), 2);
}

std::optional<EventType> parse_event_type(std::string_view code) {
  code = trim(code);
  if (code.size() == 3 && (code[0] == 'E' || code[0] == 'e') && (code[1] == 'T' || code[1] == 't') &&
      code[2] >= '1' && code[2] <= '7') {
    return static_cast<EventType>(code[2] - '0');
  }
  return std::nullopt;
}

std::string event_type_code(EventType type) { return "ET" + std::to_string(static_cast<int>(type)); }

std::string_view event_type_name(EventType type) {
  switch (type) {
    case EventType::internal_fraud: return "Internal Fraud";
    case EventType::external_fraud: return "External Fraud";
    case EventType::employment_practices: return "Employment Practices";
    case EventType::clients_products_business: return "Clients, Products & Business Practices";
    case EventType::physical_damage: return "Damage to Physical Assets";
    case EventType::system_failures: return "Business Disruption & System Failures";
    case EventType::execution_delivery_process: return "Execution, Delivery & Process Management";
  }
  return "";
}

const std::vector<EventType>& all_event_types() {
  static const std::vector<EventType> types = {
      EventType::internal_fraud,  EventType::external_fraud,  EventType::employment_practices,
      EventType::clients_products_business, EventType::physical_damage, EventType::system_failures,
      EventType::execution_delivery_process};
  return types;
}

std::optional<Frequency> parse_frequency(std::string_view text) {
  text = trim(text);
  if (text == "weekly" || text == "W") return Frequency::weekly;
  if (text == "monthly" || text == "M") return Frequency::monthly;
  if (text == "quarterly" || text == "Q") return Frequency::quarterly;
  return std::nullopt;
}

std::string_view frequency_name(Frequency f) {
  switch (f) {
    case Frequency::weekly: return "weekly";
    case Frequency::monthly: return "monthly";
    case Frequency::quarterly: return "quarterly";
  }
  return "";
}

char frequency_letter(Frequency f) {
  switch (f) {
    case Frequency::weekly: return 'W';
    case Frequency::monthly: return 'M';
    case Frequency::quarterly: return 'Q';
  }
  return '?';
}

int period_index(Date date, Frequency f) {
  const chr::year_month_day ymd{date};
  const int y = static_cast<int>(ymd.year());
  const int m = static_cast<int>(static_cast<unsigned>(ymd.month())) - 1;
  switch (f) {
    case Frequency::weekly:
      return floor_div(static_cast<int>(date.time_since_epoch().count()) + kEpochMondayOffset, 7);
    case Frequency::monthly: return y * 12 + m;
    case Frequency::quarterly: return y * 4 + m / 3;
  }
  return 0;
}

Date period_start(int index, Frequency f) {
  switch (f) {
    case Frequency::weekly: return Date{chr::days{index * 7 - kEpochMondayOffset}};
    case Frequency::monthly:
      return Date{chr::year{floor_div(index, 12)} / chr::month{static_cast<unsigned>(index - 12 * floor_div(index, 12) + 1)} / 1};
    case Frequency::quarterly: {
      const int y = floor_div(index, 4);
      const int q = index - 4 * y;
      return Date{chr::year{y} / chr::month{static_cast<unsigned>(3 * q + 1)} / 1};
    }
  }
  return Date{};
}

Date period_end(int index, Frequency f) { return period_start(index + 1, f) - chr::days{1}; }

std::string period_label(int index, Frequency f) {
  switch (f) {
    case Frequency::weekly: {
      const Date thursday = period_start(index, f) + chr::days{3};
      const chr::year_month_day ymd{thursday};
      const Date jan1{ymd.year() / chr::January / 1};
      const int week = static_cast<int>((thursday - jan1).count()) / 7 + 1;
      return pad(static_cast<int>(ymd.year()), 4) + "-W" + pad(week, 2);
    }
    case Frequency::monthly: {
      const int y = floor_div(index, 12);
      return pad(y, 4) + "-" + pad(index - 12 * y + 1, 2);
    }
    case Frequency::quarterly: {
      const int y = floor_div(index, 4);
      return pad(y, 4) + "Q" + std::to_string(index - 4 * y + 1);
    }
  }
  return "";
}

std::vector<std::string> AggregatedSeries::labels() const {
  std::vector<std::string> out;
  out.reserve(periods.size());
  for (int p : periods) out.push_back(period_label(p, frequency));
  return out;
}

std::vector<LossEvent> ingest_losses(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("missing header row", 1);
  const auto idx = header_index(line);
  const int c_date = require_column(idx, "date");
  const int c_amount = require_column(idx, "amount");
  const int c_type = require_column(idx, "event_type");
  const auto n_cols = static_cast<std::size_t>(std::max({c_date, c_amount, c_type}) + 1);

  std::vector<LossEvent> events;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    if (f.size() < n_cols) throw IngestionError("expected at least " + std::to_string(n_cols) + " fields", line_no);
    LossEvent ev;
    ev.line = line_no;
    const auto date = parse_iso_date(f[static_cast<std::size_t>(c_date)]);
    if (!date) throw IngestionError("unparseable date '" + f[static_cast<std::size_t>(c_date)] + "'", line_no);
    ev.date = *date;
    const auto amount = parse_double(f[static_cast<std::size_t>(c_amount)]);
    if (!amount) throw IngestionError("unparseable amount '" + f[static_cast<std::size_t>(c_amount)] + "'", line_no);
    if (*amount < 0.0) throw IngestionError("negative amount " + f[static_cast<std::size_t>(c_amount)], line_no);
    ev.amount = *amount;
    const auto type = parse_event_type(f[static_cast<std::size_t>(c_type)]);
    if (!type) throw IngestionError("unknown event_type '" + f[static_cast<std::size_t>(c_type)] + "'", line_no);
    ev.type = *type;
    events.push_back(ev);
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const LossEvent& a, const LossEvent& b) { return a.date < b.date; });
  return events;
}

MacroSeries ingest_macro(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("missing header row", 1);
  const auto idx = header_index(line);
  const int c_date = require_column(idx, "date");
  const int c_value = require_column(idx, "value");
  const auto n_cols = static_cast<std::size_t>(std::max(c_date, c_value) + 1);

  MacroSeries macro;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    if (f.size() < n_cols) throw IngestionError("expected at least " + std::to_string(n_cols) + " fields", line_no);
    const auto date = parse_iso_date(f[static_cast<std::size_t>(c_date)]);
    if (!date) throw IngestionError("unparseable date '" + f[static_cast<std::size_t>(c_date)] + "'", line_no);
    const auto value = parse_double(f[static_cast<std::size_t>(c_value)]);
    if (!value) throw IngestionError("unparseable value '" + f[static_cast<std::size_t>(c_value)] + "'", line_no);
    if (!macro.observations.empty() && !(macro.observations.back().first < *date)) {
      throw IngestionError("dates not strictly increasing at " + f[static_cast<std::size_t>(c_date)], line_no);
    }
    macro.observations.emplace_back(*date, *value);
  }
  return macro;
}

AggregatedSeries aggregate(const std::vector<LossEvent>& events, Frequency frequency,
                           std::optional<EventType> event_type) {
  int first = 0;
  int last = -1;
  bool any = false;
  for (const auto& ev : events) {
    if (event_type && ev.type != *event_type) continue;
    const int p = period_index(ev.date, frequency);
    if (!any || p < first) first = p;
    if (!any || p > last) last = p;
    any = true;
  }
  if (!any) {
    throw InputError(event_type ? "no loss events of type " + event_type_code(*event_type)
                                : std::string("no loss events"));
  }
  AggregatedSeries series;
  series.frequency = frequency;
  const auto n = static_cast<std::size_t>(last - first + 1);
  series.periods.resize(n);
  for (std::size_t i = 0; i < n; ++i) series.periods[i] = first + static_cast<int>(i);
  series.loss_totals.assign(n, 0.0);
  series.winsorized.assign(n, false);
  for (const auto& ev : events) {
    if (event_type && ev.type != *event_type) continue;
    series.loss_totals[static_cast<std::size_t>(period_index(ev.date, frequency) - first)] += ev.amount;
  }
  return series;
}

double quantile_type7(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw InputError("quantile of empty data");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

IqrFilterResult iqr_filter(std::span<const double> values) {
  if (values.size() < 4) {
    throw InputError("IQR filter needs at least 4 values, got " + std::to_string(values.size()));
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  IqrFilterResult res;
  res.q1 = quantile_type7(sorted, 0.25);
  res.q3 = quantile_type7(sorted, 0.75);
  const double iqr = res.q3 - res.q1;
  res.lower_fence = res.q1 - 1.5 * iqr;
  res.upper_fence = res.q3 + 1.5 * iqr;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < res.lower_fence || values[i] > res.upper_fence) {
      res.removed_indices.push_back(i);
    } else {
      res.kept.push_back(values[i]);
    }
  }
  return res;
}

AggregatedSeries winsorize_losses(AggregatedSeries series) {
  series.winsorized.assign(series.loss_totals.size(), false);
  if (series.loss_totals.size() < 4) return series;
  const IqrFilterResult f = iqr_filter(series.loss_totals);
  for (std::size_t i : f.removed_indices) {
    double& v = series.loss_totals[i];
    v = v < f.lower_fence ? f.lower_fence : f.upper_fence;
    series.winsorized[i] = true;
  }
  return series;
}

ObservationSequence AlignedSeries::observations(bool include_covariate) const {
  if (include_covariate && !has_covariate()) {
    throw InputError("series has no covariate column");
  }
  const auto n = static_cast<Eigen::Index>(loss.size());
  Eigen::MatrixXd v(n, include_covariate ? 2 : 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (include_covariate) {
      v(i, 0) = covariate[static_cast<std::size_t>(i)];
      v(i, 1) = loss[static_cast<std::size_t>(i)];
    } else {
      v(i, 0) = loss[static_cast<std::size_t>(i)];
    }
  }
  return ObservationSequence(std::move(v), periods);
}

AlignedSeries align(const AggregatedSeries& losses, const MacroSeries& macro) {
  AlignedSeries out;
  const auto& obs = macro.observations;
  std::size_t cursor = 0;  // first macro observation after the current period end
  for (std::size_t i = 0; i < losses.periods.size(); ++i) {
    const Date end = period_end(losses.periods[i], losses.frequency);
    while (cursor < obs.size() && obs[cursor].first <= end) ++cursor;
    if (cursor == 0) {
      ++out.dropped_front;
      continue;
    }
    out.periods.push_back(period_label(losses.periods[i], losses.frequency));
    out.covariate.push_back(obs[cursor - 1].second);
    out.loss.push_back(losses.loss_totals[i]);
    out.winsorized.push_back(i < losses.winsorized.size() && losses.winsorized[i]);
  }
  if (out.loss.empty()) {
    throw AlignmentError("no loss period has a macro observation on or before its end");
  }
  return out;
}

AlignedSeries loss_only(const AggregatedSeries& losses) {
  AlignedSeries out;
  out.periods = losses.labels();
  out.loss = losses.loss_totals;
  out.winsorized = losses.winsorized;
  out.winsorized.resize(out.loss.size(), false);
  return out;
}

AlignedSeries prepare_series(const std::vector<LossEvent>& events, const MacroSeries* macro,
                             const PipelineOptions& options) {
  AggregatedSeries series = aggregate(events, options.frequency, options.event_type);
  if (options.log_transform) {
    for (double& v : series.loss_totals) v = std::log1p(v);
  }
  if (options.iqr_filter) series = winsorize_losses(std::move(series));
  return macro ? align(series, *macro) : loss_only(series);
}

void write_series(std::ostream& out, const AlignedSeries& series) {
  out << "period,covariate,loss,winsorized_flag\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    out << series.periods[i] << ',';
    if (series.has_covariate()) out << format_double(series.covariate[i]);
    out << ',' << format_double(series.loss[i]) << ',' << (series.winsorized[i] ? 1 : 0) << '\n';
  }
}

AlignedSeries read_series(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != "period,covariate,loss,winsorized_flag") {
    throw IngestionError("expected header 'period,covariate,loss,winsorized_flag'", 1);
  }
  AlignedSeries s;
  long line_no = 1;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 4) throw IngestionError("expected 4 fields", line_no);
    const bool has_cov = !f[1].empty();
    if (first) {
      first = false;
    } else if (has_cov != s.has_covariate()) {
      throw IngestionError("covariate column must be filled on every row or on none", line_no);
    }
    if (has_cov) {
      const auto c = parse_double(f[1]);
      if (!c) throw IngestionError("unparseable covariate '" + f[1] + "'", line_no);
      s.covariate.push_back(*c);
    }
    const auto l = parse_double(f[2]);
    if (!l) throw IngestionError("unparseable loss '" + f[2] + "'", line_no);
    if (f[3] != "0" && f[3] != "1") throw IngestionError("winsorized_flag must be 0 or 1", line_no);
    if (!s.periods.empty() && !(s.periods.back() < f[0])) {
      throw IngestionError("periods not strictly increasing at '" + f[0] + "'", line_no);
    }
    s.periods.push_back(f[0]);
    s.loss.push_back(*l);
    s.winsorized.push_back(f[3] == "1");
  }
  return s;
}

}  // namespace ophmm
