#pragma once

#include <chrono>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ophmm/hmm.hpp"

namespace ophmm {

using Date = std::chrono::sys_days;

std::optional<Date> parse_iso_date(std::string_view text);
std::string format_iso_date(Date date);

// Basel II event-type taxonomy.
enum class EventType {
  internal_fraud = 1,          // ET1
  external_fraud,              // ET2
  employment_practices,        // ET3
  clients_products_business,   // ET4
  physical_damage,             // ET5
  system_failures,             // ET6
  execution_delivery_process,  // ET7
};

std::optional<EventType> parse_event_type(std::string_view code);
std::string event_type_code(EventType type);
std::string_view event_type_name(EventType type);
const std::vector<EventType>& all_event_types();

enum class Frequency { weekly, monthly, quarterly };

std::optional<Frequency> parse_frequency(std::string_view text);  // "weekly" or "W", ...
std::string_view frequency_name(Frequency f);
char frequency_letter(Frequency f);  // W / M / Q

// Calendar periods are numbered by a contiguous integer index per frequency:
// ISO weeks (Mon-Sun), calendar months, calendar quarters.
int period_index(Date date, Frequency f);
Date period_start(int index, Frequency f);
Date period_end(int index, Frequency f);
// "2005-W03", "2005-03", "2005Q1"; sort order matches index order.
std::string period_label(int index, Frequency f);

struct LossEvent {
  Date date;
  double amount = 0.0;
  EventType type = EventType::internal_fraud;
  long line = 0;  // source line, 0 if not read from a file
};

struct MacroSeries {
  std::vector<std::pair<Date, double>> observations;
};

struct AggregatedSeries {
  Frequency frequency = Frequency::monthly;
  std::vector<int> periods;  // contiguous indices
  std::vector<double> loss_totals;
  std::vector<bool> winsorized;  // set by winsorize_losses
  std::optional<std::vector<double>> covariate;

  std::vector<std::string> labels() const;
};

/// CSV with a header naming date, amount and event_type (any column order).
/// Result is sorted by date (stable).
std::vector<LossEvent> ingest_losses(std::istream& in);
/// CSV with header date,value; dates strictly increasing.
MacroSeries ingest_macro(std::istream& in);

/// Per-period sums over [first event period, last event period]; empty
/// interior periods carry 0. Throws InputError if the filter leaves nothing.
AggregatedSeries aggregate(const std::vector<LossEvent>& events, Frequency frequency,
                           std::optional<EventType> event_type = std::nullopt);

/// Type-7 quantile (linear interpolation of order statistics) of sorted data.
double quantile_type7(std::span<const double> sorted, double p);

struct IqrFilterResult {
  std::vector<double> kept;
  std::vector<std::size_t> removed_indices;
  double q1 = 0.0;
  double q3 = 0.0;
  double lower_fence = 0.0;
  double upper_fence = 0.0;
};

/// Tukey fences Q1 - 1.5 IQR <= x <= Q3 + 1.5 IQR; boundary values are kept.
/// Requires at least 4 values.
IqrFilterResult iqr_filter(std::span<const double> values);

/// Clamp out-of-fence loss totals to the nearest fence and flag them.
AggregatedSeries winsorize_losses(AggregatedSeries series);

struct AlignedSeries {
  std::vector<std::string> periods;
  std::vector<double> covariate;  // empty when the series has no covariate
  std::vector<double> loss;
  std::vector<bool> winsorized;
  int dropped_front = 0;

  bool has_covariate() const { return !covariate.empty(); }
  std::size_t size() const { return loss.size(); }
  /// d = 2 (covariate, loss) or d = 1 (loss only).
  ObservationSequence observations(bool include_covariate) const;
};

/// Pair each loss period with the last macro observation on or before the
/// period end. Leading periods with no such observation are dropped and
/// counted. Throws AlignmentError when nothing remains.
AlignedSeries align(const AggregatedSeries& losses, const MacroSeries& macro);

/// Loss-only view of an aggregated series.
AlignedSeries loss_only(const AggregatedSeries& losses);

struct PipelineOptions {
  Frequency frequency = Frequency::monthly;
  std::optional<EventType> event_type;
  bool iqr_filter = true;
  bool log_transform = false;  // log1p on period totals before filtering
};

/// aggregate -> optional log1p -> winsorize -> align (when macro is given).
AlignedSeries prepare_series(const std::vector<LossEvent>& events, const MacroSeries* macro,
                             const PipelineOptions& options);

// Delimited text: period,covariate,loss,winsorized_flag (covariate empty when absent).
void write_series(std::ostream& out, const AlignedSeries& series);
AlignedSeries read_series(std::istream& in);

}  // namespace ophmm
