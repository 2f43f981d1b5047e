#include <doctest.h>

#include <map>
#include <numeric>
#include <sstream>

#include "ophmm/errors.hpp"
#include "ophmm/pipeline.hpp"

using namespace ophmm;

namespace {

Date D(const char* iso) { return *parse_iso_date(iso); }

LossEvent ev(const char* iso, double amount, EventType t = EventType::internal_fraud) {
  return LossEvent{D(iso), amount, t, 0};
}

// Per-day accumulation: every calendar day between the first and last event
// is visited and its amount is added to the bucket named by its label.
std::map<std::string, double> per_day_totals(const std::vector<LossEvent>& events, Frequency f) {
  std::map<Date, double> by_day;
  for (const auto& e : events) by_day[e.date] += e.amount;
  std::map<std::string, double> out;
  for (Date d = by_day.begin()->first; d <= by_day.rbegin()->first; d += std::chrono::days{1}) {
    auto it = by_day.find(d);
    out[period_label(period_index(d, f), f)] += it == by_day.end() ? 0.0 : it->second;
  }
  return out;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("dates and period labels") {
  CHECK(format_iso_date(D("2005-03-15")) == "2005-03-15");
  CHECK_FALSE(parse_iso_date("2005-02-30"));
  CHECK_FALSE(parse_iso_date("2005/02/01"));
  CHECK(period_label(period_index(D("2005-03-15"), Frequency::monthly), Frequency::monthly) == "2005-03");
  CHECK(period_label(period_index(D("2005-03-15"), Frequency::quarterly), Frequency::quarterly) == "2005Q1");
  CHECK(period_label(period_index(D("2005-01-17"), Frequency::weekly), Frequency::weekly) == "2005-W03");
  // ISO week 1 of 2005 starts Monday 2005-01-03; 2005-01-02 belongs to 2004-W53.
  CHECK(period_label(period_index(D("2005-01-02"), Frequency::weekly), Frequency::weekly) == "2004-W53");
  CHECK(period_label(period_index(D("2008-12-29"), Frequency::weekly), Frequency::weekly) == "2009-W01");
  const int w = period_index(D("2005-01-19"), Frequency::weekly);
  CHECK(format_iso_date(period_start(w, Frequency::weekly)) == "2005-01-17");
  CHECK(format_iso_date(period_end(w, Frequency::weekly)) == "2005-01-23");
  const int q = period_index(D("2004-11-30"), Frequency::quarterly);
  CHECK(format_iso_date(period_end(q, Frequency::quarterly)) == "2004-12-31");
  CHECK(format_iso_date(period_end(period_index(D("2004-02-10"), Frequency::monthly), Frequency::monthly)) ==
        "2004-02-29");
}

TEST_CASE("labels sort in period order") {
  for (Frequency f : {Frequency::weekly, Frequency::monthly, Frequency::quarterly}) {
    const int first = period_index(D("1998-06-01"), f);
    for (int p = first; p < first + 700; ++p) CHECK(period_label(p, f) < period_label(p + 1, f));
  }
}

TEST_CASE("event type and frequency codes") {
  CHECK(parse_event_type("ET5") == EventType::physical_damage);
  CHECK_FALSE(parse_event_type("ET9"));
  CHECK(event_type_code(EventType::execution_delivery_process) == "ET7");
  CHECK(all_event_types().size() == 7);
  CHECK(parse_frequency("W") == Frequency::weekly);
  CHECK(parse_frequency("quarterly") == Frequency::quarterly);
  CHECK_FALSE(parse_frequency("daily"));
}

TEST_CASE("ingest header only") {
  std::istringstream in("date,amount,event_type\n");
  CHECK(ingest_losses(in).empty());
}

TEST_CASE("ingest sorts by date and accepts any column order") {
  std::istringstream in("event_type,Amount,date\nET1,3,2005-03-01\nET2,1,2005-01-01\nET1,2,2005-02-01\n");
  const auto events = ingest_losses(in);
  REQUIRE(events.size() == 3);
  CHECK(events[0].amount == 1.0);
  CHECK(events[0].type == EventType::external_fraud);
  CHECK(events[0].line == 3);
  CHECK(events[2].amount == 3.0);
}

TEST_CASE("ingest errors carry the line number") {
  auto fails_on = [](const std::string& body, long line, const std::string& needle) {
    std::istringstream in("date,amount,event_type\n" + body);
    try {
      ingest_losses(in);
      FAIL("expected IngestionError");
    } catch (const IngestionError& e) {
      CHECK(e.line() == line);
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  fails_on("2005-01-01,1,ET1\n2005-01-02,1,ET9\n", 3, "ET9");
  fails_on("2005-13-01,1,ET1\n", 2, "2005-13-01");
  fails_on("2005-01-01,abc,ET1\n", 2, "abc");
  fails_on("2005-01-01,-4,ET1\n", 2, "negative");
  std::istringstream missing("date,amount\n");
  CHECK_THROWS_AS(ingest_losses(missing), IngestionError);
}

TEST_CASE("macro ingestion") {
  std::istringstream ok("date,value\n2005-01-03,20.5\n2005-01-04,21\n");
  CHECK(ingest_macro(ok).observations.size() == 2);
  std::istringstream dup("date,value\n2005-01-03,20.5\n2005-01-03,21\n");
  CHECK_THROWS_AS(ingest_macro(dup), IngestionError);
  std::istringstream nan("date,value\n2005-01-03,nan\n");
  CHECK_THROWS_AS(ingest_macro(nan), IngestionError);
}

TEST_CASE("aggregation examples") {
  const auto m = aggregate({ev("2005-03-15", 100)}, Frequency::monthly);
  REQUIRE(m.periods.size() == 1);
  CHECK(m.labels()[0] == "2005-03");
  CHECK(m.loss_totals[0] == 100.0);

  const auto w = aggregate({ev("2005-01-11", 50), ev("2005-01-16", 70)}, Frequency::weekly);
  REQUIRE(w.loss_totals.size() == 1);
  CHECK(w.loss_totals[0] == 120.0);

  const std::vector<LossEvent> qe{ev("2005-01-10", 30), ev("2005-04-02", 45)};
  const auto q = aggregate(qe, Frequency::quarterly);
  CHECK(q.labels() == std::vector<std::string>{"2005Q1", "2005Q2"});
  const auto oracle = per_day_totals(qe, Frequency::quarterly);
  for (std::size_t i = 0; i < q.periods.size(); ++i) CHECK(q.loss_totals[i] == oracle.at(q.labels()[i]));

  const std::vector<LossEvent> gap{ev("2005-01-10", 30), ev("2005-11-02", 45)};
  const auto g = aggregate(gap, Frequency::quarterly);
  CHECK(g.loss_totals == std::vector<double>{30, 0, 0, 45});
}

TEST_CASE("aggregation matches per-day accumulation and conserves mass") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> day(0, 900);
  std::uniform_int_distribution<int> cents(0, 1000000);
  std::uniform_int_distribution<int> type(1, 3);
  std::vector<LossEvent> events;
  for (int i = 0; i < 400; ++i) {
    events.push_back(LossEvent{D("2004-03-01") + std::chrono::days{day(rng)}, cents(rng) / 100.0,
                               static_cast<EventType>(type(rng)), 0});
  }
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.date < b.date; });
  for (Frequency f : {Frequency::weekly, Frequency::monthly, Frequency::quarterly}) {
    for (std::optional<EventType> t : {std::optional<EventType>{}, std::optional<EventType>{EventType::external_fraud}}) {
      std::vector<LossEvent> kept;
      for (const auto& e : events) {
        if (!t || e.type == *t) kept.push_back(e);
      }
      const auto s = aggregate(events, f, t);
      const auto oracle = per_day_totals(kept, f);
      REQUIRE(s.periods.size() == oracle.size());
      for (std::size_t i = 0; i < s.periods.size(); ++i) {
        CHECK(s.loss_totals[i] == doctest::Approx(oracle.at(s.labels()[i])).epsilon(1e-12));
        if (i > 0) CHECK(s.periods[i] == s.periods[i - 1] + 1);
      }
      const double mass_in = std::accumulate(kept.begin(), kept.end(), 0.0,
                                             [](double acc, const LossEvent& e) { return acc + e.amount; });
      const double mass_out = std::accumulate(s.loss_totals.begin(), s.loss_totals.end(), 0.0);
      CHECK(mass_out == doctest::Approx(mass_in).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(aggregate(events, Frequency::monthly, EventType::system_failures), InputError);
}

TEST_CASE("type-7 quartiles and Tukey fences") {
  const std::vector<double> v{1, 2, 3, 4, 100};
  const auto r = iqr_filter(v);
  CHECK(r.q1 == 2.0);
  CHECK(r.q3 == 4.0);
  CHECK(r.upper_fence == 7.0);
  CHECK(r.lower_fence == -1.0);
  CHECK(r.removed_indices == std::vector<std::size_t>{4});
  CHECK(r.kept == std::vector<double>{1, 2, 3, 4});

  const auto c = iqr_filter(std::vector<double>(6, 3.5));
  CHECK(c.removed_indices.empty());

  const auto s = iqr_filter(std::vector<double>{-5, -1, 0, 1, 5});
  CHECK((s.removed_indices.empty() || s.removed_indices == std::vector<std::size_t>{0, 4}));

  // Boundary values sit exactly on a fence and are kept.
  const auto b = iqr_filter(std::vector<double>{0, 2, 2, 2, 2, 4, 4, 4, 4, 7});
  CHECK(b.upper_fence == 7.0);
  CHECK(b.removed_indices.empty());

  CHECK_THROWS_AS(iqr_filter(std::vector<double>{1, 2, 3}), InputError);
  CHECK(quantile_type7(std::vector<double>{1, 2, 3, 4}, 0.25) == 1.75);
}

TEST_CASE("IQR filter idempotent on fixtures") {
  for (const auto& fixture : std::vector<std::vector<double>>{{1, 2, 3, 4, 100}, {5, 6, 7, 8, 9, 10}, {3, 3, 3, 3}}) {
    const auto once = iqr_filter(fixture);
    const auto twice = iqr_filter(once.kept);
    CHECK(twice.removed_indices.empty());
    CHECK(twice.kept == once.kept);
  }
}

TEST_CASE("winsorization clamps to the fence and flags the period") {
  AggregatedSeries s;
  s.frequency = Frequency::monthly;
  s.periods = {10, 11, 12, 13, 14};
  s.loss_totals = {1, 2, 3, 4, 100};
  const auto w = winsorize_losses(s);
  CHECK(w.loss_totals == std::vector<double>{1, 2, 3, 4, 7});
  CHECK(w.winsorized == std::vector<bool>{false, false, false, false, true});
  s.loss_totals = {1, 2, 300};
  s.periods = {1, 2, 3};
  CHECK(winsorize_losses(s).loss_totals[2] == 300.0);
}

TEST_CASE("alignment with daily macro takes the last observation of each quarter") {
  const auto q = aggregate({ev("2005-01-10", 1), ev("2005-05-10", 2)}, Frequency::quarterly);
  MacroSeries macro;
  for (Date d = D("2004-12-01"); d <= D("2005-07-15"); d += std::chrono::days{1}) {
    const auto wd = std::chrono::weekday{d};
    if (wd == std::chrono::Saturday || wd == std::chrono::Sunday) continue;
    macro.observations.emplace_back(d, static_cast<double>((d - D("2004-12-01")).count()));
  }
  const auto a = align(q, macro);
  REQUIRE(a.size() == 2);
  CHECK(a.dropped_front == 0);
  // 2005-03-31 was a Thursday; 2005-06-30 a Thursday.
  CHECK(a.covariate[0] == static_cast<double>((D("2005-03-31") - D("2004-12-01")).count()));
  CHECK(a.covariate[1] == static_cast<double>((D("2005-06-30") - D("2004-12-01")).count()));
  CHECK(a.loss == std::vector<double>{1, 2});
}

TEST_CASE("alignment drops leading periods without macro data") {
  const auto m = aggregate({ev("2005-01-10", 1), ev("2005-02-10", 2), ev("2005-03-10", 3), ev("2005-04-10", 4)},
                           Frequency::monthly);
  MacroSeries macro;
  macro.observations = {{D("2005-03-05"), 20.0}, {D("2005-04-30"), 25.0}};
  const auto a = align(m, macro);
  CHECK(a.dropped_front == 2);
  CHECK(a.periods == std::vector<std::string>{"2005-03", "2005-04"});
  CHECK(a.covariate == std::vector<double>{20.0, 25.0});

  MacroSeries late;
  late.observations = {{D("2006-01-01"), 1.0}};
  CHECK_THROWS_AS(align(m, late), AlignmentError);
}

TEST_CASE("single shared period") {
  const auto m = aggregate({ev("2005-01-10", 1), ev("2005-02-10", 2)}, Frequency::monthly);
  MacroSeries macro;
  macro.observations = {{D("2005-02-14"), 31.5}};
  const auto a = align(m, macro);
  REQUIRE(a.size() == 1);
  const auto obs = a.observations(true);
  CHECK(obs.length() == 1);
  CHECK(obs.values()(0, 0) == 31.5);
  CHECK(obs.values()(0, 1) == 2.0);
  CHECK(obs.labels()[0] == "2005-02");
  CHECK(a.observations(false).dim() == 1);
  CHECK_THROWS_AS(loss_only(m).observations(true), InputError);
}

TEST_CASE("prepared series round-trips through text") {
  std::vector<LossEvent> events;
  for (int i = 0; i < 40; ++i) {
    events.push_back(ev("2005-01-03", 0.1 * i + 1.0 / 3.0));
    events.back().date += std::chrono::days{7 * i};
  }
  events.push_back(ev("2005-03-01", 1e6));
  MacroSeries macro;
  for (int i = 0; i < 60; ++i) macro.observations.emplace_back(D("2004-12-31") + std::chrono::days{7 * i}, 10.0 + i / 7.0);
  PipelineOptions opt;
  opt.frequency = Frequency::weekly;
  for (const MacroSeries* mp : std::array<const MacroSeries*, 2>{nullptr, &macro}) {
    const auto s = prepare_series(events, mp, opt);
    CHECK(std::find(s.winsorized.begin(), s.winsorized.end(), true) != s.winsorized.end());
    std::ostringstream out;
    write_series(out, s);
    std::istringstream in(out.str());
    const auto back = read_series(in);
    CHECK(back.periods == s.periods);
    CHECK(back.loss == s.loss);
    CHECK(back.covariate == s.covariate);
    CHECK(back.winsorized == s.winsorized);
    std::ostringstream again;
    write_series(again, back);
    CHECK(again.str() == out.str());
  }
}

TEST_CASE("log transform precedes winsorization") {
  std::vector<LossEvent> events;
  const char* dates[] = {"2005-01-15", "2005-02-15", "2005-03-15", "2005-04-15", "2005-05-15", "2005-06-15"};
  for (int i = 0; i < 6; ++i) events.push_back(ev(dates[i], 100.0 * (i + 1)));
  PipelineOptions opt;
  opt.log_transform = true;
  opt.iqr_filter = false;
  const auto s = prepare_series(events, nullptr, opt);
  CHECK(s.loss[0] == doctest::Approx(std::log1p(100.0)));
}

}  // TEST_SUITE
