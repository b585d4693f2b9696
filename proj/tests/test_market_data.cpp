#include <gtest/gtest.h>

#include <cmath>

#include "dtq/errors.hpp"
#include "dtq/market_data.hpp"
#include "fixtures.hpp"

using namespace dtq;
using namespace dtq::testing;

namespace {

const char* kHeader = "date,ticker,open,high,low,close,volume\n";

std::vector<double> closes_of(const OHLCVPanel& p, std::size_t k) {
  std::vector<double> out;
  for (const auto& row : p.bars) out.push_back(row[k].close);
  return out;
}

}  // namespace

TEST(LoadOhlcv, IntersectsDates) {
  const std::string csv = std::string(kHeader) +
                          "2020-01-02,AAA,1,1,1,1,10\n2020-01-02,BBB,2,2,2,2,10\n"
                          "2020-01-03,AAA,1,1,1,1,10\n2020-01-03,BBB,2,2,2,2,10\n"
                          "2020-01-06,AAA,1,1,1,1,10\n"
                          "2020-01-07,BBB,2,2,2,2,10\n2020-01-07,AAA,1,1,1,1,10\n";
  LoadOptions lenient;
  lenient.max_missing_fraction = 0.5;
  const OHLCVPanel p = parse_ohlcv(csv, lenient);
  EXPECT_EQ(p.dates, (std::vector<std::string>{"2020-01-02", "2020-01-03", "2020-01-07"}));
  EXPECT_EQ(p.tickers, (std::vector<std::string>{"AAA", "BBB"}));
  // With the default 5% rule one missing day in four rejects BBB.
  EXPECT_THROW(parse_ohlcv(csv), DataError);
}

TEST(LoadOhlcv, NegativeCloseNamesLine) {
  const std::string csv = std::string(kHeader) + "2020-01-02,AAA,1,1,1,1,10\n2020-01-03,AAA,1,1,1,-1,10\n";
  try {
    parse_ohlcv(csv);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(LoadOhlcv, UnparseableRowNamesLine) {
  const std::string csv = std::string(kHeader) + "2020-01-02,AAA,1,1,x,1,10\n";
  try {
    parse_ohlcv(csv);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(LoadOhlcv, WriteReadRoundTrip) {
  const auto dir = scratch_dir("ohlcv");
  SynthOptions o;
  o.tickers = 3;
  o.days = 40;
  o.seed = 5;
  const OHLCVPanel p = synth_panel(o);
  write_ohlcv(p, dir / "p.csv");
  const OHLCVPanel q = load_ohlcv(dir / "p.csv");
  ASSERT_EQ(q.dates, p.dates);
  ASSERT_EQ(q.tickers, p.tickers);
  for (std::size_t d = 0; d < p.num_days(); ++d) {
    for (std::size_t k = 0; k < p.num_tickers(); ++k) {
      EXPECT_EQ(q.bars[d][k].close, p.bars[d][k].close);
      EXPECT_EQ(q.bars[d][k].low, p.bars[d][k].low);
      EXPECT_EQ(q.bars[d][k].volume, p.bars[d][k].volume);
    }
  }
}

TEST(Indicators, ConstantPriceHasZeroMacd) {
  const FeaturePanel f = panel_from_closes(std::vector<std::vector<double>>(40, {25.0}));
  const FeaturePanel g = compute_indicators(f.prices);
  EXPECT_EQ(g.num_days(), 40 - kIndicatorWindow);
  for (const auto& row : g.indicators) EXPECT_EQ(row[0][0], 0.0);
}

TEST(Indicators, RisingClosesGiveRsi100) {
  std::vector<std::vector<double>> closes;
  for (int i = 0; i < 50; ++i) closes.push_back({10.0 + i});
  const FeaturePanel g = compute_indicators(panel_from_closes(closes).prices);
  for (const auto& row : g.indicators) EXPECT_EQ(row[0][1], 100.0);
}

TEST(Indicators, CciMatchesDirectSummation) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> high(60), low(60), close(60);
  for (std::size_t i = 0; i < 60; ++i) {
    close[i] = 100 + 5 * n(rng);
    high[i] = close[i] + std::abs(n(rng));
    low[i] = close[i] - std::abs(n(rng));
  }
  const auto got = cci(high, low, close, 30);
  for (std::size_t t = 29; t < 60; ++t) {
    std::vector<double> tp;
    for (std::size_t i = t - 29; i <= t; ++i) tp.push_back((high[i] + low[i] + close[i]) / 3);
    double mean = 0;
    for (double x : tp) mean += x / 30;
    double md = 0;
    for (double x : tp) md += std::abs(x - mean) / 30;
    EXPECT_NEAR(got[t], (tp.back() - mean) / (0.015 * md), 1e-9);
  }
}

TEST(Indicators, RsiMatchesAverageGainLoss) {
  const std::vector<double> close{10, 11, 10.5, 12, 11, 11.5};
  const auto r = rsi(close, 5);
  const double gain = (1 + 1.5 + 0.5) / 5, loss = (0.5 + 1) / 5;
  EXPECT_NEAR(r[5], 100 - 100 / (1 + gain / loss), 1e-12);
  EXPECT_TRUE(std::isnan(r[4]));
}

TEST(Indicators, PrependingHistoryLeavesValuesUnchanged) {
  SynthOptions o;
  o.tickers = 2;
  o.days = 900;
  o.seed = 8;
  const OHLCVPanel full = synth_panel(o);
  OHLCVPanel tail = full;
  const std::size_t drop = 100;
  tail.dates.erase(tail.dates.begin(), tail.dates.begin() + drop);
  tail.bars.erase(tail.bars.begin(), tail.bars.begin() + drop);
  const FeaturePanel a = compute_indicators(full), b = compute_indicators(tail);
  // b day i is full day drop + i; a starts at full day kIndicatorWindow.
  // MACD's EMAs remember their seed; (25/27)^n falls below 1e-9 only after
  // about 400 rows, so MACD is compared from there on.
  const std::size_t macd_settled = 400;
  for (std::size_t i = 0; i < b.num_days(); ++i) {
    const auto& x = a.indicators[drop + i];
    const auto& y = b.indicators[i];
    for (std::size_t k = 0; k < 2; ++k) {
      if (i + kIndicatorWindow >= macd_settled) EXPECT_NEAR(x[k][0], y[k][0], 1e-9);
      for (std::size_t j = 1; j < kNumIndicators; ++j) EXPECT_EQ(x[k][j], y[k][j]);
    }
  }
}

TEST(Indicators, TooFewRowsNamesMinimum) {
  const FeaturePanel f = panel_from_closes(std::vector<std::vector<double>>(10, {25.0}));
  try {
    compute_indicators(f.prices);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(std::to_string(kMinIndicatorRows)), std::string::npos);
  }
}

TEST(Indicators, AllFiniteAfterWarmup) {
  const FeaturePanel f = synthetic_features(4, 100, 2, SynthKind::kMeanReverting);
  for (const auto& row : f.indicators)
    for (const auto& ind : row)
      for (double v : ind) EXPECT_TRUE(std::isfinite(v));
}

TEST(Split, PartitionsPanelWithoutLeakage) {
  const FeaturePanel f = synthetic_features(2, 120, 1);
  const std::string cut = f.prices.dates[70];
  const PanelSplit s = split_by_date(f, cut, f.prices.dates.back());
  EXPECT_EQ(s.train.num_days(), 70u);
  EXPECT_EQ(s.test.num_days(), 50u);
  EXPECT_LT(s.train.prices.dates.back(), cut);
  EXPECT_EQ(s.test.prices.dates.front(), cut);
  std::vector<std::string> joined = s.train.prices.dates;
  joined.insert(joined.end(), s.test.prices.dates.begin(), s.test.prices.dates.end());
  EXPECT_EQ(joined, f.prices.dates);
}

TEST(Split, FirstDateBoundaryIsEmptyTrainError) {
  const FeaturePanel f = synthetic_features(2, 60, 1);
  EXPECT_THROW(split_by_date(f, f.prices.dates.front(), f.prices.dates.back()), DataError);
}

TEST(Split, OutOfRangeBoundaryThrows) {
  const FeaturePanel f = synthetic_features(2, 60, 1);
  EXPECT_THROW(split_by_date(f, "1990-01-01", f.prices.dates.back()), RangeError);
  EXPECT_THROW(split_by_date(f, f.prices.dates[5], "2099-01-01"), RangeError);
}

TEST(Split, PaperPeriodsOnBusinessDayCalendar) {
  // Business days only, no exchange holidays, so counts land a little high.
  SynthOptions o;
  o.tickers = 1;
  o.start_date = "2009-01-01";
  o.days = 3400;
  o.seed = 1;
  const FeaturePanel f = compute_indicators(synth_panel(o));
  const FeaturePanel span = slice_dates(f, "2009-01-01", "2021-10-29");
  std::size_t train = 0, test = 0;
  for (const auto& d : span.prices.dates) (d < "2020-07-01" ? train : test)++;
  // ~2,892 and ~335 trading days once holidays and the warm-up are accounted for.
  EXPECT_NEAR(static_cast<double>(train), 2892.0, 0.05 * 2892.0);
  EXPECT_NEAR(static_cast<double>(test), 335.0, 0.05 * 335.0);
}

TEST(Synth, SeededAndKindsDiffer) {
  SynthOptions o;
  o.days = 50;
  o.seed = 4;
  const OHLCVPanel a = synth_panel(o), b = synth_panel(o);
  EXPECT_EQ(closes_of(a, 0), closes_of(b, 0));
  o.kind = SynthKind::kMeanReverting;
  EXPECT_NE(closes_of(synth_panel(o), 0), closes_of(a, 0));
  for (const auto& d : a.dates) EXPECT_LT(weekday_index(d), 5);
}

TEST(Features, FileRoundTrip) {
  const auto dir = scratch_dir("features");
  const FeaturePanel f = synthetic_features(3, 30, 9);
  write_features(f, dir / "f.csv");
  const FeaturePanel g = load_features(dir / "f.csv");
  ASSERT_EQ(g.prices.dates, f.prices.dates);
  for (std::size_t d = 0; d < f.num_days(); ++d)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(g.indicators[d][k], f.indicators[d][k]);
}
