#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dtq {

struct Bar {
  double open = 0, high = 0, low = 0, close = 0, volume = 0;
};

// Aligned panel: bars[date][ticker]; tickers sorted, dates strictly increasing.
struct OHLCVPanel {
  std::vector<std::string> tickers;
  std::vector<std::string> dates;
  std::vector<std::vector<Bar>> bars;

  std::size_t num_days() const { return dates.size(); }
  std::size_t num_tickers() const { return tickers.size(); }
  void validate() const;
};

inline constexpr std::size_t kNumIndicators = 4;
inline constexpr std::size_t kIndicatorWindow = 30;
inline constexpr std::array<const char*, kNumIndicators> kIndicatorNames{"macd", "rsi_30", "cci_30", "dx_30"};

// Panel plus per (date, ticker) indicators {MACD, RSI30, CCI30, DX30}.
struct FeaturePanel {
  OHLCVPanel prices;
  std::vector<std::vector<std::array<double, kNumIndicators>>> indicators;

  std::size_t num_days() const { return prices.num_days(); }
  std::size_t num_tickers() const { return prices.num_tickers(); }
  double close(std::size_t day, std::size_t ticker) const { return prices.bars[day][ticker].close; }
};

struct LoadOptions {
  // A ticker absent on more than this fraction of all dates is rejected.
  double max_missing_fraction = 0.05;
};

OHLCVPanel load_ohlcv(const std::filesystem::path& path, const LoadOptions& options = {});
OHLCVPanel parse_ohlcv(const std::string& csv_text, const LoadOptions& options = {});
void write_ohlcv(const OHLCVPanel& panel, const std::filesystem::path& path);
std::string format_ohlcv(const OHLCVPanel& panel);

// Rows before the longest lookback (30 price changes) are dropped.
FeaturePanel compute_indicators(const OHLCVPanel& panel);
inline constexpr std::size_t kMinIndicatorRows = kIndicatorWindow + 1;

void write_features(const FeaturePanel& panel, const std::filesystem::path& path);
FeaturePanel load_features(const std::filesystem::path& path);

struct PanelSplit {
  FeaturePanel train;  // dates < train_end
  FeaturePanel test;   // train_end <= dates <= test_end
};

// Days [begin, end) by index.
FeaturePanel slice_days(const FeaturePanel& panel, std::size_t begin, std::size_t end);
// Days with first <= date <= last; an empty bound is open.
FeaturePanel slice_dates(const FeaturePanel& panel, const std::string& first, const std::string& last);

PanelSplit split_by_date(const FeaturePanel& panel, const std::string& train_end, const std::string& test_end);

// Per-series indicator kernels over a ticker's full history. Entry t uses
// rows 0..t only; entries before the lookback are NaN.
std::vector<double> ema(const std::vector<double>& xs, std::size_t span);
std::vector<double> macd(const std::vector<double>& close);
std::vector<double> rsi(const std::vector<double>& close, std::size_t window);
std::vector<double> cci(const std::vector<double>& high, const std::vector<double>& low,
                        const std::vector<double>& close, std::size_t window);
std::vector<double> dx(const std::vector<double>& high, const std::vector<double>& low,
                       const std::vector<double>& close, std::size_t window);

enum class SynthKind { kRandomWalk, kMeanReverting };

SynthKind parse_synth_kind(const std::string& name);

struct SynthOptions {
  SynthKind kind = SynthKind::kRandomWalk;
  std::size_t tickers = 3;
  std::size_t days = 250;
  std::string start_date = "2009-01-02";
  double drift = 0.0005;       // daily log drift (random walk)
  double volatility = 0.015;   // daily log volatility
  double reversion = 0.05;     // pull toward the anchor price (mean reverting)
  std::uint64_t seed = 0;
};

// Business-day panel of geometric random walks or mean-reverting log prices.
OHLCVPanel synth_panel(const SynthOptions& options);

}  // namespace dtq
