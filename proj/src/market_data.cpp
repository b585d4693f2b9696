#include "dtq/market_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "dtq/errors.hpp"
#include "dtq/util.hpp"

namespace dtq {

namespace {

constexpr const char* kOhlcvHeader = "date,ticker,open,high,low,close,volume";
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

double parse_number(std::string_view field, std::size_t line_no, const char* column) {
  field = trim(field);
  double value = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size() || field.empty()) {
    throw DataError("line " + std::to_string(line_no) + ": cannot parse " + column + " '" + std::string(field) + "'");
  }
  if (!std::isfinite(value)) {
    throw DataError("line " + std::to_string(line_no) + ": non-finite " + column);
  }
  return value;
}

void check_bar(const Bar& bar, std::size_t line_no) {
  const std::string where = line_no ? "line " + std::to_string(line_no) + ": " : "";
  if (bar.open <= 0 || bar.high <= 0 || bar.low <= 0 || bar.close <= 0) {
    throw DataError(where + "prices must be positive");
  }
  if (bar.volume < 0) throw DataError(where + "volume must be non-negative");
}

struct CsvLines {
  std::vector<std::pair<std::size_t, std::string_view>> rows;  // (1-based line number, text)
  std::string_view header;
};

CsvLines read_lines(const std::string& text) {
  CsvLines out;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    std::string_view line = trim(std::string_view(text).substr(pos, end - pos));
    pos = end + 1;
    if (line.empty()) continue;
    if (out.header.empty() && line_no == 1) {
      out.header = line;
      continue;
    }
    out.rows.emplace_back(line_no, line);
  }
  return out;
}

}  // namespace

void OHLCVPanel::validate() const {
  if (tickers.empty() || dates.empty()) throw DataError("panel is empty");
  if (bars.size() != dates.size()) throw DataError("panel rows do not match dates");
  for (std::size_t i = 1; i < dates.size(); ++i) {
    if (!(dates[i - 1] < dates[i])) throw DataError("panel dates are not strictly increasing at " + dates[i]);
  }
  for (const auto& row : bars) {
    if (row.size() != tickers.size()) throw DataError("panel row is missing tickers");
    for (const Bar& bar : row) check_bar(bar, 0);
  }
}

OHLCVPanel parse_ohlcv(const std::string& csv_text, const LoadOptions& options) {
  const CsvLines lines = read_lines(csv_text);
  if (lines.header != kOhlcvHeader) {
    throw DataError("line 1: expected header '" + std::string(kOhlcvHeader) + "'");
  }
  std::map<std::string, std::map<std::string, Bar>> by_ticker;
  std::set<std::string> all_dates;
  for (const auto& [line_no, line] : lines.rows) {
    const auto fields = split_fields(line);
    if (fields.size() != 7) {
      throw DataError("line " + std::to_string(line_no) + ": expected 7 fields, got " + std::to_string(fields.size()));
    }
    const std::string date(trim(fields[0]));
    const std::string ticker(trim(fields[1]));
    if (!is_iso_date(date)) throw DataError("line " + std::to_string(line_no) + ": invalid date '" + date + "'");
    if (ticker.empty()) throw DataError("line " + std::to_string(line_no) + ": empty ticker");
    Bar bar{parse_number(fields[2], line_no, "open"), parse_number(fields[3], line_no, "high"),
            parse_number(fields[4], line_no, "low"), parse_number(fields[5], line_no, "close"),
            parse_number(fields[6], line_no, "volume")};
    check_bar(bar, line_no);
    if (!by_ticker[ticker].emplace(date, bar).second) {
      throw DataError("line " + std::to_string(line_no) + ": duplicate row for " + ticker + " on " + date);
    }
    all_dates.insert(date);
  }
  if (by_ticker.empty()) throw DataError("no data rows");

  std::vector<std::string> common;
  for (const std::string& date : all_dates) {
    bool everywhere = true;
    for (const auto& [ticker, series] : by_ticker) everywhere = everywhere && series.count(date);
    if (everywhere) common.push_back(date);
  }
  for (const auto& [ticker, series] : by_ticker) {
    const double missing = 1.0 - static_cast<double>(series.size()) / static_cast<double>(all_dates.size());
    if (missing > options.max_missing_fraction) {
      throw DataError("ticker " + ticker + " is missing " + std::to_string(missing * 100.0) + "% of dates");
    }
  }
  if (common.empty()) throw DataError("no date is shared by every ticker");

  OHLCVPanel panel;
  for (const auto& [ticker, _] : by_ticker) panel.tickers.push_back(ticker);
  panel.dates = common;
  panel.bars.reserve(common.size());
  for (const std::string& date : common) {
    std::vector<Bar> row;
    row.reserve(panel.tickers.size());
    for (const std::string& ticker : panel.tickers) row.push_back(by_ticker[ticker][date]);
    panel.bars.push_back(std::move(row));
  }
  return panel;
}

OHLCVPanel load_ohlcv(const std::filesystem::path& path, const LoadOptions& options) {
  return parse_ohlcv(read_text(path), options);
}

std::string format_ohlcv(const OHLCVPanel& panel) {
  std::ostringstream os;
  os << kOhlcvHeader << '\n';
  for (std::size_t d = 0; d < panel.dates.size(); ++d) {
    for (std::size_t k = 0; k < panel.tickers.size(); ++k) {
      const Bar& b = panel.bars[d][k];
      os << panel.dates[d] << ',' << panel.tickers[k] << ',' << format_double(b.open) << ',' << format_double(b.high)
         << ',' << format_double(b.low) << ',' << format_double(b.close) << ',' << format_double(b.volume) << '\n';
    }
  }
  return os.str();
}

void write_ohlcv(const OHLCVPanel& panel, const std::filesystem::path& path) { write_text(path, format_ohlcv(panel)); }

std::vector<double> ema(const std::vector<double>& xs, std::size_t span) {
  std::vector<double> out(xs.size());
  if (xs.empty()) return out;
  const double alpha = 2.0 / (static_cast<double>(span) + 1.0);
  out[0] = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) out[i] = alpha * xs[i] + (1.0 - alpha) * out[i - 1];
  return out;
}

std::vector<double> macd(const std::vector<double>& close) {
  const auto fast = ema(close, 12), slow = ema(close, 26);
  std::vector<double> out(close.size());
  for (std::size_t i = 0; i < close.size(); ++i) out[i] = fast[i] - slow[i];
  return out;
}

std::vector<double> rsi(const std::vector<double>& close, std::size_t window) {
  std::vector<double> out(close.size(), kNaN);
  for (std::size_t t = window; t < close.size(); ++t) {
    double gain = 0.0, loss = 0.0;
    for (std::size_t i = t + 1 - window; i <= t; ++i) {
      const double change = close[i] - close[i - 1];
      if (change > 0) gain += change;
      else loss -= change;
    }
    gain /= static_cast<double>(window);
    loss /= static_cast<double>(window);
    if (loss == 0.0) out[t] = gain > 0.0 ? 100.0 : 50.0;
    else out[t] = 100.0 - 100.0 / (1.0 + gain / loss);
  }
  return out;
}

std::vector<double> cci(const std::vector<double>& high, const std::vector<double>& low,
                        const std::vector<double>& close, std::size_t window) {
  std::vector<double> out(close.size(), kNaN);
  std::vector<double> typical(close.size());
  for (std::size_t i = 0; i < close.size(); ++i) typical[i] = (high[i] + low[i] + close[i]) / 3.0;
  for (std::size_t t = window - 1; t < close.size(); ++t) {
    double mean = 0.0;
    for (std::size_t i = t + 1 - window; i <= t; ++i) mean += typical[i];
    mean /= static_cast<double>(window);
    double deviation = 0.0;
    for (std::size_t i = t + 1 - window; i <= t; ++i) deviation += std::abs(typical[i] - mean);
    deviation /= static_cast<double>(window);
    out[t] = deviation == 0.0 ? 0.0 : (typical[t] - mean) / (0.015 * deviation);
  }
  return out;
}

std::vector<double> dx(const std::vector<double>& high, const std::vector<double>& low,
                       const std::vector<double>& close, std::size_t window) {
  std::vector<double> out(close.size(), kNaN);
  for (std::size_t t = window; t < close.size(); ++t) {
    double plus_dm = 0.0, minus_dm = 0.0, true_range = 0.0;
    for (std::size_t i = t + 1 - window; i <= t; ++i) {
      const double up = high[i] - high[i - 1];
      const double down = low[i - 1] - low[i];
      if (up > down && up > 0) plus_dm += up;
      if (down > up && down > 0) minus_dm += down;
      true_range += std::max({high[i] - low[i], std::abs(high[i] - close[i - 1]), std::abs(low[i] - close[i - 1])});
    }
    if (true_range == 0.0) {
      out[t] = 0.0;
      continue;
    }
    const double plus_di = 100.0 * plus_dm / true_range;
    const double minus_di = 100.0 * minus_dm / true_range;
    const double denom = plus_di + minus_di;
    out[t] = denom == 0.0 ? 0.0 : 100.0 * std::abs(plus_di - minus_di) / denom;
  }
  return out;
}

FeaturePanel compute_indicators(const OHLCVPanel& panel) {
  panel.validate();
  if (panel.num_days() < kMinIndicatorRows) {
    throw DataError("indicator computation needs at least " + std::to_string(kMinIndicatorRows) + " rows, got " +
                    std::to_string(panel.num_days()));
  }
  const std::size_t days = panel.num_days(), tickers = panel.num_tickers();
  std::vector<std::vector<std::array<double, kNumIndicators>>> all(days,
                                                                   std::vector<std::array<double, kNumIndicators>>(tickers));
  for (std::size_t k = 0; k < tickers; ++k) {
    std::vector<double> high(days), low(days), close(days);
    for (std::size_t d = 0; d < days; ++d) {
      high[d] = panel.bars[d][k].high;
      low[d] = panel.bars[d][k].low;
      close[d] = panel.bars[d][k].close;
    }
    const auto m = macd(close);
    const auto r = rsi(close, kIndicatorWindow);
    const auto c = cci(high, low, close, kIndicatorWindow);
    const auto x = dx(high, low, close, kIndicatorWindow);
    for (std::size_t d = 0; d < days; ++d) all[d][k] = {m[d], r[d], c[d], x[d]};
  }
  FeaturePanel out;
  out.prices.tickers = panel.tickers;
  const auto first = static_cast<std::ptrdiff_t>(kIndicatorWindow);
  out.prices.dates.assign(panel.dates.begin() + first, panel.dates.end());
  out.prices.bars.assign(panel.bars.begin() + first, panel.bars.end());
  out.indicators.assign(all.begin() + first, all.end());
  return out;
}

void write_features(const FeaturePanel& panel, const std::filesystem::path& path) {
  std::ostringstream os;
  os << kOhlcvHeader;
  for (const char* name : kIndicatorNames) os << ',' << name;
  os << '\n';
  for (std::size_t d = 0; d < panel.num_days(); ++d) {
    for (std::size_t k = 0; k < panel.num_tickers(); ++k) {
      const Bar& b = panel.prices.bars[d][k];
      os << panel.prices.dates[d] << ',' << panel.prices.tickers[k] << ',' << format_double(b.open) << ','
         << format_double(b.high) << ',' << format_double(b.low) << ',' << format_double(b.close) << ','
         << format_double(b.volume);
      for (double v : panel.indicators[d][k]) os << ',' << format_double(v);
      os << '\n';
    }
  }
  write_text(path, os.str());
}

FeaturePanel load_features(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  const CsvLines lines = read_lines(text);
  std::string expected = kOhlcvHeader;
  for (const char* name : kIndicatorNames) expected += std::string(",") + name;
  if (lines.header != expected) throw DataError(path.string() + " line 1: expected header '" + expected + "'");

  FeaturePanel panel;
  std::map<std::string, std::size_t> ticker_index;
  for (const auto& [line_no, line] : lines.rows) {
    const auto fields = split_fields(line);
    if (fields.size() != 7 + kNumIndicators) {
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(7 + kNumIndicators) + " fields");
    }
    const std::string date(trim(fields[0]));
    const std::string ticker(trim(fields[1]));
    if (!is_iso_date(date)) throw DataError("line " + std::to_string(line_no) + ": invalid date '" + date + "'");
    if (panel.prices.dates.empty() || panel.prices.dates.back() != date) {
      if (!panel.prices.dates.empty() && !(panel.prices.dates.back() < date)) {
        throw DataError("line " + std::to_string(line_no) + ": dates must be sorted");
      }
      panel.prices.dates.push_back(date);
      panel.prices.bars.emplace_back();
      panel.indicators.emplace_back();
    }
    if (panel.prices.dates.size() == 1) {
      ticker_index.emplace(ticker, panel.prices.tickers.size());
      panel.prices.tickers.push_back(ticker);
    }
    const std::size_t expected_slot = panel.prices.bars.back().size();
    if (expected_slot >= panel.prices.tickers.size() || panel.prices.tickers[expected_slot] != ticker) {
      throw DataError("line " + std::to_string(line_no) + ": feature rows must list every ticker in the same order");
    }
    Bar bar{parse_number(fields[2], line_no, "open"), parse_number(fields[3], line_no, "high"),
            parse_number(fields[4], line_no, "low"), parse_number(fields[5], line_no, "close"),
            parse_number(fields[6], line_no, "volume")};
    check_bar(bar, line_no);
    std::array<double, kNumIndicators> ind{};
    for (std::size_t i = 0; i < kNumIndicators; ++i) ind[i] = parse_number(fields[7 + i], line_no, kIndicatorNames[i]);
    panel.prices.bars.back().push_back(bar);
    panel.indicators.back().push_back(ind);
  }
  panel.prices.validate();
  return panel;
}

FeaturePanel slice_days(const FeaturePanel& panel, std::size_t begin, std::size_t end) {
  FeaturePanel out;
  out.prices.tickers = panel.prices.tickers;
  out.prices.dates.assign(panel.prices.dates.begin() + static_cast<std::ptrdiff_t>(begin),
                          panel.prices.dates.begin() + static_cast<std::ptrdiff_t>(end));
  out.prices.bars.assign(panel.prices.bars.begin() + static_cast<std::ptrdiff_t>(begin),
                         panel.prices.bars.begin() + static_cast<std::ptrdiff_t>(end));
  out.indicators.assign(panel.indicators.begin() + static_cast<std::ptrdiff_t>(begin),
                        panel.indicators.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

FeaturePanel slice_dates(const FeaturePanel& panel, const std::string& first, const std::string& last) {
  const auto& dates = panel.prices.dates;
  const auto begin = first.empty() ? dates.begin() : std::lower_bound(dates.begin(), dates.end(), first);
  const auto end = last.empty() ? dates.end() : std::upper_bound(dates.begin(), dates.end(), last);
  if (begin >= end) {
    throw DataError("no trading days in [" + (first.empty() ? dates.front() : first) + ", " +
                    (last.empty() ? dates.back() : last) + "]");
  }
  return slice_days(panel, static_cast<std::size_t>(begin - dates.begin()), static_cast<std::size_t>(end - dates.begin()));
}

PanelSplit split_by_date(const FeaturePanel& panel, const std::string& train_end, const std::string& test_end) {
  if (!is_iso_date(train_end) || !is_iso_date(test_end)) throw RangeError("split boundaries must be YYYY-MM-DD dates");
  if (!(train_end < test_end)) throw RangeError("train_end " + train_end + " must precede test_end " + test_end);
  const auto& dates = panel.prices.dates;
  if (dates.empty()) throw DataError("cannot split an empty panel");
  if (train_end < dates.front() || train_end > dates.back() || test_end < dates.front() || test_end > dates.back()) {
    throw RangeError("split boundaries [" + train_end + ", " + test_end + "] fall outside panel range [" +
                     dates.front() + ", " + dates.back() + "]");
  }
  const std::size_t cut = static_cast<std::size_t>(std::lower_bound(dates.begin(), dates.end(), train_end) - dates.begin());
  const std::size_t stop = static_cast<std::size_t>(std::upper_bound(dates.begin(), dates.end(), test_end) - dates.begin());
  if (cut == 0) throw DataError("train panel would be empty: train_end " + train_end + " is the first date");
  if (stop <= cut) throw DataError("test panel would be empty");
  return {slice_days(panel, 0, cut), slice_days(panel, cut, stop)};
}

SynthKind parse_synth_kind(const std::string& name) {
  if (name == "random_walk" || name == "gbm") return SynthKind::kRandomWalk;
  if (name == "mean_reverting" || name == "ou") return SynthKind::kMeanReverting;
  throw ConfigError("unknown synthetic market kind '" + name + "' (random_walk | mean_reverting)");
}

OHLCVPanel synth_panel(const SynthOptions& options) {
  if (options.tickers == 0 || options.days == 0) throw ConfigError("synthetic panel needs tickers and days");
  Rng rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  OHLCVPanel panel;
  for (std::size_t k = 0; k < options.tickers; ++k) {
    char name[16];
    std::snprintf(name, sizeof(name), "SYN%02zu", k);
    panel.tickers.emplace_back(name);
  }
  std::string date = options.start_date;
  while (weekday_index(date) >= 5) date = add_days(date, 1);
  for (std::size_t d = 0; d < options.days; ++d) {
    panel.dates.push_back(date);
    do {
      date = add_days(date, 1);
    } while (weekday_index(date) >= 5);
  }

  std::vector<double> log_price(options.tickers), anchor(options.tickers), prev_close(options.tickers);
  for (std::size_t k = 0; k < options.tickers; ++k) {
    anchor[k] = std::log(50.0 + 100.0 * uniform(rng));
    log_price[k] = anchor[k];
    prev_close[k] = std::exp(anchor[k]);
  }
  const double sigma = options.volatility;
  panel.bars.assign(options.days, std::vector<Bar>(options.tickers));
  for (std::size_t d = 0; d < options.days; ++d) {
    for (std::size_t k = 0; k < options.tickers; ++k) {
      if (d > 0) {
        const double shock = sigma * normal(rng);
        if (options.kind == SynthKind::kRandomWalk) {
          log_price[k] += options.drift + shock;
        } else {
          log_price[k] += options.reversion * (anchor[k] - log_price[k]) + shock;
        }
      }
      Bar bar;
      bar.close = std::exp(log_price[k]);
      bar.open = prev_close[k] * std::exp(0.25 * sigma * normal(rng));
      bar.high = std::max(bar.open, bar.close) * std::exp(std::abs(0.5 * sigma * normal(rng)));
      bar.low = std::min(bar.open, bar.close) * std::exp(-std::abs(0.5 * sigma * normal(rng)));
      bar.volume = std::round(1e6 * std::exp(0.3 * normal(rng)));
      prev_close[k] = bar.close;
      panel.bars[d][k] = bar;
    }
  }
  return panel;
}

}  // namespace dtq
