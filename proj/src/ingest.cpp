#include "lfts/ingest.hpp"

#include <algorithm>
#include <cstdio>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace lfts::ingest {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_timestamp(const std::string& s, Timestamp& out) {
  if (s.size() != 12) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return false;
  const int minute = static_cast<int>(out % 100);
  const int hour = static_cast<int>(out / 100 % 100);
  const int day = static_cast<int>(out / 10000 % 100);
  const int month = static_cast<int>(out / 1000000 % 100);
  const int year = static_cast<int>(out / 100000000);
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                           std::chrono::day{static_cast<unsigned>(day)}};
  return ymd.ok() && hour < 24 && minute < 60;
}

bool looks_like_header(const std::vector<std::string>& fields) {
  double d;
  return !fields.empty() && !parse_double(fields[0], d);
}

}  // namespace

ParseError::ParseError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

Series::Series(std::size_t n) : values(n, kNaN), valid(n, 0) {}

void Series::set(std::size_t t, double v) {
  values[t] = v;
  valid[t] = std::isfinite(v) ? 1 : 0;
  if (!valid[t]) values[t] = kNaN;
}

void Series::invalidate(std::size_t t) {
  values[t] = kNaN;
  valid[t] = 0;
}

std::size_t Series::first_valid() const {
  auto it = std::find(valid.begin(), valid.end(), std::uint8_t{1});
  return static_cast<std::size_t>(it - valid.begin());
}

// ---- FeatureFrame -----------------------------------------------------------

FeatureFrame::FeatureFrame(std::vector<Timestamp> index) : index_(std::move(index)) {}

void FeatureFrame::add(const std::string& name, Series column, std::size_t warmup) {
  if (column.size() != rows())
    throw SizingError("column '" + name + "' has length " + std::to_string(column.size()) +
                      ", frame has " + std::to_string(rows()) + " rows");
  if (has(name)) throw std::invalid_argument("duplicate column '" + name + "'");
  names_.push_back(name);
  columns_.push_back(std::move(column));
  warmups_.push_back(warmup);
}

bool FeatureFrame::has(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::size_t FeatureFrame::position(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw std::out_of_range("no column '" + name + "'");
  return static_cast<std::size_t>(it - names_.begin());
}

const Series& FeatureFrame::at(const std::string& name) const { return columns_[position(name)]; }
Series& FeatureFrame::at(const std::string& name) { return columns_[position(name)]; }
std::size_t FeatureFrame::warmup(const std::string& name) const { return warmups_[position(name)]; }

FeatureFrame FeatureFrame::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows()) throw std::out_of_range("frame slice out of range");
  FeatureFrame out(std::vector<Timestamp>(index_.begin() + begin, index_.begin() + end));
  for (std::size_t c = 0; c < cols(); ++c) {
    Series s;
    s.values.assign(columns_[c].values.begin() + begin, columns_[c].values.begin() + end);
    s.valid.assign(columns_[c].valid.begin() + begin, columns_[c].valid.begin() + end);
    out.add(names_[c], std::move(s), warmups_[c] > begin ? warmups_[c] - begin : 0);
  }
  return out;
}

void FeatureFrame::write_csv(std::ostream& out) const {
  out << "time";
  for (const auto& n : names_) out << ',' << n << ',' << n << "_valid";
  out << '\n';
  char buf[40];
  for (std::size_t t = 0; t < rows(); ++t) {
    out << index_[t];
    for (const auto& c : columns_) {
      if (c.ok(t)) {
        std::snprintf(buf, sizeof buf, "%.17g", c.values[t]);
        out << ',' << buf << ",1";
      } else {
        out << ",,0";
      }
    }
    out << '\n';
  }
}

// ---- CSV --------------------------------------------------------------------

std::vector<Bar> parse_csv(std::istream& in) {
  std::vector<Bar> bars;
  std::string line;
  std::size_t lineno = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (first_content) {
      first_content = false;
      if (looks_like_header(fields)) continue;
    }
    if (fields.size() != 7)
      throw ParseError(lineno, "expected 7 fields, found " + std::to_string(fields.size()));
    Bar b;
    if (!parse_timestamp(fields[0], b.time)) throw ParseError(lineno, "bad timestamp '" + fields[0] + "'");
    double* slots[] = {&b.open, &b.high, &b.low, &b.close, &b.volume, &b.amount};
    for (std::size_t k = 0; k < 6; ++k)
      if (!parse_double(fields[k + 1], *slots[k]))
        throw ParseError(lineno, "bad number '" + fields[k + 1] + "'");
    if (!(b.open > 0 && b.high > 0 && b.low > 0 && b.close > 0))
      throw ParseError(lineno, "prices must be positive");
    if (b.volume < 0 || b.amount < 0) throw ParseError(lineno, "negative volume or amount");
    if (!(b.low <= b.open && b.open <= b.high && b.low <= b.close && b.close <= b.high))
      throw ParseError(lineno, "OHLC violates low <= open, close <= high");
    if (!bars.empty() && b.time <= bars.back().time)
      throw OrderingError("line " + std::to_string(lineno) + ": timestamp " + std::to_string(b.time) +
                          (b.time == bars.back().time ? " duplicates" : " precedes") +
                          " the previous row");
    bars.push_back(b);
  }
  return bars;
}

std::vector<Bar> load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_csv(in);
}

void write_csv(std::ostream& out, std::span<const Bar> bars) {
  out << "time,open,high,low,close,volume,amount\n";
  char buf[256];
  for (const auto& b : bars) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(b.time), b.open, b.high, b.low, b.close, b.volume,
                  b.amount);
    out << buf;
  }
}

std::vector<double> closes_of(std::span<const Bar> bars) {
  std::vector<double> c(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) c[i] = bars[i].close;
  return c;
}

// ---- transforms -------------------------------------------------------------

Series log_diff(std::span<const double> closes) {
  Series out(closes.size());
  for (std::size_t t = 0; t < closes.size(); ++t)
    if (!(closes[t] > 0)) throw DomainError("log_diff: non-positive close at row " + std::to_string(t));
  for (std::size_t t = 1; t < closes.size(); ++t) out.set(t, std::log(closes[t] / closes[t - 1]));
  return out;
}

std::vector<double> cumulative_prices(double first_close, std::span<const double> log_returns) {
  std::vector<double> out;
  out.reserve(log_returns.size() + 1);
  out.push_back(first_close);
  double acc = 0.0;
  for (double r : log_returns) {
    acc += r;
    out.push_back(first_close * std::exp(acc));
  }
  return out;
}

StandardizationStats fit_standardization(const FeatureFrame& frame,
                                         const std::vector<std::string>& columns,
                                         std::size_t train_rows) {
  if (train_rows > frame.rows()) throw SizingError("train rows exceed frame rows");
  StandardizationStats stats;
  for (const auto& name : columns) {
    const Series& s = frame.at(name);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < train_rows; ++t)
      if (s.ok(t)) {
        sum += s.values[t];
        ++n;
      }
    if (n == 0) throw DomainError("column '" + name + "' has no valid training cells");
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t t = 0; t < train_rows; ++t)
      if (s.ok(t)) ss += (s.values[t] - mean) * (s.values[t] - mean);
    const double var = ss / static_cast<double>(n);
    if (!(var > 0.0) || var <= 1e-300)
      throw DomainError("column '" + name + "' has zero variance on the training split");
    stats.mean[name] = mean;
    stats.variance[name] = var;
  }
  return stats;
}

namespace {
FeatureFrame apply_stats(const FeatureFrame& frame, const StandardizationStats& stats, bool forward) {
  FeatureFrame out(frame.index());
  for (const auto& name : frame.names()) {
    Series s = frame.at(name);
    auto m = stats.mean.find(name);
    if (m != stats.mean.end()) {
      const double mu = m->second;
      const double sd = std::sqrt(stats.variance.at(name));
      for (std::size_t t = 0; t < s.size(); ++t)
        if (s.ok(t)) s.values[t] = forward ? (s.values[t] - mu) / sd : s.values[t] * sd + mu;
    }
    out.add(name, std::move(s), frame.warmup(name));
  }
  return out;
}
}  // namespace

FeatureFrame standardize(const FeatureFrame& frame, const StandardizationStats& stats) {
  return apply_stats(frame, stats, true);
}

FeatureFrame unstandardize(const FeatureFrame& frame, const StandardizationStats& stats) {
  return apply_stats(frame, stats, false);
}

// ---- windowing --------------------------------------------------------------

TimeMark calendar_marks(Timestamp ts) {
  using namespace std::chrono;
  const int minute = static_cast<int>(ts % 100);
  const int hour = static_cast<int>(ts / 100 % 100);
  const unsigned d = static_cast<unsigned>(ts / 10000 % 100);
  const unsigned m = static_cast<unsigned>(ts / 1000000 % 100);
  const int y = static_cast<int>(ts / 100000000);
  const year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok() || hour > 23 || minute > 59)
    throw std::invalid_argument("invalid timestamp " + std::to_string(ts));
  const weekday wd{sys_days{ymd}};
  return {minute, hour, static_cast<int>(wd.c_encoding()), static_cast<int>(d), static_cast<int>(m)};
}

std::size_t train_rows_for(std::size_t rows, double split_ratio) {
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw std::invalid_argument("split ratio must be in (0, 1)");
  return static_cast<std::size_t>(std::floor(split_ratio * static_cast<double>(rows)));
}

std::vector<double> WindowedDataset::input(std::size_t s) const {
  const std::size_t begin = starts.at(s) * feature_dim;
  return {features.begin() + static_cast<std::ptrdiff_t>(begin),
          features.begin() + static_cast<std::ptrdiff_t>(begin + input_len * feature_dim)};
}

std::vector<double> WindowedDataset::targets(std::size_t s) const {
  const std::size_t begin = starts.at(s) + input_len;
  return {target.begin() + static_cast<std::ptrdiff_t>(begin),
          target.begin() + static_cast<std::ptrdiff_t>(begin + horizon)};
}

namespace {
WindowedDataset window_block(const FeatureFrame& frame, const std::vector<std::string>& feature_columns,
                             const std::string& target_column, const WindowSpec& spec,
                             std::size_t begin, std::size_t end) {
  WindowedDataset ds;
  ds.input_len = spec.input_len;
  ds.horizon = spec.horizon;
  ds.feature_dim = feature_columns.size();
  ds.first_row = begin;
  const std::size_t n = end - begin;
  ds.features.resize(n * ds.feature_dim);
  ds.target.resize(n);
  ds.marks.resize(n);
  const Series& y = frame.at(target_column);
  for (std::size_t c = 0; c < feature_columns.size(); ++c) {
    const Series& s = frame.at(feature_columns[c]);
    for (std::size_t t = 0; t < n; ++t) {
      if (!s.ok(begin + t))
        throw DomainError("column '" + feature_columns[c] + "' invalid at row " + std::to_string(begin + t));
      ds.features[t * ds.feature_dim + c] = s.values[begin + t];
    }
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (!y.ok(begin + t)) throw DomainError("target invalid at row " + std::to_string(begin + t));
    ds.target[t] = y.values[begin + t];
    ds.marks[t] = calendar_marks(frame.index()[begin + t]);
  }
  const std::size_t span = spec.input_len + spec.horizon;
  for (std::size_t s = 0; s + span <= n; ++s) ds.starts.push_back(s);
  return ds;
}
}  // namespace

std::pair<WindowedDataset, WindowedDataset> split_and_window(
    const FeatureFrame& frame, const std::vector<std::string>& feature_columns,
    const std::string& target_column, const WindowSpec& spec) {
  if (spec.input_len == 0 || spec.horizon == 0) throw SizingError("window lengths must be positive");
  const std::size_t rows = frame.rows();
  const std::size_t span = spec.input_len + spec.horizon;
  if (rows < span)
    throw SizingError("series of " + std::to_string(rows) + " rows is shorter than L_x + L_y = " +
                      std::to_string(span));
  const std::size_t split = train_rows_for(rows, spec.split_ratio);
  if (split < span)
    throw SizingError("training split of " + std::to_string(split) +
                      " rows is shorter than L_x + L_y = " + std::to_string(span));
  return {window_block(frame, feature_columns, target_column, spec, 0, split),
          window_block(frame, feature_columns, target_column, spec, split, rows)};
}

}  // namespace lfts::ingest
