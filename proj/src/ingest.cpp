#include <tirso/harness/ingest.hpp>
#include <tirso/harness/io.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace tirso {

namespace {

// Days since 1970-01-01 in the proleptic Gregorian calendar.
long long days_from_civil(long long y, unsigned m, unsigned d) {
  y -= m <= 2;
  const long long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long long>(doe) - 719468;
}

}  // namespace

VectorXd interpolate_linear(const VectorXd& x, const VectorXd& y, const VectorXd& at) {
  require(x.size() == y.size() && x.size() >= 2, "interpolation needs at least two knots");
  VectorXd out(at.size());
  const double* begin = x.data();
  const double* end = x.data() + x.size();
  for (Index k = 0; k < at.size(); ++k) {
    const double q = at(k);
    require(q >= x(0) && q <= x(x.size() - 1), "interpolation query outside the knot span");
    Index i = static_cast<Index>(std::upper_bound(begin, end, q) - begin) - 1;
    i = std::clamp<Index>(i, 0, x.size() - 2);
    const double frac = (q - x(i)) / (x(i + 1) - x(i));
    out(k) = y(i) + frac * (y(i + 1) - y(i));
  }
  return out;
}

double parse_timestamp(const std::string& text) {
  try {
    return io::parse_double(text);
  } catch (const io::FormatError&) {
  }
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, consumed = 0;
  double s = 0;
  char sep = 0;
  if (std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%lf%n", &y, &mo, &d, &sep, &h, &mi, &s, &consumed) == 7 &&
      (sep == ' ' || sep == 'T') && mo >= 1 && mo <= 12 && d >= 1 && d <= 31) {
    std::string rest = text.substr(static_cast<std::size_t>(consumed));
    if (rest.empty() || rest == "Z")
      return static_cast<double>(days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 + h * 3600 + mi * 60) + s;
  }
  throw IngestError("unrecognised timestamp '" + text + "'");
}

IngestedSeries ingest_series(const std::vector<RawSeries>& series, double sampling_interval) {
  if (!(sampling_interval > 0)) throw IngestError("sampling interval must be positive");
  if (series.empty()) throw IngestError("no series selected");
  double start = -HUGE_VAL, stop = HUGE_VAL;
  for (const auto& s : series) {
    if (s.times.size() != s.values.size()) throw IngestError("series '" + s.name + "' has mismatched times and values");
    if (s.times.size() < 2) throw IngestError("series '" + s.name + "' needs at least two samples");
    for (Index i = 1; i < s.times.size(); ++i)
      if (!(s.times(i) > s.times(i - 1)))
        throw NonMonotoneTimestamps("series '" + s.name + "' has non-increasing timestamps at sample " + std::to_string(i));
    start = std::max(start, s.times(0));
    stop = std::min(stop, s.times(s.times.size() - 1));
  }
  if (!(stop > start)) throw EmptySpan("the series share no common time span");
  const auto steps = static_cast<Index>(std::floor((stop - start) / sampling_interval * (1 + 1e-12)));
  if (steps < 1) throw EmptySpan("the common time span is shorter than one sampling interval");

  IngestedSeries out;
  out.sampling_interval = sampling_interval;
  out.grid.resize(steps + 1);
  for (Index k = 0; k <= steps; ++k) out.grid(k) = std::min(start + static_cast<double>(k) * sampling_interval, stop);
  out.samples.resize(out.grid.size(), static_cast<Index>(series.size()));
  out.mean.resize(out.samples.cols());
  out.std.resize(out.samples.cols());
  for (std::size_t c = 0; c < series.size(); ++c) {
    const auto col = static_cast<Index>(c);
    const VectorXd v = interpolate_linear(series[c].times, series[c].values, out.grid);
    const double mean = v.mean();
    const double sd = std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
    if (!(sd > 1e-14 * v.cwiseAbs().maxCoeff())) throw ZeroVariance("series '" + series[c].name + "' is constant on the grid");
    out.samples.col(col) = (v.array() - mean) / sd;
    out.mean(col) = mean;
    out.std(col) = sd;
    out.names.push_back(series[c].name);
  }
  return out;
}

IngestedSeries ingest_csv(const std::filesystem::path& path, const IngestOptions& options) {
  const std::string text = io::read_text(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IngestError(path.string() + " is empty");
  const auto header = io::split_csv_line(line);
  if (header.size() < 2) throw IngestError(path.string() + " needs a timestamp column and at least one series");

  std::size_t time_col = 0;
  if (!options.time_column.empty()) {
    const auto it = std::find(header.begin(), header.end(), options.time_column);
    if (it == header.end()) throw IngestError("no column named '" + options.time_column + "'");
    time_col = static_cast<std::size_t>(it - header.begin());
  }
  std::vector<std::size_t> picked;
  if (options.columns.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (c != time_col) picked.push_back(c);
  } else {
    for (const auto& name : options.columns) {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw IngestError("no column named '" + name + "'");
      picked.push_back(static_cast<std::size_t>(it - header.begin()));
    }
  }

  std::vector<std::vector<double>> times(picked.size()), values(picked.size());
  std::size_t lineno = 1;
  double previous = -HUGE_VAL;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = io::split_csv_line(line);
    if (cells.size() != header.size()) throw IngestError(path.string() + ":" + std::to_string(lineno) + ": row width differs from header");
    const double t = parse_timestamp(cells[time_col]);
    if (!(t > previous)) throw NonMonotoneTimestamps(path.string() + ":" + std::to_string(lineno) + ": timestamps must increase");
    previous = t;
    for (std::size_t k = 0; k < picked.size(); ++k) {
      const std::string& cell = cells[picked[k]];
      if (cell.find_first_not_of(" \t") == std::string::npos) continue;
      double v = 0;
      try {
        v = io::parse_double(cell);
      } catch (const io::FormatError&) {
        throw IngestError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
      }
      if (std::isnan(v)) continue;
      times[k].push_back(t);
      values[k].push_back(v);
    }
  }
  std::vector<RawSeries> raw;
  for (std::size_t k = 0; k < picked.size(); ++k)
    raw.push_back({header[picked[k]], Eigen::Map<const VectorXd>(times[k].data(), static_cast<Index>(times[k].size())),
                   Eigen::Map<const VectorXd>(values[k].data(), static_cast<Index>(values[k].size()))});
  IngestedSeries out = ingest_series(raw, options.sampling_interval);
  out.source = path.string();
  return out;
}

}  // namespace tirso
