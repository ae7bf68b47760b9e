#pragma once

// Wide-CSV ingestion: one timestamp column plus one column per series, empty
// cells meaning "no sample". Series are resampled onto a common uniform grid
// by linear interpolation and z-scored.

#include <tirso/dense.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace tirso {

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NonMonotoneTimestamps : public IngestError {
 public:
  using IngestError::IngestError;
};
class EmptySpan : public IngestError {
 public:
  using IngestError::IngestError;
};
class ZeroVariance : public IngestError {
 public:
  using IngestError::IngestError;
};

struct IngestOptions {
  /// Grid step, in the units of the timestamp column (seconds for dates).
  double sampling_interval = 10.0;
  /// Series to keep, by header name; empty keeps every non-time column.
  std::vector<std::string> columns;
  /// Header of the timestamp column; empty means the first column.
  std::string time_column;
};

/// One irregularly sampled series.
struct RawSeries {
  std::string name;
  VectorXd times;
  VectorXd values;
};

struct IngestedSeries {
  std::string source;
  std::vector<std::string> names;
  double sampling_interval = 0;
  VectorXd grid;
  /// grid.size() x names.size(), normalised.
  MatrixXd samples;
  VectorXd mean;
  VectorXd std;
};

/// Piecewise-linear interpolation of (x, y) at `at`; x strictly increasing,
/// every query inside [x.front(), x.back()].
VectorXd interpolate_linear(const VectorXd& x, const VectorXd& y, const VectorXd& at);

/// Timestamps are plain numbers or `YYYY-MM-DD[ T]HH:MM:SS[.fff]` (UTC).
double parse_timestamp(const std::string& text);

IngestedSeries ingest_series(const std::vector<RawSeries>& series, double sampling_interval);
IngestedSeries ingest_csv(const std::filesystem::path& path, const IngestOptions& options = {});

}  // namespace tirso
