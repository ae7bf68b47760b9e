#pragma once

// File formats shared by the CLI and the experiment runner.
//
//   series CSV     header `t,y1,...,yN`, one row per sample
//   truth JSON     N, P, sigma_u, seed, mask and lag matrices
//   graph JSON     {nodes: [1..N], edges: [{source, target, weight}]}, 1-based
//   checkpoint     checkpoint.json plus headerless CSV matrices

#include <tirso/dense.hpp>
#include <tirso/estimators.hpp>
#include <tirso/graph.hpp>
#include <tirso/model.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tirso::io {

using Json = nlohmann::json;
namespace fs = std::filesystem;

/// Thrown for unreadable or malformed artifact files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal form that reads back to the same double; "nan", "inf".
std::string format_double(double v);
double parse_double(const std::string& text);

std::vector<std::string> split_csv_line(const std::string& line);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

void write_json(const fs::path& path, const Json& value);
Json read_json(const fs::path& path);

Json matrix_to_json(const MatrixXd& m);
MatrixXd matrix_from_json(const Json& j);

void write_matrix_csv(const fs::path& path, const MatrixXd& m);
MatrixXd read_matrix_csv(const fs::path& path);

void write_series_csv(const fs::path& path, const MatrixXd& samples);
MatrixXd read_series_csv(const fs::path& path);

struct GroundTruth {
  double noise_std = 0;
  std::uint64_t seed = 0;
  AdjacencyMask mask;
  VarParameters<double> params;
};

Json truth_to_json(const GroundTruth& truth);
GroundTruth truth_from_json(const Json& j);

Json graph_to_json(const CausalityGraph& graph);
CausalityGraph graph_from_json(const Json& j);

Json schedule_to_json(const StepSizeSchedule& schedule);
StepSizeSchedule schedule_from_json(const Json& j);

/// Writes checkpoint.json, phi.csv, cross.csv, energy.csv, estimates.csv,
/// lags.csv and, once an adaptive step has run, eigvec.csv into `dir`.
void write_checkpoint(const fs::path& dir, const TirsoState<double>& state, const EstimatorConfig& config);

struct Checkpoint {
  EstimatorConfig config;
  TirsoState<double> state;
};

/// The step-size schedule is not part of the checkpoint; callers set it.
Checkpoint read_checkpoint(const fs::path& dir);

}  // namespace tirso::io
