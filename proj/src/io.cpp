#include <tirso/harness/io.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tirso::io {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
  std::size_t b = 0, e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  const std::string s = text.substr(b, e - b);
  if (s == "nan" || s == "NaN") return std::nan("");
  if (s == "inf") return HUGE_VAL;
  if (s == "-inf") return -HUGE_VAL;
  double v = 0;
  const char* first = s.data();
  if (!s.empty() && s.front() == '+') ++first;
  const auto res = std::from_chars(first, s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("not a number: '" + text + "'");
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(std::move(cell));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const Json& value) { write_text(path, value.dump(2) + "\n"); }

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Json matrix_to_json(const MatrixXd& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty() || !j.front().is_array()) throw FormatError("matrix must be a non-empty array of rows");
  MatrixXd m(static_cast<Index>(j.size()), static_cast<Index>(j.front().size()));
  for (Index i = 0; i < m.rows(); ++i) {
    const Json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != m.cols()) throw FormatError("matrix rows must have equal length");
    for (Index k = 0; k < m.cols(); ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

void write_matrix_csv(const fs::path& path, const MatrixXd& m) {
  std::string text;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) text += ',';
      text += format_double(m(i, j));
    }
    text += '\n';
  }
  write_text(path, text);
}

namespace {

std::vector<std::vector<double>> parse_rows(const std::string& text, std::size_t skip, const fs::path& path) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno <= skip || line.empty() || line == "\r") continue;
    std::vector<double> row;
    for (const auto& cell : split_csv_line(line)) {
      try {
        row.push_back(parse_double(cell));
      } catch (const FormatError&) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd to_matrix(const std::vector<std::vector<double>>& rows, std::size_t first_col) {
  if (rows.empty()) return MatrixXd(0, 0);
  MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size() - first_col));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][first_col + static_cast<std::size_t>(j)];
  return m;
}

}  // namespace

MatrixXd read_matrix_csv(const fs::path& path) { return to_matrix(parse_rows(read_text(path), 0, path), 0); }

void write_series_csv(const fs::path& path, const MatrixXd& samples) {
  std::string text = "t";
  for (Index n = 0; n < samples.cols(); ++n) text += ",y" + std::to_string(n + 1);
  text += '\n';
  for (Index t = 0; t < samples.rows(); ++t) {
    text += std::to_string(t);
    for (Index n = 0; n < samples.cols(); ++n) text += ',' + format_double(samples(t, n));
    text += '\n';
  }
  write_text(path, text);
}

MatrixXd read_series_csv(const fs::path& path) {
  const std::string text = read_text(path);
  const auto header = split_csv_line(text.substr(0, text.find('\n')));
  if (header.size() < 2 || header.front() != "t") throw FormatError(path.string() + ": expected header t,y1,...,yN");
  const auto rows = parse_rows(text, 1, path);
  if (!rows.empty() && rows.front().size() != header.size()) throw FormatError(path.string() + ": row width differs from header");
  return to_matrix(rows, 1);
}

Json truth_to_json(const GroundTruth& truth) {
  const auto& p = truth.params;
  Json j;
  j["n_nodes"] = p.n_nodes();
  j["order"] = p.order();
  j["noise_std"] = truth.noise_std;
  j["seed"] = truth.seed;
  Json mask = Json::array();
  for (Index i = 0; i < truth.mask.n_nodes(); ++i) {
    Json row = Json::array();
    for (Index k = 0; k < truth.mask.n_nodes(); ++k) row.push_back(truth.mask(i, k) ? 1 : 0);
    mask.push_back(std::move(row));
  }
  j["mask"] = std::move(mask);
  Json lags = Json::array();
  for (Index q = 1; q <= p.order(); ++q) lags.push_back(matrix_to_json(p.lag(q)));
  j["lags"] = std::move(lags);
  return j;
}

GroundTruth truth_from_json(const Json& j) {
  try {
    GroundTruth t;
    const Index n = j.at("n_nodes").get<Index>(), order = j.at("order").get<Index>();
    t.noise_std = j.at("noise_std").get<double>();
    t.seed = j.at("seed").get<std::uint64_t>();
    const MatrixXd mask = matrix_from_json(j.at("mask"));
    if (mask.rows() != n || mask.cols() != n) throw FormatError("truth mask must be N x N");
    t.mask = AdjacencyMask(BoolMat(mask.array() != 0));
    std::vector<MatrixXd> lags;
    for (const auto& l : j.at("lags")) lags.push_back(matrix_from_json(l));
    if (static_cast<Index>(lags.size()) != order) throw FormatError("truth needs one matrix per lag");
    t.params = VarParameters<double>(std::move(lags));
    if (t.params.n_nodes() != n) throw FormatError("truth lag matrices must be N x N");
    return t;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed truth sidecar: ") + e.what());
  }
}

Json graph_to_json(const CausalityGraph& graph) {
  Json j;
  Json nodes = Json::array();
  for (Index n = 1; n <= graph.n_nodes; ++n) nodes.push_back(n);
  j["nodes"] = std::move(nodes);
  Json edges = Json::array();
  for (const auto& e : graph.edges) edges.push_back({{"source", e.source + 1}, {"target", e.target + 1}, {"weight", e.weight}});
  j["edges"] = std::move(edges);
  return j;
}

CausalityGraph graph_from_json(const Json& j) {
  try {
    CausalityGraph g;
    g.n_nodes = static_cast<Index>(j.at("nodes").size());
    for (const auto& e : j.at("edges")) {
      const Index s = e.at("source").get<Index>() - 1, t = e.at("target").get<Index>() - 1;
      if (s < 0 || t < 0 || s >= g.n_nodes || t >= g.n_nodes) throw FormatError("graph edge refers to an unknown node");
      g.edges.push_back({s, t, e.at("weight").get<double>()});
    }
    return g;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed graph: ") + e.what());
  }
}

Json schedule_to_json(const StepSizeSchedule& schedule) {
  struct Visitor {
    Json operator()(const step::Constant& s) const { return {{"kind", "constant"}, {"alpha", s.alpha}}; }
    Json operator()(const step::Diminishing& s) const { return {{"kind", "diminishing"}, {"beta_tilde", s.beta_tilde}}; }
    Json operator()(const step::Doubling& s) const { return {{"kind", "doubling"}, {"t0", s.t0}, {"c", s.c}}; }
    Json operator()(const step::Adaptive& s) const { return {{"kind", "adaptive"}, {"c", s.c}}; }
  };
  return std::visit(Visitor{}, schedule);
}

StepSizeSchedule schedule_from_json(const Json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "constant") return step::Constant{j.at("alpha").get<double>()};
    if (kind == "diminishing") return step::Diminishing{j.at("beta_tilde").get<double>()};
    if (kind == "doubling") return step::Doubling{j.at("t0").get<Index>(), j.at("c").get<double>()};
    if (kind == "adaptive") return step::Adaptive{j.at("c").get<double>()};
    throw FormatError("unknown step schedule '" + kind + "'");
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed step schedule: ") + e.what());
  }
}

void write_checkpoint(const fs::path& dir, const TirsoState<double>& state, const EstimatorConfig& config) {
  fs::create_directories(dir);
  Json meta;
  meta["n_nodes"] = config.n_nodes;
  meta["order"] = config.order;
  meta["forgetting"] = config.forgetting;
  meta["lambda"] = config.reg_lambda;
  meta["init_phi_scale"] = config.init_phi_scale;
  meta["schedule"] = schedule_to_json(config.schedule);
  meta["t"] = state.t;
  meta["lags_filled"] = state.lag_buffer.filled();
  meta["files"] = {"phi.csv", "cross.csv", "energy.csv", "estimates.csv", "lags.csv"};
  if (state.eigvec.size() > 0) meta["files"].push_back("eigvec.csv");
  write_json(dir / "checkpoint.json", meta);
  write_matrix_csv(dir / "phi.csv", state.stats.phi);
  write_matrix_csv(dir / "cross.csv", state.stats.cross);
  write_matrix_csv(dir / "energy.csv", state.stats.energy);
  write_matrix_csv(dir / "estimates.csv", state.estimates);
  write_matrix_csv(dir / "lags.csv", state.lag_buffer.lags());
  if (state.eigvec.size() > 0) write_matrix_csv(dir / "eigvec.csv", state.eigvec);
}

Checkpoint read_checkpoint(const fs::path& dir) {
  const Json meta = read_json(dir / "checkpoint.json");
  Checkpoint c;
  try {
    c.config.n_nodes = meta.at("n_nodes").get<Index>();
    c.config.order = meta.at("order").get<Index>();
    c.config.forgetting = meta.at("forgetting").get<double>();
    c.config.reg_lambda = meta.at("lambda").get<double>();
    c.config.init_phi_scale = meta.at("init_phi_scale").get<double>();
    c.config.schedule = schedule_from_json(meta.at("schedule"));
    c.state.t = meta.at("t").get<Index>();
    c.state.stats.phi = read_matrix_csv(dir / "phi.csv");
    c.state.stats.cross = read_matrix_csv(dir / "cross.csv");
    c.state.stats.energy = read_matrix_csv(dir / "energy.csv");
    c.state.stats.forgetting = c.config.forgetting;
    c.state.estimates = read_matrix_csv(dir / "estimates.csv");
    c.state.lag_buffer = LagBuffer<double>(read_matrix_csv(dir / "lags.csv"), meta.at("lags_filled").get<Index>());
    if (fs::exists(dir / "eigvec.csv")) c.state.eigvec = read_matrix_csv(dir / "eigvec.csv").col(0);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
  c.config.validate();
  return c;
}

}  // namespace tirso::io
