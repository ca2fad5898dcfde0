#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "scfm/auxiliary.hpp"
#include "scfm/clustering.hpp"
#include "scfm/em.hpp"
#include "scfm/error.hpp"
#include "scfm/generator.hpp"
#include "scfm/model_core.hpp"
#include "scfm/recovery.hpp"
#include "scfm/types.hpp"

namespace scfm {

using json = nlohmann::json;

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Header-free, row-major CSV.
inline void write_csv(const std::string& path, const MatrixXd& m) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path);
}

inline MatrixXd parse_csv(std::string_view text, const std::string& what = "csv") {
  std::vector<std::vector<double>> rows;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t p = 0;
    while (p <= line.size()) {
      std::size_t comma = line.find(',', p);
      if (comma == std::string_view::npos) comma = line.size();
      std::string_view cell = line.substr(p, comma - p);
      while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
      while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.remove_suffix(1);
      double v = 0.0;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw Error(ErrorCode::IoError, what + ": cannot parse '" + std::string(cell) + "' on row " +
                                            std::to_string(rows.size() + 1));
      row.push_back(v);
      p = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(ErrorCode::IoError, what + ": ragged row " + std::to_string(rows.size() + 1));
    rows.push_back(std::move(row));
  }
  MatrixXd m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline MatrixXd read_csv(const std::string& path) { return parse_csv(read_file(path), path); }

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
}

inline json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, path + ": " + e.what());
  }
}

inline json to_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(to_json(VectorXd(m.row(i).transpose())));
  return rows;
}

inline VectorXd vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

inline MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  MatrixXd m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i) {
    if (static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) != m.cols())
      throw Error(ErrorCode::InvalidArgument, "ragged matrix in JSON");
    for (Index c = 0; c < m.cols(); ++c) m(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
  }
  return m;
}

inline json to_json(const ModelShape& s) { return {{"L", s.L}, {"M", s.M}, {"K", s.K}}; }

inline json to_json(const RankReport& r) {
  return {{"numerical_rank", r.numerical_rank},
          {"nullspace_dim", r.nullspace_dim},
          {"tolerance", r.tolerance},
          {"singular_values", r.singular_values}};
}

inline json to_json(const IdentifiabilityReport& r) {
  return {{"standard_rank", r.standard_rank},
          {"shared_rank", r.shared_rank},
          {"standard_identifiable", r.standard_identifiable},
          {"shared_identifiable", r.shared_identifiable}};
}

inline GeneratorConfig generator_config_from_json(const json& j) {
  GeneratorConfig c;
  try {
    const auto& sh = j.at("shape");
    c.shape = {sh.at("L").get<int>(), sh.at("M").get<int>(), sh.at("K").get<int>()};
    c.dictionary_variance = j.value("dictionary_variance", c.dictionary_variance);
    c.noise_variance = j.value("noise_variance", c.noise_variance);
    c.T = j.value("T", c.T);
    const std::string chain = j.value("chain_type", std::string("IID"));
    if (chain == "IID" || chain == "iid")
      c.chain_type = ChainType::IID;
    else if (chain == "Markov" || chain == "markov")
      c.chain_type = ChainType::Markov;
    else
      throw Error(ErrorCode::InvalidArgument, "chain_type must be IID or Markov");
    if (j.contains("priors"))
      for (const auto& p : j.at("priors")) c.priors.push_back(vector_from_json(p));
    if (j.contains("transitions"))
      for (const auto& a : j.at("transitions")) c.transitions.push_back(matrix_from_json(a));
    c.random_chain_parameters = j.value("random_chain_parameters", false);
    c.seed = j.value("seed", std::uint64_t{0});
    c.filter_incoherence = j.value("filter_incoherence", true);
    c.max_retries = j.value("max_retries", c.max_retries);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("generator config: ") + e.what());
  }
  c.validate();
  return c;
}

inline json to_json(const GeneratorConfig& c) {
  json j{{"shape", to_json(c.shape)},
         {"dictionary_variance", c.dictionary_variance},
         {"noise_variance", c.noise_variance},
         {"T", c.T},
         {"chain_type", to_string(c.chain_type)},
         {"random_chain_parameters", c.random_chain_parameters},
         {"seed", c.seed},
         {"filter_incoherence", c.filter_incoherence},
         {"max_retries", c.max_retries}};
  return j;
}

inline json to_json(const ClusterDiagnostics& q) {
  json conc = json::array();
  for (const auto& e : q.concentration)
    conc.push_back({{"c", e.c}, {"bound", e.bound}, {"empirical_fraction", e.empirical_fraction}, {"pairs", e.pairs}});
  return {{"min_center_separation", q.min_center_separation},
          {"sigma_hat", q.sigma_hat},
          {"noise_shell_radius", q.noise_shell_radius},
          {"separation_ratio", std::isfinite(q.separation_ratio) ? json(q.separation_ratio) : json("inf")},
          {"concentration_ok", q.concentration_ok},
          {"min_mixing_weight", q.min_mixing_weight},
          {"mixing_weight_warning", q.mixing_weight_warning},
          {"concentration", conc}};
}

inline json to_json(const ClusteredCombinations& c) {
  return {{"counts", c.counts},
          {"missing", c.missing},
          {"missing_count", c.missing_count},
          {"degenerate", c.degenerate()},
          {"distortion", c.distortion},
          {"best_restart", c.best_restart},
          {"quality", to_json(c.quality)}};
}

inline json to_json(const RecoveredDictionary& d) {
  auto fin = [](double v) { return std::isfinite(v) ? json(v) : json("inf"); };
  return {{"i_star", d.i_star},
          {"B1", d.B1},
          {"BK", d.BK},
          {"B1_positions", d.B1_positions},
          {"BK_positions", d.BK_positions},
          {"tie_margin", fin(d.tie_margin)},
          {"sort_margins", {{"top_gap", fin(d.top_gap)}, {"b1_gap", fin(d.b1_gap)}, {"bk_gap", fin(d.bk_gap)}}},
          {"grouping", d.groups},
          {"H_binary", to_json(MatrixXd(d.H_binary.cast<double>()))},
          {"warnings", d.warnings}};
}

inline json to_json(const TransitionEstimate& t) {
  json raw = json::array(), norm = json::array();
  for (const auto& a : t.raw) raw.push_back(to_json(a));
  for (const auto& a : t.normalized) norm.push_back(to_json(a));
  return {{"raw", raw}, {"normalized", norm}, {"warnings", t.warnings}};
}

}  // namespace scfm
