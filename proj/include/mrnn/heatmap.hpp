#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrnn/attention.hpp"
#include "mrnn/checkpoint.hpp"

namespace mrnn {

/// CSV with a header row of column labels (token strings) followed by one
/// row per matrix row.
inline void write_matrix_csv(const std::filesystem::path& path, const Array& matrix,
                             const std::vector<std::string>& column_labels) {
  if (matrix.rank() != 2 || matrix.extent(1) != column_labels.size()) {
    throw ShapeError("write_matrix_csv: " + std::to_string(column_labels.size()) + " labels for matrix " +
                     shape_string(matrix.shape()));
  }
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  for (std::size_t j = 0; j < column_labels.size(); ++j) os << (j ? "," : "") << quote(column_labels[j]);
  os << '\n';
  os.precision(12);
  for (std::size_t i = 0; i < matrix.extent(0); ++i) {
    for (std::size_t j = 0; j < matrix.extent(1); ++j) os << (j ? "," : "") << matrix.at(i, j);
    os << '\n';
  }
}

/// Binary portable graymap, one pixel per cell; weights in [0, 1] map
/// linearly to [0, 255].
inline void write_pgm(const std::filesystem::path& path, const Array& matrix) {
  if (matrix.rank() != 2) throw ShapeError("write_pgm: expected a matrix");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P5\n" << matrix.extent(1) << ' ' << matrix.extent(0) << "\n255\n";
  for (double v : matrix.data()) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
}

inline nlohmann::json trace_json(const AttentionTrace& trace, const std::vector<std::string>& query_tokens,
                                 const std::vector<std::string>& doc_tokens, const ModelConfig& config) {
  auto rows = [](const Array& m) {
    std::vector<std::vector<double>> out(m.extent(0));
    for (std::size_t i = 0; i < m.extent(0); ++i)
      for (std::size_t j = 0; j < m.extent(1); ++j) out[i].push_back(m.at(i, j));
    return out;
  };
  return {{"query_tokens", query_tokens},
          {"doc_tokens", doc_tokens},
          {"mr_weights_q", rows(trace.mr_weights_query)},
          {"mr_weights_d", rows(trace.mr_weights_doc)},
          {"doc_aware", rows(trace.doc_aware)},
          {"qe", trace.encodings.values()},
          {"dist", trace.dist},
          {"config", to_json(config)}};
}

/// Writes mr_weights_q / mr_weights_d / doc_aware as CSV and PGM plus the
/// full trace as JSON. Returns the written paths.
inline std::vector<std::filesystem::path> export_attention(const AttentionTrace& trace,
                                                           const std::vector<std::string>& query_tokens,
                                                           const std::vector<std::string>& doc_tokens,
                                                           const ModelConfig& config,
                                                           const std::filesystem::path& out_dir) {
  if (trace.mr_weights_query.extent(1) != query_tokens.size() || trace.mr_weights_doc.extent(1) != doc_tokens.size()) {
    throw ShapeError("export_attention: token lists do not match the trace");
  }
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& stem, const Array& m, const std::vector<std::string>& labels) {
    write_matrix_csv(out_dir / (stem + ".csv"), m, labels);
    write_pgm(out_dir / (stem + ".pgm"), m);
    written.push_back(out_dir / (stem + ".csv"));
    written.push_back(out_dir / (stem + ".pgm"));
  };
  emit("mr_weights_q", trace.mr_weights_query, query_tokens);
  emit("mr_weights_d", trace.mr_weights_doc, doc_tokens);
  emit("doc_aware", trace.doc_aware, doc_tokens);
  std::ofstream os(out_dir / "trace.json");
  if (!os) throw DataError("cannot write trace.json");
  os << trace_json(trace, query_tokens, doc_tokens, config).dump(2) << '\n';
  written.push_back(out_dir / "trace.json");
  return written;
}

}  // namespace mrnn
