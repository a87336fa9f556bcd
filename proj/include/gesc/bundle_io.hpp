#pragma once

// On-disk dataset formats.
//
// Graph bundle (directory):
//   manifest.json  {"format_version":1, "num_nodes", "num_edges", "feature_dim",
//                   "num_classes", "files":{"features","edges","labels","splits"?}}
//   features.bin   little-endian float64, row-major N x d_in
//   edges.csv      "i,j" per undirected edge, 0-based
//   labels.csv     one class index per line (-1 = unlabeled)
//   splits.json    optional {"train":[...], "val":[...], "test":[...]}
//
// Citation text pair:
//   .content  "<id> <f_1> ... <f_d> <label>" per node, whitespace separated
//   .cites    "<cited_id> <citing_id>" per line

#include <filesystem>
#include <string>
#include <vector>

#include "gesc/graph.hpp"

namespace gesc::io {

graph::Dataset load_bundle(const std::filesystem::path& dir);

/// Writes a bundle; splits.json is written only when the dataset has splits.
void save_bundle(const graph::Dataset& d, const std::filesystem::path& dir);

/// Label strings become class indices in lexicographic order. Citation pairs
/// naming unknown ids and self-citations are skipped with a message appended to
/// `warnings` (when given); reversed or repeated pairs collapse to one edge.
graph::Dataset load_content_cites(const std::filesystem::path& content,
                                  const std::filesystem::path& cites,
                                  std::vector<std::string>* warnings = nullptr);

}  // namespace gesc::io
