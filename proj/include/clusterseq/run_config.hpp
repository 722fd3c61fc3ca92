#pragma once

#include "clusterseq/meta.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

namespace clusterseq {

/// Everything one CLI run needs. model.items is filled from the corpus.
struct RunConfig {
  MetaConfig meta;
  double test_fraction = 0.1;
  int min_length = 0;  // 0: K
  std::size_t negatives = 100;
  int checkpoint_every = 0;
  std::filesystem::path data;        // raw user,item,timestamp CSV
  std::filesystem::path cache;       // preprocessed corpus
  std::filesystem::path checkpoint;
  std::filesystem::path report_dir;

  int effective_min_length() const { return min_length > 0 ? min_length : meta.model.shots; }
  void validate() const;
};

/// JSON object with any subset of the documented keys. Unknown keys, wrong
/// types and out-of-range values are configuration errors.
RunConfig parse_run_config(std::string_view json, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Every key, pretty-printed. parse_run_config(to_json(c)) == c.
std::string to_json(const RunConfig& config);

}  // namespace clusterseq
