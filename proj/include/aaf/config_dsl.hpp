#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "aaf/pipeline.hpp"

// Line-oriented pipeline configuration language:
//
//   # comment
//   [pipeline]
//   order = align_then_attend | attend_then_align
//   shots_aggregation = mean_features | mean_outputs
//   [alignment]
//   query = identity | dot_product | softmax_dot(<scale>)
//   support = (same as query)
//   support_pool = none | max | avg
//   [attention]
//   query = none | support_pool_reweight(max|avg) | background_attenuation
//         | similarity_reweight
//   support = (same as query)
//   [fusion]
//   components = [op, learnable(op), ...]   with op in mul, sub, add, id, cat
//
// Keys may also be written fully qualified (`attention.query = ...`) before
// any section header; the top-level shorthand `fusion = [...]` means
// `fusion.components`. Every key is optional and defaults to the no-op
// choice, except that a `[fusion]` section must declare `components`.
namespace aaf::config {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, int column, std::string message, std::string expected = {});

  /// 1-based; 0 when the error is not tied to a source line.
  int line() const { return line_; }
  int column() const { return column_; }
  const std::string& message() const { return message_; }
  const std::string& expected() const { return expected_; }

 private:
  int line_;
  int column_;
  std::string message_;
  std::string expected_;
};

struct ParsedConfig {
  PipelineConfig config;
  /// Line of every key that was set, by qualified name ("fusion.components").
  std::map<std::string, int> key_lines;
};

ParsedConfig parse_source(std::string_view text);
/// Throws ConfigError.
PipelineConfig parse(std::string_view text);

/// Canonical text: fixed section order, every key written out.
std::string print_config(const PipelineConfig& config);

struct Extent {
  std::size_t positions = 0;
  std::size_t channels = 0;
};

/// Parses "HxWxC" (positions = H*W) or "PxC".
std::optional<Extent> parse_extent(std::string_view text);

/// Static feasibility of running `config` on query/support maps of the
/// given extents. Returns the first violation, or nothing when feasible.
/// `key_lines` (from parse_source) lets errors point at the offending key.
std::optional<ConfigError> check_shapes(const PipelineConfig& config, Extent query,
                                        Extent support,
                                        const std::map<std::string, int>* key_lines = nullptr);

}  // namespace aaf::config
