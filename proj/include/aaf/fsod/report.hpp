#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace aaf::fsod {

struct EvalReport {
  std::string method;
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> support_seeds;
  std::map<int, double> class_ap;  // AP@0.5, averaged over support seeds
  std::vector<int> base_classes;
  std::vector<int> novel_classes;
  double base_map = 0.0;
  double novel_map = 0.0;
  // Spread over support seeds; zero for a single seed.
  double base_map_std = 0.0;
  double novel_map_std = 0.0;
};

/// One "key: value" line per field, class APs as ap.<class name>.
void write_text(std::ostream& os, const EvalReport& report);
nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// One row of the append-only training log.
struct LogRow {
  int episode = 0;
  std::string phase;
  double loss = 0.0;
  // Present only on rows where an evaluation ran.
  bool evaluated = false;
  double base_map = 0.0;
  double novel_map = 0.0;
  int k = 0;
  std::uint64_t seed = 0;
};

inline constexpr const char* kLogHeader = "episode,phase,loss,base_map,novel_map,k,seed";
std::string csv_line(const LogRow& row);

/// Fixed-format number used by every text artifact.
std::string format_number(double value);

}  // namespace aaf::fsod
