#include "aaf/fsod/report.hpp"

#include <cstdio>
#include <ostream>

#include "aaf/fsod/scene.hpp"

namespace aaf::fsod {

std::string format_number(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

void write_text(std::ostream& os, const EvalReport& r) {
  os << "method: " << r.method << "\n"
     << "k: " << r.k << "\n"
     << "seed: " << r.seed << "\n"
     << "support_seeds:";
  for (std::uint64_t s : r.support_seeds) os << " " << s;
  os << "\n"
     << "base_map: " << format_number(r.base_map) << "\n"
     << "novel_map: " << format_number(r.novel_map) << "\n"
     << "base_map_std: " << format_number(r.base_map_std) << "\n"
     << "novel_map_std: " << format_number(r.novel_map_std) << "\n";
  for (const auto& [cls, ap] : r.class_ap) {
    os << "ap." << class_name(cls) << ": " << format_number(ap) << "\n";
  }
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["k"] = r.k;
  j["seed"] = r.seed;
  j["support_seeds"] = r.support_seeds;
  j["base_classes"] = r.base_classes;
  j["novel_classes"] = r.novel_classes;
  j["base_map"] = r.base_map;
  j["novel_map"] = r.novel_map;
  j["base_map_std"] = r.base_map_std;
  j["novel_map_std"] = r.novel_map_std;
  nlohmann::json ap = nlohmann::json::object();
  for (const auto& [cls, v] : r.class_ap) ap[std::to_string(cls)] = v;
  j["class_ap"] = ap;
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.method = j.at("method").get<std::string>();
  r.k = j.at("k").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.support_seeds = j.at("support_seeds").get<std::vector<std::uint64_t>>();
  r.base_classes = j.at("base_classes").get<std::vector<int>>();
  r.novel_classes = j.at("novel_classes").get<std::vector<int>>();
  r.base_map = j.at("base_map").get<double>();
  r.novel_map = j.at("novel_map").get<double>();
  r.base_map_std = j.at("base_map_std").get<double>();
  r.novel_map_std = j.at("novel_map_std").get<double>();
  for (const auto& [key, v] : j.at("class_ap").items()) r.class_ap[std::stoi(key)] = v.get<double>();
  return r;
}

std::string csv_line(const LogRow& row) {
  std::string out = std::to_string(row.episode) + "," + row.phase + "," + format_number(row.loss) + ",";
  if (row.evaluated) out += format_number(row.base_map);
  out += ",";
  if (row.evaluated) out += format_number(row.novel_map);
  out += "," + std::to_string(row.k) + "," + std::to_string(row.seed);
  return out;
}

}  // namespace aaf::fsod
