#include "fedrio/records.hpp"

#include "json.hpp"

#include <stdexcept>

namespace fedrio::records {

using nlohmann::json;

namespace {

json to_json(const RoundRecord& r, bool with_timing) {
  json j;
  j["t"] = r.t;
  j["acc"] = r.acc;
  j["f1"] = r.f1;
  j["losses"] = r.losses;
  j["client_acc"] = r.client_acc;
  if (r.action) j["action"] = *r.action;
  if (r.reward) j["reward"] = *r.reward;
  j["consistency"] = r.consistency;
  if (with_timing) j["wall_s"] = r.wall_s;
  return j;
}

}  // namespace

std::string to_json_line(const RoundRecord& r, bool with_timing) { return to_json(r, with_timing).dump(); }

RoundRecord from_json_line(const std::string& line) {
  const json j = json::parse(line);
  RoundRecord r;
  r.t = j.at("t").get<int>();
  r.acc = j.at("acc").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.losses = j.value("losses", std::map<std::string, double>{});
  r.client_acc = j.value("client_acc", std::vector<double>{});
  if (j.contains("action")) r.action = j["action"].get<std::vector<double>>();
  if (j.contains("reward")) r.reward = j["reward"].get<double>();
  r.consistency = j.value("consistency", 0.0);
  r.wall_s = j.value("wall_s", 0.0);
  return r;
}

Writer::Writer(const std::filesystem::path& path) : os_(path, std::ios::trunc) {
  if (!os_) throw std::runtime_error("cannot write " + path.string());
  os_ << json{{"schema", kSchemaVersion}}.dump() << '\n';
  os_.flush();
}

void Writer::append(const RoundRecord& r) {
  os_ << to_json_line(r) << '\n';
  os_.flush();
}

namespace {

std::vector<std::string> raw_lines(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    const bool complete = !is.eof();
    if (line.empty()) continue;
    if (header) {
      header = false;
      const json h = json::parse(line, nullptr, false);
      if (h.is_discarded() || !h.contains("schema")) throw std::runtime_error(path.string() + ": missing schema header");
      if (h["schema"] != kSchemaVersion) throw std::runtime_error(path.string() + ": unsupported records schema");
      continue;
    }
    if (!complete && json::parse(line, nullptr, false).is_discarded()) break;  // crash-truncated tail
    lines.push_back(line);
  }
  if (header) throw std::runtime_error(path.string() + ": empty records file");
  return lines;
}

}  // namespace

std::vector<RoundRecord> read(const std::filesystem::path& path) {
  std::vector<RoundRecord> out;
  for (const auto& line : raw_lines(path)) out.push_back(from_json_line(line));
  return out;
}

std::vector<std::string> timing_free_lines(const std::filesystem::path& path) {
  std::vector<std::string> out;
  for (const auto& line : raw_lines(path)) {
    json j = json::parse(line);
    j.erase("wall_s");
    out.push_back(j.dump());
  }
  return out;
}

}  // namespace fedrio::records
