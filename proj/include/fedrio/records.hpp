#pragma once

// Line-delimited JSON round records. The first line is a {"schema": 1} header;
// every following line is one round. A truncated final line is ignored on read.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fedrio::records {

inline constexpr int kSchemaVersion = 1;

struct RoundRecord {
  int t = 0;
  double acc = 0.0;
  double f1 = 0.0;
  std::map<std::string, double> losses;
  std::vector<double> client_acc;
  std::optional<std::vector<double>> action;  // momenta, FedRio with RL only
  std::optional<double> reward;
  double consistency = 0.0;
  double wall_s = 0.0;
};

std::string to_json_line(const RoundRecord& r, bool with_timing = true);
RoundRecord from_json_line(const std::string& line);

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path);
  void append(const RoundRecord& r);

 private:
  std::ofstream os_;
};

std::vector<RoundRecord> read(const std::filesystem::path& path);

// Record lines with the timing field removed, for byte-level run comparison.
std::vector<std::string> timing_free_lines(const std::filesystem::path& path);

}  // namespace fedrio::records
