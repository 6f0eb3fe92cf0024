#include "doctest.h"

#include "fedrio/records.hpp"

#include <filesystem>
#include <fstream>

using namespace fedrio::records;

namespace {

RoundRecord sample(int t) {
  RoundRecord r;
  r.t = t;
  r.acc = 0.1 * t + 1.0 / 3.0;
  r.f1 = 0.25;
  r.losses = {{"stage1", 0.7}, {"distill", 1e-300}};
  r.client_acc = {0.5, 0.75};
  r.action = std::vector<double>{0.0, 0.25};
  r.reward = -0.125;
  r.consistency = 0.02;
  r.wall_s = 1.5 + t;
  return r;
}

std::filesystem::path temp(const char* name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("a record survives a JSON round trip bit for bit") {
  const RoundRecord r = sample(3);
  const RoundRecord b = from_json_line(to_json_line(r));
  CHECK(b.t == r.t);
  CHECK(b.acc == r.acc);
  CHECK(b.losses == r.losses);
  CHECK(b.client_acc == r.client_acc);
  CHECK(b.action == r.action);
  CHECK(b.reward == r.reward);
  CHECK(b.consistency == r.consistency);
  CHECK(b.wall_s == r.wall_s);
}

TEST_CASE("optional RL fields are omitted when absent") {
  RoundRecord r = sample(1);
  r.action.reset();
  r.reward.reset();
  const std::string line = to_json_line(r);
  CHECK(line.find("\"action\"") == std::string::npos);
  CHECK(line.find("\"reward\"") == std::string::npos);
  CHECK_FALSE(from_json_line(line).action.has_value());
  CHECK(to_json_line(r, false).find("wall_s") == std::string::npos);
}

TEST_CASE("writer output reads back, ignoring a truncated tail") {
  const auto path = temp("fedrio_records.jsonl");
  {
    Writer w(path);
    for (int t = 1; t <= 3; ++t) w.append(sample(t));
  }
  CHECK(read(path).size() == 3);
  {
    std::ofstream os(path, std::ios::app);
    os << R"({"t": 4, "acc": 0.)";  // crash mid-line, no newline
  }
  const auto rs = read(path);
  REQUIRE(rs.size() == 3);
  CHECK(rs[2].t == 3);
  std::filesystem::remove(path);
}

TEST_CASE("timing-free lines differ only by wall time") {
  const auto a = temp("fedrio_records_a.jsonl");
  const auto b = temp("fedrio_records_b.jsonl");
  {
    Writer wa(a), wb(b);
    for (int t = 1; t <= 2; ++t) {
      RoundRecord r = sample(t);
      wa.append(r);
      r.wall_s += 100.0;
      wb.append(r);
    }
  }
  CHECK(timing_free_lines(a) == timing_free_lines(b));
  CHECK(timing_free_lines(a).front().find("wall_s") == std::string::npos);
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST_CASE("files without the schema header are rejected") {
  const auto path = temp("fedrio_records_bad.jsonl");
  {
    std::ofstream os(path);
    os << R"({"t": 1, "acc": 0.5, "f1": 0.5})" << '\n';
  }
  CHECK_THROWS(read(path));
  { std::ofstream os(path); }
  CHECK_THROWS(read(path));
  {
    std::ofstream os(path);
    os << R"({"schema": 99})" << '\n';
  }
  CHECK_THROWS(read(path));
  std::filesystem::remove(path);
  CHECK_THROWS(read(path));
}
