#include "fedrio/data.hpp"

#include "fedrio/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace fedrio::data {

std::vector<int> GraphDataset::nodes_in(Split s) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(split.size()); ++i) {
    if (split[i] == s) out.push_back(i);
  }
  return out;
}

ad::AdjacencyPtr GraphDataset::adjacency() const {
  auto adj = std::make_shared<ad::Adjacency>();
  adj->num_nodes = num_nodes();
  adj->src.reserve(edges.size() * 2);
  adj->dst.reserve(edges.size() * 2);
  for (const auto& [u, v] : edges) {
    adj->src.push_back(u);
    adj->dst.push_back(v);
    adj->src.push_back(v);
    adj->dst.push_back(u);
  }
  return adj;
}

void validate(const GraphDataset& ds) {
  const int n = ds.num_nodes();
  if (static_cast<int>(ds.labels.size()) != n) throw DataError("label count does not match node count");
  if (!ds.features.allFinite()) throw DataError("non-finite feature value");
  std::array<int, kNumClasses> counts{};
  for (int y : ds.labels) {
    if (y < 0 || y >= kNumClasses) throw DataError("label outside {0,1}: " + std::to_string(y));
    ++counts[y];
  }
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0) throw DataError("class " + std::to_string(c) + " has no nodes");
  }
  std::set<Edge> seen;
  for (const auto& [u, v] : ds.edges) {
    if (u < 0 || v < 0 || u >= n || v >= n) {
      throw DataError("edge (" + std::to_string(u) + "," + std::to_string(v) + ") out of range for N=" +
                      std::to_string(n));
    }
    if (u == v) throw DataError("self-loop on node " + std::to_string(u));
    if (!seen.insert(std::minmax(u, v)).second) {
      throw DataError("duplicate edge (" + std::to_string(u) + "," + std::to_string(v) + ")");
    }
  }
  if (ds.has_split() && static_cast<int>(ds.split.size()) != n) throw DataError("split size does not match N");
}

void validate_split(const GraphDataset& ds, const SplitFractions& fractions, double tolerance) {
  if (!ds.has_split()) throw DataError("dataset has no split");
  const double n = ds.num_nodes();
  const double got[3] = {ds.nodes_in(Split::Train).size() / n, ds.nodes_in(Split::Val).size() / n,
                         ds.nodes_in(Split::Test).size() / n};
  const double want[3] = {fractions.train, fractions.val, fractions.test};
  for (int i = 0; i < 3; ++i) {
    if (std::abs(got[i] - want[i]) > tolerance) throw DataError("split proportions outside tolerance");
  }
}

std::vector<Edge> canonical_edges(std::span<const Edge> edges, int num_nodes) {
  std::set<Edge> kept;
  for (const auto& [u, v] : edges) {
    if (u < 0 || v < 0 || u >= num_nodes || v >= num_nodes) {
      throw DataError("edge (" + std::to_string(u) + "," + std::to_string(v) + ") out of range for N=" +
                      std::to_string(num_nodes));
    }
    if (u != v) kept.insert(std::minmax(u, v));
  }
  return {kept.begin(), kept.end()};
}

GraphDataset stratified_split(GraphDataset ds, const SplitFractions& fractions, std::uint64_t seed) {
  if (fractions.train < 0 || fractions.val < 0 || fractions.train + fractions.val > 1.0 + 1e-12) {
    throw DataError("invalid split fractions");
  }
  Rng rng(derive_seed(seed, {0x5b117ULL}));
  ds.split.assign(ds.num_nodes(), Split::Test);
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<int> members;
    for (int i = 0; i < ds.num_nodes(); ++i) {
      if (ds.labels[i] == c) members.push_back(i);
    }
    if (static_cast<int>(members.size()) < kMinClassForSplit) {
      throw DataError("class " + std::to_string(c) + " has fewer than " + std::to_string(kMinClassForSplit) +
                      " nodes");
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::lround(fractions.train * n));
    const auto n_val = std::min(members.size() - n_train, static_cast<std::size_t>(std::lround(fractions.val * n)));
    for (std::size_t i = 0; i < members.size(); ++i) {
      ds.split[members[i]] = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    }
  }
  return ds;
}

namespace {

std::vector<double> sample_dirichlet(double alpha, int k, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (double& x : p) {
    x = gamma(rng);
    total += x;
  }
  if (!(total > 0.0)) {
    // Every draw underflowed (tiny alpha): the limit is a one-hot vector.
    std::fill(p.begin(), p.end(), 0.0);
    p[std::uniform_int_distribution<int>(0, k - 1)(rng)] = 1.0;
    return p;
  }
  for (double& x : p) x /= total;
  return p;
}

}  // namespace

std::vector<ClientShard> dirichlet_partition(const GraphDataset& ds, const PartitionSpec& spec) {
  if (!(spec.alpha > 0.0)) throw std::invalid_argument("partition alpha must be > 0");
  if (spec.num_clients < 2) throw std::invalid_argument("partition needs K >= 2 clients");
  if (!ds.has_split()) throw DataError("dataset has no split");
  const std::vector<int> train = ds.nodes_in(Split::Train);
  if (static_cast<int>(train.size()) < spec.num_clients) throw DataError("fewer train nodes than clients");

  const int k = spec.num_clients;
  Rng rng(derive_seed(spec.seed, {0xd1c7ULL}));
  std::vector<std::vector<int>> members(k);
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<int> cls;
    for (int v : train) {
      if (ds.labels[v] == c) cls.push_back(v);
    }
    std::shuffle(cls.begin(), cls.end(), rng);
    const std::vector<double> p = sample_dirichlet(spec.alpha, k, rng);
    double cum = 0.0;
    std::size_t start = 0;
    for (int j = 0; j < k; ++j) {
      cum += p[j];
      std::size_t stop = j == k - 1 ? cls.size() : static_cast<std::size_t>(std::lround(cum * cls.size()));
      stop = std::clamp(stop, start, cls.size());
      members[j].insert(members[j].end(), cls.begin() + static_cast<long>(start), cls.begin() + static_cast<long>(stop));
      start = stop;
    }
  }
  // Empty-shard repair: donate one node from the currently largest shard.
  for (int j = 0; j < k; ++j) {
    if (!members[j].empty()) continue;
    auto largest = std::max_element(members.begin(), members.end(),
                                    [](const auto& a, const auto& b) { return a.size() < b.size(); });
    members[j].push_back(largest->back());
    largest->pop_back();
  }

  std::vector<int> owner(ds.num_nodes(), -1);
  std::vector<int> local(ds.num_nodes(), -1);
  std::vector<ClientShard> shards(k);
  for (int j = 0; j < k; ++j) {
    std::sort(members[j].begin(), members[j].end());
    shards[j].node_indices = members[j];
    for (int i = 0; i < static_cast<int>(members[j].size()); ++i) {
      const int v = members[j][i];
      owner[v] = j;
      local[v] = i;
      ++shards[j].label_counts[ds.labels[v]];
    }
  }
  for (const auto& [u, v] : ds.edges) {
    if (owner[u] >= 0 && owner[u] == owner[v]) shards[owner[u]].subgraph.emplace_back(local[u], local[v]);
  }
  return shards;
}

GraphDataset generate_synthetic_bot_graph(const SyntheticGraphConfig& cfg) {
  if (cfg.feature_dim < 2) throw std::invalid_argument("synthetic graph needs feature_dim >= 2");
  if (cfg.nodes_per_class < 1) throw std::invalid_argument("synthetic graph needs nodes_per_class >= 1");
  for (double p : {cfg.intra_class_edge_prob, cfg.inter_class_edge_prob}) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("edge probability outside [0,1]");
  }
  Rng rng(derive_seed(cfg.seed, {0x5e7ULL}));
  const int n = 2 * cfg.nodes_per_class;
  const int d = cfg.feature_dim;
  GraphDataset ds;
  ds.labels.resize(n);
  // Alternating-sign unit axis: zero row mean, so row-wise normalization keeps the class signal.
  Eigen::RowVectorXd direction(d);
  for (int c = 0; c < d; ++c) direction(c) = (c % 2 == 0 ? 1.0 : -1.0);
  direction /= direction.norm();
  ds.features = standard_normal(n, d, rng);
  for (int i = 0; i < n; ++i) {
    const int y = i < cfg.nodes_per_class ? 0 : 1;
    ds.labels[i] = y;
    ds.features.row(i) += (y == 0 ? -0.5 : 0.5) * cfg.class_mean_separation * direction;
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int u = 0; u < n; ++u) {
    for (int v = u + 1; v < n; ++v) {
      const double p = ds.labels[u] == ds.labels[v] ? cfg.intra_class_edge_prob : cfg.inter_class_edge_prob;
      if (unif(rng) < p) ds.edges.emplace_back(u, v);
    }
  }
  return ds;
}

Eigen::MatrixXi label_histogram(std::span<const ClientShard> shards) {
  Eigen::MatrixXi hist(static_cast<Eigen::Index>(shards.size()), kNumClasses);
  for (std::size_t k = 0; k < shards.size(); ++k) {
    for (int c = 0; c < kNumClasses; ++c) hist(static_cast<Eigen::Index>(k), c) = shards[k].label_counts[c];
  }
  return hist;
}

void write_histogram_csv(const Eigen::MatrixXi& hist, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "client,human,bot\n";
  for (Eigen::Index k = 0; k < hist.rows(); ++k) out << k << ',' << hist(k, 0) << ',' << hist(k, 1) << '\n';
}

namespace {

Split parse_split(const std::string& s, const std::string& where) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError(where + ": unknown split tag '" + s + "'");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_number(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw DataError(where + ": cannot parse number '" + s + "'");
  }
  if (used != s.size()) throw DataError(where + ": cannot parse number '" + s + "'");
  return v;
}

long parse_int(const std::string& s, const std::string& where) {
  const double v = parse_number(s, where);
  if (v != std::floor(v)) throw DataError(where + ": expected integer, got '" + s + "'");
  return static_cast<long>(v);
}

GraphDataset load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": JSON parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  GraphDataset ds;
  try {
    const auto& feats = j.at("features");
    const auto& labels = j.at("labels");
    const auto n = static_cast<Eigen::Index>(feats.size());
    if (static_cast<Eigen::Index>(labels.size()) != n) throw DataError(path.string() + ": features/labels length mismatch");
    const auto d = n > 0 ? static_cast<Eigen::Index>(feats[0].size()) : 0;
    ds.features.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (static_cast<Eigen::Index>(feats[i].size()) != d) {
        throw DataError(path.string() + ": feature row " + std::to_string(i) + " has wrong width");
      }
      for (Eigen::Index c = 0; c < d; ++c) ds.features(i, c) = feats[i][c].get<double>();
    }
    for (const auto& y : labels) ds.labels.push_back(y.get<int>());
    std::vector<Edge> edges;
    if (j.contains("edges")) {
      for (const auto& e : j.at("edges")) {
        if (e.size() != 2) throw DataError(path.string() + ": edge entries must be [src, dst]");
        edges.emplace_back(e[0].get<int>(), e[1].get<int>());
      }
    }
    ds.edges = canonical_edges(edges, static_cast<int>(n));
    if (j.contains("split")) {
      for (const auto& s : j.at("split")) ds.split.push_back(parse_split(s.get<std::string>(), path.string()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return ds;
}

GraphDataset load_csv(const std::filesystem::path& nodes_path, const DatasetSchema& schema) {
  std::ifstream in(nodes_path);
  if (!in) throw DataError("cannot open " + nodes_path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(nodes_path.string() + ":1: empty node file");
  const std::vector<std::string> header = split_csv_line(line);
  int id_col = -1, label_col = -1, split_col = -1;
  std::map<int, int> feature_cols;  // feature index -> column
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const std::string& h = header[c];
    if (h == schema.id_column) {
      id_col = c;
    } else if (h == schema.label_column) {
      label_col = c;
    } else if (h == schema.split_column) {
      split_col = c;
    } else if (h.rfind(schema.feature_prefix, 0) == 0) {
      const std::string rest = h.substr(schema.feature_prefix.size());
      if (!rest.empty() && std::all_of(rest.begin(), rest.end(), ::isdigit)) feature_cols[std::stoi(rest)] = c;
    }
  }
  if (id_col < 0 || label_col < 0) {
    throw DataError(nodes_path.string() + ":1: header needs '" + schema.id_column + "' and '" + schema.label_column + "'");
  }
  const int d = static_cast<int>(feature_cols.size());
  for (int f = 0; f < d; ++f) {
    if (!feature_cols.contains(f)) throw DataError(nodes_path.string() + ":1: missing feature column f" + std::to_string(f));
  }

  std::unordered_map<long, int> index_of;
  std::vector<std::vector<double>> rows;
  GraphDataset ds;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::string where = nodes_path.string() + ":" + std::to_string(lineno);
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) throw DataError(where + ": expected " + std::to_string(header.size()) + " columns");
    const long id = parse_int(cells[id_col], where);
    if (!index_of.emplace(id, static_cast<int>(rows.size())).second) throw DataError(where + ": duplicate node id");
    ds.labels.push_back(static_cast<int>(parse_int(cells[label_col], where)));
    std::vector<double> feats(d);
    for (int f = 0; f < d; ++f) feats[f] = parse_number(cells[feature_cols[f]], where);
    rows.push_back(std::move(feats));
    if (split_col >= 0) ds.split.push_back(parse_split(cells[split_col], where));
  }
  ds.features.resize(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int f = 0; f < d; ++f) ds.features(static_cast<Eigen::Index>(i), f) = rows[i][f];
  }

  if (!schema.edges_path) throw DataError("CSV datasets need an edge file");
  std::ifstream ein(*schema.edges_path);
  if (!ein) throw DataError("cannot open " + schema.edges_path->string());
  if (!std::getline(ein, line)) throw DataError(schema.edges_path->string() + ":1: empty edge file");
  const std::vector<std::string> eheader = split_csv_line(line);
  const auto src_it = std::find(eheader.begin(), eheader.end(), "src");
  const auto dst_it = std::find(eheader.begin(), eheader.end(), "dst");
  if (src_it == eheader.end() || dst_it == eheader.end()) {
    throw DataError(schema.edges_path->string() + ":1: header needs 'src' and 'dst'");
  }
  const auto src_col = std::distance(eheader.begin(), src_it);
  const auto dst_col = std::distance(eheader.begin(), dst_it);
  std::vector<Edge> edges;
  lineno = 1;
  const int n = static_cast<int>(rows.size());
  while (std::getline(ein, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::string where = schema.edges_path->string() + ":" + std::to_string(lineno);
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != eheader.size()) throw DataError(where + ": expected " + std::to_string(eheader.size()) + " columns");
    const long s = parse_int(cells[src_col], where);
    const long t = parse_int(cells[dst_col], where);
    const auto si = index_of.find(s);
    const auto ti = index_of.find(t);
    if (si == index_of.end() || ti == index_of.end()) {
      throw DataError(where + ": edge (" + std::to_string(s) + "," + std::to_string(t) +
                      ") references a node id outside the node file (N=" + std::to_string(n) + ")");
    }
    edges.emplace_back(si->second, ti->second);
  }
  ds.edges = canonical_edges(edges, n);
  return ds;
}

}  // namespace

GraphDataset load_dataset(const std::filesystem::path& path, const DatasetSchema& schema, std::uint64_t split_seed) {
  FileFormat format = schema.format;
  if (format == FileFormat::Auto) format = path.extension() == ".json" ? FileFormat::Json : FileFormat::Csv;
  GraphDataset ds = format == FileFormat::Json ? load_json(path) : load_csv(path, schema);
  validate(ds);
  if (!ds.has_split()) {
    std::array<int, kNumClasses> counts{};
    for (int y : ds.labels) ++counts[y];
    if (*std::min_element(counts.begin(), counts.end()) >= kMinClassForSplit) {
      ds = stratified_split(std::move(ds), SplitFractions{}, split_seed);
    }
  }
  return ds;
}

}  // namespace fedrio::data
