#include "fedrio/config.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace fedrio::config {

namespace {

using Getter = std::function<std::string(const ExperimentConfig&)>;
using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

struct Field {
  std::string section;
  std::string key;
  Getter get;
  Setter set;
};

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, r.ptr};
}
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(long long v) { return std::to_string(v); }

double to_double(const std::string& s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

long long to_int(const std::string& s) {
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("not an integer: '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("not an unsigned integer: '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  const std::string l = boost::algorithm::to_lower_copy(s);
  if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
  if (l == "false" || l == "0" || l == "no" || l == "off") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

std::vector<int> to_int_list(const std::string& s) {
  std::vector<std::string> parts;
  boost::algorithm::split(parts, s, boost::is_any_of(","));
  std::vector<int> out;
  for (auto& p : parts) {
    boost::algorithm::trim(p);
    if (p.empty()) continue;
    out.push_back(static_cast<int>(to_int(p)));
  }
  return out;
}

std::string fmt_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

backbone::Aggregator to_aggregator(const std::string& s) {
  if (s == "mean") return backbone::Aggregator::Mean;
  if (s == "sum") return backbone::Aggregator::Sum;
  throw ConfigError("aggregator must be mean or sum, got '" + s + "'");
}
std::string fmt(backbone::Aggregator a) { return a == backbone::Aggregator::Mean ? "mean" : "sum"; }

#define FIELD_D(sec, key, expr) \
  Field{sec, key, [](const ExperimentConfig& c) { return fmt(static_cast<double>(c.expr)); }, \
        [](ExperimentConfig& c, const std::string& v) { c.expr = to_double(v); }}
#define FIELD_I(sec, key, expr) \
  Field{sec, key, [](const ExperimentConfig& c) { return fmt(static_cast<long long>(c.expr)); }, \
        [](ExperimentConfig& c, const std::string& v) { c.expr = static_cast<decltype(c.expr)>(to_int(v)); }}
#define FIELD_B(sec, key, expr) \
  Field{sec, key, [](const ExperimentConfig& c) { return fmt(static_cast<bool>(c.expr)); }, \
        [](ExperimentConfig& c, const std::string& v) { c.expr = to_bool(v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      Field{"data", "source",
            [](const ExperimentConfig& c) { return std::string(c.data.source == DataSource::Synthetic ? "synthetic" : "file"); },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "synthetic") c.data.source = DataSource::Synthetic;
              else if (v == "file") c.data.source = DataSource::File;
              else throw ConfigError("data.source must be synthetic or file");
            }},
      Field{"data", "path", [](const ExperimentConfig& c) { return c.data.path.string(); },
            [](ExperimentConfig& c, const std::string& v) { c.data.path = v; }},
      Field{"data", "edges_path",
            [](const ExperimentConfig& c) { return c.data.edges_path ? c.data.edges_path->string() : std::string(); },
            [](ExperimentConfig& c, const std::string& v) {
              if (v.empty()) c.data.edges_path.reset();
              else c.data.edges_path = v;
            }},
      Field{"data", "format",
            [](const ExperimentConfig& c) {
              switch (c.data.format) {
                case data::FileFormat::Json: return std::string("json");
                case data::FileFormat::Csv: return std::string("csv");
                default: return std::string("auto");
              }
            },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "auto") c.data.format = data::FileFormat::Auto;
              else if (v == "json") c.data.format = data::FileFormat::Json;
              else if (v == "csv") c.data.format = data::FileFormat::Csv;
              else throw ConfigError("data.format must be auto, json or csv");
            }},
      FIELD_I("data", "nodes_per_class", data.synthetic.nodes_per_class),
      FIELD_I("data", "feature_dim", data.synthetic.feature_dim),
      FIELD_D("data", "separation", data.synthetic.class_mean_separation),
      FIELD_D("data", "intra_edge_prob", data.synthetic.intra_class_edge_prob),
      FIELD_D("data", "inter_edge_prob", data.synthetic.inter_class_edge_prob),
      FIELD_D("data", "train_fraction", data.split.train),
      FIELD_D("data", "val_fraction", data.split.val),
      FIELD_D("data", "test_fraction", data.split.test),

      FIELD_I("federation", "num_clients", federation.num_clients),
      FIELD_D("federation", "alpha", federation.alpha),
      FIELD_I("federation", "rounds", federation.rounds),
      Field{"federation", "method", [](const ExperimentConfig& c) { return to_string(c.federation.method); },
            [](ExperimentConfig& c, const std::string& v) { c.federation.method = parse_method(v); }},

      FIELD_I("model", "hidden", model.backbone.dims.hidden),
      FIELD_I("model", "repr_dim", model.backbone.dims.repr_dim),
      FIELD_I("model", "layers", model.backbone.dims.layers),
      FIELD_D("model", "gate_temperature", model.backbone.gate.temperature),
      FIELD_B("model", "hard_gates", model.backbone.gate.hard),
      Field{"model", "action_aggregator", [](const ExperimentConfig& c) { return fmt(c.model.backbone.action_aggregator); },
            [](ExperimentConfig& c, const std::string& v) { c.model.backbone.action_aggregator = to_aggregator(v); }},
      Field{"model", "env_aggregator", [](const ExperimentConfig& c) { return fmt(c.model.backbone.env_aggregator); },
            [](ExperimentConfig& c, const std::string& v) { c.model.backbone.env_aggregator = to_aggregator(v); }},
      FIELD_D("model", "layer_norm_eps", model.backbone.layer_norm_eps),
      FIELD_I("model", "d1_hidden", model.d1_hidden),
      Field{"model", "d2_hidden", [](const ExperimentConfig& c) { return fmt_list(c.model.d2_hidden); },
            [](ExperimentConfig& c, const std::string& v) { c.model.d2_hidden = to_int_list(v); }},
      FIELD_I("model", "noise_dim", model.generator.noise_dim),
      FIELD_I("model", "generator_hidden", model.generator.hidden),

      FIELD_D("client", "alpha_dis", client.alpha_dis),
      FIELD_D("client", "gamma_adv", client.gamma_adv),
      FIELD_D("client", "mu_con", client.mu_con),
      FIELD_D("client", "tau_con", client.tau_con),
      FIELD_I("client", "local_epochs", client.local_epochs),
      FIELD_I("client", "batch_size", client.batch_size),
      FIELD_D("client", "learning_rate", client.learning_rate),
      FIELD_D("client", "weight_decay", client.weight_decay),
      Field{"client", "stage3_labels",
            [](const ExperimentConfig& c) { return std::string(c.client.stage3_uniform_labels ? "uniform" : "prior"); },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "uniform") c.client.stage3_uniform_labels = true;
              else if (v == "prior") c.client.stage3_uniform_labels = false;
              else throw ConfigError("client.stage3_labels must be uniform or prior");
            }},

      FIELD_I("server", "distill_steps", server.distill.steps),
      FIELD_I("server", "distill_batch", server.distill.batch_size),
      FIELD_D("server", "distill_lr", server.distill.learning_rate),
      FIELD_D("server", "distill_weight_decay", server.distill.weight_decay),
      FIELD_B("server", "distill_updates_d", server.distill.updates_d),
      FIELD_D("server", "mask_lr", server.mask.learning_rate),
      FIELD_I("server", "mask_batch", server.mask.batch_size),
      FIELD_D("server", "mu_prox", server.mu_prox),
      FIELD_I("server", "adversarial_client", server.adversarial_client),
      FIELD_D("server", "adversarial_noise_std", server.adversarial_noise_std),

      FIELD_D("rl", "xi", rl.reward.xi),
      FIELD_D("rl", "omega", rl.reward.omega),
      FIELD_D("rl", "gamma", rl.agent.gamma),
      FIELD_D("rl", "learning_rate", rl.agent.learning_rate),
      Field{"rl", "hidden", [](const ExperimentConfig& c) { return fmt_list(c.rl.agent.hidden); },
            [](ExperimentConfig& c, const std::string& v) { c.rl.agent.hidden = to_int_list(v); }},
      FIELD_I("rl", "buffer_capacity", rl.agent.buffer_capacity),
      FIELD_I("rl", "batch_size", rl.agent.batch_size),
      FIELD_I("rl", "sync_every", rl.agent.sync_every),
      FIELD_I("rl", "warmup_rounds", rl.agent.warmup_rounds),
      Field{"rl", "reward_source",
            [](const ExperimentConfig& c) { return std::string(c.rl.source == RewardSource::Real ? "real" : "synthetic"); },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "real") c.rl.source = RewardSource::Real;
              else if (v == "synthetic") c.rl.source = RewardSource::Synthetic;
              else throw ConfigError("rl.reward_source must be real or synthetic");
            }},

      FIELD_B("ablation", "no_masks", ablation.no_masks),
      FIELD_B("ablation", "no_rl", ablation.no_rl),
      FIELD_B("ablation", "no_adaptive_mp", ablation.no_adaptive_mp),

      Field{"run", "seed", [](const ExperimentConfig& c) { return std::to_string(c.run.seed); },
            [](ExperimentConfig& c, const std::string& v) { c.run.seed = to_u64(v); }},
      Field{"run", "out_dir", [](const ExperimentConfig& c) { return c.run.out_dir.string(); },
            [](ExperimentConfig& c, const std::string& v) { c.run.out_dir = v; }},
      Field{"run", "name", [](const ExperimentConfig& c) { return c.run.name; },
            [](ExperimentConfig& c, const std::string& v) { c.run.name = v; }},
      FIELD_I("run", "probe_size", run.probe_size),
      FIELD_I("run", "consistency_probe", run.consistency_probe),
  };
  return f;
}

#undef FIELD_D
#undef FIELD_I
#undef FIELD_B

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::FedRio: return "fedrio";
    case Method::FedAvg: return "fedavg";
    case Method::FedProx: return "fedprox";
  }
  return "fedrio";
}

Method parse_method(const std::string& s) {
  if (s == "fedrio") return Method::FedRio;
  if (s == "fedavg") return Method::FedAvg;
  if (s == "fedprox") return Method::FedProx;
  throw ConfigError("method must be fedrio, fedavg or fedprox, got '" + s + "'");
}

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("key '" + section + "' outside of a section");
    for (const auto& [key, value] : body) {
      const auto& all = fields();
      const auto it = std::find_if(all.begin(), all.end(), [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == all.end()) throw ConfigError("unknown config key [" + section + "] " + key);
      try {
        it->set(cfg, boost::algorithm::trim_copy(value.data()));
      } catch (const ConfigError& e) {
        throw ConfigError("[" + section + "] " + key + ": " + e.what());
      }
    }
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

void validate(const ExperimentConfig& c) {
  require(c.federation.num_clients >= 2, "federation.num_clients must be >= 2");
  require(c.federation.rounds >= 1, "federation.rounds must be >= 1");
  require(c.federation.alpha > 0, "federation.alpha must be > 0");
  if (c.data.source == DataSource::File) require(!c.data.path.empty(), "data.path is required for file data");
  require(c.data.synthetic.nodes_per_class >= 1 && c.data.synthetic.feature_dim >= 1, "synthetic sizes must be positive");
  require(c.data.synthetic.intra_class_edge_prob >= 0 && c.data.synthetic.intra_class_edge_prob <= 1 &&
              c.data.synthetic.inter_class_edge_prob >= 0 && c.data.synthetic.inter_class_edge_prob <= 1,
          "edge probabilities must lie in [0, 1]");
  require(c.data.split.train > 0 && c.data.split.val > 0 && c.data.split.test >= 0 &&
              std::abs(c.data.split.train + c.data.split.val + c.data.split.test - 1.0) < 1e-9,
          "split fractions must be positive and sum to 1");
  const auto& d = c.model.backbone.dims;
  require(d.hidden >= 1 && d.repr_dim >= 1 && d.layers >= 1, "model dims must be positive");
  require(c.model.backbone.gate.temperature > 0, "model.gate_temperature must be > 0");
  require(c.model.d1_hidden >= 1 && !c.model.d2_hidden.empty(), "classifier widths must be positive");
  for (int h : c.model.d2_hidden) require(h >= 1, "model.d2_hidden entries must be positive");
  require(c.model.generator.noise_dim >= 1 && c.model.generator.hidden >= 1, "generator dims must be positive");
  try {
    client::validate(c.client);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("client: ") + e.what());
  }
  require(c.server.distill.steps >= 0 && c.server.distill.batch_size >= 2, "server distillation sizes invalid");
  require(c.server.mask.learning_rate >= 0 && c.server.mask.batch_size >= 2, "server mask settings invalid");
  require(c.server.mu_prox >= 0, "server.mu_prox must be >= 0");
  require(c.server.adversarial_client < c.federation.num_clients, "server.adversarial_client out of range");
  require(c.server.adversarial_noise_std >= 0, "server.adversarial_noise_std must be >= 0");
  require(c.rl.reward.xi > 1, "rl.xi must be > 1");
  require(c.rl.reward.omega > 0 && c.rl.reward.omega <= 1, "rl.omega must lie in (0, 1]");
  require(c.rl.agent.gamma >= 0 && c.rl.agent.gamma < 1, "rl.gamma must lie in [0, 1)");
  require(c.rl.agent.learning_rate > 0, "rl.learning_rate must be > 0");
  require(c.rl.agent.buffer_capacity >= 1 && c.rl.agent.batch_size >= 1 && c.rl.agent.sync_every >= 1 &&
              c.rl.agent.warmup_rounds >= 0,
          "rl buffer/batch/sync/warmup settings invalid");
  require(c.run.probe_size >= 1 && c.run.consistency_probe >= 2, "run probe sizes invalid");
}

std::map<std::string, std::string> to_pairs(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& f : fields()) out[f.section + "." + f.key] = f.get(cfg);
  return out;
}

std::string to_ini(const ExperimentConfig& cfg) {
  std::string out, section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : to_pairs(cfg)) {
    if (k == "run.out_dir" || k == "run.name") continue;  // placement only
    for (char c : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

backbone::Config effective_backbone(const ExperimentConfig& cfg, int input_dim) {
  backbone::Config b = cfg.model.backbone;
  b.dims.input_dim = input_dim;
  b.adaptive = !cfg.ablation.no_adaptive_mp;
  return b;
}

}  // namespace fedrio::config
