#include "doctest.h"

#include "fedrio/config.hpp"

#include <filesystem>

using namespace fedrio;
using namespace fedrio::config;

TEST_CASE("defaults parse from an empty file") {
  const ExperimentConfig c = parse_config("");
  CHECK(c.federation.num_clients == 10);
  CHECK(c.federation.method == Method::FedRio);
  CHECK(c.rl.reward.xi == 64.0);
  CHECK(c.rl.agent.gamma == 0.99);
  CHECK(c.rl.agent.learning_rate == 5e-4);
  CHECK(c.rl.agent.buffer_capacity == 2000);
  CHECK(c.server.distill.steps == 50);
  CHECK(c.server.distill.batch_size == 64);
  CHECK(c.server.mask.learning_rate == 1e-2);
  CHECK(c.server.mask.batch_size == 256);
}

TEST_CASE("values from every section are applied") {
  const ExperimentConfig c = parse_config(R"(
[data]
nodes_per_class = 50
separation = 2.5
[federation]
num_clients = 4
method = fedprox
[model]
env_aggregator = sum
d2_hidden = 8, 16
hard_gates = false
[client]
local_epochs = 2
[server]
mu_prox = 0.1
[rl]
hidden = 32,32
[ablation]
no_rl = true
[run]
seed = 42
)");
  CHECK(c.data.synthetic.nodes_per_class == 50);
  CHECK(c.data.synthetic.class_mean_separation == 2.5);
  CHECK(c.federation.num_clients == 4);
  CHECK(c.federation.method == Method::FedProx);
  CHECK(c.model.backbone.env_aggregator == backbone::Aggregator::Sum);
  CHECK(c.model.d2_hidden == std::vector<int>{8, 16});
  CHECK_FALSE(c.model.backbone.gate.hard);
  CHECK(c.client.local_epochs == 2);
  CHECK(c.server.mu_prox == 0.1);
  CHECK(c.rl.agent.hidden == std::vector<int>{32, 32});
  CHECK(c.ablation.no_rl);
  CHECK(c.run.seed == 42);
}

TEST_CASE("malformed configs are rejected with a message") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("[federation]\nbogus = 1\n").find("bogus") != std::string::npos);
  CHECK(message("[nosuch]\nx = 1\n").find("nosuch") != std::string::npos);
  CHECK(message("[federation]\nnum_clients = ten\n").find("num_clients") != std::string::npos);
  CHECK(message("[federation]\nnum_clients = 1\n").find("num_clients") != std::string::npos);
  CHECK(message("[federation]\nmethod = fedsgd\n").find("method") != std::string::npos);
  CHECK(message("[rl]\nomega = 1.5\n").find("omega") != std::string::npos);
  CHECK(message("[rl]\nxi = 1\n").find("xi") != std::string::npos);
  CHECK(message("[data]\ntrain_fraction = 0.9\n").find("split") != std::string::npos);
  CHECK(message("[model]\nhard_gates = maybe\n").find("boolean") != std::string::npos);
  CHECK(message("[server]\nadversarial_client = 10\n").find("adversarial") != std::string::npos);
  CHECK(message("[data]\nsource = file\n").find("data.path") != std::string::npos);
  CHECK(message("orphan = 1\n") != "");
  CHECK_THROWS_AS(load_config("/nonexistent/cfg.ini"), ConfigError);
}

TEST_CASE("canonical INI round-trips exactly") {
  ExperimentConfig c = parse_config("[federation]\nalpha = 0.1\n[client]\nlearning_rate = 0.0033\n[model]\nd2_hidden = 7,9\n");
  c.run.seed = 123456789012345ULL;
  const ExperimentConfig back = parse_config(to_ini(c));
  CHECK(to_pairs(back) == to_pairs(c));
  CHECK(back.federation.alpha == 0.1);
  CHECK(back.run.seed == 123456789012345ULL);
}

TEST_CASE("config hash tracks content but not output placement") {
  const ExperimentConfig a = parse_config("");
  ExperimentConfig b = a;
  b.run.out_dir = "elsewhere";
  b.run.name = "other";
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.run.seed = 1;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("shipped acceptance config loads") {
  const auto c = load_config(std::filesystem::path(FEDSIM_SOURCE_DIR) / "configs" / "synthetic_acceptance.ini");
  CHECK(c.federation.rounds == 30);
  CHECK(c.federation.alpha == 0.1);
  CHECK(c.rl.reward.omega == 0.9);
}

TEST_CASE("effective backbone applies input dim and the adaptive switch") {
  ExperimentConfig c = parse_config("[ablation]\nno_adaptive_mp = true\n");
  const auto b = effective_backbone(c, 11);
  CHECK(b.dims.input_dim == 11);
  CHECK_FALSE(b.adaptive);
  CHECK(parse_method(to_string(Method::FedAvg)) == Method::FedAvg);
}
