// fedsim: partition inspection, training runs, evaluation, figures and tables.

#include "plot.hpp"

#include "fedrio/config.hpp"
#include "fedrio/orchestrator.hpp"
#include "fedrio/records.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace fedrio;
using nlohmann::json;
namespace plot = fedsim::plot;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  bool no_masks = false;
  bool no_rl = false;
  bool no_adaptive_mp = false;
};

config::ExperimentConfig resolve(const Overrides& o) {
  config::ExperimentConfig cfg = o.config.empty() ? config::ExperimentConfig{} : config::load_config(o.config);
  if (o.seed) cfg.run.seed = *o.seed;
  if (o.method) cfg.federation.method = config::parse_method(*o.method);
  cfg.ablation.no_masks |= o.no_masks;
  cfg.ablation.no_rl |= o.no_rl;
  cfg.ablation.no_adaptive_mp |= o.no_adaptive_mp;
  if (!o.out.empty()) {
    cfg.run.out_dir = o.out;
  } else if (const char* env = std::getenv("FEDSIM_OUT"); env && *env) {
    cfg.run.out_dir = env;
  }
  config::validate(cfg);
  return cfg;
}

std::string run_name(const config::ExperimentConfig& cfg) {
  if (!cfg.run.name.empty()) return cfg.run.name;
  std::string name = config::to_string(cfg.federation.method);
  if (cfg.ablation.no_masks) name += "-NA";
  if (cfg.ablation.no_rl) name += "-NR";
  if (cfg.ablation.no_adaptive_mp) name += "-NC";
  return name + "_s" + std::to_string(cfg.run.seed);
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::ostringstream os;
  os << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

config::ExperimentConfig run_config(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "config.ini")) throw config::ConfigError(run_dir.string() + " is not a run directory");
  return config::load_config(run_dir / "config.ini");
}

int cmd_partition(const Overrides& o) {
  const auto cfg = resolve(o);
  const auto env = orchestrator::prepare(cfg);
  const Eigen::MatrixXi hist = data::label_histogram(env.shards);
  fs::create_directories(cfg.run.out_dir);
  const fs::path csv = cfg.run.out_dir / "partition_histogram.csv";
  data::write_histogram_csv(hist, csv);
  std::cout << "client  human    bot  total\n";
  for (Eigen::Index k = 0; k < hist.rows(); ++k) {
    std::cout << std::setw(6) << k << std::setw(7) << hist(k, 0) << std::setw(7) << hist(k, 1) << std::setw(7)
              << hist.row(k).sum() << '\n';
  }
  std::cout << "wrote " << csv.string() << '\n';
  return kExitOk;
}

void write_checkpoints(const fs::path& dir, const orchestrator::RunResult& r, const config::ExperimentConfig& cfg) {
  fs::create_directories(dir);
  orchestrator::save_params(r.server.backbone, dir / "global_backbone.json");
  orchestrator::save_params(r.server.classifier, dir / "global_classifier.json");
  orchestrator::save_params(r.server.generator.params, dir / "generator.json");
  orchestrator::save_params(r.server.generator.buffers, dir / "generator_buffers.json");
  for (const auto& c : r.clients) {
    orchestrator::save_params(c.backbone, dir / ("client_" + std::to_string(c.id) + "_backbone.json"));
    orchestrator::save_params(c.d1, dir / ("client_" + std::to_string(c.id) + "_d1.json"));
  }
  if (cfg.federation.method == config::Method::FedRio) {
    agg::write_layer_mask_csv(r.server.raw_masks, r.server.backbone, dir / "masks.csv");
  }
  if (r.agent) r.agent->buffer().save(dir / "replay.bin");
}

int cmd_train(const Overrides& o) {
  const auto cfg = resolve(o);
  const fs::path dir = cfg.run.out_dir / run_name(cfg);
  fs::create_directories(dir);
  write_text(dir / "config.ini", config::to_ini(cfg));
  json manifest{{"config_hash", config::config_hash(cfg)},
                {"version", FEDSIM_VERSION},
                {"start", timestamp()},
                {"method", config::to_string(cfg.federation.method)},
                {"artifacts", {"config.ini", "records.jsonl", "summary.json", "checkpoint/"}}};
  auto finish = [&](const std::string& status) {
    manifest["end"] = timestamp();
    manifest["status"] = status;
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  };
  try {
    const auto env = orchestrator::prepare(cfg);
    orchestrator::RunOptions opts;
    opts.records_path = dir / "records.jsonl";
    opts.on_round = [&](const orchestrator::RoundEvent& e) {
      std::clog << "round " << e.t << "/" << cfg.federation.rounds << "  acc " << std::fixed << std::setprecision(4)
                << e.record.acc << "  f1 " << e.record.f1 << "  (" << std::setprecision(2) << e.record.wall_s << " s)\n";
    };
    const auto result = orchestrator::run(cfg, env, opts);
    write_text(dir / "summary.json", orchestrator::summary_json(result.summary) + "\n");
    write_checkpoints(dir / "checkpoint", result, cfg);
    finish("ok");
    std::cout << orchestrator::summary_json(result.summary) << '\n' << "run directory: " << dir.string() << '\n';
    return kExitOk;
  } catch (const config::ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    manifest["error"] = e.what();
    finish("aborted");
    throw;
  }
}

int cmd_evaluate(const std::string& run_dir) {
  const auto cfg = run_config(run_dir);
  const auto env = orchestrator::prepare(cfg);
  const auto bcfg = config::effective_backbone(cfg, env.dataset.feature_dim());
  const fs::path ck = fs::path(run_dir) / "checkpoint";
  const ParamSet backbone = orchestrator::load_params(ck / "global_backbone.json");
  const ParamSet classifier = orchestrator::load_params(ck / "global_classifier.json");
  const auto val = orchestrator::evaluate(backbone, classifier, bcfg, env.dataset, env.adjacency, env.val_nodes);
  json j{{"val", {{"acc", val.acc}, {"f1", val.f1}}}};
  if (!env.test_nodes.empty()) {
    const auto test = orchestrator::evaluate(backbone, classifier, bcfg, env.dataset, env.adjacency, env.test_nodes);
    j["test"] = {{"acc", test.acc}, {"f1", test.f1}};
  }
  write_text(fs::path(run_dir) / "evaluation.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

int plot_curve(const std::vector<std::string>& runs, const fs::path& out) {
  if (runs.empty()) throw config::ConfigError("plot curve needs at least one --run");
  std::vector<plot::Series> series;
  std::ofstream csv(out / "curve.csv");
  csv << "run,t,acc,f1\n";
  for (const auto& run : runs) {
    const auto recs = records::read(fs::path(run) / "records.jsonl");
    plot::Series s{fs::path(run).filename().string(), {}, {}};
    for (const auto& r : recs) {
      s.x.push_back(r.t);
      s.y.push_back(r.acc);
      csv << s.label << ',' << r.t << ',' << r.acc << ',' << r.f1 << '\n';
    }
    series.push_back(std::move(s));
  }
  plot::line_chart(out / "curve.svg", "Validation accuracy", "round", "accuracy", series);
  std::cout << "wrote " << (out / "curve.svg").string() << " and curve.csv\n";
  return kExitOk;
}

int plot_heatmap(const Overrides& o, const fs::path& out) {
  const auto cfg = resolve(o);
  const auto env = orchestrator::prepare(cfg);
  const Eigen::MatrixXi hist = data::label_histogram(env.shards);
  data::write_histogram_csv(hist, out / "heatmap.csv");
  std::vector<std::string> rows;
  for (Eigen::Index k = 0; k < hist.rows(); ++k) rows.push_back("client " + std::to_string(k));
  std::ostringstream title;
  title << "Label counts per client (alpha = " << cfg.federation.alpha << ")";
  plot::heatmap(out / "heatmap.svg", title.str(), hist, rows, {"human", "bot"});
  std::cout << "wrote " << (out / "heatmap.svg").string() << " and heatmap.csv\n";
  return kExitOk;
}

int plot_features(const std::vector<std::string>& runs, const fs::path& out) {
  if (runs.size() != 1) throw config::ConfigError("plot features takes exactly one --run");
  const fs::path run = runs[0];
  const auto cfg = run_config(run);
  if (cfg.model.backbone.dims.repr_dim != 2) {
    throw config::ConfigError("plot features needs a run with model.repr_dim = 2 (got " +
                              std::to_string(cfg.model.backbone.dims.repr_dim) + ")");
  }
  const auto env = orchestrator::prepare(cfg);
  const auto bcfg = config::effective_backbone(cfg, env.dataset.feature_dim());
  const ParamSet classifier = orchestrator::load_params(run / "checkpoint" / "global_classifier.json");
  std::ofstream csv(out / "features.csv");
  csv << "client,node,x,y,label\n";
  std::vector<plot::ScatterPoint> points;
  for (int k = 0; k < cfg.federation.num_clients; ++k) {
    const ParamSet bb = orchestrator::load_params(run / "checkpoint" / ("client_" + std::to_string(k) + "_backbone.json"));
    const Matrix reps = backbone::represent(env.dataset.features, env.adjacency, bb, bcfg, std::nullopt);
    for (int v : env.consistency_probe) {
      points.push_back({reps(v, 0), reps(v, 1), env.dataset.labels[v]});
      csv << k << ',' << v << ',' << reps(v, 0) << ',' << reps(v, 1) << ',' << env.dataset.labels[v] << '\n';
    }
  }
  double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
  for (const auto& p : points) {
    xlo = std::min(xlo, p.x), xhi = std::max(xhi, p.x), ylo = std::min(ylo, p.y), yhi = std::max(yhi, p.y);
  }
  constexpr int kGrid = 60;
  const double cw = (xhi - xlo) / (kGrid - 1), chh = (yhi - ylo) / (kGrid - 1);
  Matrix grid(kGrid * kGrid, 2);
  for (int i = 0; i < kGrid; ++i)
    for (int j = 0; j < kGrid; ++j) grid.row(i * kGrid + j) << xlo + cw * i, ylo + chh * j;
  const Matrix logits = models::classifier_logits(classifier, grid);
  std::ofstream gcsv(out / "features_regions.csv");
  gcsv << "x,y,predicted\n";
  std::vector<plot::ScatterPoint> regions;
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    const int c = logits(i, 1) > logits(i, 0) ? 1 : 0;
    regions.push_back({grid(i, 0), grid(i, 1), c});
    gcsv << grid(i, 0) << ',' << grid(i, 1) << ',' << c << '\n';
  }
  plot::scatter_regions(out / "features.svg", "Client representations and global decision regions", points, regions, cw, chh);
  std::cout << "wrote " << (out / "features.svg").string() << ", features.csv and features_regions.csv\n";
  return kExitOk;
}

std::string method_label(const fs::path& run) {
  const auto cfg = run_config(run);
  std::string label = config::to_string(cfg.federation.method);
  if (cfg.ablation.no_masks) label += "-NA";
  if (cfg.ablation.no_rl) label += "-NR";
  if (cfg.ablation.no_adaptive_mp) label += "-NC";
  return label;
}

int cmd_table(const std::vector<std::string>& runs, const std::vector<double>& targets, const fs::path& out) {
  if (runs.empty()) throw config::ConfigError("table needs at least one --run");
  if (targets.empty()) throw config::ConfigError("table needs at least one --target");
  std::map<std::string, std::vector<std::vector<records::RoundRecord>>> groups;
  for (const auto& run : runs) groups[method_label(run)].push_back(records::read(fs::path(run) / "records.jsonl"));
  std::ostringstream md;
  std::ofstream csv(out / "rounds_to_target.csv");
  csv << "method,target,runs,reached,mean,std\n";
  md << "| method |";
  for (double t : targets) md << " target " << t << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < targets.size(); ++i) md << "---|";
  md << '\n';
  for (const auto& [method, recs] : groups) {
    md << "| " << method << " |";
    for (double target : targets) {
      std::vector<double> reached;
      for (const auto& r : recs) {
        if (const auto n = orchestrator::rounds_to_target(r, target)) reached.push_back(*n);
      }
      double mean = 0.0, sd = 0.0;
      for (double v : reached) mean += v / static_cast<double>(reached.size());
      for (double v : reached) sd += (v - mean) * (v - mean) / static_cast<double>(reached.size());
      sd = std::sqrt(sd);
      csv << method << ',' << target << ',' << recs.size() << ',' << reached.size() << ',';
      if (reached.empty()) {
        md << " unreached |";
        csv << "unreached,unreached\n";
        continue;
      }
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(1) << mean << " ± " << sd;
      if (reached.size() < recs.size()) cell << " (" << reached.size() << "/" << recs.size() << ")";
      md << ' ' << cell.str() << " |";
      csv << mean << ',' << sd << '\n';
    }
    md << '\n';
  }
  write_text(out / "rounds_to_target.md", md.str());
  std::cout << md.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedsim: federated social-bot detection simulator"};
  app.require_subcommand(1);
  Overrides o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI experiment config")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output root (default: $FEDSIM_OUT or run.out_dir)");
    sub->add_option("--seed", o.seed, "override run.seed");
  };

  auto* partition = app.add_subcommand("partition", "write the per-client label histogram");
  add_common(partition);

  auto* train = app.add_subcommand("train", "run one experiment");
  add_common(train);
  train->add_option("--method", o.method, "fedrio | fedavg | fedprox")
      ->check(CLI::IsMember({"fedrio", "fedavg", "fedprox"}));
  train->add_flag("--no-masks", o.no_masks, "NA: uniform masks, no mask learning");
  train->add_flag("--no-rl", o.no_rl, "NR: full-overwrite downloads");
  train->add_flag("--no-adaptive-mp", o.no_adaptive_mp, "NC: propagate over the raw adjacency");

  std::string eval_run;
  auto* evaluate = app.add_subcommand("evaluate", "score a finished run's global model");
  evaluate->add_option("run", eval_run, "run directory")->required()->check(CLI::ExistingDirectory);

  std::string kind;
  std::vector<std::string> runs;
  auto* plot_cmd = app.add_subcommand("plot", "emit a figure and its CSV");
  plot_cmd->add_option("kind", kind, "curve | heatmap | features")
      ->required()
      ->check(CLI::IsMember({"curve", "heatmap", "features"}));
  plot_cmd->add_option("--run", runs, "run directory (repeatable)");
  add_common(plot_cmd);

  std::vector<double> targets;
  auto* table = app.add_subcommand("table", "rounds-to-target table over runs");
  table->add_option("--run", runs, "run directory (repeatable)");
  table->add_option("--target", targets, "target accuracy (repeatable)");
  table->add_option("--out", o.out, "directory for the table files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*partition) return cmd_partition(o);
    if (*train) return cmd_train(o);
    if (*evaluate) return cmd_evaluate(eval_run);
    const fs::path out = o.out.empty() ? fs::path(".") : fs::path(o.out);
    if (*plot_cmd || *table) fs::create_directories(out);
    if (*plot_cmd) {
      if (kind == "curve") return plot_curve(runs, out);
      if (kind == "heatmap") return plot_heatmap(o, out);
      return plot_features(runs, out);
    }
    if (*table) return cmd_table(runs, targets, out);
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
