// equigraph: command-line driver for dataset generation, training,
// equivariance checking, gradient checking and result reporting.

#include <CLI11.hpp>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "equigraph/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace equigraph;

namespace {

constexpr const char* kToolVersion = "0.1.0";

// Exit codes: 0 success/pass, 1 check failure, 2 usage error, 3 runtime error.
enum ExitCode { kOk = 0, kCheckFailed = 1, kUsage = 2, kRuntime = 3 };

std::string timestamp_utc() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const json& config, const json& seeds, const json& data_paths,
                    const json& output_paths) {
  json m;
  m["command"] = command;
  m["config"] = config;
  m["seeds"] = seeds;
  m["data_paths"] = data_paths;
  m["output_paths"] = output_paths;
  m["tool_version"] = kToolVersion;
  m["timestamp"] = timestamp_utc();
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "manifest.json") << m.dump(2) << "\n";
}

TransformFamily family_from_string(const std::string& s) {
  if (s == "orthogonal") return TransformFamily::orthogonal;
  if (s == "orthogonal-dilation") return TransformFamily::orthogonal_dilation;
  if (s == "non-orthogonal") return TransformFamily::non_orthogonal;
  throw ConfigError("unknown transform family: " + s);
}

// Loads either a dataset directory or its train/ subdirectory.
Dataset load_train_dataset(const fs::path& dir) {
  if (fs::exists(dir / "train" / "metadata.json")) return load_dataset(dir / "train");
  return load_dataset(dir);
}

ModelConfig load_model_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open model config " + path.string());
  return model_config_from_json(json::parse(f));
}

// ---------------------------------------------------------------------------

struct GenArgs {
  int dim = 3;
  std::string family = "orthogonal";
  double mu = 0.0;
  double gamma_min = 0.5, gamma_max = 2.0;
  int copies = 20;
  int augment_k = 0;
  std::uint64_t seed = 42;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  PolytopeDatasetOptions opt;
  opt.family = family_from_string(a.family);
  opt.transform.mu = a.mu;
  opt.transform.gamma_min = a.gamma_min;
  opt.transform.gamma_max = a.gamma_max;
  opt.copies_per_class = a.copies;
  if (opt.family == TransformFamily::non_orthogonal && a.mu <= 0)
    throw ConfigError("non-orthogonal family requires --mu > 0");

  fs::path out(a.out);
  Dataset train = a.augment_k > 0
                      ? polytope_augmented_trainset(a.dim, opt, a.augment_k,
                                                    derive_seed(a.seed, "gen-augment"))
                      : polytope_trainset(a.dim);
  Dataset test = polytope_testset(a.dim, opt, derive_seed(a.seed, "gen-test"));
  json gen_cfg = {{"dim", a.dim},       {"family", a.family},
                  {"mu", a.mu},         {"gamma_min", a.gamma_min},
                  {"gamma_max", a.gamma_max}, {"copies", a.copies},
                  {"augment_k", a.augment_k}};
  save_dataset(train, out / "train", gen_cfg);
  save_dataset(test, out / "test", gen_cfg);
  write_manifest(out, "gen", gen_cfg, {a.seed}, json::array(),
                 {(out / "train").string(), (out / "test").string()});
  std::cout << "wrote " << train.samples.size() << " train and " << test.samples.size()
            << " test samples to " << out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  int seeds = 10;
  int epochs = 1000;
  double lr = 1e-3;
  int test_copies = 20;
  std::uint64_t data_seed = 42;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  ModelConfig cfg = load_model_config(a.config);
  Dataset trainset = load_train_dataset(a.data);
  if (trainset.meta.num_classes != cfg.readout.num_classes)
    throw ConfigError("config/data mismatch: dataset has " +
                      std::to_string(trainset.meta.num_classes) + " classes, config has " +
                      std::to_string(cfg.readout.num_classes));
  int dim = trainset.meta.n_x;
  if (dim < 3 || dim > 5)
    throw ConfigError("config/data mismatch: unsupported coordinate dimension " +
                      std::to_string(dim));

  ExperimentOptions opt;
  opt.dim = dim;
  opt.seeds = a.seeds;
  opt.epochs = a.epochs;
  opt.learning_rate = a.lr;
  opt.test_copies = a.test_copies;
  opt.data_seed = a.data_seed;
  fs::path out(a.out);
  opt.checkpoint_dir = out / "checkpoints";

  auto splits = standard_test_splits(dim, a.test_copies, a.data_seed,
                                     trainset.meta.n_v > 0);
  TableRow row = multi_seed_experiment_on(cfg, opt, trainset, splits);

  fs::create_directories(out);
  std::ofstream csv(out / "results.csv");
  csv << results_csv_header() << "\n" << to_csv(row) << "\n";
  json seeds = json::array();
  for (int s = 0; s < a.seeds; ++s) seeds.push_back(derive_seed(cfg.seed, "experiment-seed", s));
  write_manifest(out, "train", to_json(cfg), seeds, {a.data},
                 {(out / "results.csv").string(), (out / "checkpoints").string()});
  std::cout << results_csv_header() << "\n" << to_csv(row) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct CheckArgs {
  std::string checkpoint;
  std::string data;
  std::string group = "e3";
  int trials = 100;
  double tol = 1e-8;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_check(const CheckArgs& a) {
  GroupTag group = group_tag_from_string(a.group);
  Model model = load_checkpoint(a.checkpoint);
  std::vector<GraphSample> graphs;
  if (group != GroupTag::local) {
    Dataset ds = load_train_dataset(a.data);
    graphs = ds.samples;
  }
  EquivarianceReport rep = check_equivariance(model, graphs, group, a.trials, a.tol, a.seed);

  fs::path out = a.out.empty() ? fs::path(a.checkpoint).parent_path() : fs::path(a.out);
  if (out.empty()) out = ".";
  fs::create_directories(out);
  std::ofstream(out / "equivariance.json") << json::array({rep.to_json()}).dump(2) << "\n";
  write_manifest(out, "check",
                 {{"checkpoint", a.checkpoint}, {"group", a.group},
                  {"trials", a.trials}, {"tol", a.tol}},
                 {a.seed}, {a.data}, {(out / "equivariance.json").string()});

  std::cout << "group " << to_string(group) << ": max deviation "
            << rep.max_abs_deviation << " (tolerance " << rep.tolerance << ") -> "
            << (rep.pass ? "PASS" : "FAIL") << "\n";
  if (!rep.pass) std::cout << "worst case: " << rep.worst_case.dump() << "\n";
  return rep.pass ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string config;
  std::uint64_t seed = 7;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  Dataset ds = polytope_trainset(3);
  // Two small graphs keep the finite-difference loop fast.
  ds.samples.resize(2);
  ModelConfig cfg;
  if (a.config.empty()) {
    cfg = ModelConfig::standard(BlockKind::dgn, Aggregation::sum, ds.meta.num_classes);
  } else {
    cfg = load_model_config(a.config);
    if (cfg.readout.num_classes != ds.meta.num_classes)
      throw ConfigError("gradcheck config must target " +
                        std::to_string(ds.meta.num_classes) + " classes");
  }
  cfg.seed = a.seed;
  Model model(cfg, ds.meta);
  GradCheckReport rep = grad_check(model, ds.samples);
  std::cout << "max relative error " << rep.max_relative_error << " over " << rep.checked
            << " coordinates (" << rep.skipped << " skipped) -> "
            << (rep.pass ? "PASS" : "FAIL") << "\n";
  return rep.pass ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string in;
  std::string format = "table";
};

struct CsvCell {
  double mean = 0, std = 0;
};

CsvCell parse_cell(const std::string& s) {
  auto pos = s.find("±");
  if (pos == std::string::npos) throw ParseError("malformed results cell: " + s);
  CsvCell c;
  c.mean = std::stod(s.substr(0, pos));
  c.std = std::stod(s.substr(pos + 2));  // the sign is two bytes in UTF-8
  return c;
}

int cmd_report(const ReportArgs& a) {
  std::ifstream f(a.in);
  if (!f) throw ParseError("cannot open " + a.in);
  std::string header;
  if (!std::getline(f, header) || header != results_csv_header())
    throw ParseError("malformed results.csv: unexpected header");

  struct Row {
    std::string block, rho, psi;
    int dim = 0, seed_count = 0;
    CsvCell train, orth, orth_dil, mu05, mu15, mu30;
  };
  std::vector<Row> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 11) throw ParseError("malformed results.csv row: " + line);
    Row r;
    r.block = cells[0];
    r.rho = cells[1];
    r.psi = cells[2];
    r.dim = std::stoi(cells[3]);
    r.train = parse_cell(cells[4]);
    r.orth = parse_cell(cells[5]);
    r.orth_dil = parse_cell(cells[6]);
    r.mu05 = parse_cell(cells[7]);
    r.mu15 = parse_cell(cells[8]);
    r.mu30 = parse_cell(cells[9]);
    r.seed_count = std::stoi(cells[10]);
    rows.push_back(r);
  }

  if (a.format == "table") {
    auto cell = [](const CsvCell& c) {
      char b[32];
      std::snprintf(b, sizeof(b), "%.2f ± %.2f", c.mean, c.std);
      return std::string(b);
    };
    std::printf("%-10s %-5s %-9s %-3s %-12s %-12s %-12s %-12s %-12s %-12s %s\n", "block",
                "rho", "psi", "dim", "train", "orth", "orth+dil", "mu=0.5", "mu=1.5",
                "mu=3.0", "seeds");
    for (const auto& r : rows)
      std::printf("%-10s %-5s %-9s %-3d %-12s %-12s %-12s %-12s %-12s %-12s %d\n",
                  r.block.c_str(), r.rho.c_str(), r.psi.c_str(), r.dim,
                  cell(r.train).c_str(), cell(r.orth).c_str(), cell(r.orth_dil).c_str(),
                  cell(r.mu05).c_str(), cell(r.mu15).c_str(), cell(r.mu30).c_str(),
                  r.seed_count);
  } else {
    // Plot-ready series: one labelled entry per row and per test column.
    json out;
    out["rows"] = json::array();
    json labels = json::array(), columns = json::object();
    const char* names[] = {"train_acc", "test_orth", "test_orth_dil",
                           "test_mu0.5", "test_mu1.5", "test_mu3.0"};
    for (const char* n : names) columns[n] = {{"mean", json::array()}, {"std", json::array()}};
    for (const auto& r : rows) {
      const CsvCell* cs[] = {&r.train, &r.orth, &r.orth_dil, &r.mu05, &r.mu15, &r.mu30};
      json jr = {{"block", r.block}, {"rho", r.rho}, {"psi", r.psi},
                 {"dim", r.dim},     {"seed_count", r.seed_count}};
      for (int i = 0; i < 6; ++i) {
        jr[names[i]] = {{"mean", cs[i]->mean}, {"std", cs[i]->std}};
        columns[names[i]]["mean"].push_back(cs[i]->mean);
        columns[names[i]]["std"].push_back(cs[i]->std);
      }
      out["rows"].push_back(jr);
      labels.push_back(r.block + "/" + r.rho + "/" + r.psi + "/dim" + std::to_string(r.dim));
    }
    out["series"] = {{"labels", labels}, {"columns", columns}};
    std::cout << out.dump(2) << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"equivariant graph network workbench"};
  app.require_subcommand(1);

  GenArgs ga;
  auto* gen = app.add_subcommand("gen", "generate a polytope benchmark dataset");
  gen->add_option("--dim", ga.dim, "coordinate dimension")->check(CLI::Range(3, 5));
  gen->add_option("--family", ga.family, "test transform family")
      ->check(CLI::IsMember({"orthogonal", "orthogonal-dilation", "non-orthogonal"}));
  gen->add_option("--mu", ga.mu, "non-orthogonality level")->check(CLI::NonNegativeNumber);
  gen->add_option("--gamma-min", ga.gamma_min);
  gen->add_option("--gamma-max", ga.gamma_max);
  gen->add_option("--copies", ga.copies, "test copies per class")->check(CLI::PositiveNumber);
  gen->add_option("--augment-k", ga.augment_k, "augmented train copies per class")
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", ga.seed);
  gen->add_option("--out", ga.out)->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model over multiple seeds");
  tr->add_option("--config", ta.config, "model config JSON")->required();
  tr->add_option("--data", ta.data, "dataset directory")->required();
  tr->add_option("--seeds", ta.seeds)->check(CLI::PositiveNumber);
  tr->add_option("--epochs", ta.epochs)->check(CLI::PositiveNumber);
  tr->add_option("--lr", ta.lr)->check(CLI::PositiveNumber);
  tr->add_option("--test-copies", ta.test_copies)->check(CLI::PositiveNumber);
  tr->add_option("--data-seed", ta.data_seed);
  tr->add_option("--out", ta.out)->required();

  CheckArgs ca;
  auto* ch = app.add_subcommand("check", "check equivariance of a trained model");
  ch->add_option("--checkpoint", ca.checkpoint)->required();
  ch->add_option("--data", ca.data, "dataset directory (unused for --group local)");
  ch->add_option("--group", ca.group, "e3|en|co|conf|perm|local");
  ch->add_option("--trials", ca.trials);
  ch->add_option("--tol", ca.tol);
  ch->add_option("--seed", ca.seed);
  ch->add_option("--out", ca.out);

  GradcheckArgs gca;
  auto* gc = app.add_subcommand("gradcheck", "verify gradients against finite differences");
  gc->add_option("--config", gca.config, "model config JSON (default: built-in)");
  gc->add_option("--seed", gca.seed);

  ReportArgs ra;
  auto* rp = app.add_subcommand("report", "render results.csv");
  rp->add_option("--in", ra.in)->required();
  rp->add_option("--format", ra.format)->check(CLI::IsMember({"table", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) return cmd_gen(ga);
    if (*tr) return cmd_train(ta);
    if (*ch) return cmd_check(ca);
    if (*gc) return cmd_gradcheck(gca);
    if (*rp) return cmd_report(ra);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
