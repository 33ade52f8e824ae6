#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <thread>

#include "equigraph/blocks.hpp"
#include "equigraph/dataset_io.hpp"
#include "equigraph/polytopes.hpp"

namespace equigraph {

struct RunResult {
  nlohmann::json config_snapshot;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
  double train_accuracy = 0.0;
  std::uint64_t seed = 0;
  double seconds_per_step = 0.0;
};

struct TrainOptions {
  int epochs = 1000;
  double learning_rate = 1e-3;
};

inline int argmax_lowest(const Tensor& logits) {
  int best = 0;
  for (int j = 1; j < logits.cols; ++j)
    if (logits.at(0, j) > logits.at(0, best)) best = j;
  return best;
}

// Full-batch training with Adam on softmax cross-entropy.
inline RunResult train(Model& model, const Dataset& data, const TrainOptions& opt = {}) {
  RunResult res;
  res.seed = model.config().seed;
  res.config_snapshot = to_json(model.config());
  AdamState adam(model.params(), opt.learning_rate);
  auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    Tape tape;
    TapeScope scope(tape);
    model.params().watch_all(tape);
    Tensor loss = Tensor::scalar(0.0);
    int correct = 0;
    for (const auto& g : data.samples) {
      auto out = model.forward(g, /*training=*/true);
      loss = add(loss, cross_entropy_with_logits(out.logits, g.label));
      if (argmax_lowest(out.logits) == g.label) ++correct;
    }
    loss = scale(loss, 1.0 / static_cast<double>(data.samples.size()));
    if (!std::isfinite(loss.value()))
      throw std::runtime_error("training diverged: loss is not finite at epoch " +
                               std::to_string(epoch));
    auto grads = backward_gradients(tape, loss, model.params());
    model.params().unwatch_all();
    adam.step(model.params(), grads);
    res.epoch_loss.push_back(loss.value());
    res.epoch_accuracy.push_back(static_cast<double>(correct) / data.samples.size());
  }
  auto t1 = std::chrono::steady_clock::now();
  res.seconds_per_step =
      opt.epochs ? std::chrono::duration<double>(t1 - t0).count() / opt.epochs : 0.0;
  // Final train accuracy in evaluation mode.
  int correct = 0;
  for (const auto& g : data.samples) {
    auto out = model.forward(g, false);
    if (argmax_lowest(out.logits) == g.label) ++correct;
  }
  res.train_accuracy = data.samples.empty()
                           ? 0.0
                           : static_cast<double>(correct) / data.samples.size();
  return res;
}

inline double evaluate(Model& model, const Dataset& data) {
  if (data.samples.empty()) return 0.0;
  int correct = 0;
  for (const auto& g : data.samples) {
    auto out = model.forward(g, false);
    if (argmax_lowest(out.logits) == g.label) ++correct;
  }
  return static_cast<double>(correct) / data.samples.size();
}

// ---------------------------------------------------------------------------
// Equivariance checker
// ---------------------------------------------------------------------------

enum class GroupTag { e_n, co, conf, permutation, local };

inline GroupTag group_tag_from_string(const std::string& s) {
  if (s == "e3" || s == "en" || s == "e(n)") return GroupTag::e_n;
  if (s == "co") return GroupTag::co;
  if (s == "conf") return GroupTag::conf;
  if (s == "perm") return GroupTag::permutation;
  if (s == "local") return GroupTag::local;
  throw ConfigError("unknown group tag: " + s);
}

inline std::string to_string(GroupTag g) {
  switch (g) {
    case GroupTag::e_n: return "e(n)";
    case GroupTag::co: return "co";
    case GroupTag::conf: return "conf";
    case GroupTag::permutation: return "perm";
    case GroupTag::local: return "local";
  }
  return "?";
}

struct EquivarianceReport {
  GroupTag group = GroupTag::e_n;
  int trials = 0;
  double max_abs_deviation = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  nlohmann::json worst_case;

  nlohmann::json to_json() const {
    return {{"group", equigraph::to_string(group)}, {"trials", trials},
            {"max_abs_deviation", max_abs_deviation}, {"tolerance", tolerance},
            {"pass", pass}, {"worst_case", worst_case}};
  }
};

// Two 3-node subgraphs joined by one edge; rotating one subgraph about the
// shared bond axis preserves all edge distances and all angles.
inline GraphSample local_transform_fixture() {
  GraphSample g;
  g.coords = Tensor::from_rows({{0.0, 1.0, 0.0},
                                {0.0, -0.4, 0.9},
                                {0.0, 0.0, 0.0},
                                {1.3, 0.0, 0.0},
                                {2.0, 1.1, 0.2},
                                {2.1, -0.8, -0.5}});
  g.edges.clear();
  for (auto [a, b] : std::vector<std::pair<int, int>>{{0, 1}, {0, 2}, {1, 2},
                                                      {2, 3}, {3, 4}, {3, 5}, {4, 5}}) {
    g.edges.push_back({a, b});
    g.edges.push_back({b, a});
  }
  g.angles = build_angle_set(g.edges, 6);
  g.node_features = Tensor(6, 0);
  g.edge_features = Tensor(static_cast<int>(g.edges.size()), 0);
  g.angle_features = Tensor(static_cast<int>(g.angles.size()), 0);
  g.global = Tensor(1, 0);
  g.label = 0;
  return g;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (int i = 0; i < a.size(); ++i) m = std::max(m, std::abs((*a.data)[i] - (*b.data)[i]));
  return m;
}

inline EquivarianceReport check_equivariance(Model& model,
                                             const std::vector<GraphSample>& graphs,
                                             GroupTag group, int trials, double tol,
                                             std::uint64_t seed) {
  if (trials <= 0) throw ConfigError("trials must be positive");
  EquivarianceReport rep;
  rep.group = group;
  rep.trials = trials;
  rep.tolerance = tol;
  std::vector<GraphSample> pool = graphs;
  if (group == GroupTag::local) pool = {local_transform_fixture()};
  if (pool.empty()) throw ConfigError("no graphs to check");
  for (int t = 0; t < trials; ++t) {
    const GraphSample& g = pool[t % pool.size()];
    Rng rng = make_rng(seed, "equivariance-trial", t);
    int n = g.coords.cols;
    GraphSample transformed;
    nlohmann::json desc;
    switch (group) {
      case GroupTag::e_n: {
        TransformSpec spec = sample_transform(TransformFamily::orthogonal, n, {}, rng);
        transformed = apply_transform(spec, g);
        desc = {{"family", "orthogonal"}, {"gamma", spec.gamma}};
        break;
      }
      case GroupTag::co:
      case GroupTag::conf: {
        // gamma log-uniform over [1e-2, 1e2]
        std::uniform_real_distribution<double> ulog(-2.0, 2.0);
        TransformSpec spec = sample_transform(TransformFamily::orthogonal, n, {}, rng);
        spec.family = TransformFamily::orthogonal_dilation;
        spec.gamma = std::pow(10.0, ulog(rng));
        transformed = apply_transform(spec, g);
        desc = {{"family", "orthogonal-dilation"}, {"gamma", spec.gamma}};
        break;
      }
      case GroupTag::permutation: {
        std::vector<int> perm(g.num_nodes());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
        std::shuffle(perm.begin(), perm.end(), rng);
        transformed = permute_nodes(g, perm);
        desc = {{"family", "permutation"}};
        break;
      }
      case GroupTag::local: {
        std::uniform_real_distribution<double> uang(0.1, 3.0);
        double theta = uang(rng);
        TransformSpec spec =
            local_rotation_about_edge(g.coords, 2, 3, theta, {3, 4, 5});
        transformed = apply_transform(spec, g);
        desc = {{"family", "local"}, {"theta", theta}, {"mask", {3, 4, 5}}};
        break;
      }
    }
    auto out0 = model.forward(g, false);
    auto out1 = model.forward(transformed, false);
    double dev = max_abs_diff(out0.logits, out1.logits);
    if (dev > rep.max_abs_deviation) {
      rep.max_abs_deviation = dev;
      desc["trial"] = t;
      desc["deviation"] = dev;
      rep.worst_case = desc;
    }
  }
  rep.pass = rep.max_abs_deviation < tol;
  return rep;
}

// ---------------------------------------------------------------------------
// Gradient checker: reverse mode vs central finite differences
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_relative_error = 0.0;
  int checked = 0;
  int skipped = 0;
  bool pass = false;
};

// For whole-model losses the finite-difference noise is dominated by forward
// evaluation rounding (~1e-12) divided by 2h, so h = 1e-4 beats the textbook
// 1e-6; gradients below the 1e-3 floor are then held to a 1e-7 absolute bound.
inline GradCheckReport grad_check(Model& model, const std::vector<GraphSample>& samples,
                                  double h = 1e-4, double tol = 1e-4,
                                  int min_coords = 200, std::uint64_t seed = 7) {
  auto loss_of = [&](void) {
    Tensor loss = Tensor::scalar(0.0);
    for (const auto& g : samples)
      loss = add(loss, cross_entropy_with_logits(model.forward(g, false).logits, g.label));
    return loss;
  };

  Tape tape;
  std::vector<std::vector<double>> grads;
  {
    TapeScope scope(tape);
    model.params().watch_all(tape);
    Tensor loss = loss_of();
    grads = backward_gradients(tape, loss, model.params());
    model.params().unwatch_all();
  }

  std::size_t total = model.params().coordinate_count();
  int want = std::min<std::size_t>(std::max(min_coords, 0), total);
  Rng rng = make_rng(seed, "grad-check");
  std::uniform_int_distribution<std::size_t> upick(0, total - 1);
  GradCheckReport rep;
  for (int c = 0; c < want; ++c) {
    std::size_t flat = upick(rng);
    // Locate the parameter owning this flat coordinate.
    int p = 0;
    std::size_t off = flat;
    while (off >= static_cast<std::size_t>(model.params().value(p).size())) {
      off -= model.params().value(p).size();
      ++p;
    }
    double* coord = &(*model.params().value(p).data)[off];
    double saved = *coord;
    auto central = [&](double step) {
      *coord = saved + step;
      double lp = loss_of().value();
      *coord = saved - step;
      double lm = loss_of().value();
      *coord = saved;
      return (lp - lm) / (2.0 * step);
    };
    // Richardson extrapolation removes the O(h^2) truncation term.
    double fd = (4.0 * central(h) - central(2.0 * h)) / 3.0;
    double an = grads[p][off];
    if (std::max(std::abs(fd), std::abs(an)) < 1e-10) {
      ++rep.skipped;
      continue;
    }
    double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3});
    rep.max_relative_error = std::max(rep.max_relative_error, rel);
    ++rep.checked;
  }
  rep.pass = rep.max_relative_error < tol;
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline void save_checkpoint(Model& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["model_config"] = to_json(model.config());
  j["dataset_meta"] = {{"n_v", model.meta().n_v}, {"n_e", model.meta().n_e},
                       {"n_x", model.meta().n_x}, {"n_a", model.meta().n_a},
                       {"n_u", model.meta().n_u},
                       {"num_classes", model.meta().num_classes}};
  j["params"] = model.params().to_json();
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream(path) << j.dump() << "\n";
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open checkpoint " + path.string());
  nlohmann::json j = nlohmann::json::parse(f);
  ModelConfig cfg = model_config_from_json(j.at("model_config"));
  DatasetMeta meta;
  const auto& m = j.at("dataset_meta");
  meta.n_v = m.at("n_v");
  meta.n_e = m.at("n_e");
  meta.n_x = m.at("n_x");
  meta.n_a = m.at("n_a");
  meta.n_u = m.at("n_u");
  meta.num_classes = m.at("num_classes");
  Model model(cfg, meta);
  model.params().from_json(j.at("params"));
  return model;
}

// ---------------------------------------------------------------------------
// Multi-seed experiments (Table-style rows)
// ---------------------------------------------------------------------------

struct TableRow {
  std::string block, rho, psi;
  int dim = 0;
  // mean/std per column
  double train_mean = 0, train_std = 0;
  double orth_mean = 0, orth_std = 0;
  double orth_dil_mean = 0, orth_dil_std = 0;
  double mu05_mean = 0, mu05_std = 0;
  double mu15_mean = 0, mu15_std = 0;
  double mu30_mean = 0, mu30_std = 0;
  int seed_count = 0;
};

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double m = 0;
  for (double x : xs) m += x;
  m /= xs.size();
  double v = 0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, xs.size() > 1 ? std::sqrt(v / xs.size()) : 0.0};
}

inline int worker_thread_count(int tasks) {
  unsigned hw = std::thread::hardware_concurrency();
  if (const char* env = std::getenv("EQUIGRAPH_THREADS")) {
    int cap = std::atoi(env);
    if (cap > 0) hw = std::min<unsigned>(hw ? hw : 1, cap);
  }
  return std::max(1, std::min<int>(hw ? hw : 1, tasks));
}

// The five Table-1 test splits for a given dimension.
inline std::vector<std::pair<std::string, Dataset>> standard_test_splits(
    int dim, int copies, std::uint64_t seed, bool node_features = false) {
  std::vector<std::pair<std::string, Dataset>> splits;
  auto mk = [&](const std::string& name, TransformFamily fam, double mu) {
    PolytopeDatasetOptions opt;
    opt.family = fam;
    opt.transform.mu = mu;
    opt.copies_per_class = copies;
    opt.node_features = node_features;
    splits.emplace_back(name, polytope_testset(dim, opt, derive_seed(seed, name)));
  };
  mk("orth", TransformFamily::orthogonal, 0.0);
  mk("orth_dil", TransformFamily::orthogonal_dilation, 0.0);
  mk("mu0.5", TransformFamily::non_orthogonal, 0.5);
  mk("mu1.5", TransformFamily::non_orthogonal, 1.5);
  mk("mu3.0", TransformFamily::non_orthogonal, 3.0);
  return splits;
}

struct ExperimentOptions {
  int dim = 3;
  int seeds = 10;
  int epochs = 1000;
  double learning_rate = 1e-3;
  int test_copies = 20;
  std::uint64_t data_seed = 42;
  std::filesystem::path checkpoint_dir;  // optional: per-seed checkpoints
};

// Independent train/evaluate per seed on the given train/test splits;
// aggregates a Table-1-shaped row.
inline TableRow multi_seed_experiment_on(
    const ModelConfig& base_cfg, const ExperimentOptions& opt, const Dataset& trainset,
    const std::vector<std::pair<std::string, Dataset>>& splits) {
  if (splits.size() != 5) throw ConfigError("expected the five standard test splits");
  std::vector<double> train_acc(opt.seeds);
  std::vector<std::vector<double>> split_acc(splits.size(),
                                             std::vector<double>(opt.seeds));
  auto run_seed = [&](int s) {
    ModelConfig cfg = base_cfg;
    cfg.seed = derive_seed(base_cfg.seed, "experiment-seed", s);
    Model model(cfg, trainset.meta);
    TrainOptions topt;
    topt.epochs = opt.epochs;
    topt.learning_rate = opt.learning_rate;
    RunResult rr = train(model, trainset, topt);
    train_acc[s] = rr.train_accuracy;
    for (std::size_t i = 0; i < splits.size(); ++i)
      split_acc[i][s] = evaluate(model, splits[i].second);
    if (!opt.checkpoint_dir.empty())
      save_checkpoint(model, opt.checkpoint_dir / ("seed" + std::to_string(s) + ".json"));
  };

  int workers = worker_thread_count(opt.seeds);
  if (workers <= 1) {
    for (int s = 0; s < opt.seeds; ++s) run_seed(s);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int s = next.fetch_add(1); s < opt.seeds; s = next.fetch_add(1)) run_seed(s);
      });
    for (auto& t : pool) t.join();
  }

  TableRow row;
  const BlockConfig& b0 = base_cfg.blocks.front();
  row.block = base_cfg.scaling_layer ? "s" + to_string(b0.kind) : to_string(b0.kind);
  row.rho = b0.rho == Aggregation::sum ? "sum" : "mean";
  row.psi = b0.psi.kind == PsiKind::identity ? "identity" : "weighted";
  row.dim = opt.dim;
  row.seed_count = opt.seeds;
  std::tie(row.train_mean, row.train_std) = mean_std(train_acc);
  std::tie(row.orth_mean, row.orth_std) = mean_std(split_acc[0]);
  std::tie(row.orth_dil_mean, row.orth_dil_std) = mean_std(split_acc[1]);
  std::tie(row.mu05_mean, row.mu05_std) = mean_std(split_acc[2]);
  std::tie(row.mu15_mean, row.mu15_std) = mean_std(split_acc[3]);
  std::tie(row.mu30_mean, row.mu30_std) = mean_std(split_acc[4]);
  return row;
}

inline TableRow multi_seed_experiment(const ModelConfig& base_cfg,
                                      const ExperimentOptions& opt) {
  Dataset trainset = polytope_trainset(opt.dim);
  auto splits = standard_test_splits(opt.dim, opt.test_copies, opt.data_seed);
  return multi_seed_experiment_on(base_cfg, opt, trainset, splits);
}

inline std::string results_csv_header() {
  return "block,rho,psi,dim,train_acc,test_orth,test_orth_dil,test_mu0.5,test_mu1.5,"
         "test_mu3.0,seed_count";
}

inline std::string to_csv(const TableRow& r) {
  char buf[512];
  auto cell = [](double m, double s) {
    char b[64];
    std::snprintf(b, sizeof(b), "%.6g±%.6g", m, s);
    return std::string(b);
  };
  std::snprintf(buf, sizeof(buf), "%s,%s,%s,%d,%s,%s,%s,%s,%s,%s,%d", r.block.c_str(),
                r.rho.c_str(), r.psi.c_str(), r.dim, cell(r.train_mean, r.train_std).c_str(),
                cell(r.orth_mean, r.orth_std).c_str(),
                cell(r.orth_dil_mean, r.orth_dil_std).c_str(),
                cell(r.mu05_mean, r.mu05_std).c_str(),
                cell(r.mu15_mean, r.mu15_std).c_str(),
                cell(r.mu30_mean, r.mu30_std).c_str(), r.seed_count);
  return buf;
}

}  // namespace equigraph
