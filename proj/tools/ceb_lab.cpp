// ceb-lab: command-line driver for tabular solves, training, sweeps, attacks,
// OoD detection, calibration and the memorization experiment.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "ceb/evalkit.hpp"
#include "ceb/experiment.hpp"
#include "ceb/joint_io.hpp"
#include "ceb/robustness.hpp"
#include "ceb/tabular.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ceb::ValidationError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ceb::ValidationError(path + ": " + e.what());
  }
}

std::ofstream open_out(const std::string& path) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw ceb::ValidationError("cannot write " + path);
  return out;
}

std::vector<double> rho_range(double lo, double hi, double step) {
  if (!(step > 0)) throw ceb::ValidationError("--rho-step must be positive");
  if (hi < lo) throw ceb::ValidationError("--rho-max must not be below --rho-min");
  std::vector<double> out;
  const long n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  for (long i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
  return out;
}

/// The test split of the data a checkpoint was trained on, unless a dataset
/// spec file overrides it.
ceb::Dataset evaluation_data(const std::string& model_prefix, const std::string& dataset_path, std::uint64_t data_seed,
                             int per_class) {
  json spec;
  if (!dataset_path.empty()) {
    spec = read_json_file(dataset_path);
  } else {
    const json meta = ceb::Model::read_meta(model_prefix);
    if (!meta.contains("dataset")) throw ceb::ValidationError("checkpoint has no dataset record; pass --dataset");
    spec = meta["dataset"];
    if (per_class <= 0) per_class = meta.value("test_per_class", 0);
    data_seed = ceb::derive_seed(meta.value("data_seed", std::uint64_t{0}), 1);
  }
  if (per_class > 0 && spec.value("type", std::string("gaussian_mixture")) == "gaussian_mixture")
    spec["per_class"] = per_class;
  return ceb::dataset_from_json(spec, data_seed);
}

struct TabularArgs {
  std::string joint, objective = "ceb", out, svg;
  double rho_min = -2, rho_max = 5, rho_step = 0.5;
  int restarts = 10, z_card = 0;
  std::uint64_t seed = 0;
  bool bits = false;
};

int run_tabular(const TabularArgs& a, bool plane_mode) {
  const auto joint = ceb::read_joint_csv_file(a.joint);
  ceb::SweepOptions opts;
  opts.restarts = a.restarts;
  opts.seed = a.seed;
  opts.z_cardinality = a.z_card;
  const auto points =
      ceb::plane_sweep(joint, rho_range(a.rho_min, a.rho_max, a.rho_step), ceb::parse_tabular_objective(a.objective), opts);
  if (plane_mode) {
    const fs::path dir = a.out.empty() ? fs::path(".") : fs::path(a.out);
    fs::create_directories(dir);
    auto csv = open_out((dir / "plane.csv").string());
    ceb::emit_plane_csv(csv, points, a.bits);
    auto svg = open_out((dir / "plane.svg").string());
    ceb::emit_plane_svg(svg, points, ceb::mutual_information(joint), a.bits);
  } else if (a.out.empty()) {
    ceb::emit_plane_csv(std::cout, points, a.bits);
  } else {
    auto out = open_out(a.out);
    ceb::emit_plane_csv(out, points, a.bits);
  }
  if (!plane_mode && !a.svg.empty()) {
    auto svg = open_out(a.svg);
    ceb::emit_plane_svg(svg, points, ceb::mutual_information(joint), a.bits);
  }
  int failed = 0;
  for (const auto& p : points)
    if (p.failed) {
      ++failed;
      std::cerr << "rho=" << p.rho << " failed: " << p.error << '\n';
    }
  return failed == 0 ? 0 : 1;
}

struct TrainArgs {
  std::string config, out = "run", objective = "vceb", dataset, covariance = "diagonal";
  double rho = 0;
  std::vector<std::uint64_t> seeds;
  int steps = 5000, batch = 100, eval_every = 100, latent_dim = 4, test_per_class = 100;
  double lr = 1e-3;
  std::uint64_t data_seed = 0;
};

int run_train(const TrainArgs& a, const std::vector<std::string>& given) {
  auto has = [&](const std::string& flag) { return std::find(given.begin(), given.end(), flag) != given.end(); };
  ceb::ExperimentConfig c;
  if (!a.config.empty()) c = ceb::ExperimentConfig::from_json(read_json_file(a.config));
  if (!a.dataset.empty()) c.dataset = read_json_file(a.dataset);
  if (has("--objective") || a.config.empty()) c.objectives = {a.objective};
  if (has("--rho") || a.config.empty()) c.rho_grid = {a.rho};
  if (has("--steps") || a.config.empty()) c.train.steps = a.steps;
  if (has("--batch") || a.config.empty()) c.train.batch_size = a.batch;
  if (has("--lr") || a.config.empty()) c.train.learning_rate = a.lr;
  if (has("--eval-every") || a.config.empty()) c.train.eval_every = a.eval_every;
  if (has("--latent-dim") || a.config.empty()) c.model.latent_dim = a.latent_dim;
  if (has("--covariance") || a.config.empty())
    c.model.covariance = a.covariance == "full" ? ceb::nn::Covariance::Full : ceb::nn::Covariance::Diagonal;
  if (has("--test-per-class") || a.config.empty()) c.test_per_class = a.test_per_class;
  if (has("--data-seed") || a.config.empty()) c.data_seed = a.data_seed;
  c.validate();
  if (c.objectives.size() != 1 || c.rho_grid.size() != 1 || a.seeds.size() != 1)
    throw ceb::ValidationError("train runs a single (objective, rho, seed); use sweep for grids");

  const auto [train_set, test_set] = ceb::experiment_datasets(c);
  ceb::ModelConfig mc = c.model;
  mc.objective.kind = ceb::obj::parse_kind(c.objectives.front());
  mc.objective.rho = c.rho_grid.front();
  mc.input_dim = train_set.dim();
  mc.classes = train_set.classes;
  mc.domain_lo = train_set.domain_lo;
  mc.domain_hi = train_set.domain_hi;
  ceb::TrainConfig tc = c.train;
  tc.seed = ceb::derive_seed(a.seeds.front(), 2);

  ceb::Model model(mc, a.seeds.front());
  const auto trace = ceb::train(model, train_set, test_set.size() > 0 ? &test_set : nullptr, tc,
                                [](const ceb::TraceRow& r) {
                                  std::cerr << "step " << r.step << " loss " << r.loss << " train_acc " << r.train_acc
                                            << " test_acc " << r.test_acc << " R_X " << r.rate_lower_bound << '\n';
                                });
  fs::create_directories(a.out);
  auto csv = open_out((fs::path(a.out) / "trace.csv").string());
  trace.write_csv(csv);
  model.save((fs::path(a.out) / "model").string(),
             {{"dataset", c.dataset}, {"data_seed", c.data_seed}, {"test_per_class", c.test_per_class}});
  const auto& last = trace.rows.back();
  const json summary{{"final_train_acc", last.train_acc},
                     {"final_test_acc", last.test_acc},
                     {"max_R_X", trace.max_rate_lower_bound()},
                     {"final_Re_X", last.residual}};
  std::cout << summary.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ceb-lab: conditional entropy bottleneck experiments"};
  app.require_subcommand(1);

  TabularArgs tab;
  auto add_tabular_flags = [&](CLI::App* sub) {
    sub->add_option("--joint", tab.joint, "joint p(x,y) as CSV or JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--objective", tab.objective, "ib or ceb");
    sub->add_option("--rho-min", tab.rho_min);
    sub->add_option("--rho-max", tab.rho_max);
    sub->add_option("--rho-step", tab.rho_step);
    sub->add_option("--restarts", tab.restarts);
    sub->add_option("--seed", tab.seed);
    sub->add_option("--z-card", tab.z_card, "representation cardinality (0 = |Y|)");
    sub->add_flag("--bits", tab.bits, "report bits instead of nats");
  };
  auto* tabular = app.add_subcommand("tabular", "exact information-plane sweep on a finite joint");
  add_tabular_flags(tabular);
  tabular->add_option("--out", tab.out, "CSV path (stdout when omitted)");
  tabular->add_option("--svg", tab.svg, "optional SVG rendering");
  auto* plane = app.add_subcommand("plane", "write plane.csv and plane.svg for a tabular sweep");
  add_tabular_flags(plane);
  plane->add_option("--out", tab.out, "output directory");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "train one model");
  train->add_option("--config", tr.config, "experiment JSON")->check(CLI::ExistingFile);
  train->add_option("--dataset", tr.dataset, "dataset spec JSON")->check(CLI::ExistingFile);
  train->add_option("--objective", tr.objective);
  train->add_option("--rho", tr.rho);
  train->add_option("--seed", tr.seeds, "model and training seed")->required()->expected(1);
  train->add_option("--data-seed", tr.data_seed);
  train->add_option("--steps", tr.steps);
  train->add_option("--batch", tr.batch);
  train->add_option("--lr", tr.lr);
  train->add_option("--eval-every", tr.eval_every);
  train->add_option("--latent-dim", tr.latent_dim);
  train->add_option("--covariance", tr.covariance)->check(CLI::IsMember({"diagonal", "full"}));
  train->add_option("--test-per-class", tr.test_per_class);
  train->add_option("--out", tr.out, "output directory");

  std::string sweep_config, sweep_out;
  std::vector<std::uint64_t> sweep_seeds;
  int sweep_workers = 0;
  auto* sweep = app.add_subcommand("sweep", "train every (objective, rho, seed) of a config");
  sweep->add_option("--config", sweep_config)->required()->check(CLI::ExistingFile);
  sweep->add_option("--seed", sweep_seeds, "seeds (repeatable; replaces the config's list)")->required();
  sweep->add_option("--workers", sweep_workers);
  sweep->add_option("--out", sweep_out, "output directory (overrides the config)");

  std::string atk_model, atk_norm = "linf", atk_grid = "0:0.5:6", atk_out, atk_dataset;
  int atk_steps = 7, atk_per_class = 0;
  std::optional<int> atk_target;
  std::optional<double> atk_step_size;
  std::uint64_t atk_seed = 0, atk_data_seed = 1;
  bool atk_random_start = false;
  auto* attack = app.add_subcommand("attack", "PGD accuracy / targeted-success curve over epsilon");
  attack->add_option("--model", atk_model, "checkpoint prefix")->required();
  attack->add_option("--norm", atk_norm)->check(CLI::IsMember({"l2", "linf"}));
  attack->add_option("--eps-grid", atk_grid, "start:stop:count");
  attack->add_option("--steps", atk_steps);
  attack->add_option("--step-size", atk_step_size);
  attack->add_option("--target", atk_target);
  attack->add_option("--seed", atk_seed);
  attack->add_flag("--random-start", atk_random_start);
  attack->add_option("--dataset", atk_dataset, "dataset spec JSON (default: the checkpoint's test split)");
  attack->add_option("--data-seed", atk_data_seed);
  attack->add_option("--per-class", atk_per_class);
  attack->add_option("--out", atk_out, "CSV path (stdout when omitted)");

  std::string ood_model, ood_score = "r", ood_out, ood_dataset;
  int ood_count = 1000, ood_per_class = 0;
  std::uint64_t ood_seed = 0, ood_data_seed = 1;
  auto* ood = app.add_subcommand("ood", "detection metrics against uniform-noise inputs");
  ood->add_option("--model", ood_model)->required();
  ood->add_option("--score", ood_score)->check(CLI::IsMember({"h", "r"}));
  ood->add_option("--count", ood_count, "number of out-of-distribution inputs");
  ood->add_option("--seed", ood_seed);
  ood->add_option("--dataset", ood_dataset);
  ood->add_option("--data-seed", ood_data_seed);
  ood->add_option("--per-class", ood_per_class);
  ood->add_option("--out", ood_out, "scores CSV");

  std::string cal_model, cal_out, cal_dataset;
  int cal_per_class = 0;
  std::uint64_t cal_data_seed = 1;
  auto* calibrate = app.add_subcommand("calibrate", "reliability bins and ECE");
  calibrate->add_option("--model", cal_model)->required();
  calibrate->add_option("--dataset", cal_dataset);
  calibrate->add_option("--data-seed", cal_data_seed);
  calibrate->add_option("--per-class", cal_per_class);
  calibrate->add_option("--out", cal_out, "JSON path (stdout when omitted)");

  std::string mem_config, mem_out;
  std::vector<std::uint64_t> mem_seeds;
  int mem_steps = -1;
  auto* memorize = app.add_subcommand("memorize", "random-label memorization experiment");
  memorize->add_option("--config", mem_config)->check(CLI::ExistingFile);
  memorize->add_option("--seed", mem_seeds, "seeds (repeatable)")->required();
  memorize->add_option("--steps", mem_steps);
  memorize->add_option("--out", mem_out, "report JSON (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (tabular->parsed()) return run_tabular(tab, false);
    if (plane->parsed()) return run_tabular(tab, true);
    if (train->parsed()) {
      std::vector<std::string> given;
      for (const auto* opt : train->get_options())
        if (opt->count() > 0) given.push_back(opt->get_name());
      return run_train(tr, given);
    }
    if (sweep->parsed()) {
      auto cfg = ceb::ExperimentConfig::from_json(read_json_file(sweep_config));
      cfg.seeds = sweep_seeds;
      if (sweep_workers > 0) cfg.workers = sweep_workers;
      if (!sweep_out.empty()) cfg.output_dir = sweep_out;
      const auto manifest = ceb::run_sweep(cfg);
      for (const auto& r : manifest.runs)
        if (!r.ok) std::cerr << r.objective << " seed " << r.seed << " failed: " << r.error << '\n';
      std::cout << (fs::path(cfg.output_dir) / "manifest.json").string() << '\n';
      return manifest.all_ok() ? 0 : 1;
    }
    if (attack->parsed()) {
      ceb::Model model = ceb::Model::load(atk_model);
      const ceb::Dataset data = evaluation_data(atk_model, atk_dataset, atk_data_seed, atk_per_class);
      ceb::AttackSpec spec;
      spec.norm = ceb::parse_norm(atk_norm);
      spec.steps = atk_steps;
      spec.step_size = atk_step_size;
      spec.target = atk_target;
      spec.seed = atk_seed;
      spec.random_start = atk_random_start;
      const auto curve = ceb::attack_curve(model, data, spec, ceb::parse_grid(atk_grid));
      if (atk_out.empty()) {
        ceb::write_attack_curve_csv(std::cout, curve);
      } else {
        auto out = open_out(atk_out);
        ceb::write_attack_curve_csv(out, curve);
      }
      return 0;
    }
    if (ood->parsed()) {
      ceb::Model model = ceb::Model::load(ood_model);
      const ceb::Dataset in_data = evaluation_data(ood_model, ood_dataset, ood_data_seed, ood_per_class);
      const ceb::Dataset out_data =
          ceb::uniform_noise_dataset(ood_count, in_data.dim(), in_data.domain_lo, in_data.domain_hi, ood_seed);
      const bool use_rate = ood_score == "r";
      const auto in_scores = ceb::ood_scores(model, in_data.inputs, use_rate);
      const auto out_scores = ceb::ood_scores(model, out_data.inputs, use_rate);
      const Eigen::VectorXd& a = use_rate ? *in_scores.rate : in_scores.entropy;
      const Eigen::VectorXd& b = use_rate ? *out_scores.rate : out_scores.entropy;
      std::vector<ceb::ScoredExample> scored;
      for (Eigen::Index i = 0; i < a.size(); ++i) scored.push_back({a(i), true});
      for (Eigen::Index i = 0; i < b.size(); ++i) scored.push_back({b(i), false});
      const auto metrics = ceb::detection_metrics(std::span<const ceb::ScoredExample>(scored));
      if (!ood_out.empty()) {
        auto out = open_out(ood_out);
        ceb::write_scores_csv(out, scored, ceb::Orientation::LowerIsIn);
      }
      json report = ceb::detection_to_json(metrics);
      report["score"] = use_rate ? "R" : "H";
      report["orientation"] = "lower_is_in";
      std::cout << report.dump(2) << '\n';
      return 0;
    }
    if (calibrate->parsed()) {
      ceb::Model model = ceb::Model::load(cal_model);
      const ceb::Dataset data = evaluation_data(cal_model, cal_dataset, cal_data_seed, cal_per_class);
      const json report = ceb::calibration_to_json(ceb::calibration_curve(model, data));
      if (cal_out.empty()) {
        std::cout << report.dump(2) << '\n';
      } else {
        auto out = open_out(cal_out);
        out << report.dump(2) << '\n';
      }
      return 0;
    }
    if (memorize->parsed()) {
      ceb::MemorizationConfig cfg;
      if (!mem_config.empty()) cfg = ceb::MemorizationConfig::from_json(read_json_file(mem_config));
      cfg.seeds = mem_seeds;
      if (mem_steps >= 0) cfg.train.steps = mem_steps;
      const json report = ceb::run_memorization(cfg).to_json();
      if (mem_out.empty()) {
        std::cout << report.dump(2) << '\n';
      } else {
        auto out = open_out(mem_out);
        out << report.dump(2) << '\n';
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
