#include "ceb/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace ceb {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError(where + ": unknown key '" + key + "'");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(where + ": bad value for '" + key + "': " + e.what());
  }
}

/// Architecture keys shared by sweep and memorization configs.
ModelConfig model_from_section(const json& j, const std::string& where) {
  reject_unknown(j,
                 {"latent_dim", "encoder_hidden", "classifier_hidden", "covariance", "mixture_components",
                  "hier_layers", "noise_lambda", "noising_only", "rho_x", "rho_y"},
                 where);
  json full = j;
  full["kind"] = "vceb";
  full["input_dim"] = 1;
  full["classes"] = 2;
  return ModelConfig::from_json(full);
}

json model_section(const ModelConfig& m) {
  json j = m.to_json();
  for (const char* k : {"kind", "rho", "input_dim", "classes", "domain"}) j.erase(k);
  return j;
}

TrainConfig train_from_section(const json& j, const std::string& where) {
  reject_unknown(j, {"steps", "batch_size", "learning_rate", "eval_every", "eval_batches", "train_eval_examples"}, where);
  TrainConfig t;
  t.steps = get_or(j, "steps", t.steps, where);
  t.batch_size = get_or(j, "batch_size", t.batch_size, where);
  t.learning_rate = get_or(j, "learning_rate", t.learning_rate, where);
  t.eval_every = get_or(j, "eval_every", t.eval_every, where);
  t.eval_batches = get_or(j, "eval_batches", t.eval_batches, where);
  t.train_eval_examples = get_or(j, "train_eval_examples", t.train_eval_examples, where);
  return t;
}

json train_section(const TrainConfig& t) {
  return {{"steps", t.steps},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"eval_every", t.eval_every},
          {"eval_batches", t.eval_batches},
          {"train_eval_examples", t.train_eval_examples}};
}

std::string rho_tag(double rho) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << rho;
  std::string out = s.str();
  std::replace(out.begin(), out.end(), '-', 'm');
  std::replace(out.begin(), out.end(), '.', 'p');
  return out;
}

}  // namespace

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const json& j) { return fnv1a_hex(j.dump()); }

void ExperimentConfig::validate() const {
  if (objectives.empty()) throw ValidationError("experiment: no objectives");
  if (rho_grid.empty()) throw ValidationError("experiment: empty rho grid");
  if (seeds.empty()) throw ValidationError("experiment: no seeds");
  if (workers < 1) throw ValidationError("experiment: workers must be positive");
  if (test_per_class < 0) throw ValidationError("experiment: test_per_class must be non-negative");
  for (double r : rho_grid)
    if (!std::isfinite(r)) throw ValidationError("experiment: rho values must be finite");
  for (const auto& o : objectives) {
    const obj::Kind k = obj::parse_kind(o);
    if (k == obj::Kind::Denoise) throw ValidationError("experiment: sweeps need a classifying objective");
    if (k != obj::Kind::Determ && train.batch_size < 2)
      throw ValidationError("experiment: minibatch estimators need K >= 2");
  }
  if (train.steps < 0 || train.batch_size < 1 || !(train.learning_rate > 0) || train.eval_every < 1)
    throw ValidationError("experiment: invalid training budget");
  if (output_dir.empty()) throw ValidationError("experiment: output_dir must be set");
}

json ExperimentConfig::to_json() const {
  return {{"schema_version", kConfigSchemaVersion},
          {"dataset", dataset},
          {"test_per_class", test_per_class},
          {"data_seed", data_seed},
          {"objectives", objectives},
          {"rho_grid", rho_grid},
          {"seeds", seeds},
          {"model", model_section(model)},
          {"train", train_section(train)},
          {"output_dir", output_dir},
          {"workers", workers},
          {"save_checkpoints", save_checkpoints}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  const std::string where = "experiment config";
  reject_unknown(j,
                 {"schema_version", "dataset", "test_per_class", "data_seed", "objectives", "rho_grid", "seeds",
                  "model", "train", "output_dir", "workers", "save_checkpoints"},
                 where);
  if (!j.contains("schema_version")) throw ValidationError(where + ": missing schema_version");
  if (get_or(j, "schema_version", 0, where) != kConfigSchemaVersion)
    throw ValidationError(where + ": unsupported schema_version");
  ExperimentConfig c;
  if (j.contains("dataset")) c.dataset = j.at("dataset");
  c.test_per_class = get_or(j, "test_per_class", c.test_per_class, where);
  c.data_seed = get_or(j, "data_seed", c.data_seed, where);
  c.objectives = get_or(j, "objectives", c.objectives, where);
  c.rho_grid = get_or(j, "rho_grid", c.rho_grid, where);
  c.seeds = get_or(j, "seeds", c.seeds, where);
  if (j.contains("model")) c.model = model_from_section(j.at("model"), where + ".model");
  if (j.contains("train")) c.train = train_from_section(j.at("train"), where + ".train");
  c.output_dir = get_or(j, "output_dir", c.output_dir, where);
  c.workers = get_or(j, "workers", c.workers, where);
  c.save_checkpoints = get_or(j, "save_checkpoints", c.save_checkpoints, where);
  // Catch dataset errors at load time rather than inside a worker.
  if (c.dataset.value("type", std::string("gaussian_mixture")) == "gaussian_mixture") MixtureSpec::from_json(c.dataset);
  c.validate();
  return c;
}

json RunRecord::to_json() const {
  json j{{"objective", objective},
         {"rho", rho ? json(*rho) : json(nullptr)},
         {"seed", seed},
         {"config_hash", config_hash},
         {"trace", trace_path},
         {"checkpoint", checkpoint_prefix},
         {"ok", ok}};
  if (!ok) j["error"] = error;
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  j["final_train_acc"] = num(final_train_acc);
  j["final_test_acc"] = num(final_test_acc);
  j["max_R_X"] = num(max_rate_lower_bound);
  j["final_Re_X"] = num(final_residual);
  j["final_R"] = num(final_rate);
  return j;
}

bool SweepManifest::all_ok() const {
  return std::all_of(runs.begin(), runs.end(), [](const RunRecord& r) { return r.ok; });
}

json SweepManifest::to_json() const {
  json runs_j = json::array();
  for (const auto& r : runs) runs_j.push_back(r.to_json());
  return {{"schema_version", kConfigSchemaVersion}, {"config", config}, {"runs", runs_j}};
}

std::pair<Dataset, Dataset> experiment_datasets(const ExperimentConfig& config) {
  Dataset train_set = dataset_from_json(config.dataset, config.data_seed);
  Dataset test_set;
  if (config.test_per_class > 0 && config.dataset.value("type", std::string("gaussian_mixture")) == "gaussian_mixture") {
    MixtureSpec spec = MixtureSpec::from_json(config.dataset);
    spec.per_class = config.test_per_class;
    test_set = gaussian_mixture_dataset(spec, derive_seed(config.data_seed, 1));
  }
  return {std::move(train_set), std::move(test_set)};
}

SweepManifest run_sweep(const ExperimentConfig& config) {
  config.validate();
  const auto [train_set, test_set] = experiment_datasets(config);
  namespace fs = std::filesystem;
  fs::create_directories(config.output_dir);

  struct Job {
    obj::Kind kind;
    std::optional<double> rho;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& name : config.objectives) {
    const obj::Kind kind = obj::parse_kind(name);
    if (kind == obj::Kind::Determ) {
      for (auto s : config.seeds) jobs.push_back({kind, std::nullopt, s});
    } else {
      for (double r : config.rho_grid)
        for (auto s : config.seeds) jobs.push_back({kind, r, s});
    }
  }

  SweepManifest manifest;
  manifest.config = config.to_json();
  manifest.runs.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const Job& job = jobs[i];
      RunRecord& rec = manifest.runs[i];
      rec.objective = obj::kind_name(job.kind);
      rec.rho = job.rho;
      rec.seed = job.seed;
      try {
        ModelConfig mc = config.model;
        mc.objective.kind = job.kind;
        mc.objective.rho = job.rho.value_or(0.0);
        mc.input_dim = train_set.dim();
        mc.classes = train_set.classes;
        mc.domain_lo = train_set.domain_lo;
        mc.domain_hi = train_set.domain_hi;
        TrainConfig tc = config.train;
        tc.seed = derive_seed(job.seed, 2);
        const json run_config{{"model", mc.to_json()},
                              {"train", train_section(tc)},
                              {"train_seed", tc.seed},
                              {"model_seed", job.seed},
                              {"dataset", config.dataset},
                              {"data_seed", config.data_seed},
                              {"test_per_class", config.test_per_class}};
        rec.config_hash = config_hash(run_config);
        const std::string stem = rec.objective + (job.rho ? "_rho" + rho_tag(*job.rho) : std::string()) + "_seed" +
                                 std::to_string(job.seed);
        rec.trace_path = (fs::path(config.output_dir) / (stem + ".csv")).string();

        Model model(mc, job.seed);
        TrainingTrace trace = train(model, train_set, test_set.size() > 0 ? &test_set : nullptr, tc);
        std::ofstream out(rec.trace_path);
        if (!out) throw ValidationError("cannot write " + rec.trace_path);
        trace.write_csv(out);
        if (config.save_checkpoints) {
          rec.checkpoint_prefix = (fs::path(config.output_dir) / stem).string();
          model.save(rec.checkpoint_prefix);
        }
        const TraceRow& last = trace.rows.back();
        rec.final_train_acc = last.train_acc;
        rec.final_test_acc = last.test_acc;
        rec.final_residual = last.residual;
        rec.final_rate = last.rate;
        rec.max_rate_lower_bound = trace.max_rate_lower_bound();
        rec.ok = true;
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
      }
    }
  };
  const int threads = std::min<int>(config.workers, static_cast<int>(jobs.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::ofstream out(fs::path(config.output_dir) / "manifest.json");
  out << manifest.to_json().dump(2) << '\n';
  return manifest;
}

void MemorizationConfig::validate() const {
  if (examples < 1) throw ValidationError("memorization: examples must be positive");
  if (classes < 2) throw ValidationError("memorization: need at least two classes");
  if (dim < 1) throw ValidationError("memorization: dim must be positive");
  if (objectives.empty() || seeds.empty()) throw ValidationError("memorization: need objectives and seeds");
  for (const auto& o : objectives)
    if (obj::parse_kind(o) == obj::Kind::Denoise) throw ValidationError("memorization: objective must classify");
  if (!(learned_threshold > 0 && learned_threshold <= 1) || !(chance_ceiling >= 0 && chance_ceiling <= 1))
    throw ValidationError("memorization: thresholds must lie in [0, 1]");
}

MemorizationConfig MemorizationConfig::from_json(const json& j) {
  const std::string where = "memorization config";
  reject_unknown(j,
                 {"schema_version", "examples", "classes", "dim", "objectives", "rho", "seeds", "model", "train",
                  "learned_threshold", "chance_ceiling"},
                 where);
  if (j.contains("schema_version") && get_or(j, "schema_version", 0, where) != kConfigSchemaVersion)
    throw ValidationError(where + ": unsupported schema_version");
  MemorizationConfig c;
  c.examples = get_or(j, "examples", c.examples, where);
  c.classes = get_or(j, "classes", c.classes, where);
  c.dim = get_or(j, "dim", c.dim, where);
  c.objectives = get_or(j, "objectives", c.objectives, where);
  c.rho = get_or(j, "rho", c.rho, where);
  c.seeds = get_or(j, "seeds", c.seeds, where);
  if (j.contains("model")) c.model = model_from_section(j.at("model"), where + ".model");
  if (j.contains("train")) c.train = train_from_section(j.at("train"), where + ".train");
  c.learned_threshold = get_or(j, "learned_threshold", c.learned_threshold, where);
  c.chance_ceiling = get_or(j, "chance_ceiling", c.chance_ceiling, where);
  c.validate();
  return c;
}

json MemorizationConfig::to_json() const {
  return {{"schema_version", kConfigSchemaVersion},
          {"examples", examples},
          {"classes", classes},
          {"dim", dim},
          {"objectives", objectives},
          {"rho", rho},
          {"seeds", seeds},
          {"model", model_section(model)},
          {"train", train_section(train)},
          {"learned_threshold", learned_threshold},
          {"chance_ceiling", chance_ceiling}};
}

json MemorizationReport::to_json() const {
  json runs_j = json::array();
  for (const auto& r : runs) {
    json curve = json::array();
    for (const auto& [step, acc] : r.train_accuracy) curve.push_back({step, acc});
    runs_j.push_back({{"objective", r.objective},
                      {"seed", r.seed},
                      {"max_train_acc", r.max_train_acc},
                      {"final_train_acc", r.final_train_acc},
                      {"verdict", r.learned ? "learned" : "not learned"},
                      {"stayed_at_chance", r.stayed_at_chance},
                      {"train_accuracy", curve}});
  }
  return {{"chance", chance}, {"runs", runs_j}};
}

MemorizationReport run_memorization(const MemorizationConfig& config) {
  config.validate();
  MemorizationReport report;
  report.chance = 1.0 / config.classes;
  for (auto seed : config.seeds) {
    // Unstructured inputs: any above-chance accuracy has to come from
    // memorizing individual examples.
    const Dataset base = uniform_noise_dataset(config.examples, config.dim, 0.0, 1.0, derive_seed(seed, 10));
    const Dataset data = random_label_dataset(base.inputs, config.classes, derive_seed(seed, 11), 0.0, 1.0);
    for (const auto& name : config.objectives) {
      ModelConfig mc = config.model;
      mc.objective.kind = obj::parse_kind(name);
      mc.objective.rho = config.rho;
      mc.input_dim = data.dim();
      mc.classes = data.classes;
      mc.domain_lo = data.domain_lo;
      mc.domain_hi = data.domain_hi;
      TrainConfig tc = config.train;
      tc.seed = derive_seed(seed, 12);
      Model model(mc, seed);
      const TrainingTrace trace = train(model, data, nullptr, tc);
      MemorizationRun run;
      run.objective = obj::kind_name(mc.objective.kind);
      run.seed = seed;
      run.stayed_at_chance = true;
      for (const auto& row : trace.rows) {
        run.train_accuracy.emplace_back(row.step, row.train_acc);
        run.max_train_acc = std::max(run.max_train_acc, row.train_acc);
        if (row.train_acc > config.chance_ceiling) run.stayed_at_chance = false;
      }
      run.final_train_acc = trace.rows.back().train_acc;
      run.learned = run.max_train_acc >= config.learned_threshold;
      report.runs.push_back(std::move(run));
    }
  }
  return report;
}

void emit_plane_csv(std::ostream& out, const std::vector<PlanePoint>& points, bool bits) {
  const double scale = bits ? 1.0 / std::log(2.0) : 1.0;
  out << "rho,i_xz,i_yz,residual,converged\n";
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& p : points) {
    out << p.rho << ',';
    if (p.failed)
      out << ",,,0\n";
    else
      out << p.i_xz * scale << ',' << p.i_yz * scale << ',' << p.residual() * scale << ',' << (p.converged ? 1 : 0)
          << '\n';
  }
  out.precision(old);
}

void emit_plane_svg(std::ostream& out, const std::vector<PlanePoint>& points, double mutual_information, bool bits) {
  const double scale = bits ? 1.0 / std::log(2.0) : 1.0;
  double x_max = mutual_information * scale;
  for (const auto& p : points)
    if (!p.failed) x_max = std::max(x_max, p.i_xz * scale);
  x_max = x_max > 0 ? x_max * 1.1 : 1.0;
  const double size = 400, pad = 40;
  auto px = [&](double v) { return pad + v / x_max * size; };
  auto py = [&](double v) { return pad + size - v / x_max * size; };
  const char* unit = bits ? "bits" : "nats";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + 2 * pad << "\" height=\"" << size + 2 * pad
      << "\">\n";
  out << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << size << "\" height=\"" << size
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  const double mi = mutual_information * scale;
  out << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(mi) << "\" y2=\"" << py(mi)
      << "\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n";
  out << "<line x1=\"" << px(mi) << "\" y1=\"" << py(mi) << "\" x2=\"" << px(x_max) << "\" y2=\"" << py(mi)
      << "\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n";
  for (const auto& p : points) {
    if (p.failed) continue;
    out << "<circle cx=\"" << px(p.i_xz * scale) << "\" cy=\"" << py(p.i_yz * scale)
        << "\" r=\"3\" fill=\"steelblue\"><title>rho=" << p.rho << "</title></circle>\n";
  }
  out << "<text x=\"" << pad + size / 2 << "\" y=\"" << size + 2 * pad - 8 << "\" text-anchor=\"middle\">I(X;Z) ["
      << unit << "]</text>\n";
  out << "<text x=\"12\" y=\"" << pad + size / 2 << "\" transform=\"rotate(-90 12 " << pad + size / 2
      << ")\" text-anchor=\"middle\">I(Y;Z) [" << unit << "]</text>\n";
  out << "</svg>\n";
}

}  // namespace ceb
