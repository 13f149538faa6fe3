#include "cereid/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "cereid/checkpoint.hpp"
#include "cereid/error.hpp"
#include "cereid/layers.hpp"

namespace cereid {
namespace {

using nlohmann::json;

// Stream ids under the run seed.
constexpr std::uint64_t kSceneStream = 0x5c3e0001ULL;
constexpr std::uint64_t kSplitStream = 0x5c3e0002ULL;
constexpr std::uint64_t kInitStream = 0x1a17ULL;
constexpr std::uint64_t kQuerySalt = 0x9e3779b97f4a7c15ULL;

std::string out_dir(const RunConfig& config, const CommandOptions& opts) {
  return opts.out_dir.empty() ? config.output_dir : opts.out_dir;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir + ": " + ec.message());
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << content;
  if (!out) throw Error("write failed for " + path);
}

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << x;
  return os.str();
}

void require_scene_section(const RunConfig& config) {
  if (!config.scene.generator && config.scene.ingest_path.empty()) {
    throw ConfigError("scene: a \"generator\" or \"ingest\" section is required");
  }
  if (!config.scene.ingest_path.empty() && !std::filesystem::exists(config.scene.ingest_path)) {
    throw ConfigError("scene.ingest.path: file not found: " + config.scene.ingest_path);
  }
}

std::string history_csv(const TrainHistory& h) {
  std::ostringstream os;
  os << "epoch,lr,loss,heldout_accuracy\n";
  char buf[128];
  for (const auto& e : h.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,", e.epoch, e.lr, e.loss);
    os << buf;
    if (e.heldout_accuracy) {
      std::snprintf(buf, sizeof buf, "%.17g", *e.heldout_accuracy);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

json history_json(const TrainHistory& h) {
  json j = json::object();
  j["epochs_run"] = h.epochs.empty() ? 0 : h.epochs.back().epoch + 1;
  if (!h.epochs.empty()) {
    j["final_loss"] = h.epochs.back().loss;
    if (h.epochs.back().heldout_accuracy) j["heldout_accuracy"] = *h.epochs.back().heldout_accuracy;
  }
  return j;
}

json k_map(const std::map<std::size_t, double>& m, double scale = 1.0) {
  json j = json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v * scale;
  return j;
}

json bundle_header(const RunConfig& config, const std::string& command) {
  json j;
  j["tool"] = "cereid";
  j["version"] = kToolVersion;
  j["command"] = command;
  j["seed"] = config.seed;
  j["config"] = json::parse(config_to_json(config));
  return j;
}

void print_model_source(const RunConfig& config, std::ostream& log) {
  if (config.train.checkpoint.empty()) {
    log << "model: train from scratch, " << config.train.epochs << " epochs\n";
  } else {
    log << "model: checkpoint " << config.train.checkpoint << "\n";
  }
}

}  // namespace

Scene build_scene(const RunConfig& config) {
  require_scene_section(config);
  Scene scene;
  if (config.scene.generator) {
    Rng rng = Rng::stream(config.seed, kSceneStream);
    scene = generate(*config.scene.generator, rng);
  } else {
    scene = ingest(config.scene.ingest_path, config.scene.ingest_format);
  }
  Rng split_rng = Rng::stream(config.seed, kSplitStream);
  return split_identities(std::move(scene), config.scene.train_fraction, split_rng);
}

DacmModel initial_model(const RunConfig& config, std::size_t num_cameras) {
  Rng rng = Rng::stream(config.seed, kInitStream);
  return DacmModel::initialize(config.dacm_config(num_cameras), rng);
}

ModelBundle obtain_model(const RunConfig& config, const Scene& scene) {
  const DacmConfig dc = config.dacm_config(scene.num_cameras);
  TrainSchedule schedule = config.schedule();
  ModelBundle b{DacmModel::zeros(dc), {}, false, 0};
  if (!config.train.checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(config.train.checkpoint);
    require_camera_count(ck.model, scene.num_cameras);
    b.model = std::move(ck.model);
    schedule.start_epoch = ck.meta.epochs_run;
  } else {
    b.model = initial_model(config, scene.num_cameras);
  }
  if (schedule.start_epoch < schedule.epochs) {
    b.history = train(b.model, scene, schedule);
    b.trained_here = true;
  }
  b.epochs_run = std::max(schedule.start_epoch, schedule.epochs);
  return b;
}

std::vector<GradcheckRun> run_gradcheck(const GradcheckConfig& config, bool inject_fault) {
  std::vector<GradcheckRun> runs;
  for (std::uint64_t seed : config.seeds) {
    DacmConfig dc;
    dc.num_cameras = config.num_cameras;
    dc.embed_dim = config.embed_dim;
    dc.num_blocks = config.num_blocks;
    dc.validate();
    Rng rng(seed);
    DacmModel model = DacmModel::initialize(dc, rng);
    std::vector<DacmInput> batch(config.batch);
    std::vector<std::size_t> targets(config.batch);
    for (std::size_t i = 0; i < config.batch; ++i) {
      batch[i].camera = rng.uniform_index(dc.num_cameras);
      batch[i].delta_t = static_cast<double>(rng.uniform_int(-500, 500));
      targets[i] = rng.uniform_index(dc.num_cameras);
    }
    auto params = model.params();
    zero_grads(params);
    DacmCache cache;
    const Tensor logits = dacm_forward(model, batch, Mode::Train, &cache);
    dacm_backward(model, cache, cross_entropy_loss(logits, targets).grad);
    if (inject_fault) params.front()->grad[0] += 1.0;
    const auto loss = [&] { return cross_entropy_loss(dacm_forward(model, batch, Mode::Train), targets).loss; };
    runs.push_back({seed, finite_diff_check(loss, params, config.tolerance)});
  }
  return runs;
}

std::string format_summary(const std::vector<MetricSummary>& rows, std::span<const std::size_t> ks) {
  std::vector<std::string> header{"strategy", "mTN"};
  for (std::size_t k : ks) header.push_back("pR-" + std::to_string(k));
  header.push_back("mpR");
  for (std::size_t k : ks) header.push_back("R-" + std::to_string(k));
  header.insert(header.end(), {"mAP", "queries", "pairs"});
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& r : rows) {
    std::vector<std::string> row{r.strategy, fmt(r.mtn)};
    for (std::size_t k : ks) row.push_back(fmt(r.pr_k.at(k)));
    row.push_back(fmt(r.mpr, 2));
    for (std::size_t k : ks) row.push_back(fmt(r.r_k.at(k)));
    row.push_back(fmt(r.map));
    row.push_back(std::to_string(r.num_queries));
    row.push_back(std::to_string(r.num_pairs));
    cells.push_back(row);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        os << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
      }
    }
    os << "\n";
  }
  return os.str();
}

int cmd_gen(const RunConfig& config, const CommandOptions& opts, std::ostream& log) {
  require_scene_section(config);
  if (!config.scene.generator) throw ConfigError("scene.generator: gen needs a generator spec");
  const std::string dir = out_dir(config, opts);
  if (opts.dry_run) {
    log << "gen: " << config.scene.generator->num_identities << " identities over "
        << config.scene.generator->num_cameras << " cameras, seed " << config.seed << "\n"
        << "would write " << join(dir, "scene.csv") << " and " << join(dir, "scene_spec.json") << "\n";
    return kExitOk;
  }
  const Scene scene = build_scene(config);
  ensure_dir(dir);
  export_csv(scene, join(dir, "scene.csv"));
  write_file(join(dir, "scene_spec.json"), spec_to_json(*config.scene.generator) + "\n");
  std::ostringstream split;
  split << "identity,split\n";
  for (const auto& [id, s] : scene.split) split << id << "," << (s == Split::Train ? "train" : "test") << "\n";
  write_file(join(dir, "split.csv"), split.str());
  for (const auto& w : scene.warnings) log << "warning: " << w << "\n";
  log << "wrote " << scene.observations.size() << " observations to " << join(dir, "scene.csv") << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& config, const CommandOptions& opts, std::ostream& log) {
  require_scene_section(config);
  const std::string dir = out_dir(config, opts);
  if (opts.dry_run) {
    log << config_to_json(config) << "\n";
    print_model_source(config, log);
    log << "would write " << join(dir, "checkpoint.json") << " and " << join(dir, "history.csv") << "\n";
    return kExitOk;
  }
  const Scene scene = build_scene(config);
  for (const auto& w : scene.warnings) log << "warning: " << w << "\n";
  const ModelBundle b = obtain_model(config, scene);
  ensure_dir(dir);
  TrainingMeta meta;
  meta.seed = config.seed;
  meta.epochs_run = b.epochs_run;
  if (!b.history.epochs.empty()) meta.final_loss = b.history.epochs.back().loss;
  save_checkpoint(b.model, meta, join(dir, "checkpoint.json"));
  write_file(join(dir, "history.csv"), history_csv(b.history));
  json j = bundle_header(config, "train");
  j["training"] = history_json(b.history);
  write_file(join(dir, "train_summary.json"), j.dump(2) + "\n");
  for (const auto& e : b.history.epochs) {
    log << "epoch " << std::setw(3) << e.epoch + 1 << "  lr " << e.lr << "  loss " << fmt(e.loss, 6);
    if (e.heldout_accuracy) log << "  heldout-acc " << fmt(*e.heldout_accuracy);
    log << "\n";
  }
  log << "wrote " << join(dir, "checkpoint.json") << "\n";
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& config, const CommandOptions& opts, std::ostream& log) {
  const auto& g = config.gradcheck;
  if (opts.dry_run) {
    log << "gradcheck: C=" << g.num_cameras << " D=" << g.embed_dim << " L=" << g.num_blocks << " batch=" << g.batch
        << " seeds=" << g.seeds.size() << " tolerance=" << g.tolerance << "\n";
    return kExitOk;
  }
  const auto runs = run_gradcheck(g, opts.inject_fault);
  bool ok = true;
  json j = bundle_header(config, "gradcheck");
  j["inject_fault"] = opts.inject_fault;
  j["runs"] = json::array();
  for (const auto& r : runs) {
    log << "seed " << r.seed << ": max rel error " << std::scientific << std::setprecision(3)
        << r.report.max_rel_error << std::defaultfloat << (r.report.passed ? "  pass" : "  FAIL") << "\n";
    json jr;
    jr["seed"] = r.seed;
    jr["max_rel_error"] = r.report.max_rel_error;
    jr["passed"] = r.report.passed;
    jr["parameters"] = json::array();
    for (const auto& p : r.report.per_param) {
      log << "  " << std::left << std::setw(20) << p.name << std::right << std::scientific << std::setprecision(3)
          << p.max_rel_error << std::defaultfloat << "\n";
      jr["parameters"].push_back({{"name", p.name}, {"max_rel_error", p.max_rel_error}, {"worst_index", p.worst_index}});
    }
    j["runs"].push_back(jr);
    ok = ok && r.report.passed;
  }
  j["passed"] = ok;
  const std::string dir = out_dir(config, opts);
  ensure_dir(dir);
  write_file(join(dir, "gradcheck.json"), j.dump(2) + "\n");
  log << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance " << g.tolerance << ")\n";
  return ok ? kExitOk : kExitThreshold;
}

int cmd_simulate(const RunConfig& config, const CommandOptions& opts, std::ostream& log) {
  require_scene_section(config);
  const std::string dir = out_dir(config, opts);
  const std::size_t B_cfg = config.inference.bandwidth;
  if (opts.dry_run) {
    log << config_to_json(config) << "\n";
    print_model_source(config, log);
    log << "strategies:";
    for (const auto& s : config.simulate.strategies) log << " " << s.label();
    log << "\nbandwidth: " << (B_cfg ? std::to_string(B_cfg) : std::string("3 per camera")) << "\n"
        << "would write report.json, summary.txt, pairs.csv, queries.csv under " << dir << "\n";
    return kExitOk;
  }
  const Scene scene = build_scene(config);
  config.inference.validate(scene.num_cameras);
  for (const auto& w : scene.warnings) log << "warning: " << w << "\n";

  bool need_dacm = false, need_freq = false;
  for (const auto& s : config.simulate.strategies) {
    need_dacm = need_dacm || s.uses_cloud_allocation() || s.tcreid ||
                (s.uses_edge_scoring() && config.inference.st_source != StSource::Frequency);
    need_freq = need_freq || (s.uses_edge_scoring() && config.inference.st_source != StSource::Dacm);
  }
  std::optional<ModelBundle> bundle;
  std::optional<FrequencyModel> freq;
  StrategyModels models;
  if (need_dacm) {
    bundle = obtain_model(config, scene);
    models.dacm = &bundle->model;
  }
  if (need_freq) {
    freq = fit_frequency(scene, config.frequency);
    models.frequency = &*freq;
  }

  QuerySampling sampling;
  sampling.max_queries = config.simulate.max_queries;
  sampling.seed = config.seed ^ kQuerySalt;
  sampling.jitter = config.simulate.jitter;
  sampling.record_arrivals = config.simulate.record_arrivals;
  const RunReport report =
      run_benchmark(scene, config.simulate.strategies, models, sampling, config.inference, opts.threads);

  const auto& ks = config.simulate.k_list;
  std::vector<MetricSummary> rows;
  json j = bundle_header(config, "simulate");
  j["scene"] = {{"num_cameras", scene.num_cameras},
                {"observations", scene.observations.size()},
                {"gallery", report.gallery_size},
                {"queries", report.num_queries},
                {"skipped", report.skipped}};
  j["bandwidth"] = report.bandwidth;
  if (bundle) j["training"] = history_json(bundle->history);
  j["strategies"] = json::array();
  for (std::size_t s = 0; s < report.strategies.size(); ++s) {
    const auto m = summarize(report, s, ks);
    rows.push_back(m);
    j["strategies"].push_back({{"label", m.strategy},
                               {"mtn", m.mtn},
                               {"replay_mtn", replay_mtn(report, s)},
                               {"pr_k", k_map(m.pr_k)},
                               {"pr_k_percent", k_map(m.pr_k, 100.0)},
                               {"mpr", m.mpr},
                               {"r_k", k_map(m.r_k)},
                               {"map", m.map},
                               {"num_queries", m.num_queries},
                               {"num_pairs", m.num_pairs},
                               {"num_skipped", m.num_skipped}});
  }
  j["protocol_violations"] = check_protocol_identities(report);
  j["warnings"] = report.warnings;

  ensure_dir(dir);
  write_file(join(dir, "report.json"), j.dump(2) + "\n");
  const std::string table = format_summary(rows, ks);
  write_file(join(dir, "summary.txt"), table);

  std::ostringstream pairs;
  pairs << "strategy,query,target,device,rank,bandwidth,tn\n";
  for (const auto& p : report.pairs) {
    pairs << report.strategies[p.strategy].label() << "," << p.query << "," << p.target << "," << p.device << ","
          << p.rank << "," << p.bandwidth << "," << p.tn << "\n";
  }
  write_file(join(dir, "pairs.csv"), pairs.str());

  std::ostringstream queries;
  queries << "strategy,query,target_time,desired,desired_position,desired_round,first_match,average_precision,"
             "bandwidth,arrivals\n";
  char buf[64];
  for (const auto& q : report.queries) {
    std::snprintf(buf, sizeof buf, "%.17g", q.average_precision);
    queries << report.strategies[q.strategy].label() << "," << q.query << "," << q.target_time << "," << q.desired
            << "," << q.desired_position << "," << q.desired_round << "," << q.first_match << "," << buf << ",";
    for (std::size_t i = 0; i < q.bandwidth.size(); ++i) queries << (i ? " " : "") << q.bandwidth[i];
    queries << ",";
    for (std::size_t i = 0; i < q.arrivals.size(); ++i) queries << (i ? " " : "") << q.arrivals[i];
    queries << "\n";
  }
  write_file(join(dir, "queries.csv"), queries.str());
  if (bundle && bundle->trained_here) write_file(join(dir, "history.csv"), history_csv(bundle->history));

  log << table;
  for (const auto& w : report.warnings) log << "warning: " << w << "\n";
  for (const auto& v : j["protocol_violations"]) log << "protocol violation: " << v.get<std::string>() << "\n";
  log << "wrote " << join(dir, "report.json") << "\n";
  return kExitOk;
}

int cmd_eval_central(const RunConfig& config, const CommandOptions& opts, std::ostream& log) {
  require_scene_section(config);
  const std::string dir = out_dir(config, opts);
  if (opts.dry_run) {
    log << config_to_json(config) << "\n";
    print_model_source(config, log);
    log << "would write central.json and central.txt under " << dir << "\n";
    return kExitOk;
  }
  const Scene scene = build_scene(config);
  config.inference.validate(scene.num_cameras);
  std::optional<ModelBundle> bundle;
  std::optional<FrequencyModel> freq;
  StrategyModels models;
  if (config.inference.st_source != StSource::Frequency) {
    bundle = obtain_model(config, scene);
    models.dacm = &bundle->model;
  }
  if (config.inference.st_source != StSource::Dacm) {
    freq = fit_frequency(scene, config.frequency);
    models.frequency = &*freq;
  }
  QuerySampling sampling;
  sampling.max_queries = config.simulate.max_queries;
  sampling.seed = config.seed ^ kQuerySalt;
  const auto& ks = config.simulate.k_list;
  const CentralResult r = evaluate_central(scene, models, config.inference, sampling, ks, opts.threads);

  json j = bundle_header(config, "eval-central");
  j["queries"] = r.num_queries;
  j["skipped"] = r.skipped;
  j["visual"] = {{"r_k", k_map(r.visual.rank_k)}, {"map", r.visual.map}, {"evaluated", r.visual.evaluated}};
  j["joint"] = {{"r_k", k_map(r.joint.rank_k)}, {"map", r.joint.map}, {"evaluated", r.joint.evaluated}};
  if (bundle) j["training"] = history_json(bundle->history);

  std::ostringstream table;
  table << std::left << std::setw(8) << "ranking";
  for (std::size_t k : ks) table << std::right << std::setw(9) << ("R-" + std::to_string(k));
  table << std::right << std::setw(9) << "mAP" << "\n";
  for (const auto& [name, c] : {std::pair<const char*, const CmcResult*>{"visual", &r.visual}, {"OE", &r.joint}}) {
    table << std::left << std::setw(8) << name;
    for (std::size_t k : ks) table << std::right << std::setw(9) << fmt(c->rank_k.at(k));
    table << std::right << std::setw(9) << fmt(c->map) << "\n";
  }
  ensure_dir(dir);
  write_file(join(dir, "central.json"), j.dump(2) + "\n");
  write_file(join(dir, "central.txt"), table.str());
  log << table.str();
  return kExitOk;
}

}  // namespace cereid
