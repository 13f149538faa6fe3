// End-to-end acceptance run: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "cereid/commands.hpp"
#include "cereid/config.hpp"
#include "cereid/layers.hpp"
#include "cereid/metrics.hpp"
#include "cereid/simulator.hpp"
#include "cereid/strategy.hpp"
#include "cereid/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cereid;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("criterion %d %-24s %s  %s\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double x, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, x);
  return buf;
}

std::string config_path(const std::string& name) { return std::string(CEREID_SOURCE_DIR) + "/configs/" + name; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    rows.push_back(f);
  }
  return rows;
}

// Mean KL(oracle || model) over the probe grid; model predictions are averaged
// uniformly over the integer delays in each bin.
double mean_kl(const DacmModel& model, const GeneratorSpec& spec, std::size_t* cells) {
  const auto grid = default_probe_grid(spec, 8);
  const auto orc = oracle(spec, grid);
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& e : orc.entries) {
    if (!e.has_support) continue;
    std::vector<double> q(spec.num_cameras, 0.0);
    const double width = static_cast<double>(e.cell.hi - e.cell.lo);
    for (std::int64_t t = e.cell.lo; t < e.cell.hi; ++t) {
      const auto d = transition_distribution(model, e.cell.camera, 0.0, static_cast<double>(t));
      for (std::size_t j = 0; j < q.size(); ++j) q[j] += d[j] / width;
    }
    double kl = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      const double p = e.conditional[j];
      if (p > 0.0) kl += p * std::log(p / q[j]);
    }
    total += kl;
    ++n;
  }
  if (cells) *cells = grid.size();
  return n ? total / static_cast<double>(n) : INFINITY;
}

// Replays the per-pair and per-query tables of a simulate bundle and checks
// the protocol identities from scratch.
std::vector<std::string> replay_bundle(const fs::path& dir, const json& rep) {
  std::vector<std::string> bad;
  const std::size_t B = rep.at("bandwidth").get<std::size_t>();
  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> tn_sum;  // label -> (sum, count)
  for (const auto& r : read_csv(dir / "pairs.csv")) {
    const std::uint64_t rank = std::stoull(r[4]), b = std::stoull(r[5]), tn = std::stoull(r[6]);
    if (tn != (rank + b - 1) / b) bad.push_back(r[0] + ": TN differs from ceil(rank/b)");
    tn_sum[r[0]].first += tn;
    tn_sum[r[0]].second += 1;
  }
  std::map<std::string, std::vector<std::uint64_t>> positions;
  for (const auto& r : read_csv(dir / "queries.csv")) {
    positions[r[0]].push_back(std::stoull(r[4]));
    std::uint64_t sum = 0;
    std::istringstream bs(r[8]);
    for (std::uint64_t b; bs >> b;) {
      if (b == 0) bad.push_back(r[0] + ": zero bandwidth");
      sum += b;
    }
    if (sum != B) bad.push_back(r[0] + ": bandwidths sum to " + std::to_string(sum));
  }
  for (const auto& s : rep.at("strategies")) {
    const std::string label = s.at("label");
    const auto [sum, count] = tn_sum[label];
    const double replay = static_cast<double>(sum) / static_cast<double>(count);
    if (replay != s.at("mtn").get<double>()) bad.push_back(label + ": mTN " + num(s.at("mtn")) + " vs replay " + num(replay));
    const auto& pos = positions[label];
    std::uint64_t kmax = 0, lhs = 0;
    for (auto p : pos) {
      kmax = std::max(kmax, p);
      lhs += p;
    }
    std::uint64_t rhs = pos.size();
    double prev = -1.0;
    for (std::uint64_t K = 1; K <= kmax; ++K) {
      std::uint64_t hits = 0;
      for (auto p : pos) hits += p <= K;
      rhs += pos.size() - hits;
      const double pr = static_cast<double>(hits) / static_cast<double>(pos.size());
      if (pr < prev) bad.push_back(label + ": pR-K decreases at K=" + std::to_string(K));
      prev = pr;
      const auto key = std::to_string(K);
      if (s.at("pr_k").contains(key) && s.at("pr_k").at(key).get<double>() != pr) {
        bad.push_back(label + ": reported pR-" + key + " differs from replay");
      }
    }
    if (prev != 1.0) bad.push_back(label + ": pR-inf below 1");
    if (lhs != rhs) bad.push_back(label + ": tail-sum identity fails");
    const double mpr = static_cast<double>(lhs) / static_cast<double>(pos.size());
    if (std::abs(mpr - s.at("mpr").get<double>()) > 1e-12 * mpr) bad.push_back(label + ": mpR differs from replay");
  }
  for (const auto& v : rep.at("protocol_violations")) bad.push_back("reported: " + v.get<std::string>());
  return bad;
}

const json& strategy(const json& rep, const std::string& label) {
  for (const auto& s : rep.at("strategies"))
    if (s.at("label") == label) return s;
  throw std::runtime_error("strategy " + label + " missing from report");
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / ("cereid_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(scratch);

  report(1, "gradient fidelity", [] {
    GradcheckConfig g;
    g.num_cameras = 4;
    g.embed_dim = 8;
    g.num_blocks = 2;
    g.batch = 4;
    g.seeds = {1, 2, 3};
    g.tolerance = 1e-3;
    const auto t0 = std::chrono::steady_clock::now();
    const auto runs = run_gradcheck(g, false);
    const double secs = seconds_since(t0);
    double worst = 0.0;
    bool ok = runs.size() == 3;
    for (const auto& r : runs) {
      worst = std::max(worst, r.report.max_rel_error);
      ok = ok && r.report.passed;
    }
    ok = ok && worst < 1e-3 && secs < 30.0;
    return Outcome{ok, "max rel error " + num(worst, 3) + " over 3 seeds (< 1e-3), " + num(secs, 3) + " s (< 30 s)"};
  });

  report(2, "analytic examples", [] {
    std::vector<std::string> bad;
    auto expect = [&](const std::string& what, double got, double want) {
      if (!(std::abs(got - want) <= 1e-6)) bad.push_back(what + " " + num(got, 8) + " vs " + num(want, 8));
    };
    const Tensor e = sinusoidal_embed(1.0, 4, 10000.0);
    expect("embed[0]", e[0], std::sin(1.0));
    expect("embed[1]", e[1], std::cos(1.0));
    expect("embed[2]", e[2], std::sin(0.01));
    expect("embed[3]", e[3], std::cos(0.01));
    const Tensor z = sinusoidal_embed(0.0, 4, 10000.0);
    expect("embed0[0]", z[0], 0.0);
    expect("embed0[1]", z[1], 1.0);

    const std::vector<double> y{std::log(2.0) * 0.01, 0.0};
    const std::vector<std::size_t> sizes{10, 10};
    const auto a = allocate_bandwidth(y, sizes, 6, 0.01, 0.01);
    expect("share[0]", a.shares[0], 4.0);
    expect("share[1]", a.shares[1], 2.0);
    expect("fraction[0]", a.shares[0] / 6.0, 2.0 / 3.0);
    expect("fraction[1]", a.shares[1] / 6.0, 1.0 / 3.0);
    if (a.bandwidth != std::vector<std::size_t>{4, 2}) bad.push_back("b != [4,2]");
    const std::vector<double> flat(8, 0.0);
    const std::vector<std::size_t> equal(8, 100);
    if (allocate_bandwidth(flat, equal, 24, 0.01, 0.01).bandwidth != std::vector<std::size_t>(8, 3)) {
      bad.push_back("uniform allocation != [3,...,3]");
    }

    const double s = joint_similarity(std::vector<double>{0.5}, std::vector<double>{1.0}, 0.1, 0.1)[0];
    expect("joint", s, -0.5 / (1.0 + 0.1 * std::exp(1.0)));

    PatternBank bank;
    bank.target = {1.0, 0.0};
    bank.rows = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
    const auto t = tcreid_scores(std::vector<double>{-0.3, -0.3}, bank);
    expect("divisor aligned", -0.3 / t[0], 2.0);
    expect("divisor orthogonal", -0.3 / t[1], 1.0 + std::exp(1.0));
    std::string detail = bad.empty() ? "embedding, [2/3,1/3] split to [4,2], [3..3] allocation, joint " + num(s, 7) +
                                           ", tcReID divisors 2 and 1+e within 1e-6"
                                     : bad.front();
    return Outcome{bad.empty(), detail};
  });

  report(3, "learning correctness", [] {
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig cfg = load_config(config_path("cycle.json"));
    const Scene scene = build_scene(cfg);
    const ModelBundle b = obtain_model(cfg, scene);
    const auto held = enumerate_pairs(scene, SplitFilter::Test);
    const double acc = evaluate_accuracy(b.model, held);
    const double secs = seconds_since(t0);
    return Outcome{acc >= 0.95 && secs < 300.0 && b.epochs_run == 90,
                   "held-out accuracy " + num(acc) + " on " + std::to_string(held.size()) + " pairs (>= 0.95), " +
                       std::to_string(b.epochs_run) + " epochs, " + num(secs, 3) + " s (< 300 s)"};
  });

  // Kept for the protocol run on the stochastic scene below.
  std::optional<RunConfig> stochastic_cfg;
  std::optional<Scene> stochastic_scene;
  std::optional<DacmModel> stochastic_model;

  report(4, "distribution recovery", [&] {
    const RunConfig cfg = load_config(config_path("stochastic.json"));
    const Scene scene = build_scene(cfg);
    const DacmModel init = initial_model(cfg, scene.num_cameras);
    std::size_t cells = 0;
    const double before = mean_kl(init, *cfg.scene.generator, &cells);
    ModelBundle b = obtain_model(cfg, scene);
    const double after = mean_kl(b.model, *cfg.scene.generator, nullptr);
    stochastic_cfg = cfg;
    stochastic_scene = scene;
    stochastic_model = std::move(b.model);
    return Outcome{cells == 64 && after <= 0.2 && before >= 5.0 * after,
                   "KL " + num(after) + " nats (<= 0.2) on " + std::to_string(cells) + " probe cells, untrained " +
                       num(before) + " (" + num(before / after, 3) + "x, >= 5x)"};
  });

  // Two full simulate runs on the benchmark scene feed criteria 5, 6, 8, 9.
  const RunConfig bench = load_config(config_path("benchmark.json"));
  json rep;
  std::string sim_error;
  double sim_secs = 0.0;
  int sim_codes[2] = {-1, -1};
  try {
    for (int i = 0; i < 2; ++i) {
      CommandOptions opts;
      opts.out_dir = (scratch / (i ? "sim_b" : "sim_a")).string();
      std::ostringstream log;
      const auto t0 = std::chrono::steady_clock::now();
      sim_codes[i] = cmd_simulate(bench, opts, log);
      if (i == 0) sim_secs = seconds_since(t0);
    }
    rep = json::parse(slurp(scratch / "sim_a" / "report.json"));
  } catch (const std::exception& e) {
    sim_error = e.what();
  }
  auto need_sim = [&] {
    if (!sim_error.empty()) throw std::runtime_error("simulate failed: " + sim_error);
    if (sim_codes[0] != 0 || sim_codes[1] != 0) throw std::runtime_error("simulate returned a non-zero code");
  };

  report(5, "strategy ordering", [&] {
    need_sim();
    const double c = strategy(rep, "Pattern-C").at("mtn"), ce = strategy(rep, "Pattern-CE").at("mtn");
    const double oc = strategy(rep, "OC").at("mtn"), oe = strategy(rep, "OE").at("mtn");
    const double both = strategy(rep, "OC+OE").at("mtn");
    const bool ok = c >= 50.0 * ce && oc <= 0.9 * ce && oe <= 0.9 * ce && both <= std::min(oc, oe) * 1.05 &&
                    sim_secs < 600.0;
    return Outcome{ok, "mTN C " + num(c) + ", CE " + num(ce) + " (C/CE " + num(c / ce, 3) + " >= 50), OC/CE " +
                           num(oc / ce, 3) + ", OE/CE " + num(oe / ce, 3) + " (<= 0.9), OC+OE " + num(both) +
                           " vs min " + num(std::min(oc, oe)) + " (+5%), " + num(sim_secs, 3) + " s (< 600 s)"};
  });

  report(6, "tcReID trend", [&] {
    need_sim();
    const auto& tc = strategy(rep, "OC+OE/tc");
    const auto& ce = strategy(rep, "Pattern-CE");
    const double p_tc = tc.at("pr_k").at("1"), p_ce = ce.at("pr_k").at("1");
    const double m_tc = tc.at("mpr"), m_ce = ce.at("mpr");
    return Outcome{p_tc >= 2.0 * p_ce && m_tc <= 0.5 * m_ce,
                   "pR-1 " + num(p_tc) + " vs visual-only " + num(p_ce) + " (" + num(p_tc / p_ce, 3) + "x, >= 2x), mpR " +
                       num(m_tc) + " vs " + num(m_ce) + " (" + num(m_tc / m_ce, 3) + "x, <= 0.5x)"};
  });

  report(7, "re-ranking boost", [&] {
    CommandOptions opts;
    opts.out_dir = (scratch / "central").string();
    std::ostringstream log;
    if (cmd_eval_central(bench, opts, log) != 0) return Outcome{false, "eval-central returned non-zero"};
    const json c = json::parse(slurp(scratch / "central" / "central.json"));
    const double vr1 = c.at("visual").at("r_k").at("1"), jr1 = c.at("joint").at("r_k").at("1");
    const double vmap = c.at("visual").at("map"), jmap = c.at("joint").at("map");
    return Outcome{jr1 - vr1 >= 0.05 && jmap >= vmap - 0.01,
                   "R-1 " + num(vr1) + " -> " + num(jr1) + " (+" + num(jr1 - vr1) + ", >= 0.05), mAP " + num(vmap) +
                       " -> " + num(jmap) + " (drop <= 0.01)"};
  });

  report(8, "protocol identities", [&] {
    need_sim();
    auto bad = replay_bundle(scratch / "sim_a", rep);
    std::size_t runs = 1;
    if (stochastic_model) {
      // A second, independent run on the stochastic scene.
      const FrequencyModel freq = fit_frequency(*stochastic_scene, stochastic_cfg->frequency);
      std::vector<StrategySpec> specs;
      for (const char* s : {"C", "CE", "OC", "OE", "OC+OE", "OC+OE/tc"}) specs.push_back(StrategySpec::parse(s));
      QuerySampling sampling;
      sampling.seed = 77;
      sampling.max_queries = 200;
      sampling.jitter = 50;
      const RunReport r =
          run_benchmark(*stochastic_scene, specs, {&*stochastic_model, &freq}, sampling, stochastic_cfg->inference);
      for (const auto& v : check_protocol_identities(r)) bad.push_back("stochastic: " + v);
      ++runs;
    }
    return Outcome{bad.empty(), bad.empty() ? "pR-K monotone, tail-sum exact, mTN == replay, sum b = B on " +
                                                  std::to_string(runs) + " runs (" +
                                                  std::to_string(rep.at("strategies").size()) + " strategies each)"
                                            : bad.front()};
  });

  report(9, "determinism", [&] {
    need_sim();
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(scratch / "sim_a")) {
      const fs::path other = scratch / "sim_b" / entry.path().filename();
      if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) {
        return Outcome{false, entry.path().filename().string() + " differs between reruns"};
      }
      ++files;
    }
    std::size_t other_files = 0;
    for ([[maybe_unused]] const auto& entry : fs::directory_iterator(scratch / "sim_b")) ++other_files;
    return Outcome{files > 0 && files == other_files, std::to_string(files) + " bundle files byte-identical across reruns"};
  });

  fs::remove_all(scratch);
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
