#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cereid/error.hpp"
#include "cereid/scene.hpp"

using namespace cereid;

namespace {

GeneratorSpec cycle_spec(std::size_t C, std::int64_t tau) {
  GeneratorSpec s;
  s.num_cameras = C;
  for (std::size_t i = 0; i < C; ++i) s.edges.push_back({i, (i + 1) % C, 1.0, DelayLaw::fixed(tau)});
  s.start_time_horizon = 500;
  s.num_identities = 40;
  s.visits_per_identity = C;
  return s;
}

GeneratorSpec branching_spec() {
  GeneratorSpec s;
  s.num_cameras = 4;
  s.edges = {{0, 1, 0.6, DelayLaw::lognormal(std::log(40.0), 0.3)},
             {0, 2, 0.4, DelayLaw::lognormal(std::log(90.0), 0.3)},
             {1, 3, 1.0, DelayLaw::fixed(15)},
             {2, 3, 1.0, DelayLaw::fixed(25)},
             {3, 0, 1.0, DelayLaw::lognormal(std::log(60.0), 0.2)}};
  s.start_time_horizon = 10000;
  s.num_identities = 3000;
  s.visits_per_identity = 4;
  s.dwell = 5;
  return s;
}

}  // namespace

TEST_CASE("generation is a pure function of the seed") {
  const GeneratorSpec spec = branching_spec();
  Rng a(42), b(42), c(43);
  const Scene s1 = generate(spec, a), s2 = generate(spec, b), s3 = generate(spec, c);
  CHECK(s1.observations == s2.observations);
  CHECK_FALSE(s1.observations == s3.observations);
}

TEST_CASE("deterministic cycle produces arithmetic timestamps") {
  const GeneratorSpec spec = cycle_spec(5, 10);
  Rng rng(1);
  const Scene scene = generate(spec, rng);
  CHECK(scene.observations.size() == 40 * 5);
  for (const auto& [id, idx] : scene.by_identity()) {
    REQUIRE(idx.size() == 5);
    const auto& first = scene.observations[idx[0]];
    CHECK(first.timestamp >= 0);
    CHECK(first.timestamp <= 500);
    for (std::size_t k = 1; k < idx.size(); ++k) {
      const auto& o = scene.observations[idx[k]];
      CHECK(o.timestamp == first.timestamp + 10 * static_cast<std::int64_t>(k));
      CHECK(o.camera == (first.camera + k) % 5);
    }
  }
}

TEST_CASE("observations are sorted by camera then time") {
  Rng rng(2);
  const Scene scene = generate(branching_spec(), rng);
  for (std::size_t i = 1; i < scene.observations.size(); ++i) {
    const auto& p = scene.observations[i - 1];
    const auto& q = scene.observations[i];
    CHECK((p.camera < q.camera || (p.camera == q.camera && p.timestamp <= q.timestamp)));
  }
}

TEST_CASE("dwell and visibility") {
  GeneratorSpec spec = cycle_spec(3, 7);
  spec.dwell = 4;
  Rng r2(3);
  const Scene s = generate(spec, r2);
  for (const auto& [id, idx] : s.by_identity())
    for (std::size_t k = 1; k < idx.size(); ++k)
      CHECK(s.observations[idx[k]].timestamp - s.observations[idx[k - 1]].timestamp == 11);

  spec.visibility = 0.5;
  spec.num_identities = 2000;
  Rng r3(4);
  const double kept = static_cast<double>(generate(spec, r3).observations.size()) / (2000.0 * 3.0);
  CHECK(kept == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("identity split") {
  Rng rng(5);
  const Scene scene = generate(cycle_spec(4, 10), rng);
  Rng sr(6);
  const Scene split = split_identities(scene, 0.3, sr);
  std::size_t train = 0, test = 0;
  for (auto id : split.identities()) (split.split_of(id) == Split::Train ? train : test)++;
  CHECK(train == 12);
  CHECK(test == 28);
  Rng sr2(6);
  CHECK(split_identities(scene, 0.3, sr2).split == split.split);
  Rng sr3(6);
  CHECK_THROWS_AS(split_identities(scene, 1.0, sr3), ConfigError);
}

TEST_CASE("delay mass against sampling") {
  const DelayLaw law = DelayLaw::lognormal(std::log(30.0), 0.4);
  Rng rng(7);
  const int n = 200000;
  std::vector<int> hist(200, 0);
  for (int i = 0; i < n; ++i) {
    const auto d = law.sample(rng);
    if (d < 200) hist[d]++;
  }
  double total = 0;
  for (std::int64_t lo = 0; lo < 200; lo += 10) {
    int count = 0;
    for (std::int64_t k = lo; k < lo + 10; ++k) count += hist[k];
    const double m = law.mass(lo, lo + 10);
    total += m;
    // Binomial standard error, five sigma.
    CHECK(std::abs(count / double(n) - m) < 5 * std::sqrt(m * (1 - m) / n) + 1e-9);
  }
  CHECK(total == doctest::Approx(law.mass(1, 200)).epsilon(1e-12));
  CHECK(law.mass(1, 1000000) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(DelayLaw::fixed(10).mass(10, 11) == 1.0);
  CHECK(DelayLaw::fixed(10).mass(0, 10) == 0.0);
}

TEST_CASE("transition oracle matches empirical frequencies") {
  const GeneratorSpec spec = branching_spec();
  Rng rng(8);
  const Scene scene = generate(spec, rng);
  const auto grid = default_probe_grid(spec, 6);
  const TransitionOracle orc = oracle(spec, grid);
  REQUIRE(orc.entries.size() == grid.size());

  // Count consecutive hops of every identity per probe cell.
  std::vector<std::vector<double>> counts(grid.size(), std::vector<double>(4, 0.0));
  std::vector<double> from(4, 0.0);
  for (const auto& [id, idx] : scene.by_identity()) {
    for (std::size_t k = 0; k + 1 < idx.size(); ++k) {
      const auto& a = scene.observations[idx[k]];
      const auto& b = scene.observations[idx[k + 1]];
      from[a.camera] += 1;
      const auto dt = b.timestamp - a.timestamp;
      for (std::size_t g = 0; g < grid.size(); ++g)
        if (grid[g].camera == a.camera && dt >= grid[g].lo && dt < grid[g].hi) counts[g][b.camera] += 1;
    }
  }
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto& e = orc.entries[g];
    double sum = 0;
    for (double v : e.conditional) sum += v;
    if (e.has_support) CHECK(sum == doctest::Approx(1.0));
    for (std::size_t j = 0; j < 4; ++j) {
      const double p = e.joint[j];
      const double emp = counts[g][j] / from[grid[g].camera];
      CHECK(std::abs(emp - p) < 5 * std::sqrt(p * (1 - p) / from[grid[g].camera]) + 2e-3);
    }
  }
  // First bin of camera 0 in closed form: a sampled delay k >= 2 comes from
  // a continuous draw in [k - 0.5, k + 0.5); dwell shifts the bin.
  const auto cdf = [](double x, double median, double sigma) {
    return 0.5 * std::erfc(-(std::log(x) - std::log(median)) / (sigma * std::sqrt(2.0)));
  };
  const double lo = grid[0].lo - 5 - 0.5, hi = grid[0].hi - 5 - 0.5;
  const double m1 = 0.6 * (cdf(hi, 40, 0.3) - cdf(lo, 40, 0.3));
  const double m2 = 0.4 * (cdf(hi, 90, 0.3) - cdf(lo, 90, 0.3));
  CHECK(orc.entries[0].conditional[1] == doctest::Approx(m1 / (m1 + m2)).epsilon(1e-12));
}

TEST_CASE("csv round trip") {
  GeneratorSpec spec = cycle_spec(3, 10);
  spec.feature_dim = 3;
  spec.feature_noise = 0.1;
  Rng rng(9);
  const Scene scene = generate(spec, rng);
  std::stringstream ss;
  export_csv(scene, ss);
  const Scene back = ingest_csv(ss);
  CHECK(back.observations == scene.observations);
  CHECK(back.num_cameras == 3);
  CHECK(back.warnings.empty());
}

TEST_CASE("csv ingest remaps sparse camera labels and renormalizes features") {
  std::istringstream in("identity,camera,timestamp,f0,f1\n1,10,5,3,4\n1,30,9,0,2\n2,10,7,1,0\n");
  const Scene s = ingest_csv(in);
  CHECK(s.num_cameras == 2);
  CHECK(s.camera_labels == std::vector<std::int64_t>{10, 30});
  CHECK(s.observations[0].feature[0] == doctest::Approx(0.6));
  CHECK(s.observations[0].feature[1] == doctest::Approx(0.8));
  CHECK(s.warnings.size() == 2);
}

TEST_CASE("csv ingest errors carry line numbers") {
  auto err = [](const std::string& text) {
    std::istringstream in(text);
    try {
      ingest_csv(in, "t.csv");
    } catch (const DatasetError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(err("") == "t.csv: empty file");
  CHECK(err("id,cam\n").find("t.csv:1") == 0);
  CHECK(err("identity,camera,timestamp\n1,2,3\n1,2\n").find("t.csv:3") == 0);
  CHECK(err("identity,camera,timestamp\n1,x,3\n").find("bad camera") != std::string::npos);
  CHECK(err("identity,camera,timestamp,f0\n1,0,3,0\n").find("zero feature") != std::string::npos);
  CHECK_THROWS_AS(ingest("missing.csv", "csv"), DatasetError);
  CHECK_THROWS_AS(ingest("x.parquet", "parquet"), ConfigError);
}

TEST_CASE("generator spec json") {
  const GeneratorSpec spec = branching_spec();
  CHECK(spec_from_json(spec_to_json(spec)) == spec);
  CHECK_THROWS_AS(spec_from_json("[]"), ConfigError);
  CHECK_THROWS_AS(spec_from_json("{\"num_cameras\": 2, \"bogus\": 1}"), ConfigError);
  GeneratorSpec bad = spec;
  bad.edges[0].probability = 0.7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = spec;
  bad.edges.push_back({1, 1, 0.0, DelayLaw::fixed(1)});
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("unreachable cameras are reported") {
  GeneratorSpec spec = cycle_spec(3, 10);
  spec.edges = {{0, 1, 1.0, DelayLaw::fixed(5)}};
  spec.start_distribution = {1.0, 0.0, 0.0};
  Rng rng(1);
  const Scene s = generate(spec, rng);
  REQUIRE(s.warnings.size() == 1);
  CHECK(s.warnings[0].find("camera 2") != std::string::npos);
}
