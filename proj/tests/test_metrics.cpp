#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cereid/error.hpp"
#include "cereid/metrics.hpp"

using namespace cereid;

namespace {

RunReport report_with_positions(const std::vector<std::size_t>& positions) {
  RunReport r;
  r.strategies = {StrategySpec::parse("CE")};
  for (std::size_t i = 0; i < positions.size(); ++i) {
    QueryRecord q;
    q.query = i;
    q.desired_position = positions[i];
    q.first_match = positions[i];
    q.average_precision = 1.0 / static_cast<double>(positions[i]);
    r.queries.push_back(q);
  }
  return r;
}

// Textbook AP: mean over relevant items of precision at their rank.
double naive_ap(const std::vector<bool>& relevant) {
  double sum = 0;
  int hits = 0, total = 0;
  for (bool x : relevant) total += x;
  for (std::size_t i = 0; i < relevant.size(); ++i)
    if (relevant[i]) sum += static_cast<double>(++hits) / static_cast<double>(i + 1);
  return total ? sum / total : 0.0;
}

}  // namespace

TEST_CASE("mtn examples") {
  RunReport r;
  r.strategies = {StrategySpec::parse("C"), StrategySpec::parse("CE")};
  for (std::size_t tn : {1, 1, 1}) r.pairs.push_back({0, 0, 0, 0, tn, 4, tn});
  r.pairs.push_back({1, 0, 0, 0, 1, 2, 1});
  r.pairs.push_back({1, 0, 0, 0, 5, 2, 3});
  CHECK(mtn(r, 0) == 1.0);
  CHECK(mtn(r, 1) == 2.0);
  CHECK(replay_mtn(r, 1) == 2.0);
  RunReport empty;
  CHECK_THROWS_AS(mtn(empty, 0), InputError);
}

TEST_CASE("precise rank on a three-query fixture") {
  // Desired images land at merged positions 1, 4 and 2.
  const RunReport r = report_with_positions({1, 4, 2});
  CHECK(precise_rank_k(r, 0, 1) == doctest::Approx(1.0 / 3));
  CHECK(precise_rank_k(r, 0, 2) == doctest::Approx(2.0 / 3));
  CHECK(precise_rank_k(r, 0, 3) == doctest::Approx(2.0 / 3));
  CHECK(precise_rank_k(r, 0, 4) == 1.0);
  CHECK(mean_precise_rank(r, 0) == doctest::Approx(7.0 / 3));
  CHECK(tail_sum_identity_holds(r, 0));

  CHECK(mean_precise_rank(report_with_positions({1, 3}), 0) == 2.0);
  CHECK(precise_rank_k(report_with_positions({1, 1, 1}), 0, 1) == 1.0);
  CHECK_THROWS_AS(mean_precise_rank(report_with_positions({1, 0}), 0), InputError);
}

TEST_CASE("tail-sum identity and pR cross-check on random positions") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> pos(1 + rng.uniform_index(40));
    for (auto& p : pos) p = 1 + rng.uniform_index(60);
    const RunReport r = report_with_positions(pos);
    CHECK(tail_sum_identity_holds(r, 0));
    const std::size_t kmax = *std::max_element(pos.begin(), pos.end());
    double tail = 1.0, prev = 0.0;
    for (std::size_t K = 1; K <= kmax; ++K) {
      const double pr = precise_rank_k(r, 0, K);
      const auto hits = std::count_if(pos.begin(), pos.end(), [K](std::size_t x) { return x <= K; });
      CHECK(pr == doctest::Approx(static_cast<double>(hits) / pos.size()));
      CHECK(pr >= prev);
      prev = pr;
      tail += 1.0 - pr;
    }
    CHECK(prev == 1.0);
    CHECK(mean_precise_rank(r, 0) == doctest::Approx(tail).epsilon(1e-12));
  }
}

TEST_CASE("average precision and junk removal") {
  const std::vector<std::int64_t> ids{5, 1, 5, 2};
  const std::vector<std::size_t> cams{1, 1, 2, 1};
  const auto s = ranking_stats(ids, cams, 5, 0);
  CHECK(s.valid);
  CHECK(s.first_match == 1);
  CHECK(s.average_precision == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
  CHECK(s.average_precision == doctest::Approx(0.8333).epsilon(1e-4));

  // Same identity on the query camera is junk and drops out of the ranking.
  const std::vector<std::int64_t> ids2{5, 1, 5};
  const std::vector<std::size_t> cams2{0, 1, 2};
  const auto j = ranking_stats(ids2, cams2, 5, 0);
  CHECK(j.first_match == 2);
  CHECK(j.average_precision == doctest::Approx(0.5));

  const std::vector<std::int64_t> none{1, 2};
  const std::vector<std::size_t> nc{1, 2};
  CHECK_FALSE(ranking_stats(none, nc, 5, 0).valid);

  const std::vector<std::size_t> ks{1, 5};
  std::vector<RankedList> lists{{5, 0, ids, cams}, {5, 0, none, nc}, {1, 0, {1, 1}, {1, 2}}};
  const auto cmc = cmc_map(lists, ks);
  CHECK(cmc.evaluated == 2);
  CHECK(cmc.skipped == 1);
  CHECK(cmc.rank_k.at(1) == 1.0);
  CHECK(cmc.map == doctest::Approx((0.8333333333 + 1.0) / 2).epsilon(1e-9));
}

TEST_CASE("mean AP over every permutation matches the textbook definition") {
  for (std::size_t N = 2; N <= 7; ++N) {
    for (std::size_t m = 1; m <= N; ++m) {
      std::vector<int> perm(N);
      std::iota(perm.begin(), perm.end(), 0);
      double want = 0, got = 0, r1 = 0;
      std::size_t count = 0;
      do {
        std::vector<bool> rel(N);
        std::vector<std::int64_t> ids(N);
        std::vector<std::size_t> cams(N, 1);
        for (std::size_t i = 0; i < N; ++i) {
          rel[i] = static_cast<std::size_t>(perm[i]) < m;
          ids[i] = rel[i] ? 0 : 100 + perm[i];
        }
        want += naive_ap(rel);
        const auto st = ranking_stats(ids, cams, 0, 0);
        got += st.average_precision;
        r1 += st.first_match == 1;
        ++count;
      } while (std::next_permutation(perm.begin(), perm.end()));
      CHECK(got / count == doctest::Approx(want / count).epsilon(1e-12));
      CHECK(r1 / count == doctest::Approx(static_cast<double>(m) / N).epsilon(1e-12));
    }
  }

  // Monte Carlo over shuffles converges to the enumerated value.
  const std::size_t N = 7, m = 3;
  std::vector<int> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  double exact = 0;
  std::size_t count = 0;
  do {
    std::vector<bool> rel(N);
    for (std::size_t i = 0; i < N; ++i) rel[i] = static_cast<std::size_t>(perm[i]) < m;
    exact += naive_ap(rel);
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  exact /= count;
  std::vector<RankedList> lists;
  for (std::uint64_t seed = 0; seed < 4000; ++seed) {
    Rng rng(seed);
    RankedList l{0, 0, {}, std::vector<std::size_t>(N, 1)};
    for (std::size_t i = 0; i < N; ++i) l.identities.push_back(i < m ? 0 : static_cast<std::int64_t>(i));
    rng.shuffle(l.identities);
    lists.push_back(l);
  }
  const std::vector<std::size_t> ks{1};
  CHECK(std::abs(cmc_map(lists, ks).map - exact) < 0.02);
}

TEST_CASE("retrieval metrics ignore how identities and cameras are labelled") {
  Rng rng(9);
  std::vector<RankedList> lists, relabelled;
  for (int q = 0; q < 30; ++q) {
    RankedList l;
    l.query_identity = static_cast<std::int64_t>(rng.uniform_index(5));
    l.query_camera = rng.uniform_index(3);
    for (int i = 0; i < 12; ++i) {
      l.identities.push_back(static_cast<std::int64_t>(rng.uniform_index(5)));
      l.cameras.push_back(rng.uniform_index(3));
    }
    lists.push_back(l);
    RankedList r = l;
    r.query_identity = 1000 - 7 * r.query_identity;
    r.query_camera = (r.query_camera + 1) % 3;
    for (auto& x : r.identities) x = 1000 - 7 * x;
    for (auto& c : r.cameras) c = (c + 1) % 3;
    relabelled.push_back(r);
  }
  const std::vector<std::size_t> ks{1, 5, 10};
  const auto a = cmc_map(lists, ks), b = cmc_map(relabelled, ks);
  CHECK(a.map == b.map);
  CHECK(a.rank_k == b.rank_k);
  CHECK(a.skipped == b.skipped);
}

TEST_CASE("protocol identities flag corrupted reports") {
  RunReport r = report_with_positions({1, 2, 3});
  r.bandwidth = 4;
  r.pairs.push_back({0, 0, 0, 0, 3, 2, 2});
  for (auto& x : r.queries) x.bandwidth = {2, 2};
  CHECK(check_protocol_identities(r).empty());
  r.pairs[0].tn = 3;
  CHECK_FALSE(check_protocol_identities(r).empty());
  r.pairs[0].tn = 2;
  r.queries[1].bandwidth = {3, 2};
  CHECK_FALSE(check_protocol_identities(r).empty());
}
