#include "cig/envs.hpp"

#include "doctest.h"

#include <cmath>
#include <deque>
#include <random>
#include <set>

using namespace cig;

namespace {

EnvConfig open_room() {
  EnvConfig c;
  c.kind = EnvKind::kMultiroom;
  c.size = 5;
  c.rooms = 1;
  return c;
}

EnvConfig noisy_chain(std::uint64_t seed) {
  EnvConfig c;
  c.kind = EnvKind::kChain;
  c.size = 10;
  c.noisy_tv = true;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("gridworld: move right from the origin") {
  Environment env(open_room());
  CHECK(env.cell() == 0);
  const auto r = env.step(0);
  CHECK(env.cell() == 1);
  CHECK(r.features(1) == 1.0);
  CHECK(r.features.sum() == 1.0);
  CHECK(env.next_cell(0, 1) == 0);  // wall at the left edge
  CHECK(env.next_cell(0, 2) == 5);  // down one row
}

TEST_CASE("noisy chain: trigger keeps position and resamples distractors") {
  Environment env(noisy_chain(1));
  env.step(1);
  const Eigen::VectorXd before = env.features();
  CHECK(before.tail(4).cwiseAbs().maxCoeff() == 0.0);
  const auto r = env.step(env.trigger_action());
  CHECK(env.cell() == 1);
  CHECK(r.features.head(10) == before.head(10));
  CHECK(r.features.tail(4).cwiseAbs().maxCoeff() <= 1.0);
  CHECK(r.features.tail(4).cwiseAbs().minCoeff() > 0.0);
  const Eigen::VectorXd distract = r.features.tail(4);
  env.step(1);
  CHECK(env.features().tail(4) == distract);  // only the trigger changes them
}

TEST_CASE("seeded determinism and Noisy-TV separability") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(0, 2);
  std::vector<Index> actions(40);
  for (auto& a : actions) a = pick(rng);

  auto replay = [&](std::uint64_t seed) {
    Environment env(noisy_chain(seed));
    std::vector<Eigen::VectorXd> traj{env.features()};
    for (Index a : actions) traj.push_back(env.step(a).features);
    return traj;
  };
  const auto a = replay(5), b = replay(5), c = replay(6);
  bool distractors_differ = false;
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t] == b[t]);
    CHECK(a[t].head(10) == c[t].head(10));
    distractors_differ |= a[t].tail(4) != c[t].tail(4);
  }
  CHECK(distractors_differ);
}

TEST_CASE("clean variants have no distractor dims; drop is a no-op") {
  EnvConfig c = noisy_chain(0);
  c.noisy_tv = false;
  Environment env(c);
  CHECK(env.feature_dim() == 10);
  env.step(1);
  env.step(env.trigger_action());
  CHECK(env.cell() == 1);
}

TEST_CASE("episodes truncate at the horizon") {
  EnvConfig c = noisy_chain(0);
  c.horizon = 3;
  Environment env(c);
  CHECK_FALSE(env.step(1).done);
  CHECK_FALSE(env.step(1).done);
  CHECK(env.step(1).done);
  CHECK_THROWS_AS(env.step(1), ValidationError);
  env.reset();
  CHECK(env.cell() == 0);
  CHECK(env.coverage_record().visited_count() == 4);  // record persists
  CHECK(EnvConfig{}.effective_horizon() == 50);
  CHECK(open_room().effective_horizon() == 100);
}

TEST_CASE("invalid actions and configs are rejected") {
  Environment env(noisy_chain(0));
  CHECK_THROWS_AS(env.step(3), ValidationError);
  CHECK_THROWS_AS(env.step(-1), ValidationError);
  CHECK_THROWS_AS(parse_env_kind("maze"), ValidationError);
  EnvConfig bad;
  bad.size = 1;
  CHECK_THROWS_AS(Environment{bad}, ValidationError);
}

TEST_CASE("coverage: fresh, full, and a BFS walk of the open room") {
  Environment env(open_room());
  CHECK(env.reachable_count() == 25);
  CHECK(coverage(env.coverage_record()) == doctest::Approx(1.0 / 25.0));

  // Drive the agent along shortest paths to every cell in BFS order.
  EnvConfig c = open_room();
  c.horizon = 1000;
  Environment walker(c);
  std::vector<Index> order;
  {
    std::vector<bool> seen(25, false);
    std::deque<Index> q{0};
    seen[0] = true;
    while (!q.empty()) {
      const Index u = q.front();
      q.pop_front();
      order.push_back(u);
      for (Index a = 0; a < 4; ++a) {
        const Index v = walker.next_cell(u, a);
        if (!seen[std::size_t(v)]) {
          seen[std::size_t(v)] = true;
          q.push_back(v);
        }
      }
    }
  }
  Index steps = 0;
  for (Index target : order) {
    while (walker.cell() != target) {
      const Index dx = target % 5 - walker.cell() % 5, dy = target / 5 - walker.cell() / 5;
      walker.step(dx > 0 ? 0 : dx < 0 ? 1 : dy > 0 ? 2 : 3);
      ++steps;
    }
  }
  CHECK(coverage(walker.coverage_record()) == 1.0);
  CHECK(steps <= 25 * 4);
}

TEST_CASE("multiroom: BFS count matches the layout and rooms are indexed") {
  EnvConfig c;
  c.kind = EnvKind::kMultiroom;
  c.size = 4;
  c.rooms = 3;
  Environment env(c);
  CHECK(env.reachable_count() == 3 * 16 + 2);  // rooms plus two doorways
  CHECK(env.room_of(0) == 0);
  CHECK(env.room_of(env.cell_count() - 1) == 2);
  // Walls block horizontal movement away from the doorway row.
  CHECK(env.next_cell(3, 0) == 3);
}

TEST_CASE("corridor exposes stay actions that leave the cell unchanged") {
  EnvConfig c;
  c.kind = EnvKind::kCorridor;
  c.size = 12;
  c.stay_actions = 3;
  Environment env(c);
  CHECK(env.action_count() == 6);
  for (Index a = 2; a < 6; ++a) CHECK(env.next_cell(4, a) == 4);
  CHECK(env.next_cell(11, 1) == 11);
  CHECK(env.reachable_count() == 12);
}

TEST_CASE("coverage record invariants") {
  CoverageRecord rec(3, 5);
  rec.visit(4);
  rec.visit(4);
  CHECK(rec.visited_count() == 1);
  rec.visit(0);
  rec.visit(1);
  CHECK(coverage(rec) == 1.0);
  CHECK_THROWS_AS(rec.visit(2), ValidationError);
  CHECK_THROWS_AS(rec.visit(7), ValidationError);
}

TEST_CASE("episode entropy") {
  CHECK(episode_entropy({5, 0, 0}) == 0.0);
  CHECK(episode_entropy({3, 3, 3, 3}) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(episode_entropy({2, 1, 1}) ==
        doctest::Approx(std::log(4.0) - 0.5 * std::log(2.0)).epsilon(1e-15));
  CHECK(episode_entropy({2, 1, 1}) == doctest::Approx(1.0397).epsilon(1e-4));
  CHECK_THROWS_AS(episode_entropy({0, 0}), ValidationError);
}

TEST_CASE("episode counts follow the agent") {
  Environment env(noisy_chain(0));
  env.step(1);
  env.step(0);
  env.step(2);
  CHECK(env.episode_counts()[0] == 3);
  CHECK(env.episode_counts()[1] == 1);
}
