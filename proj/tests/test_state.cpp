#include <catch2/catch_amalgamated.hpp>

#include <stdexcept>
#include <vector>

#include "edg/state.hpp"

using edg::ClusterState;
using edg::Distance;

TEST_CASE("cluster states expose moments of the size distribution", "[state]") {
  const ClusterState state({0.5, 0.3, 0.2});
  CHECK(state.order() == 2);
  CHECK(state.volume() == Catch::Approx(1.0).epsilon(1e-15));
  CHECK(state.mass() == Catch::Approx(0.7).epsilon(1e-15));
  CHECK(state.second_moment() == Catch::Approx(1.1).epsilon(1e-15));
  CHECK(state.moment(0.0) == Catch::Approx(1.0).epsilon(1e-15));
  CHECK(state.moment(1.0) == Catch::Approx(0.7).epsilon(1e-15));
  CHECK(state[1] == 0.3);
}

TEST_CASE("cluster state construction validates the density vector", "[state]") {
  CHECK_THROWS_AS(ClusterState({0.5}), std::invalid_argument);         // order 0
  CHECK_THROWS_AS(ClusterState({0.5, -0.1}), std::invalid_argument);   // negative
  CHECK_THROWS_AS(ClusterState({0.5, std::nan("")}), std::invalid_argument);
}

TEST_CASE("tail sums accumulate from the top size down", "[state]") {
  // Entry j - 1 holds sum_{k >= j} c_k for occupied sizes j = 1..N.
  const ClusterState state({0.5, 0.3, 0.2});
  const auto tails = state.tail_sums();
  REQUIRE(tails.size() == 2);
  CHECK(tails[0] == Catch::Approx(0.5).epsilon(1e-15));
  CHECK(tails[1] == Catch::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("distances between states follow their definitions", "[state]") {
  const ClusterState c({0.5, 0.3, 0.2});
  const ClusterState d({0.4, 0.5, 0.1});

  // weak0: plain l1 gap sum_j |c_j - d_j| = 0.1 + 0.2 + 0.1.
  CHECK(edg::distance(c, d, Distance::weak0) == Catch::Approx(0.4).epsilon(1e-12));
  // strong1: sum (1 + j) |c_j - d_j| = 1*0.1 + 2*0.2 + 3*0.1.
  CHECK(edg::distance(c, d, Distance::strong1) == Catch::Approx(0.8).epsilon(1e-12));
  // tail sums: C = (0.5, 0.2), D = (0.6, 0.1).
  CHECK(edg::distance(c, d, Distance::tail_l1) == Catch::Approx(0.2).epsilon(1e-12));
  CHECK(edg::distance(c, d, Distance::tail_weak) == Catch::Approx(0.1).epsilon(1e-12));

  CHECK(edg::distance(c, c, Distance::weak0) == 0.0);
  const ClusterState other_order({0.5, 0.3, 0.1, 0.1});
  CHECK_THROWS_AS(edg::distance(c, other_order, Distance::weak0), std::invalid_argument);
}

TEST_CASE("distance is symmetric and satisfies the triangle inequality", "[state]") {
  const ClusterState a({0.5, 0.3, 0.2, 0.0});
  const ClusterState b({0.2, 0.4, 0.3, 0.1});
  const ClusterState c({0.1, 0.1, 0.5, 0.3});
  for (const Distance kind : {Distance::weak0, Distance::strong1, Distance::tail_l1}) {
    const double ab = edg::distance(a, b, kind);
    const double ba = edg::distance(b, a, kind);
    const double ac = edg::distance(a, c, kind);
    const double cb = edg::distance(c, b, kind);
    CHECK(ab == Catch::Approx(ba).epsilon(1e-15));
    CHECK(ab <= ac + cb + 1e-15);
  }
}

TEST_CASE("single-size initial states carry the requested moments", "[state]") {
  SECTION("mass below volume lands on the monomer") {
    const ClusterState s = edg::monomer_state(0.5, 1.0, 10);
    CHECK(s.volume() == Catch::Approx(1.0).epsilon(1e-15));
    CHECK(s.mass() == Catch::Approx(0.5).epsilon(1e-15));
    CHECK(s[1] == Catch::Approx(0.5).epsilon(1e-15));
    CHECK(s[0] == Catch::Approx(0.5).epsilon(1e-15));
  }
  SECTION("dense mass moves to the smallest feasible size") {
    const ClusterState s = edg::monomer_state(2.5, 1.0, 10);
    CHECK(s.volume() == Catch::Approx(1.0).epsilon(1e-15));
    CHECK(s.mass() == Catch::Approx(2.5).epsilon(1e-15));
    CHECK(s[3] == Catch::Approx(2.5 / 3.0).epsilon(1e-15));
  }
  SECTION("zero mass concentrates on empty sites") {
    const ClusterState s = edg::monomer_state(0.0, 2.0, 4);
    CHECK(s.volume() == Catch::Approx(2.0).epsilon(1e-15));
    CHECK(s.mass() == 0.0);
  }
  SECTION("mass beyond the truncation order is rejected") {
    CHECK_THROWS_AS(edg::monomer_state(20.0, 1.0, 10), std::invalid_argument);
  }
}

TEST_CASE("geometric initial states hit the requested moments exactly", "[state]") {
  const ClusterState s = edg::geometric_state(0.7, 1.0, 0.5, 64);
  CHECK(s.volume() == Catch::Approx(1.0).epsilon(1e-13));
  CHECK(s.mass() == Catch::Approx(0.7).epsilon(1e-13));
  for (edg::index_t j = 2; j <= 20; ++j)
    CHECK(s[j] == Catch::Approx(0.5 * s[j - 1]).epsilon(1e-12));

  // Too much mass at this decay would need negative empty-site density: the
  // truncated shape at decay 0.5 carries mean size ~2, so mass 5 per unit
  // volume is unreachable.
  CHECK_THROWS_AS(edg::geometric_state(5.0, 1.0, 0.5, 64), std::invalid_argument);
}
