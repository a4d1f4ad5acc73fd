#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bvm/rng.hpp"

#include <cmath>

using namespace bvm;

TEST_CASE("same seed reproduces the stream") {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds decorrelate") {
  Rng a(1), b(2);
  int equal = 0;
  for (int i = 0; i < 1000; ++i) equal += (a.next_u64() == b.next_u64());
  CHECK(equal == 0);
}

TEST_CASE("uniform stays in [0, 1)") {
  Rng rng(7);
  for (int i = 0; i < 100000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("normal moments") {
  Rng rng(11);
  const int m = 200000;
  double s1 = 0, s2 = 0;
  for (int i = 0; i < m; ++i) {
    double z = rng.normal();
    s1 += z;
    s2 += z * z;
  }
  // 5 sigma on the mean of m standard normals.
  CHECK(std::abs(s1 / m) < 5.0 / std::sqrt(static_cast<double>(m)));
  CHECK(std::abs(s2 / m - 1.0) < 5.0 * std::sqrt(2.0 / m));
}

TEST_CASE("ball draws stay inside and fill the radius") {
  Rng rng(13);
  double max_norm = 0.0;
  for (int i = 0; i < 5000; ++i) {
    Eigen::VectorXd u = rng.ball(3, 2.5);
    double n = u.norm();
    CHECK(n <= 2.5 + 1e-12);
    max_norm = std::max(max_norm, n);
  }
  CHECK(max_norm > 2.4);
}

TEST_CASE("unit sphere draws have unit norm") {
  Rng rng(17);
  for (int i = 0; i < 1000; ++i)
    CHECK(rng.unit_sphere(4).norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("categorical matches weights at 5 sigma") {
  Rng rng(19);
  Eigen::VectorXd w(3);
  w << 0.2, 0.3, 0.5;
  const int m = 100000;
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(3);
  for (int i = 0; i < m; ++i) counts(rng.categorical(w)) += 1.0;
  for (int k = 0; k < 3; ++k) {
    double se = std::sqrt(w(k) * (1.0 - w(k)) / m);
    CHECK(std::abs(counts(k) / m - w(k)) < 5.0 * se);
  }
}

TEST_CASE("mix_seed separates labels and seeds") {
  CHECK(mix_seed(1, "a") != mix_seed(1, "b"));
  CHECK(mix_seed(1, "a") != mix_seed(2, "a"));
  CHECK(mix_seed(1, "a") == mix_seed(1, "a"));
}

TEST_CASE("fnv1a frozen reference value") {
  // Standard FNV-1a test vector.
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}
