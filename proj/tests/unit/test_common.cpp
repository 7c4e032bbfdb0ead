#include "mine/common.hpp"
#include "mine/io.hpp"
#include "mine/rng.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace mine;

TEST_CASE("rng: same key and counter give the same sequence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a() == b());
}

TEST_CASE("rng: streams are order-independent") {
  Rng s3 = Rng::stream(7, 3);
  const auto first = s3();
  for (int i = 0; i < 10; ++i) Rng::stream(7, static_cast<std::uint64_t>(i))();
  CHECK(Rng::stream(7, 3)() == first);
  CHECK(Rng::stream(7, 4)() != first);
}

TEST_CASE("rng: below stays in range and hits every value") {
  Rng r(1);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = r.below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("rng: normal moments") {
  Rng r(3);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("errors carry their kind and index") {
  try {
    throw IndexedError(ErrorKind::TheoremCheck, 17, "gap negative");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TheoremCheck);
    CHECK(std::string(e.what()).find("17") != std::string::npos);
  }
  CHECK_THROWS_AS(require(false, ErrorKind::Config, "x"), Error);
}

TEST_CASE("io: sha256 of a known string") {
  CHECK(io::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("io: csv round trip is lossless") {
  const auto dir = test::scratch_dir("io_csv");
  Rng r(5);
  const RowMatrix m = test::random_matrix(7, 3, r);
  io::write_csv(dir / "m.csv", {"a", "b", "c"}, m);
  const auto t = io::read_csv(dir / "m.csv");
  CHECK(t.header == std::vector<std::string>{"a", "b", "c"});
  CHECK(t.values == m);
}

TEST_CASE("io: json matrix round trip is lossless") {
  Rng r(6);
  const RowMatrix m = test::random_matrix(4, 5, r);
  CHECK(io::matrix_from_json(io::to_json(m)) == m);
  const Vector v = test::random_vector(6, r);
  CHECK(io::vector_from_json(io::to_json(v)) == v);
  CHECK(std::stod(io::format_double(0.1)) == 0.1);
}
