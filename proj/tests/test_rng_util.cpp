#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "lmdiag/rng.hpp"
#include "lmdiag/util.hpp"

namespace fs = std::filesystem;
using namespace lmdiag;

TEST_CASE("fnv1a matches the published 64-bit test vectors") {
  CHECK(util::fnv1a(std::string("")) == 0xcbf29ce484222325ull);
  CHECK(util::fnv1a(std::string("a")) == 0xaf63dc4c8601ec8cull);
  CHECK(util::fnv1a(std::string("foobar")) == 0x85944171f73967e8ull);
}

TEST_CASE("fnv1a chains across calls") {
  auto h = util::fnv1a(std::string("foo"));
  CHECK(util::fnv1a(std::string("bar"), h) == util::fnv1a(std::string("foobar")));
}

TEST_CASE("hex64 is zero-padded lowercase") {
  CHECK(util::hex64(0) == "0000000000000000");
  CHECK(util::hex64(0xdeadbeefull) == "00000000deadbeef");
  CHECK(util::hex64(0xffffffffffffffffull) == "ffffffffffffffff");
}

TEST_CASE("fmt_double round-trips exactly") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.123456789, -0.0, 2e17}) {
    CHECK(std::stod(util::fmt_double(v)) == v);
  }
  CHECK(util::fmt_double(0.5) == "0.5");
}

TEST_CASE("streams with equal seeds agree, unequal seeds diverge") {
  rng::stream a(7), b(7), c(8);
  bool all_eq = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    auto x = a.next_u64();
    all_eq = all_eq && (x == b.next_u64());
    any_diff = any_diff || (x != c.next_u64());
  }
  CHECK(all_eq);
  CHECK(any_diff);
}

TEST_CASE("substreams are independent of draw order") {
  auto s1 = rng::stream::substream(42, 1);
  auto s3 = rng::stream::substream(42, 3);
  double first_of_3 = s3.uniform01();

  // Recreate substream 3 after exercising substream 1 heavily.
  for (int i = 0; i < 1000; ++i) s1.uniform01();
  auto s3_again = rng::stream::substream(42, 3);
  CHECK(s3_again.uniform01() == first_of_3);

  auto other = rng::stream::substream(43, 3);
  CHECK(other.uniform01() != first_of_3);
}

TEST_CASE("uniform01 stays inside [0, 1) and bounded respects its range") {
  rng::stream r(11);
  for (int i = 0; i < 2000; ++i) {
    double u = r.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    auto v = r.bounded(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);  // all residues reached over 2000 draws
}

TEST_CASE("uniform_int covers its inclusive range") {
  rng::stream r(5);
  std::set<int> seen;
  for (int i = 0; i < 1000; ++i) {
    int v = r.uniform_int(-2, 2);
    CHECK(v >= -2);
    CHECK(v <= 2);
    seen.insert(v);
  }
  CHECK(seen.size() == 5);
}

TEST_CASE("normal draws have roughly the requested moments") {
  rng::stream r(13);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double x = r.normal(2.0, 3.0);
    sum += x;
    sq += x * x;
  }
  double m = sum / n;
  double sd = std::sqrt(sq / n - m * m);
  CHECK(std::abs(m - 2.0) < 0.1);
  CHECK(std::abs(sd - 3.0) < 0.1);
}

TEST_CASE("shuffle permutes without loss and sample_without_replacement is distinct") {
  rng::stream r(3);
  std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
  auto sorted = v;
  r.shuffle(v);
  auto resorted = v;
  std::sort(resorted.begin(), resorted.end());
  CHECK(resorted == sorted);

  auto picks = r.sample_without_replacement(10, 4);
  std::set<std::size_t> uniq(picks.begin(), picks.end());
  CHECK(uniq.size() == 4);
  for (auto p : picks) CHECK(p < 10);
}

TEST_CASE("csv_writer quotes per RFC 4180") {
  util::csv_writer w;
  w.comment("config=abc");
  w.row({"plain", "has,comma", "has\"quote", "has\nnewline"});
  const std::string& s = w.str();
  CHECK(s == "# config=abc\r\nplain,\"has,comma\",\"has\"\"quote\",\"has\nnewline\"\r\n");
}

TEST_CASE("csv_field renders absent and non-finite values as empty") {
  CHECK(util::csv_field(std::optional<double>{}) == "");
  CHECK(util::csv_field(std::optional<double>{1.5}) == "1.5");
  CHECK(util::csv_field(std::nan("")) == "");
}

TEST_CASE("bundle_writer commits atomically") {
  fs::path base = fs::temp_directory_path() / "lmdiag_test_bundle";
  fs::remove_all(base);
  fs::create_directories(base);

  SUBCASE("nested files land under the target") {
    util::bundle_writer b;
    b.add("top.txt", "hello");
    b.add("sub/dir/leaf.csv", "a,b\r\n");
    b.commit(base / "out");
    CHECK(util::slurp(base / "out" / "top.txt") == "hello");
    CHECK(util::slurp(base / "out" / "sub" / "dir" / "leaf.csv") == "a,b\r\n");
    // No temp staging directory left behind.
    int entries = 0;
    for (auto& e : fs::directory_iterator(base)) {
      (void)e;
      ++entries;
    }
    CHECK(entries == 1);
  }

  SUBCASE("refuses to clobber a non-empty target") {
    fs::create_directories(base / "busy");
    util::spit(base / "busy" / "existing.txt", "x");
    util::bundle_writer b;
    b.add("f.txt", "y");
    CHECK_THROWS_AS(b.commit(base / "busy"), lmdiag::error);
    CHECK(util::slurp(base / "busy" / "existing.txt") == "x");
  }

  fs::remove_all(base);
}
