#include <doctest.h>

#include <atomic>
#include <cstdio>
#include <fstream>

#include "fev/config.hpp"
#include "fev/pipelines.hpp"

using namespace fev;

namespace {

std::string temp_dir() {
  static int counter = 0;
  std::string dir = "cfgtest-" + std::to_string(++counter);
  std::remove(dir.c_str());
  std::string cmd = "mkdir -p " + dir;
  REQUIRE(std::system(cmd.c_str()) == 0);
  return dir;
}

void write(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  REQUIRE(out.good());
  out << text;
}

}  // namespace

TEST_CASE("config parses key=value lines with comments") {
  auto cfg = parse_config("a = 1\n# comment\nb=two words  # trailing\n\nc = 3");
  CHECK(cfg.get("a") == "1");
  CHECK(cfg.get("b") == "two words");
  CHECK(cfg.get_int("c", 0) == 3);
  CHECK(cfg.get("missing", "fallback") == "fallback");
  CHECK_THROWS(cfg.get("missing"));
}

TEST_CASE("config typed accessors reject malformed values") {
  auto cfg = parse_config("x = notanumber\nflag = maybe");
  CHECK_THROWS(cfg.get_double("x", 0.0));
  CHECK_THROWS(cfg.get_int("x", 0));
  CHECK_THROWS(cfg.get_bool("flag", false));
  CHECK(parse_config("flag = true").get_bool("flag", false));
  CHECK_FALSE(parse_config("flag = 0").get_bool("flag", true));
}

TEST_CASE("config list values split on commas") {
  auto cfg = parse_config("ms = alpha, beta ,gamma");
  CHECK(cfg.get_list("ms", {}) == std::vector<std::string>{"alpha", "beta", "gamma"});
  CHECK(cfg.get_list("none", {"d"}) == std::vector<std::string>{"d"});
}

TEST_CASE("config includes pull in files relative to the including file") {
  auto dir = temp_dir();
  write(dir + "/base.cfg", "shared = base\noverridden = base");
  write(dir + "/main.cfg", "include base.cfg\noverridden = main");
  auto cfg = load_config(dir + "/main.cfg");
  CHECK(cfg.get("shared") == "base");
  CHECK(cfg.get("overridden") == "main");
  CHECK_THROWS(load_config(dir + "/missing.cfg"));
  write(dir + "/loop.cfg", "include loop.cfg");
  CHECK_THROWS(load_config(dir + "/loop.cfg"));
}

TEST_CASE("unknown keys are rejected with their names") {
  auto cfg = parse_config("good = 1\ntypo = 2");
  CHECK_NOTHROW(validate_keys(cfg, {"good", "typo"}));
  try {
    validate_keys(cfg, {"good"});
    FAIL("expected throw");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("typo") != std::string::npos);
  }
}

TEST_CASE("fnv1a matches published test vectors") {
  CHECK(fnv1a("") == 14695981039346656037ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("config hash ignores assignment order, tracks content") {
  auto a = parse_config("x = 1\ny = 2");
  auto b = parse_config("y = 2\nx = 1");
  auto c = parse_config("x = 1\ny = 3");
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a) != config_hash(c));
  CHECK(hash_hex(0x1234).size() == 16);
  CHECK(hash_hex(0x1234) == "0000000000001234");
}

TEST_CASE("parallel_for covers every index and propagates errors") {
  std::vector<std::atomic<int>> hits(257);
  parallel_for(hits.size(), 8, [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(
      parallel_for(16, 4, [&](std::size_t i) { if (i == 7) throw std::runtime_error("boom"); }),
      std::runtime_error);
}
