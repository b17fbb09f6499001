#include <doctest.h>

#include <cstdio>
#include <stdexcept>

#include "ecopinn/config.hpp"
#include "ecopinn/textio.hpp"

using namespace ecopinn;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content)
      : path("/tmp/ecopinn_config_" + name) {
    write_file(path, content);
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("config: file parsing skips comments and blanks, trims whitespace") {
  TempFile f("parse.txt", "# header\n\n  rows=8  \ntrips=800 # inline comment\nname=grid a\n");
  auto kv = KvConfig::load_file(f.path);
  CHECK(kv.get_int("rows", 0) == 8);
  CHECK(kv.get_int("trips", 0) == 800);
  CHECK(kv.get_str("name", "") == "grid a");
  CHECK_FALSE(kv.has("header"));
}

TEST_CASE("config: malformed line and typed getters") {
  TempFile f("bad.txt", "just_a_word\n");
  CHECK_THROWS_AS(KvConfig::load_file(f.path), std::invalid_argument);

  KvConfig kv;
  kv.set("lr", "0.001");
  kv.set("flag", "true");
  kv.set("text", "abc");
  CHECK(kv.get_double("lr", 0) == 0.001);
  CHECK(kv.get_bool("flag", false));
  CHECK(kv.get_bool("missing", true));
  CHECK_THROWS_AS(kv.get_bool("text", false), std::invalid_argument);
  CHECK_THROWS_AS(kv.get_double("text", 0), std::invalid_argument);
  CHECK(kv.get_int("missing", 7) == 7);
}

TEST_CASE("config: restrict_to rejects unknown keys") {
  KvConfig kv;
  kv.set("rows", "8");
  kv.set("colz", "8");
  CHECK_THROWS_AS(kv.restrict_to({"rows", "cols"}), std::invalid_argument);
  kv = KvConfig{};
  kv.set("rows", "8");
  CHECK_NOTHROW(kv.restrict_to({"rows", "cols"}));
}

TEST_CASE("config: canonical form is sorted and hash is stable") {
  KvConfig a, b;
  a.set("b", "2");
  a.set("a", "1");
  b.set("a", "1");
  b.set("b", "2");
  CHECK(a.canonical() == "a=1\nb=2\n");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  // pinned so run-directory names stay stable across builds
  CHECK(a.hash() == KvConfig::load_file(TempFile("h.txt", "a=1\nb=2\n").path).hash());
  b.set("b", "3");
  CHECK(a.hash() != b.hash());
}
