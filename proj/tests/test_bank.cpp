#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "omog/bank.hpp"
#include "omog/binio.hpp"

#include <filesystem>
#include <fstream>
#include <vector>

using namespace omog;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("omog-bank-" + tag + "-" +
                                                  std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

BankEntry make_entry(const std::string& name, std::uint64_t seed, std::int64_t d = 6,
                     std::int64_t alpha = 2) {
  BankEntry e;
  e.meta.name = name;
  e.meta.d = d;
  e.meta.alpha = alpha;
  e.meta.d_ff = 2 * d;
  e.meta.d_h = d;
  e.meta.seed = seed;
  e.meta.created_unix_ms = 1700000000000 + static_cast<std::int64_t>(seed);
  e.source = init_source_params<float>(d, alpha, 2 * d, derive_seed(seed, 0));
  e.scoring = init_scoring_params<float>(d, alpha, d, derive_seed(seed, 1));
  e.centroid.resize(d);
  Rng rng(derive_seed(seed, 2));
  for (std::int64_t j = 0; j < d; ++j) {
    e.centroid(j) = static_cast<float>(rng.normal(0.0, 1.0));
  }
  return e;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("opening a missing bank requires create_if_missing") {
  const fs::path dir = temp_dir("missing");
  CHECK_THROWS_AS(ModelBank{dir}, io_error);
  ModelBank bank(dir, /*create_if_missing=*/true);
  CHECK(bank.list().empty());
  CHECK(fs::is_directory(dir));
  fs::remove_all(dir);
}

TEST_CASE("add, list, load round-trip") {
  const fs::path dir = temp_dir("roundtrip");
  ModelBank bank(dir, true);

  const BankEntry zebra = make_entry("zebra", 1);
  const BankEntry apple = make_entry("apple", 2);
  bank.add(zebra);
  bank.add(apple);

  // Lexicographic regardless of insertion order.
  CHECK(bank.list() == std::vector<std::string>{"apple", "zebra"});
  CHECK(bank.contains("apple"));
  CHECK_FALSE(bank.contains("mango"));

  const BankEntry back = bank.load("zebra");
  CHECK(back.meta.name == "zebra");
  CHECK(back.meta.d == 6);
  CHECK(back.meta.alpha == 2);
  CHECK(back.meta.seed == 1);
  CHECK(back.meta.created_unix_ms == zebra.meta.created_unix_ms);
  CHECK(bitwise_equal(back.source, zebra.source));
  CHECK(bitwise_equal(back.scoring, zebra.scoring));
  CHECK(back.centroid == zebra.centroid);

  const auto all = bank.load_all();
  REQUIRE(all.size() == 2);
  CHECK(all[0].meta.name == "apple");
  CHECK(all[1].meta.name == "zebra");
  fs::remove_all(dir);
}

TEST_CASE("adding an existing entry is append-only unless overwritten") {
  const fs::path dir = temp_dir("collide");
  ModelBank bank(dir, true);
  bank.add(make_entry("only", 1));
  const auto before = slurp(dir / "only" / "source.params");

  CHECK_THROWS(bank.add(make_entry("only", 99)));
  CHECK(slurp(dir / "only" / "source.params") == before);  // untouched

  bank.add(make_entry("only", 99), /*overwrite=*/true);
  CHECK(slurp(dir / "only" / "source.params") != before);
  CHECK(bank.load("only").meta.seed == 99);
  fs::remove_all(dir);
}

TEST_CASE("adding never rewrites sibling entries") {
  const fs::path dir = temp_dir("siblings");
  ModelBank bank(dir, true);
  bank.add(make_entry("first", 1));
  const auto src = slurp(dir / "first" / "source.params");
  const auto scr = slurp(dir / "first" / "scoring.params");
  const auto cen = slurp(dir / "first" / "centroid.bin");
  const auto meta = slurp(dir / "first" / "entry.json");

  bank.add(make_entry("second", 2));
  bank.add(make_entry("third", 3));
  CHECK(slurp(dir / "first" / "source.params") == src);
  CHECK(slurp(dir / "first" / "scoring.params") == scr);
  CHECK(slurp(dir / "first" / "centroid.bin") == cen);
  CHECK(slurp(dir / "first" / "entry.json") == meta);
  fs::remove_all(dir);
}

TEST_CASE("bank enforces one embedding geometry") {
  const fs::path dir = temp_dir("geometry");
  ModelBank bank(dir, true);
  bank.add(make_entry("base", 1, 6, 2));
  CHECK_THROWS(bank.add(make_entry("wider", 2, 8, 2)));
  CHECK_THROWS(bank.add(make_entry("deeper", 3, 6, 4)));
  CHECK(bank.list() == std::vector<std::string>{"base"});

  // load_all refuses a bank whose directories were mixed behind its back.
  const fs::path other = temp_dir("geometry-other");
  ModelBank bank2(other, true);
  bank2.add(make_entry("alien", 4, 8, 2));
  fs::rename(other / "alien", dir / "alien");
  CHECK_THROWS_AS(bank.load_all(), io_error);
  fs::remove_all(dir);
  fs::remove_all(other);
}

TEST_CASE("entry names are restricted") {
  CHECK(valid_entry_name("cora"));
  CHECK(valid_entry_name("my-graph_2.v1"));
  CHECK_FALSE(valid_entry_name(""));
  CHECK_FALSE(valid_entry_name(".hidden"));
  CHECK_FALSE(valid_entry_name("a/b"));
  CHECK_FALSE(valid_entry_name("sp ace"));
  CHECK_FALSE(valid_entry_name(std::string(200, 'x')));

  const fs::path dir = temp_dir("names");
  ModelBank bank(dir, true);
  CHECK_THROWS(bank.add(make_entry("bad/name", 1)));
  CHECK_THROWS(bank.add(make_entry("", 1)));
  fs::remove_all(dir);
}

TEST_CASE("writers leave a lock file and no temp debris") {
  const fs::path dir = temp_dir("lock");
  ModelBank bank(dir, true);
  bank.add(make_entry("entry", 1));
  CHECK(fs::exists(dir / ".lock"));
  for (const auto& item : fs::directory_iterator(dir)) {
    const std::string name = item.path().filename().string();
    CHECK(name.rfind(".tmp-", 0) != 0);
  }
  // The lock file never shows up as an entry.
  CHECK(bank.list() == std::vector<std::string>{"entry"});
  fs::remove_all(dir);
}

TEST_CASE("remove deletes the entry directory") {
  const fs::path dir = temp_dir("remove");
  ModelBank bank(dir, true);
  bank.add(make_entry("keep", 1));
  bank.add(make_entry("drop", 2));
  bank.remove("drop");
  CHECK(bank.list() == std::vector<std::string>{"keep"});
  CHECK_FALSE(fs::exists(dir / "drop"));
  CHECK_THROWS(bank.remove("drop"));
  fs::remove_all(dir);
}

TEST_CASE("verify flags corrupt and inconsistent entries") {
  const fs::path dir = temp_dir("verify");
  ModelBank bank(dir, true);
  bank.add(make_entry("good", 1));
  bank.add(make_entry("torn", 2));
  CHECK(bank.verify().empty());

  SUBCASE("truncated params") {
    fs::resize_file(dir / "torn" / "source.params",
                    fs::file_size(dir / "torn" / "source.params") / 2);
    const auto problems = bank.verify();
    REQUIRE(problems.size() == 1);
    CHECK(problems[0].entry == "torn");
  }
  SUBCASE("missing centroid") {
    fs::remove(dir / "torn" / "centroid.bin");
    const auto problems = bank.verify();
    REQUIRE(problems.size() == 1);
    CHECK(problems[0].entry == "torn");
  }
  SUBCASE("metadata name mismatch") {
    fs::rename(dir / "torn", dir / "renamed");
    const auto problems = bank.verify();
    REQUIRE(problems.size() == 1);
    CHECK(problems[0].entry == "renamed");
  }
  fs::remove_all(dir);
}

TEST_CASE("train_entry output matches its configuration and reproduces") {
  SyntheticDomainSpec spec;
  spec.seed = 10;
  spec.n = 50;
  spec.communities = 2;
  spec.num_classes = 2;
  spec.intra_prob = 0.2;
  spec.inter_prob = 0.02;
  spec.feature_noise = 0.3;
  spec.class_centers.resize(2, 6);
  spec.class_centers << 1.f, 0.f, 0.f, 1.f, 0.f, 0.f,
                        0.f, 1.f, 0.f, 0.f, 1.f, 0.f;
  const GraphDataset ds = generate_synthetic_domain(spec);

  TrainConfig cfg;
  cfg.alpha = 2;
  cfg.batch = 16;
  cfg.epochs = 2;
  cfg.lr = 1e-3;
  cfg.seed = 3;

  std::vector<EpochLog> slog, clog;
  const BankEntry e = train_entry("synthetic", ds, cfg, &slog, &clog);
  CHECK(e.meta.name == "synthetic");
  CHECK(e.meta.d == 6);
  CHECK(e.meta.alpha == 2);
  CHECK(e.meta.d_ff == 12);
  CHECK(e.meta.d_h == 6);
  CHECK(e.meta.seed == 3);
  CHECK(e.meta.created_unix_ms > 0);
  CHECK(e.centroid.size() == 6);
  CHECK(slog.size() == 2);
  CHECK(clog.size() == 2);

  const BankEntry e2 = train_entry("synthetic", ds, cfg);
  CHECK(bitwise_equal(e.source, e2.source));
  CHECK(bitwise_equal(e.scoring, e2.scoring));
  CHECK(e.centroid == e2.centroid);

  // Round-trip through a bank preserves the trained tensors bitwise.
  const fs::path dir = temp_dir("trained");
  ModelBank bank(dir, true);
  bank.add(e);
  const BankEntry back = bank.load("synthetic");
  CHECK(bitwise_equal(back.source, e.source));
  CHECK(bitwise_equal(back.scoring, e.scoring));
  CHECK(back.centroid == e.centroid);
  fs::remove_all(dir);
}
