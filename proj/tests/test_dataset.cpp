#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "omog/binio.hpp"
#include "omog/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

using namespace omog;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("omog-test-" + tag + "-" +
                                                  std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

GraphDataset tiny_dataset() {
  GraphDataset ds;
  ds.name = "tiny";
  ds.n = 5;
  ds.d = 3;
  ds.num_classes = 2;
  ds.features.resize(5, 3);
  ds.features << 1.f, 0.f, 0.5f,
                 0.f, 2.f, -1.f,
                 0.25f, 0.25f, 0.25f,
                 -1.f, 1.f, 0.f,
                 0.f, 0.f, 3.f;
  ds.edges = {{0, 1}, {0, 2}, {1, 3}, {2, 4}};
  ds.adjacency = build_csr(ds.n, ds.edges);
  ds.labels = {0, 1, 0, -1, 1};
  ds.label_embeddings.resize(2, 3);
  ds.label_embeddings << 1.f, 0.f, 0.f,
                         0.f, 1.f, 0.f;
  ds.splits.train = {0, 1};
  ds.splits.test = {2, 4};
  ds.splits.support[0] = {0};
  ds.splits.support[1] = {1};
  return ds;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("csr of a path graph") {
  const Csr csr = build_csr(4, {{0, 1}, {1, 2}, {2, 3}});
  CHECK(csr.num_nodes() == 4);
  CHECK(csr.num_arcs() == 6);  // both directions
  CHECK(csr.degree(0) == 1);
  CHECK(csr.degree(1) == 2);
  CHECK(csr.degree(2) == 2);
  CHECK(csr.degree(3) == 1);
  // Neighbor lists come out sorted.
  CHECK(csr.indices[csr.indptr[1]] == 0);
  CHECK(csr.indices[csr.indptr[1] + 1] == 2);
}

TEST_CASE("save/load round-trips every field") {
  const fs::path dir = temp_dir("roundtrip");
  const GraphDataset ds = tiny_dataset();
  save_dataset(ds, dir);
  const GraphDataset back = load_dataset(dir);

  CHECK(back.name == ds.name);
  CHECK(back.n == ds.n);
  CHECK(back.d == ds.d);
  CHECK(back.num_classes == ds.num_classes);
  CHECK(back.features == ds.features);  // float32 payload, so exact
  CHECK(back.edges == ds.edges);
  CHECK(back.labels == ds.labels);
  CHECK(back.label_embeddings == ds.label_embeddings);
  CHECK(back.splits.train == ds.splits.train);
  CHECK(back.splits.test == ds.splits.test);
  CHECK(back.splits.support == ds.splits.support);
  CHECK(back.adjacency.indptr == ds.adjacency.indptr);
  CHECK(back.adjacency.indices == ds.adjacency.indices);

  // Second save of the loaded copy reproduces the binary files byte for byte.
  const fs::path dir2 = temp_dir("roundtrip2");
  save_dataset(back, dir2);
  for (const char* f : {"features.bin", "edges.bin", "labels.bin", "label_embeddings.bin"}) {
    CHECK_MESSAGE(slurp(dir / f) == slurp(dir2 / f), f);
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("optional files really are optional") {
  const fs::path dir = temp_dir("optional");
  GraphDataset ds = tiny_dataset();
  ds.labels.clear();
  ds.label_embeddings.resize(0, 0);
  ds.splits = {};
  save_dataset(ds, dir);
  CHECK_FALSE(fs::exists(dir / "labels.bin"));
  CHECK_FALSE(fs::exists(dir / "splits.json"));
  const GraphDataset back = load_dataset(dir);
  CHECK_FALSE(back.has_labels());
  CHECK_FALSE(back.has_label_embeddings());
  CHECK(back.splits.empty());
  fs::remove_all(dir);
}

TEST_CASE("malformed files fail with file and offset context") {
  const fs::path dir = temp_dir("malformed");
  save_dataset(tiny_dataset(), dir);

  SUBCASE("truncated features payload") {
    fs::resize_file(dir / "features.bin", 16 + 4 * 7);  // header + 7 of 15 floats
    try {
      load_dataset(dir);
      FAIL("expected io_error");
    } catch (const io_error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("features.bin") != std::string::npos);
      CHECK(msg.find("offset") != std::string::npos);
    }
  }
  SUBCASE("wrong magic") {
    std::fstream f(dir / "edges.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.write("BADMAGIC", 8);
    f.close();
    CHECK_THROWS_AS(load_dataset(dir), io_error);
  }
  SUBCASE("edge endpoint out of range") {
    BinWriter w(dir / "edges.bin");
    w.magic("OMOGEDGE");
    w.u32(1);
    w.u32(0);
    w.u32(0);
    w.u32(99);  // n is 5
    w.close();
    try {
      load_dataset(dir);
      FAIL("expected io_error");
    } catch (const io_error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("edges.bin") != std::string::npos);
      CHECK(msg.find("99") != std::string::npos);
    }
  }
  SUBCASE("label out of class range") {
    BinWriter w(dir / "labels.bin");
    w.magic("OMOGLABL");
    w.u32(5);
    w.u32(0);
    for (std::int32_t y : {0, 1, 7, 0, 0}) w.i32(y);  // 7 >= num_classes
    w.close();
    CHECK_THROWS_AS(load_dataset(dir), io_error);
  }
  SUBCASE("trailing bytes rejected") {
    std::ofstream f(dir / "features.bin", std::ios::binary | std::ios::app);
    f.write("xx", 2);
    f.close();
    CHECK_THROWS_AS(load_dataset(dir), io_error);
  }
  SUBCASE("header disagrees with meta.json") {
    std::ofstream meta(dir / "meta.json");
    meta << R"({"name":"tiny","n":6,"d":3,"num_classes":2})";
    meta.close();
    CHECK_THROWS_AS(load_dataset(dir), io_error);
  }
  fs::remove_all(dir);
}

TEST_CASE("duplicate edges and self-loops are dropped on load") {
  const fs::path dir = temp_dir("dupes");
  save_dataset(tiny_dataset(), dir);
  {
    BinWriter w(dir / "edges.bin");
    w.magic("OMOGEDGE");
    w.u32(5);
    w.u32(0);
    const std::uint32_t raw[5][2] = {{0, 1}, {1, 0}, {0, 1}, {2, 2}, {3, 4}};
    for (const auto& e : raw) {
      w.u32(e[0]);
      w.u32(e[1]);
    }
    w.close();
  }
  const GraphDataset back = load_dataset(dir);
  const std::vector<std::pair<std::int32_t, std::int32_t>> want = {{0, 1}, {3, 4}};
  CHECK(back.edges == want);
  fs::remove_all(dir);
}

TEST_CASE("synthetic generation is a pure function of its inputs") {
  SyntheticDomainSpec spec;
  spec.seed = 42;
  spec.n = 60;
  spec.communities = 3;
  spec.num_classes = 3;
  spec.intra_prob = 0.3;
  spec.inter_prob = 0.02;
  spec.feature_noise = 0.5;
  spec.class_centers.resize(3, 4);
  spec.class_centers << 1.f, 0.f, 0.f, 0.f,
                        0.f, 1.f, 0.f, 0.f,
                        0.f, 0.f, 1.f, 0.f;

  const GraphDataset a = generate_synthetic_domain(spec);
  const GraphDataset b = generate_synthetic_domain(spec);
  CHECK(a.features == b.features);
  CHECK(a.edges == b.edges);
  CHECK(a.labels == b.labels);

  spec.seed = 43;
  const GraphDataset c = generate_synthetic_domain(spec);
  CHECK(a.edges != c.edges);

  // Labels follow community id mod class count; communities are contiguous
  // blocks, so node 0 and node n-1 land in the first and last community.
  CHECK(a.labels.front() == 0);
  CHECK(a.labels.back() == (spec.communities - 1) % spec.num_classes);
  CHECK(a.label_embeddings == spec.class_centers);
}

TEST_CASE("extreme block probabilities give exactly the block edges") {
  SyntheticDomainSpec spec;
  spec.seed = 7;
  spec.n = 12;
  spec.communities = 3;
  spec.num_classes = 3;
  spec.intra_prob = 1.0;
  spec.inter_prob = 0.0;
  spec.feature_noise = 0.0;
  spec.class_centers = MatF::Identity(3, 3);

  const GraphDataset ds = generate_synthetic_domain(spec);
  // Three communities of 4 nodes, each a clique: 3 * C(4,2) edges.
  CHECK(ds.edges.size() == 3 * 6);
  for (const auto& [u, v] : ds.edges) {
    CHECK(u / 4 == v / 4);
  }
  // Zero noise means features equal the class centers exactly.
  for (std::int64_t i = 0; i < ds.n; ++i) {
    CHECK(ds.features.row(i) == spec.class_centers.row(ds.labels[i]));
  }
}

TEST_CASE("synthetic spec validation") {
  SyntheticDomainSpec spec;
  spec.n = 10;
  spec.communities = 2;
  spec.num_classes = 2;
  spec.class_centers = MatF::Identity(2, 2);
  CHECK_NOTHROW(generate_synthetic_domain(spec));

  SUBCASE("more classes than nodes") {
    spec.num_classes = 11;
    spec.class_centers = MatF::Identity(11, 11);
    CHECK_THROWS_AS(generate_synthetic_domain(spec), std::invalid_argument);
  }
  SUBCASE("probability out of range") {
    spec.intra_prob = 1.5;
    CHECK_THROWS_AS(generate_synthetic_domain(spec), std::invalid_argument);
  }
  SUBCASE("center shape mismatch") {
    spec.class_centers = MatF::Identity(3, 2);
    CHECK_THROWS_AS(generate_synthetic_domain(spec), std::invalid_argument);
  }
}
