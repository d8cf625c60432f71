#include "omog/dataset.hpp"

#include "omog/binio.hpp"
#include "omog/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>

namespace omog {

using nlohmann::json;

namespace {

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error(path.string() + ": cannot open for reading");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw io_error(path.string() + ": " + e.what());
  }
  return j;
}

void check_node_ids(const std::vector<std::int64_t>& ids, std::int64_t n,
                    const std::string& where) {
  for (auto id : ids) {
    if (id < 0 || id >= n) {
      throw io_error(where + ": node id " + std::to_string(id) +
                     " out of range [0," + std::to_string(n) + ")");
    }
  }
}

}  // namespace

Csr build_csr(std::int64_t n,
              const std::vector<std::pair<std::int32_t, std::int32_t>>& edges) {
  Csr csr;
  csr.indptr.assign(static_cast<std::size_t>(n) + 1, 0);
  for (const auto& [u, v] : edges) {
    ++csr.indptr[static_cast<std::size_t>(u) + 1];
    ++csr.indptr[static_cast<std::size_t>(v) + 1];
  }
  for (std::int64_t i = 0; i < n; ++i) csr.indptr[i + 1] += csr.indptr[i];
  csr.indices.resize(static_cast<std::size_t>(csr.indptr[n]));
  std::vector<std::int64_t> cursor(csr.indptr.begin(), csr.indptr.end() - 1);
  for (const auto& [u, v] : edges) {
    csr.indices[static_cast<std::size_t>(cursor[u]++)] = v;
    csr.indices[static_cast<std::size_t>(cursor[v]++)] = u;
  }
  for (std::int64_t i = 0; i < n; ++i) {
    std::sort(csr.indices.begin() + csr.indptr[i], csr.indices.begin() + csr.indptr[i + 1]);
  }
  return csr;
}

GraphDataset load_dataset(const std::filesystem::path& dir) {
  GraphDataset ds;

  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(meta_path)) {
    throw io_error(meta_path.string() + ": missing file");
  }
  const json meta = read_json_file(meta_path);
  ds.name = meta.at("name").get<std::string>();
  ds.n = meta.at("n").get<std::int64_t>();
  ds.d = meta.at("d").get<std::int64_t>();
  ds.num_classes = meta.at("num_classes").get<std::int64_t>();
  if (ds.n < 0 || ds.d <= 0 || ds.num_classes < 0) {
    throw io_error(meta_path.string() + ": invalid n/d/num_classes");
  }

  // features.bin
  {
    const auto path = dir / "features.bin";
    if (!std::filesystem::exists(path)) throw io_error(path.string() + ": missing file");
    BinReader r(path);
    r.magic("OMOGFEAT");
    const std::uint32_t n = r.u32();
    const std::uint32_t d = r.u32();
    if (n != static_cast<std::uint32_t>(ds.n) || d != static_cast<std::uint32_t>(ds.d)) {
      r.fail("header (" + std::to_string(n) + "," + std::to_string(d) +
             ") does not match meta.json (" + std::to_string(ds.n) + "," +
             std::to_string(ds.d) + ")");
    }
    ds.features.resize(ds.n, ds.d);
    r.floats(ds.features.data(), static_cast<std::size_t>(ds.n * ds.d));
    r.expect_eof();
    for (std::int64_t i = 0; i < ds.n; ++i) {
      for (std::int64_t j = 0; j < ds.d; ++j) {
        if (!std::isfinite(ds.features(i, j))) {
          throw io_error(path.string() + ": non-finite feature at row " +
                         std::to_string(i) + " col " + std::to_string(j) +
                         " (offset " + std::to_string(16 + 4 * (i * ds.d + j)) + ")");
        }
      }
    }
  }

  // edges.bin
  {
    const auto path = dir / "edges.bin";
    if (!std::filesystem::exists(path)) throw io_error(path.string() + ": missing file");
    BinReader r(path);
    r.magic("OMOGEDGE");
    const std::uint32_t m = r.u32();
    r.u32();  // pad
    std::set<std::pair<std::int32_t, std::int32_t>> seen;
    std::int64_t duplicates = 0, self_loops = 0;
    for (std::uint32_t e = 0; e < m; ++e) {
      const std::size_t off = 16 + 8u * e;
      const std::uint32_t src = r.u32();
      const std::uint32_t dst = r.u32();
      if (src >= ds.n || dst >= ds.n) {
        throw io_error(path.string() + ": edge " + std::to_string(e) + " (offset " +
                       std::to_string(off) + "): endpoint " +
                       std::to_string(std::max(src, dst)) + " out of range [0," +
                       std::to_string(ds.n) + ")");
      }
      if (src == dst) {
        ++self_loops;  // self-loops are added analytically later, never stored
        continue;
      }
      const auto lo = static_cast<std::int32_t>(std::min(src, dst));
      const auto hi = static_cast<std::int32_t>(std::max(src, dst));
      if (!seen.insert({lo, hi}).second) {
        ++duplicates;
        continue;
      }
      ds.edges.emplace_back(lo, hi);
    }
    r.expect_eof();
    if (duplicates > 0) {
      std::cerr << "warning: " << path.string() << ": dropped " << duplicates
                << " duplicate edge(s)\n";
    }
    if (self_loops > 0) {
      std::cerr << "warning: " << path.string() << ": dropped " << self_loops
                << " self-loop(s)\n";
    }
  }
  ds.adjacency = build_csr(ds.n, ds.edges);

  // labels.bin (optional)
  if (const auto path = dir / "labels.bin"; std::filesystem::exists(path)) {
    BinReader r(path);
    r.magic("OMOGLABL");
    const std::uint32_t n = r.u32();
    r.u32();  // pad
    if (n != static_cast<std::uint32_t>(ds.n)) {
      r.fail("label count " + std::to_string(n) + " does not match n=" + std::to_string(ds.n));
    }
    ds.labels.resize(static_cast<std::size_t>(ds.n));
    for (std::int64_t i = 0; i < ds.n; ++i) {
      const std::int32_t y = r.i32();
      if (y < -1 || y >= ds.num_classes) {
        throw io_error(path.string() + ": label " + std::to_string(y) + " for node " +
                       std::to_string(i) + " (offset " + std::to_string(16 + 4 * i) +
                       ") out of range [-1," + std::to_string(ds.num_classes) + ")");
      }
      ds.labels[static_cast<std::size_t>(i)] = y;
    }
    r.expect_eof();
  }

  // label_embeddings.bin (optional)
  if (const auto path = dir / "label_embeddings.bin"; std::filesystem::exists(path)) {
    BinReader r(path);
    r.magic("OMOGLEMB");
    const std::uint32_t c = r.u32();
    const std::uint32_t d = r.u32();
    if (c != static_cast<std::uint32_t>(ds.num_classes) ||
        d != static_cast<std::uint32_t>(ds.d)) {
      r.fail("header (" + std::to_string(c) + "," + std::to_string(d) +
             ") does not match meta.json (" + std::to_string(ds.num_classes) + "," +
             std::to_string(ds.d) + ")");
    }
    ds.label_embeddings.resize(ds.num_classes, ds.d);
    r.floats(ds.label_embeddings.data(), static_cast<std::size_t>(ds.num_classes * ds.d));
    r.expect_eof();
    if (!ds.label_embeddings.allFinite()) {
      throw io_error(path.string() + ": non-finite label embedding");
    }
  }

  // splits.json (optional)
  if (const auto path = dir / "splits.json"; std::filesystem::exists(path)) {
    const json j = read_json_file(path);
    if (j.contains("train")) ds.splits.train = j["train"].get<std::vector<std::int64_t>>();
    if (j.contains("test")) ds.splits.test = j["test"].get<std::vector<std::int64_t>>();
    if (j.contains("support")) {
      for (const auto& [key, val] : j["support"].items()) {
        const std::int64_t cls = std::stoll(key);
        if (cls < 0 || cls >= ds.num_classes) {
          throw io_error(path.string() + ": support class " + key + " out of range");
        }
        ds.splits.support[cls] = val.get<std::vector<std::int64_t>>();
        check_node_ids(ds.splits.support[cls], ds.n, path.string() + " support");
      }
    }
    check_node_ids(ds.splits.train, ds.n, path.string() + " train");
    check_node_ids(ds.splits.test, ds.n, path.string() + " test");
  }

  return ds;
}

void save_dataset(const GraphDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  {
    json meta = {{"name", ds.name}, {"n", ds.n}, {"d", ds.d}, {"num_classes", ds.num_classes}};
    std::ofstream out(dir / "meta.json");
    out << meta.dump(2) << "\n";
  }
  {
    BinWriter w(dir / "features.bin");
    w.magic("OMOGFEAT");
    w.u32(static_cast<std::uint32_t>(ds.n));
    w.u32(static_cast<std::uint32_t>(ds.d));
    w.floats(ds.features.data(), static_cast<std::size_t>(ds.n * ds.d));
  }
  {
    BinWriter w(dir / "edges.bin");
    w.magic("OMOGEDGE");
    w.u32(static_cast<std::uint32_t>(ds.edges.size()));
    w.u32(0);
    for (const auto& [u, v] : ds.edges) {
      w.u32(static_cast<std::uint32_t>(u));
      w.u32(static_cast<std::uint32_t>(v));
    }
  }
  if (!ds.labels.empty()) {
    BinWriter w(dir / "labels.bin");
    w.magic("OMOGLABL");
    w.u32(static_cast<std::uint32_t>(ds.n));
    w.u32(0);
    for (std::int32_t y : ds.labels) w.i32(y);
  }
  if (ds.label_embeddings.rows() > 0) {
    BinWriter w(dir / "label_embeddings.bin");
    w.magic("OMOGLEMB");
    w.u32(static_cast<std::uint32_t>(ds.label_embeddings.rows()));
    w.u32(static_cast<std::uint32_t>(ds.label_embeddings.cols()));
    w.floats(ds.label_embeddings.data(),
             static_cast<std::size_t>(ds.label_embeddings.size()));
  }
  if (!ds.splits.empty()) {
    json j;
    if (!ds.splits.train.empty()) j["train"] = ds.splits.train;
    if (!ds.splits.test.empty()) j["test"] = ds.splits.test;
    if (!ds.splits.support.empty()) {
      json sup = json::object();
      for (const auto& [cls, ids] : ds.splits.support) sup[std::to_string(cls)] = ids;
      j["support"] = sup;
    }
    std::ofstream out(dir / "splits.json");
    out << j.dump(2) << "\n";
  }
}

GraphDataset generate_synthetic_domain(const SyntheticDomainSpec& spec) {
  if (spec.num_classes > spec.n) {
    throw std::invalid_argument("synthetic spec: num_classes " +
                                std::to_string(spec.num_classes) + " > n " +
                                std::to_string(spec.n));
  }
  if (spec.n <= 0 || spec.communities <= 0 || spec.num_classes <= 0) {
    throw std::invalid_argument("synthetic spec: n, communities, num_classes must be positive");
  }
  if (spec.intra_prob < 0.0 || spec.intra_prob > 1.0 || spec.inter_prob < 0.0 ||
      spec.inter_prob > 1.0) {
    throw std::invalid_argument("synthetic spec: edge probabilities must lie in [0,1]");
  }
  if (spec.feature_noise < 0.0) {
    throw std::invalid_argument("synthetic spec: feature noise must be nonnegative");
  }
  if (spec.class_centers.rows() != spec.num_classes || spec.class_centers.cols() <= 0) {
    throw std::invalid_argument("synthetic spec: class_centers must be num_classes x d");
  }

  const std::int64_t n = spec.n;
  const std::int64_t d = spec.class_centers.cols();

  GraphDataset ds;
  ds.name = spec.name;
  ds.n = n;
  ds.d = d;
  ds.num_classes = spec.num_classes;

  // Balanced contiguous community blocks; class id = community mod num_classes.
  std::vector<std::int32_t> community(static_cast<std::size_t>(n));
  ds.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    community[i] = static_cast<std::int32_t>(i * spec.communities / n);
    ds.labels[i] = static_cast<std::int32_t>(community[i] % spec.num_classes);
  }

  Rng edge_rng(derive_seed(spec.seed, 0));
  for (std::int32_t i = 0; i < n; ++i) {
    for (std::int32_t j = i + 1; j < n; ++j) {
      const double p = community[i] == community[j] ? spec.intra_prob : spec.inter_prob;
      if (p > 0.0 && edge_rng.bernoulli(p)) ds.edges.emplace_back(i, j);
    }
  }
  ds.adjacency = build_csr(n, ds.edges);

  Rng feat_rng(derive_seed(spec.seed, 1));
  ds.features.resize(n, d);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto center = spec.class_centers.row(ds.labels[i]);
    for (std::int64_t j = 0; j < d; ++j) {
      const double noise =
          spec.feature_noise > 0.0 ? feat_rng.normal(0.0, spec.feature_noise) : 0.0;
      ds.features(i, j) = center(j) + static_cast<float>(noise);
    }
  }

  ds.label_embeddings = spec.class_centers;
  return ds;
}

}  // namespace omog
