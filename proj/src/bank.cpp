#include "omog/bank.hpp"

#include "omog/binio.hpp"
#include "omog/params_io.hpp"
#include "omog/propagate.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

namespace omog {

using nlohmann::json;

namespace {

constexpr char kCentroidMagic[8] = {'O', 'M', 'O', 'G', 'C', 'N', 'T', 'R'};

// Advisory exclusive lock held for the duration of a mutation. Readers do not
// lock; the rename-into-place protocol keeps them consistent.
class BankLock {
 public:
  explicit BankLock(const std::filesystem::path& dir) {
    const std::string path = (dir / ".lock").string();
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw io_error(path + ": cannot open lock file");
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw io_error(path + ": flock failed");
    }
  }
  ~BankLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  BankLock(const BankLock&) = delete;
  BankLock& operator=(const BankLock&) = delete;

 private:
  int fd_ = -1;
};

void save_centroid(const std::filesystem::path& path, const VecF& c) {
  BinWriter w(path);
  w.magic(kCentroidMagic);
  w.u32(static_cast<std::uint32_t>(c.size()));
  w.floats(c.data(), static_cast<std::size_t>(c.size()));
  w.close();
}

VecF load_centroid(const std::filesystem::path& path) {
  BinReader r(path);
  r.magic(kCentroidMagic);
  const std::uint32_t d = r.u32();
  VecF c(d);
  r.floats(c.data(), d);
  r.expect_eof();
  for (std::uint32_t i = 0; i < d; ++i) {
    if (!std::isfinite(c(i))) {
      r.fail("non-finite centroid component " + std::to_string(i));
    }
  }
  return c;
}

BankEntryMeta read_meta(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error(path.string() + ": cannot open");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw io_error(path.string() + ": " + e.what());
  }
  BankEntryMeta m;
  try {
    m.name = j.at("name").get<std::string>();
    m.d = j.at("d").get<std::int64_t>();
    m.alpha = j.at("alpha").get<std::int64_t>();
    m.d_ff = j.at("d_ff").get<std::int64_t>();
    m.d_h = j.at("d_h").get<std::int64_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.created_unix_ms = j.value("created_unix_ms", std::int64_t{0});
  } catch (const json::exception& e) {
    throw io_error(path.string() + ": " + e.what());
  }
  if (m.d <= 0 || m.alpha < 0 || m.d_ff <= 0 || m.d_h <= 0) {
    throw io_error(path.string() + ": non-positive model dimensions");
  }
  return m;
}

void write_meta(const std::filesystem::path& path, const BankEntryMeta& m) {
  json j{{"name", m.name}, {"d", m.d},     {"alpha", m.alpha},
         {"d_ff", m.d_ff}, {"d_h", m.d_h}, {"seed", m.seed},
         {"created_unix_ms", m.created_unix_ms}};
  std::ofstream out(path);
  if (!out) throw io_error(path.string() + ": cannot open for writing");
  out << j.dump(2) << "\n";
  if (!out) throw io_error(path.string() + ": write failed");
}

}  // namespace

bool valid_entry_name(const std::string& name) {
  if (name.empty() || name.size() > 128 || name.front() == '.') return false;
  return std::all_of(name.begin(), name.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.';
  });
}

ModelBank::ModelBank(std::filesystem::path dir, bool create_if_missing)
    : dir_(std::move(dir)) {
  if (!std::filesystem::exists(dir_)) {
    if (!create_if_missing) {
      throw io_error(dir_.string() + ": bank directory does not exist");
    }
    std::filesystem::create_directories(dir_);
  } else if (!std::filesystem::is_directory(dir_)) {
    throw io_error(dir_.string() + ": not a directory");
  }
}

std::vector<std::string> ModelBank::list() const {
  std::vector<std::string> names;
  for (const auto& it : std::filesystem::directory_iterator(dir_)) {
    if (!it.is_directory()) continue;
    const std::string name = it.path().filename().string();
    if (valid_entry_name(name)) names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  return names;
}

bool ModelBank::contains(const std::string& name) const {
  return valid_entry_name(name) && std::filesystem::is_directory(dir_ / name) &&
         std::filesystem::exists(dir_ / name / "entry.json");
}

BankEntry ModelBank::load(const std::string& name) const {
  if (!contains(name)) {
    throw io_error(dir_.string() + ": no bank entry named '" + name + "'");
  }
  const std::filesystem::path edir = dir_ / name;
  BankEntry e;
  e.meta = read_meta(edir / "entry.json");
  if (e.meta.name != name) {
    throw io_error((edir / "entry.json").string() + ": name field '" + e.meta.name +
                   "' does not match directory name");
  }
  e.source = load_source_params(edir / "source.params", e.meta.d, e.meta.alpha, e.meta.d_ff);
  e.scoring = load_scoring_params(edir / "scoring.params", e.meta.d, e.meta.alpha, e.meta.d_h);
  e.centroid = load_centroid(edir / "centroid.bin");
  if (e.centroid.size() != e.meta.d) {
    throw io_error((edir / "centroid.bin").string() + ": dimension " +
                   std::to_string(e.centroid.size()) + " does not match entry d=" +
                   std::to_string(e.meta.d));
  }
  return e;
}

std::vector<BankEntry> ModelBank::load_all() const {
  std::vector<BankEntry> out;
  for (const std::string& name : list()) out.push_back(load(name));
  // Fusion averages tensors across entries, so a bank only makes sense when
  // every entry agrees on (d, alpha).
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].meta.d != out[0].meta.d || out[i].meta.alpha != out[0].meta.alpha) {
      throw io_error(dir_.string() + ": entries '" + out[0].meta.name + "' (d=" +
                     std::to_string(out[0].meta.d) + ", alpha=" +
                     std::to_string(out[0].meta.alpha) + ") and '" + out[i].meta.name +
                     "' (d=" + std::to_string(out[i].meta.d) + ", alpha=" +
                     std::to_string(out[i].meta.alpha) + ") are inconsistent");
    }
  }
  return out;
}

void ModelBank::add(const BankEntry& entry, bool overwrite) {
  if (!valid_entry_name(entry.meta.name)) {
    throw std::invalid_argument("bank entry name '" + entry.meta.name +
                                "' is not a valid identifier");
  }
  if (entry.centroid.size() != entry.meta.d || entry.source.d != entry.meta.d ||
      entry.scoring.d != entry.meta.d || entry.source.alpha != entry.meta.alpha ||
      entry.scoring.alpha != entry.meta.alpha) {
    throw std::invalid_argument("bank entry '" + entry.meta.name +
                                "' has inconsistent dimensions");
  }
  BankLock lock(dir_);
  const std::filesystem::path final_dir = dir_ / entry.meta.name;
  if (std::filesystem::exists(final_dir) && !overwrite) {
    throw io_error(final_dir.string() + ": entry already exists (pass overwrite to replace)");
  }
  for (const std::string& other : list()) {
    if (other == entry.meta.name) continue;
    const BankEntryMeta m = read_meta(dir_ / other / "entry.json");
    if (m.d != entry.meta.d || m.alpha != entry.meta.alpha) {
      throw std::invalid_argument("bank entry '" + entry.meta.name + "' (d=" +
                                  std::to_string(entry.meta.d) + ", alpha=" +
                                  std::to_string(entry.meta.alpha) +
                                  ") does not match existing entry '" + other + "'");
    }
  }
  const std::filesystem::path tmp =
      dir_ / (".tmp-" + entry.meta.name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(tmp);
  std::filesystem::create_directories(tmp);
  write_meta(tmp / "entry.json", entry.meta);
  save_source_params(tmp / "source.params", entry.source);
  save_scoring_params(tmp / "scoring.params", entry.scoring);
  save_centroid(tmp / "centroid.bin", entry.centroid);
  std::filesystem::remove_all(final_dir);
  std::filesystem::rename(tmp, final_dir);
}

void ModelBank::remove(const std::string& name) {
  BankLock lock(dir_);
  const std::filesystem::path edir = dir_ / name;
  if (!std::filesystem::exists(edir)) {
    throw io_error(edir.string() + ": no such entry");
  }
  std::filesystem::remove_all(edir);
}

std::vector<BankProblem> ModelBank::verify() const {
  std::vector<BankProblem> problems;
  std::int64_t ref_d = -1, ref_alpha = -1;
  std::string ref_name;
  for (const std::string& name : list()) {
    try {
      const BankEntry e = load(name);
      if (!tensors_finite(e.source) || !tensors_finite(e.scoring)) {
        problems.push_back({name, "non-finite parameter tensor"});
      }
      if (ref_d < 0) {
        ref_d = e.meta.d;
        ref_alpha = e.meta.alpha;
        ref_name = name;
      } else if (e.meta.d != ref_d || e.meta.alpha != ref_alpha) {
        problems.push_back({name, "(d, alpha) differs from entry '" + ref_name + "'"});
      }
    } catch (const std::exception& ex) {
      problems.push_back({name, ex.what()});
    }
  }
  return problems;
}

BankEntry train_entry(const std::string& name, const GraphDataset& ds,
                      const TrainConfig& cfg, std::vector<EpochLog>* source_log,
                      std::vector<EpochLog>* scoring_log, const HopStack* stack) {
  if (!valid_entry_name(name)) {
    throw std::invalid_argument("bank entry name '" + name + "' is not a valid identifier");
  }
  cfg.validate();
  HopStack local;
  if (!stack) {
    const NormalizedAdjacency adj = normalized_adjacency(ds);
    local = sgc_propagate(adj, ds.features, cfg.alpha);
    stack = &local;
  }
  BankEntry e;
  e.meta.name = name;
  e.meta.d = ds.d;
  e.meta.alpha = cfg.alpha;
  e.meta.d_ff = cfg.resolve_d_ff(ds.d);
  e.meta.d_h = cfg.resolve_d_h(ds.d);
  e.meta.seed = cfg.seed;
  e.meta.created_unix_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::system_clock::now().time_since_epoch())
                               .count();
  e.source = pretrain_source_on_stack(*stack, e.meta.d_ff, cfg, source_log);
  e.centroid = compute_centroid(e.source, *stack);
  e.scoring = train_scoring_on_stack(*stack, e.source, e.centroid, e.meta.d_h, cfg,
                                     scoring_log);
  return e;
}

}  // namespace omog
