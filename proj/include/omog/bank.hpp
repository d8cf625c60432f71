#pragma once

#include "omog/dataset.hpp"
#include "omog/nn.hpp"
#include "omog/pretrain.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace omog {

struct BankEntryMeta {
  std::string name;
  std::int64_t d = 0;
  std::int64_t alpha = 0;
  std::int64_t d_ff = 0;
  std::int64_t d_h = 0;
  std::uint64_t seed = 0;
  std::int64_t created_unix_ms = 0;
};

// Everything persisted for one trained domain: the frozen source block, its
// scoring MLP and the domain centroid in embedding space.
struct BankEntry {
  BankEntryMeta meta;
  SourceParams source;
  ScoringParams scoring;
  VecF centroid;
};

struct BankProblem {
  std::string entry;
  std::string detail;
};

// Directory-of-directories store. Each entry owns
//   <dir>/<name>/{entry.json, source.params, scoring.params, centroid.bin}
// Writers take an advisory flock on <dir>/.lock; additions land via a temp
// directory + rename so a crashed writer never leaves a half-entry visible.
class ModelBank {
 public:
  // Opens an existing bank directory, or creates it when create_if_missing.
  explicit ModelBank(std::filesystem::path dir, bool create_if_missing = false);

  const std::filesystem::path& dir() const { return dir_; }

  // Entry names in lexicographic order; this is the iteration order every
  // consumer (fusion, eval) relies on.
  std::vector<std::string> list() const;
  bool contains(const std::string& name) const;

  BankEntry load(const std::string& name) const;
  std::vector<BankEntry> load_all() const;

  void add(const BankEntry& entry, bool overwrite = false);
  void remove(const std::string& name);

  // Structural check of every entry (magics, shapes vs entry.json, finite
  // tensors). Returns the problems found; empty means healthy.
  std::vector<BankProblem> verify() const;

 private:
  std::filesystem::path dir_;
};

// Full training pipeline for one graph: propagate, pretrain the source block,
// compute the centroid, then fit the scoring MLP against it.
BankEntry train_entry(const std::string& name, const GraphDataset& ds,
                      const TrainConfig& cfg, std::vector<EpochLog>* source_log = nullptr,
                      std::vector<EpochLog>* scoring_log = nullptr,
                      const HopStack* stack = nullptr);

bool valid_entry_name(const std::string& name);

}  // namespace omog
