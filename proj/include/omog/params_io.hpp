#pragma once

#include "omog/nn.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace omog {

// On-disk tensor container: 8-byte magic "OMOGPARM", u32 record count, then
// per record a u16 name length + name bytes, u32 rank, u32 dims[rank] and
// the row-major float32 payload. Little-endian throughout.
struct TensorRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

void save_params_file(const std::filesystem::path& path,
                      const std::vector<TensorRecord>& records);
std::vector<TensorRecord> load_params_file(const std::filesystem::path& path);

template <typename P>
std::vector<TensorRecord> records_from_params(const P& p) {
  std::vector<TensorRecord> out;
  visit_tensors(p, [&](const char* name, const auto& t) {
    TensorRecord rec;
    rec.name = name;
    using Tensor = std::decay_t<decltype(t)>;
    if constexpr (Tensor::ColsAtCompileTime == 1) {
      rec.dims = {static_cast<std::uint32_t>(t.size())};
    } else {
      rec.dims = {static_cast<std::uint32_t>(t.rows()), static_cast<std::uint32_t>(t.cols())};
    }
    rec.data.assign(t.data(), t.data() + t.size());
    out.push_back(std::move(rec));
  });
  return out;
}

// Fills a pre-shaped parameter struct; records must match the canonical
// tensor order, names and shapes exactly.
template <typename P>
void params_from_records(P& p, const std::vector<TensorRecord>& records,
                         const std::string& context);

void save_source_params(const std::filesystem::path& path, const SourceParams& p);
void save_scoring_params(const std::filesystem::path& path, const ScoringParams& p);
SourceParams load_source_params(const std::filesystem::path& path, std::int64_t d,
                                std::int64_t alpha, std::int64_t d_ff);
ScoringParams load_scoring_params(const std::filesystem::path& path, std::int64_t d,
                                  std::int64_t alpha, std::int64_t d_h);

}  // namespace omog
