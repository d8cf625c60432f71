#include "omog/params_io.hpp"

#include "omog/binio.hpp"

#include <algorithm>
#include <cmath>

namespace omog {

namespace {
constexpr char kParamsMagic[8] = {'O', 'M', 'O', 'G', 'P', 'A', 'R', 'M'};
}

void save_params_file(const std::filesystem::path& path,
                      const std::vector<TensorRecord>& records) {
  BinWriter w(path);
  w.magic(kParamsMagic);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const TensorRecord& rec : records) {
    w.u16(static_cast<std::uint16_t>(rec.name.size()));
    w.bytes(rec.name.data(), rec.name.size());
    w.u32(static_cast<std::uint32_t>(rec.dims.size()));
    std::size_t total = 1;
    for (std::uint32_t dim : rec.dims) {
      w.u32(dim);
      total *= dim;
    }
    if (total != rec.data.size()) {
      throw io_error(path.string() + ": tensor '" + rec.name + "' dims disagree with payload");
    }
    w.floats(rec.data.data(), rec.data.size());
  }
  w.close();
}

std::vector<TensorRecord> load_params_file(const std::filesystem::path& path) {
  BinReader r(path);
  r.magic(kParamsMagic);
  const std::uint32_t count = r.u32();
  std::vector<TensorRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord rec;
    const std::uint16_t name_len = r.u16();
    if (name_len == 0 || name_len > 256) {
      r.fail("tensor name length " + std::to_string(name_len) + " out of range");
    }
    rec.name.resize(name_len);
    r.bytes(rec.name.data(), name_len);
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 2) {
      r.fail("tensor '" + rec.name + "' has unsupported rank " + std::to_string(rank));
    }
    std::size_t total = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      rec.dims.push_back(r.u32());
      total *= rec.dims.back();
    }
    rec.data.resize(total);
    r.floats(rec.data.data(), total);
    for (std::size_t j = 0; j < rec.data.size(); ++j) {
      if (!std::isfinite(rec.data[j])) {
        r.fail("tensor '" + rec.name + "' contains a non-finite value at flat index " +
               std::to_string(j));
      }
    }
    records.push_back(std::move(rec));
  }
  r.expect_eof();
  return records;
}

template <typename P>
void params_from_records(P& p, const std::vector<TensorRecord>& records,
                         const std::string& context) {
  std::size_t idx = 0;
  visit_tensors(p, [&](const char* name, auto& t) {
    if (idx >= records.size()) {
      throw io_error(context + ": missing tensor '" + std::string(name) + "'");
    }
    const TensorRecord& rec = records[idx++];
    if (rec.name != name) {
      throw io_error(context + ": expected tensor '" + std::string(name) + "', found '" +
                     rec.name + "'");
    }
    using Tensor = std::decay_t<decltype(t)>;
    bool shape_ok;
    if constexpr (Tensor::ColsAtCompileTime == 1) {
      shape_ok = rec.dims.size() == 1 &&
                 rec.dims[0] == static_cast<std::uint32_t>(t.size());
    } else {
      shape_ok = rec.dims.size() == 2 &&
                 rec.dims[0] == static_cast<std::uint32_t>(t.rows()) &&
                 rec.dims[1] == static_cast<std::uint32_t>(t.cols());
    }
    if (!shape_ok) {
      throw io_error(context + ": tensor '" + rec.name + "' has unexpected shape");
    }
    std::copy(rec.data.begin(), rec.data.end(), t.data());
  });
  if (idx != records.size()) {
    throw io_error(context + ": " + std::to_string(records.size() - idx) +
                   " unexpected trailing tensor(s)");
  }
}

template void params_from_records<SourceParams>(SourceParams&,
                                                const std::vector<TensorRecord>&,
                                                const std::string&);
template void params_from_records<ScoringParams>(ScoringParams&,
                                                 const std::vector<TensorRecord>&,
                                                 const std::string&);

void save_source_params(const std::filesystem::path& path, const SourceParams& p) {
  save_params_file(path, records_from_params(p));
}

void save_scoring_params(const std::filesystem::path& path, const ScoringParams& p) {
  save_params_file(path, records_from_params(p));
}

SourceParams load_source_params(const std::filesystem::path& path, std::int64_t d,
                                std::int64_t alpha, std::int64_t d_ff) {
  SourceParams p = init_source_params<float>(d, alpha, d_ff, 0);
  params_from_records(p, load_params_file(path), path.string());
  return p;
}

ScoringParams load_scoring_params(const std::filesystem::path& path, std::int64_t d,
                                  std::int64_t alpha, std::int64_t d_h) {
  ScoringParams p = init_scoring_params<float>(d, alpha, d_h, 0);
  params_from_records(p, load_params_file(path), path.string());
  return p;
}

}  // namespace omog
