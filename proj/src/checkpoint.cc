// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "convoifilter/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "convoifilter/errors.h"

namespace cvf {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'C', 'V', 'F', 'C', 'K', 'P', 'T', '\0'};

void put_u32(std::string* out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out->append(b, 4);
}

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::string name)
      : buf_(buf), name_(std::move(name)) {}

  void take(void* dst, std::size_t n) {
    if (pos_ + n > buf_.size()) throw FormatError(name_ + ": truncated checkpoint");
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  uint32_t u32() {
    uint32_t v;
    take(&v, 4);
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    if (n > buf_.size() - pos_) throw FormatError(name_ + ": truncated checkpoint");
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::vector<char>& buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint_file(const std::filesystem::path& path,
                           const CheckpointData& data) {
  std::string out(kMagic, sizeof(kMagic));
  put_u32(&out, kCheckpointVersion);
  const std::string cfg = data.config.dump();
  put_u32(&out, static_cast<uint32_t>(cfg.size()));
  out += cfg;
  put_u32(&out, static_cast<uint32_t>(data.tensors.size()));
  for (const auto& [name, m] : data.tensors) {
    put_u32(&out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(&out, 2);
    put_u32(&out, static_cast<uint32_t>(m.rows()));
    put_u32(&out, static_cast<uint32_t>(m.cols()));
    out.append(reinterpret_cast<const char*>(m.data()),
               static_cast<std::size_t>(m.size()) * sizeof(float));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

CheckpointData read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
  const std::string name = path.string();
  Reader r(buf, name);
  char magic[8];
  r.take(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError(name + ": bad magic");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError(name + ": unsupported checkpoint version " + std::to_string(version));
  CheckpointData data;
  try {
    data.config = nlohmann::ordered_json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(name + ": corrupt config block: " + e.what());
  }
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string tname = r.str();
    const uint32_t rank = r.u32();
    if (rank != 2) throw FormatError(name + ": tensor '" + tname + "' has rank != 2");
    const uint32_t rows = r.u32(), cols = r.u32();
    const uint64_t n = static_cast<uint64_t>(rows) * cols;
    if (n * sizeof(float) > buf.size()) throw FormatError(name + ": truncated checkpoint");
    MatrixF m(rows, cols);
    r.take(m.data(), n * sizeof(float));
    data.tensors.emplace_back(std::move(tname), std::move(m));
  }
  if (!r.done()) throw FormatError(name + ": trailing bytes after last tensor");
  return data;
}

void assign_tensors(const CheckpointData& data, const ParamRefs& params) {
  std::map<std::string, const MatrixF*> by_name;
  for (const auto& [n, m] : data.tensors) by_name[n] = &m;
  // Validate everything before touching any parameter.
  for (const Param* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks tensor '" + p->name + "'");
    if (it->second->rows() != p->value.rows() || it->second->cols() != p->value.cols())
      throw FormatError("checkpoint tensor '" + p->name + "' has the wrong shape");
  }
  for (Param* p : params) {
    p->value = *by_name[p->name];
    p->zero_grad();
  }
}

void append_tensors(CheckpointData& data, const std::vector<const Param*>& params) {
  for (const Param* p : params) data.tensors.emplace_back(p->name, p->value);
}

}  // namespace cvf
