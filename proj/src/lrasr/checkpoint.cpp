#include "lrasr/checkpoint.hpp"

#include <cstring>
#include <iomanip>
#include <sstream>

namespace lrasr::nn {
namespace {

constexpr uint32_t kCheckpointVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw DataError("truncated checkpoint");
    }
  }
  const std::string& bytes_;
  size_t pos_ = 0;
};

}  // namespace

std::string digest_hex(const std::string& text) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << hash_string(text);
  return os.str();
}

std::string encode_checkpoint(const ParamStore<float>& store, const CheckpointMeta& meta) {
  nlohmann::json j;
  j["version"] = meta.version;
  j["groups"] = meta.groups;
  j["vocab_size"] = meta.vocab_size;
  j["config_digest"] = meta.config_digest;
  j["model_config"] = meta.model_config;
  std::string out = "LRCK";
  put_u32(out, kCheckpointVersion);
  put_str(out, j.dump());
  put_u32(out, static_cast<uint32_t>(store.size()));
  for (const auto& e : store.entries()) {
    put_str(out, e.name);
    put_str(out, std::string(group_name(e.group)));
    put_u32(out, 2);
    put_u32(out, static_cast<uint32_t>(e.value.rows()));
    put_u32(out, static_cast<uint32_t>(e.value.cols()));
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      uint32_t bits;
      const float v = e.value.data()[i];
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
  return out;
}

void save_checkpoint(const std::string& path, const ParamStore<float>& store,
                     const CheckpointMeta& meta) {
  write_text_file(path, encode_checkpoint(store, meta));
}

LoadedCheckpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "LRCK") != 0) {
    throw DataError("not a checkpoint file");
  }
  const std::string tail = bytes.substr(4);
  Reader rd(tail);
  const uint32_t version = rd.u32();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  LoadedCheckpoint out;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(rd.str());
    out.meta.version = j.at("version").get<int>();
    out.meta.groups = j.at("groups").get<std::vector<std::string>>();
    out.meta.vocab_size = j.at("vocab_size").get<int>();
    out.meta.config_digest = j.at("config_digest").get<std::string>();
    out.meta.model_config = j.value("model_config", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint metadata: ") + e.what());
  }
  const uint32_t count = rd.u32();
  for (uint32_t k = 0; k < count; ++k) {
    const std::string name = rd.str();
    const Group group = parse_group(rd.str());
    const uint32_t ndims = rd.u32();
    if (ndims != 2) {
      throw DataError("tensor " + name + " has unsupported rank " + std::to_string(ndims));
    }
    const uint32_t rows = rd.u32();
    const uint32_t cols = rd.u32();
    auto& m = out.store.add(name, group, static_cast<int>(rows), static_cast<int>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = rd.f32();
    }
  }
  if (!rd.done()) {
    throw DataError("trailing bytes in checkpoint");
  }
  return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_text_file(path));
}

void copy_compatible(const ParamStore<float>& src, ParamStore<float>& dst) {
  for (auto& e : dst.entries()) {
    if (!src.contains(e.name)) {
      throw DataError("donor checkpoint lacks tensor " + e.name);
    }
    const auto& s = src.get(e.name);
    if (s.rows() != e.value.rows() || s.cols() != e.value.cols()) {
      throw DataError("shape mismatch for tensor " + e.name + ": donor " +
                      std::to_string(s.rows()) + "x" + std::to_string(s.cols()) +
                      ", model " + std::to_string(e.value.rows()) + "x" +
                      std::to_string(e.value.cols()));
    }
  }
  for (int i = 0; i < dst.size(); ++i) {
    dst.entry(i).value = src.get(dst.entry(i).name);
  }
}

}  // namespace lrasr::nn
