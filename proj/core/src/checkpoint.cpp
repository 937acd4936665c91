#include "moesumm/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "moesumm/run_config.hpp"

namespace moesumm {

namespace {

constexpr char kMagic[4] = {'M', 'O', 'E', 'S'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated file");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& tensors) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(nt.name.size()));
    out.insert(out.end(), nt.name.begin(), nt.name.end());
    const auto& shape = nt.tensor.shape();
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) put_le<std::uint64_t>(out, d);
    for (double v : nt.tensor.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

std::vector<NamedValues> decode_tensors(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("checkpoint: bad magic bytes");
  }
  Reader r(bytes);
  r.get_string(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedValues> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedValues nv;
    nv.name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t k = 0; k < rank; ++k) nv.shape.push_back(r.get<std::uint64_t>());
    const std::size_t n = shape_size(nv.shape);
    nv.values.resize(n);
    for (auto& v : nv.values) v = std::bit_cast<double>(r.get<std::uint64_t>());
    out.push_back(std::move(nv));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes after the last tensor");
  return out;
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".json";
}

void save_checkpoint(const std::filesystem::path& path, const TransformerParams& params,
                     const nlohmann::json& provenance, const Vocabulary* vocab) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_tensors(named_parameters(params));
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(path.string() + ": cannot write");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  nlohmann::json side{{"format_version", kCheckpointVersion},
                      {"config", model_config_to_json(params.config)},
                      {"provenance", provenance}};
  if (vocab) side["vocab"] = vocab->tokens();
  std::ofstream out(sidecar_path(path), std::ios::trunc);
  if (!out) throw CheckpointError(sidecar_path(path).string() + ": cannot write");
  out << side.dump(2) << '\n';
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  nlohmann::json side;
  {
    std::ifstream in(sidecar_path(path));
    if (!in) throw CheckpointError(sidecar_path(path).string() + ": cannot open sidecar");
    try {
      in >> side;
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(sidecar_path(path).string() + ": " + e.what());
    }
  }
  if (!side.contains("config")) throw CheckpointError("checkpoint sidecar: missing \"config\"");
  CheckpointData data;
  try {
    const ModelConfig config = model_config_from_json(side["config"], ModelConfig{}, "config");
    config.validate();
    data.params = init_params(config, config.seed);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint sidecar: ") + e.what());
  }
  if (side.contains("provenance")) data.provenance = side["provenance"];
  if (side.contains("vocab")) data.vocab = Vocabulary(side["vocab"].get<std::vector<std::string>>());

  const auto stored = decode_tensors(read_bytes(path));
  std::map<std::string, const NamedValues*> by_name;
  for (const auto& nv : stored) {
    if (!by_name.emplace(nv.name, &nv).second) {
      throw CheckpointError("checkpoint: tensor '" + nv.name + "' stored twice");
    }
  }
  auto expected = named_parameters(data.params);
  if (expected.size() != stored.size()) {
    throw CheckpointError("checkpoint: holds " + std::to_string(stored.size()) +
                          " tensors but the sidecar config needs " + std::to_string(expected.size()));
  }
  for (auto& nt : expected) {
    const auto it = by_name.find(nt.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint: missing tensor '" + nt.name + "'");
    if (it->second->shape != nt.tensor.shape()) {
      throw CheckpointError("checkpoint: tensor '" + nt.name + "' has shape " +
                            shape_to_string(it->second->shape) + ", config expects " +
                            shape_to_string(nt.tensor.shape()));
    }
    auto dst = nt.tensor.mutable_values();
    std::copy(it->second->values.begin(), it->second->values.end(), dst.begin());
  }
  if (data.vocab && data.vocab->size() > data.params.config.vocab_size) {
    throw CheckpointError("checkpoint sidecar: vocabulary larger than vocab_size");
  }
  return data;
}

std::string file_digest(const std::filesystem::path& path) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : read_bytes(path)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace moesumm
