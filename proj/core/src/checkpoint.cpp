#include "tabcpt/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "tabcpt/digest.hpp"
#include "tabcpt/error.hpp"

namespace tabcpt {

namespace {

constexpr std::array<char, 8> kMagic = {'T', 'A', 'B', 'C', 'P', 'T', 'C', 'K'};
// magic + version + 7 config words + stage + steps + anchor digest + seed + n_params
constexpr std::size_t kHeaderSize = 8 + 4 + 7 * 8 + 1 + 8 + 8 + 8 + 8;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t value) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t value) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    std::uint64_t value = 0;
    for (int i = 0; i < 8; ++i) value |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return value;
  }
  std::uint32_t u32() {
    std::uint32_t value = 0;
    for (int i = 0; i < 4; ++i) value |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return value;
  }
  std::uint8_t u8() { return bytes_[pos_++]; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t digest_bytes(std::span<const std::uint8_t> bytes) {
  return Digest64().update(std::as_bytes(bytes)).value();
}

}  // namespace

const char* to_string(Stage stage) { return stage == Stage::base ? "base" : "continued"; }

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + 8 * c.params.size() + 8);
  for (char ch : kMagic) out.push_back(static_cast<std::uint8_t>(ch));
  put_u32(out, kCheckpointVersion);
  for (std::uint64_t word : {std::uint64_t{c.model.max_features}, std::uint64_t{c.model.n_classes_out},
                             std::uint64_t{c.model.embed_dim}, std::uint64_t{c.model.layers},
                             std::uint64_t{c.model.heads}, std::uint64_t{c.model.ff_dim}, c.model.init_seed}) {
    put_u64(out, word);
  }
  out.push_back(static_cast<std::uint8_t>(c.stage));
  put_u64(out, c.steps);
  put_u64(out, c.anchor_digest);
  put_u64(out, c.seed);
  put_u64(out, c.params.size());
  for (double p : c.params) put_u64(out, std::bit_cast<std::uint64_t>(p));
  put_u64(out, digest_bytes(out));
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes, const std::optional<ModelConfig>& expected) {
  if (bytes.size() < kMagic.size() || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw input_error("not a checkpoint file (bad magic)");
  }
  if (bytes.size() < kHeaderSize) throw input_error("checkpoint truncated in header");
  Reader reader(bytes);
  reader.skip(kMagic.size());
  const std::uint32_t version = reader.u32();
  if (version != kCheckpointVersion) {
    throw input_error("checkpoint format version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  }
  Checkpoint c;
  c.model.max_features = reader.u64();
  c.model.n_classes_out = reader.u64();
  c.model.embed_dim = reader.u64();
  c.model.layers = reader.u64();
  c.model.heads = reader.u64();
  c.model.ff_dim = reader.u64();
  c.model.init_seed = reader.u64();
  const std::uint8_t stage = reader.u8();
  c.steps = reader.u64();
  c.anchor_digest = reader.u64();
  c.seed = reader.u64();
  const std::uint64_t n_params = reader.u64();
  if (n_params > (bytes.size() - kHeaderSize) / 8) throw input_error("checkpoint truncated in parameter payload");
  const std::size_t expected_size = kHeaderSize + 8 * n_params + 8;
  if (bytes.size() < expected_size) throw input_error("checkpoint truncated before its digest");
  if (bytes.size() > expected_size) throw input_error("checkpoint has trailing bytes");

  Reader tail(bytes.subspan(expected_size - 8));
  if (tail.u64() != digest_bytes(bytes.first(expected_size - 8))) throw input_error("checkpoint digest mismatch");
  if (stage > 1) throw input_error("checkpoint has an unknown stage tag");
  c.stage = static_cast<Stage>(stage);

  c.params.resize(n_params);
  for (auto& p : c.params) p = std::bit_cast<double>(reader.u64());

  try {
    if (ParamLayout(c.model).total_size() != n_params) throw input_error("checkpoint parameter count does not match its model");
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::input) throw;
    throw input_error(std::string("checkpoint has an invalid model configuration: ") + e.what());
  }
  if (expected && !(*expected == c.model)) {
    throw config_error("checkpoint model configuration does not match the expected configuration");
  }
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw input_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, expected);
}

}  // namespace tabcpt
