#include "tsca/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "tsca/config.hpp"

namespace tsca {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts unsupported");

namespace {

constexpr char kMagic[5] = {'T', 'S', 'C', 'A', '1'};

}  // namespace

nlohmann::ordered_json checkpoint_header(const Checkpoint& ckpt) {
  nlohmann::ordered_json tensors;
  std::uint64_t offset = 0;
  ckpt.params.for_each_tensor([&](const std::string& name, const MatX<float>& t) {
    tensors[name] = {{"shape", {t.rows(), t.cols()}}, {"offset", offset}};
    offset += static_cast<std::uint64_t>(t.size()) * sizeof(float);
  });
  nlohmann::ordered_json h;
  h["tensors"] = std::move(tensors);
  h["encoder"] = to_json(ckpt.params.cfg);
  h["train"] = to_json(ckpt.train);
  h["augment"] = to_json(ckpt.aug);
  h["seed"] = ckpt.seed;
  h["epochs"] = ckpt.epochs_run;
  h["final_loss"] = ckpt.final_loss;  // serialized as null when non-finite
  return h;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string header = checkpoint_header(ckpt).dump();
  if (header.size() > std::numeric_limits<std::uint32_t>::max())
    throw FormatError("checkpoint header too large");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const auto len = static_cast<std::uint32_t>(header.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  ckpt.params.for_each_tensor([&](const std::string&, const MatX<float>& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size()) * static_cast<std::streamsize>(sizeof(float)));
  });
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t))
    throw FormatError("truncated header: file too small");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError("bad magic: not a checkpoint file");

  std::uint32_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + sizeof(kMagic), sizeof(header_len));
  const std::size_t payload_at = sizeof(kMagic) + sizeof(std::uint32_t) + header_len;
  if (payload_at > bytes.size()) throw FormatError("truncated header: declared length exceeds file");

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin() + sizeof(kMagic) + sizeof(std::uint32_t),
                              bytes.begin() + static_cast<std::ptrdiff_t>(payload_at));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("header: invalid JSON (") + e.what() + ")");
  }

  Checkpoint ckpt;
  try {
    EncoderConfig ec;
    merge_config(h.at("encoder"), ec);
    ckpt.params = allocate_params<float>(ec);
    merge_config(h.at("train"), ckpt.train);
    merge_config(h.at("augment"), ckpt.aug);
    ckpt.seed = h.at("seed").get<std::uint64_t>();
    ckpt.epochs_run = h.at("epochs").get<int>();
    const auto& fl = h.at("final_loss");
    ckpt.final_loss = fl.is_null() ? std::numeric_limits<double>::quiet_NaN() : fl.get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("header: ") + e.what());
  }

  const auto& tensors = h.at("tensors");
  const char* payload = bytes.data() + payload_at;
  const std::uint64_t payload_size = bytes.size() - payload_at;

  std::uint64_t expected_offset = 0;
  std::size_t seen = 0;
  ckpt.params.for_each_tensor([&](const std::string& name, MatX<float>& t) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("missing tensor: " + name);
    const auto& entry = *it;
    const auto shape = entry.at("shape");
    if (shape.size() != 2 || shape[0].get<Eigen::Index>() != t.rows() ||
        shape[1].get<Eigen::Index>() != t.cols())
      throw FormatError("shape mismatch: " + name);
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (offset != expected_offset) throw FormatError("offset mismatch: " + name);
    const std::uint64_t nbytes = static_cast<std::uint64_t>(t.size()) * sizeof(float);
    if (offset + nbytes > payload_size) throw FormatError("truncated payload: " + name);
    std::memcpy(t.data(), payload + offset, nbytes);
    expected_offset += nbytes;
    ++seen;
  });
  if (tensors.size() != seen) throw FormatError("unexpected extra tensors in header");
  if (expected_offset != payload_size) throw FormatError("payload size mismatch");
  return ckpt;
}

}  // namespace tsca
