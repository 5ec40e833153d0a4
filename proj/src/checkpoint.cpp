// SPDX-License-Identifier: Apache-2.0
#include "cgdrcn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cgdrcn {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("checkpoint truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("checkpoint truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string get_string(std::istream& in, std::uint32_t limit) {
  const std::uint32_t n = get_u32(in);
  if (n > limit) throw CheckpointError("checkpoint string too long");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw CheckpointError("checkpoint truncated");
  return s;
}

}  // namespace

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(kCheckpointMagic, 8);
  put_u32(out, kCheckpointFormat);
  std::ostringstream manifest;
  write_key_values(manifest, archive.manifest);
  const std::string m = manifest.str();
  put_u32(out, static_cast<std::uint32_t>(m.size()));
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  put_u32(out, static_cast<std::uint32_t>(archive.tensors.size()));
  for (const NamedTensor& t : archive.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.value.channels()));
    put_u32(out, static_cast<std::uint32_t>(t.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.value.cols()));
    for (double v : t.value.values()) put_f64(out, v);
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint archive");
  }
  const std::uint32_t format = get_u32(in);
  if (format != kCheckpointFormat) throw CheckpointError("unsupported checkpoint format " + std::to_string(format));
  Archive archive;
  std::istringstream manifest(get_string(in, 1u << 20));
  archive.manifest = parse_key_values(manifest);
  const std::uint32_t n = get_u32(in);
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = get_string(in, 4096);
    const int c = static_cast<int>(get_u32(in));
    const int r = static_cast<int>(get_u32(in));
    const int q = static_cast<int>(get_u32(in));
    t.value = Tensor(c, r, q);
    for (double& v : t.value.values()) v = get_f64(in);
    archive.tensors.push_back(std::move(t));
  }
  return archive;
}

KeyValues model_manifest(const ModelConfig& config) {
  return {{"backbone", std::string(to_string(config.backbone.kind))},
          {"variant", std::string(to_string(config.variant))},
          {"class_conditioned", config.class_conditioned() ? "1" : "0"},
          {"confidence_at_level6", config.confidence_at_level6 ? "1" : "0"},
          {"version", kLibraryVersion}};
}

ModelConfig config_from_manifest(const KeyValues& manifest) {
  ModelConfig cfg;
  const auto get = [&](const char* key) {
    const auto it = manifest.find(key);
    if (it == manifest.end()) throw CheckpointError(std::string("manifest lacks '") + key + "'");
    return it->second;
  };
  const auto kind = backbone_from_string(get("backbone"));
  if (!kind) throw CheckpointError("unknown backbone '" + get("backbone") + "'");
  cfg.backbone.kind = *kind;
  const auto variant = variant_from_string(get("variant"));
  if (!variant) throw CheckpointError("unknown variant '" + get("variant") + "'");
  cfg.variant = *variant;
  cfg.confidence_at_level6 = kv_bool(manifest, "confidence_at_level6").value_or(false);
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, Model& model, const KeyValues& extra) {
  Archive archive;
  archive.manifest = model_manifest(model.config());
  for (const auto& [k, v] : extra) archive.manifest[k] = v;
  for (const Parameter* p : model.parameters()) archive.tensors.push_back({p->name, p->value});
  write_archive(path, archive);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  Archive archive = read_archive(path);
  Model model(config_from_manifest(archive.manifest));
  auto params = model.parameters();
  if (params.size() != archive.tensors.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(archive.tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedTensor& t = archive.tensors[i];
    if (t.name != params[i]->name || t.value.shape() != params[i]->value.shape()) {
      throw CheckpointError("checkpoint tensor '" + t.name + "' " + to_string(t.value.shape()) + " does not match '" +
                            params[i]->name + "' " + to_string(params[i]->value.shape()));
    }
    params[i]->value = t.value;
  }
  return {std::move(model), std::move(archive.manifest)};
}

std::size_t import_weights(Model& model, const std::filesystem::path& path) {
  const Archive archive = read_archive(path);
  std::size_t n = 0;
  for (const NamedTensor& t : archive.tensors) {
    Parameter* p = model.find_parameter(t.name);
    if (!p) continue;
    if (p->value.shape() != t.value.shape()) {
      throw CheckpointError("weight '" + t.name + "' has shape " + to_string(t.value.shape()) + ", model expects " +
                            to_string(p->value.shape()));
    }
    p->value = t.value;
    ++n;
  }
  return n;
}

Model create_model(const ModelConfig& config) {
  Model model(config);
  if (config.backbone.pretrained_weights) {
    if (import_weights(model, *config.backbone.pretrained_weights) == 0) {
      throw CheckpointError("no weights in " + *config.backbone.pretrained_weights + " match the model");
    }
  }
  return model;
}

}  // namespace cgdrcn
