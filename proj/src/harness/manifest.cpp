#include "mppca/harness.hpp"

#include "mppca/io.hpp"

#include <openssl/evp.h>

#include <filesystem>
#include <stdexcept>

namespace mppca::harness {

std::string git_blob_sha1(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + std::string(1, '\0') + content;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("sha1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

json merge_config(const json& defaults, const json& overrides, const std::string& path) {
  if (overrides.is_null()) return defaults;
  if (!defaults.is_object()) return overrides;
  if (!overrides.is_object()) throw std::invalid_argument("config '" + path + "' must be an object");
  json out = defaults;
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!defaults.contains(it.key())) throw std::invalid_argument("unknown config key '" + key + "'");
    out[it.key()] = merge_config(defaults[it.key()], it.value(), key);
  }
  return out;
}

void write_outputs(const std::string& out_dir, const std::string& command, const json& config,
                   std::uint64_t seed, const std::vector<ManifestEntry>& inputs,
                   const std::vector<ManifestEntry>& outputs, const json& extra) {
  if (out_dir.empty()) return;
  std::filesystem::create_directories(out_dir);
  json manifest;
  manifest["command"] = command;
  manifest["seed"] = seed;
  manifest["config"] = config;
  manifest["inputs"] = json::array();
  for (const auto& e : inputs) manifest["inputs"].push_back({{"name", e.name}, {"sha1", git_blob_sha1(e.content)}});
  manifest["outputs"] = json::array();
  for (const auto& e : outputs) {
    io::write_text_file((std::filesystem::path(out_dir) / e.name).string(), e.content);
    manifest["outputs"].push_back({{"name", e.name}, {"sha1", git_blob_sha1(e.content)}});
  }
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  io::write_text_file((std::filesystem::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

}  // namespace mppca::harness
