#include "volcast/manifest.hpp"

#include <ctime>
#include <fstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "volcast/common.hpp"

namespace volcast {

using json = nlohmann::json;

namespace {

std::string to_hex(const unsigned char* digest, unsigned len) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

struct DigestCtx {
  EVP_MD_CTX* ctx;
  DigestCtx() : ctx(EVP_MD_CTX_new()) {
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1)
      throw DataError("sha256: digest initialization failed");
  }
  ~DigestCtx() { EVP_MD_CTX_free(ctx); }
};

}  // namespace

std::string sha256_bytes(const void* data, std::size_t len) {
  DigestCtx d;
  if (EVP_DigestUpdate(d.ctx, data, len) != 1) throw DataError("sha256: update failed");
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned dlen = 0;
  if (EVP_DigestFinal_ex(d.ctx, digest, &dlen) != 1) throw DataError("sha256: final failed");
  return to_hex(digest, dlen);
}

std::string sha256_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DataError("sha256: cannot open " + p.string());
  DigestCtx d;
  std::vector<char> buf(1 << 16);
  while (f) {
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const std::streamsize got = f.gcount();
    if (got > 0 && EVP_DigestUpdate(d.ctx, buf.data(), static_cast<std::size_t>(got)) != 1)
      throw DataError("sha256: update failed");
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned dlen = 0;
  if (EVP_DigestFinal_ex(d.ctx, digest, &dlen) != 1) throw DataError("sha256: final failed");
  return to_hex(digest, dlen);
}

RunManifest RunManifest::make(const std::string& command,
                              const std::vector<std::string>& config_paths,
                              std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.config_paths = config_paths;
  m.seed = seed;
  for (const auto& p : config_paths) m.input_hashes[p] = sha256_file(p);
  std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  m.created_at = buf;
  return m;
}

std::string RunManifest::to_json_text() const {
  json j;
  j["command"] = command;
  j["config_paths"] = config_paths;
  j["seed"] = seed;
  j["input_hashes"] = input_hashes;
  j["created_at"] = created_at;
  return j.dump(2);
}

void RunManifest::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream f(dir / "manifest.json");
  f << to_json_text() << "\n";
  if (!f) throw DataError("failed to write manifest.json in " + dir.string());
}

}  // namespace volcast
