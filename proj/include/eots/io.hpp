#pragma once

// EMB1 tensor container, its JSON manifest, and PGM/CSV dumps.
//
// EMB1 layout (all integers little-endian):
//   bytes 0..3   magic "EMB1"
//   u16          version (1)
//   u8           dtype (0 = f32, 1 = f64)
//   u8           ndim
//   u64[ndim]    dims
//   payload      product(dims) values, row-major, little-endian IEEE-754
//
// Text embeddings are stored as a 2-D M x N tensor with a sidecar manifest at
// "<path>.json".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "eots/embedding.hpp"
#include "eots/error.hpp"

namespace eots::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

enum class Dtype : std::uint8_t { kF32 = 0, kF64 = 1 };

inline constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
inline constexpr std::uint16_t kVersion = 1;

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;  // row-major
};

inline std::size_t dtype_size(Dtype d) { return d == Dtype::kF32 ? 4 : 8; }

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write to '" + path.string() + "' failed");
}

}  // namespace detail

inline std::string encode_tensor(const Tensor& t, Dtype dtype = Dtype::kF64) {
  std::uint64_t count = 1;
  for (auto d : t.dims) count *= d;
  eots::detail::require(count == t.values.size(), ErrorCode::kShapeMismatch, "tensor dims do not match value count");
  eots::detail::require(t.dims.size() <= 255, ErrorCode::kInvalidArgument, "too many dimensions");
  std::string out(kMagic, 4);
  detail::put_le<std::uint16_t>(out, kVersion);
  out.push_back(static_cast<char>(dtype));
  out.push_back(static_cast<char>(t.dims.size()));
  for (auto d : t.dims) detail::put_le<std::uint64_t>(out, d);
  out.reserve(out.size() + t.values.size() * dtype_size(dtype));
  for (double v : t.values) {
    if (dtype == Dtype::kF64) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    else detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

inline Tensor decode_tensor(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 4 || std::memcmp(p, kMagic, 4) != 0) throw Error(ErrorCode::kBadMagic, "not an EMB1 file");
  if (n < 8) throw Error(ErrorCode::kTruncated, "header shorter than 8 bytes");
  const auto version = detail::get_le<std::uint16_t>(p + 4);
  if (version != kVersion) throw Error(ErrorCode::kUnsupportedVersion, "version " + std::to_string(version));
  const std::uint8_t dtype_raw = p[6];
  if (dtype_raw > 1) throw Error(ErrorCode::kBadDtype, "dtype code " + std::to_string(dtype_raw));
  const auto dtype = static_cast<Dtype>(dtype_raw);
  const std::size_t ndim = p[7];
  std::size_t off = 8;
  if (n < off + 8 * ndim) throw Error(ErrorCode::kTruncated, "dims truncated");

  Tensor t;
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i, off += 8) {
    const auto d = detail::get_le<std::uint64_t>(p + off);
    if (d != 0 && count > UINT64_MAX / d) throw Error(ErrorCode::kTruncated, "dims overflow");
    count *= d;
    t.dims.push_back(d);
  }
  const std::size_t width = dtype_size(dtype);
  if (count > (n - off) / width) {
    throw Error(ErrorCode::kTruncated, "payload has " + std::to_string(n - off) + " bytes, need " +
                                           std::to_string(count) + " x " + std::to_string(width));
  }
  if (n - off != count * width)
    throw Error(ErrorCode::kTrailingBytes, std::to_string(n - off - count * width) + " bytes after payload");
  t.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i, off += width) {
    t.values[i] = dtype == Dtype::kF64 ? std::bit_cast<double>(detail::get_le<std::uint64_t>(p + off))
                                       : static_cast<double>(std::bit_cast<float>(detail::get_le<std::uint32_t>(p + off)));
  }
  return t;
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t, Dtype dtype = Dtype::kF64) {
  detail::write_file(path, encode_tensor(t, dtype));
}

inline Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(detail::read_file(path)); }

inline Tensor to_tensor(const Eigen::MatrixXd& m) {
  Tensor t{{static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, {}};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) t.values.push_back(m(i, j));
  return t;
}

inline Eigen::MatrixXd to_matrix(const Tensor& t) {
  eots::detail::require(t.dims.size() == 2, ErrorCode::kShapeMismatch,
                        "expected a 2-D tensor, got " + std::to_string(t.dims.size()) + "-D");
  const auto rows = static_cast<Index>(t.dims[0]);
  const auto cols = static_cast<Index>(t.dims[1]);
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = t.values[static_cast<std::size_t>(i * cols + j)];
  return m;
}

inline void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m, Dtype dtype = Dtype::kF64) {
  write_tensor(path, to_tensor(m), dtype);
}

inline Eigen::MatrixXd read_matrix(const std::filesystem::path& path) { return to_matrix(read_tensor(path)); }

// ---------------------------------------------------------------------------
// Manifest

struct EncoderSource {
  std::string encoder_name;
  std::optional<std::string> layer;
};

struct Manifest {
  std::string prompt_text;
  std::vector<std::string> tokens;  // prompt tokens only, in order; may be empty
  Index prompt_len = 0;
  std::vector<Index> ne_positions;  // 1-based token columns
  EncoderSource source;
};

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json j;
  j["prompt_text"] = m.prompt_text;
  j["tokens"] = m.tokens;
  j["prompt_len"] = m.prompt_len;
  j["ne_positions"] = m.ne_positions;
  j["source"] = {{"encoder_name", m.source.encoder_name}};
  if (m.source.layer) j["source"]["layer"] = *m.source.layer;
  return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  try {
    Manifest m;
    m.prompt_text = j.at("prompt_text").get<std::string>();
    m.tokens = j.value("tokens", std::vector<std::string>{});
    m.prompt_len = j.at("prompt_len").get<Index>();
    m.ne_positions = j.value("ne_positions", std::vector<Index>{});
    if (j.contains("source")) {
      const auto& s = j.at("source");
      m.source.encoder_name = s.value("encoder_name", std::string{});
      if (s.contains("layer") && !s.at("layer").is_null()) {
        m.source.layer = s.at("layer").is_string() ? s.at("layer").get<std::string>() : s.at("layer").dump();
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kManifestInvalid, e.what());
  }
}

inline std::filesystem::path manifest_path(const std::filesystem::path& emb_path) {
  return std::filesystem::path(emb_path.string() + ".json");
}

inline void check_manifest(const Manifest& m, Index embed_dim, Index token_count) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kManifestInconsistent, what); };
  if (m.prompt_len < 0 || m.prompt_len + 2 > token_count) {
    fail("prompt_len " + std::to_string(m.prompt_len) + " does not fit N=" + std::to_string(token_count));
  }
  if (!m.tokens.empty() && static_cast<Index>(m.tokens.size()) != m.prompt_len) {
    fail("tokens[] has " + std::to_string(m.tokens.size()) + " entries, prompt_len is " + std::to_string(m.prompt_len));
  }
  for (Index pos : m.ne_positions)
    if (pos < 1 || pos > m.prompt_len) fail("ne position " + std::to_string(pos) + " outside the prompt span");
  (void)embed_dim;
}

struct EmbeddingFile {
  TextEmbeddings emb;
  Manifest manifest;
};

inline void write_emb(const std::filesystem::path& path, const TextEmbeddings& emb, const Manifest& manifest,
                      Dtype dtype = Dtype::kF64) {
  check_manifest(manifest, emb.embed_dim(), emb.token_count());
  eots::detail::require(manifest.prompt_len == emb.prompt_len(), ErrorCode::kManifestInconsistent,
                        "manifest prompt_len differs from the embeddings");
  write_matrix(path, emb.data(), dtype);
  detail::write_file(manifest_path(path), to_json(manifest).dump(2) + "\n");
}

/// Reads an EMB1 matrix and its manifest. Nothing is returned unless both are valid.
inline EmbeddingFile read_emb(const std::filesystem::path& path) {
  Tensor t = read_tensor(path);
  if (t.dims.size() != 2) {
    throw Error(ErrorCode::kManifestInconsistent,
                "embeddings must be 2-D, file has " + std::to_string(t.dims.size()) + " dims");
  }
  const auto mpath = manifest_path(path);
  if (!std::filesystem::exists(mpath)) throw Error(ErrorCode::kManifestMissing, "no manifest at '" + mpath.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(mpath));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kManifestInvalid, e.what());
  }
  Manifest m = manifest_from_json(j);
  Eigen::MatrixXd data = to_matrix(t);
  check_manifest(m, data.rows(), data.cols());
  return {TextEmbeddings(std::move(data), m.prompt_len), std::move(m)};
}

// ---------------------------------------------------------------------------
// PGM and CSV

struct PgmScale {
  double min = 0.0;
  double max = 0.0;
};

/// Binary 16-bit PGM (P5, maxval 65535, big-endian samples as the format
/// requires), min-max normalized. A constant field writes all zeros.
inline PgmScale write_pgm16(const std::filesystem::path& path, const Eigen::MatrixXd& field) {
  PgmScale s{field.minCoeff(), field.maxCoeff()};
  std::string out = "P5\n" + std::to_string(field.cols()) + " " + std::to_string(field.rows()) + "\n65535\n";
  const double range = s.max - s.min;
  for (Index i = 0; i < field.rows(); ++i) {
    for (Index j = 0; j < field.cols(); ++j) {
      const double u = range > 0.0 ? (field(i, j) - s.min) / range : 0.0;
      const auto v = static_cast<std::uint16_t>(std::lround(u * 65535.0));
      out.push_back(static_cast<char>(v >> 8));
      out.push_back(static_cast<char>(v & 0xFF));
    }
  }
  detail::write_file(path, out);
  return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) { detail::write_file(path, text); }

}  // namespace eots::io
