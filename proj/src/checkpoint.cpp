#include "aoes/checkpoint.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iterator>
#include <memory>

#include "aoes/binary_io.hpp"
#include "aoes/error.hpp"

namespace aoes {

namespace {

constexpr char kCheckpointMagic[9] = "AOESCKPT";

void put_i64(std::ostream& out, long long v) { binary::put_u64(out, static_cast<std::uint64_t>(v)); }
long long get_i64(std::istream& in) { return static_cast<long long>(binary::get_u64(in)); }

void put_unit(std::ostream& out, const LinearUnit& u) {
  binary::put_matrix(out, u.w);
  binary::put_f64(out, u.b);
}

LinearUnit get_unit(std::istream& in, int d) {
  LinearUnit u;
  Matrix w = binary::get_matrix(in);
  if (w.rows() != d || w.cols() != 1) throw Error(ErrorCode::kBadFormat, "head weight shape");
  u.w = w.col(0);
  u.b = binary::get_f64(in);
  return u;
}

}  // namespace

void save_checkpoint(const ScoringModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  const auto& c = model.encoder.config();
  const auto& vocab = model.encoder.vocab();

  out.write(kCheckpointMagic, 8);
  binary::put_u32(out, kCheckpointVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(model.kind));
  binary::put_u64(out, static_cast<std::uint64_t>(c.d));
  binary::put_u64(out, static_cast<std::uint64_t>(c.layers));
  binary::put_u64(out, static_cast<std::uint64_t>(vocab.size()));
  binary::put_u64(out, static_cast<std::uint64_t>(c.max_len));
  binary::put_u64(out, c.seed);
  binary::put_u32(out, c.positional ? 1u : 0u);
  binary::put_f64(out, c.init_scale);
  binary::put_string(out, model.prompt_id);
  put_i64(out, model.score_min);
  put_i64(out, model.score_max);

  binary::put_string(out, "vocab");
  for (const auto& t : vocab.tokens()) binary::put_string(out, t);

  binary::put_string(out, "encoder");
  std::uint32_t n_tensors = 0;
  model.encoder.params().visit([&](const std::string&, const Matrix&) { ++n_tensors; });
  binary::put_u32(out, n_tensors);
  model.encoder.params().visit([&](const std::string& name, const Matrix& m) {
    binary::put_string(out, name);
    binary::put_matrix(out, m);
  });

  binary::put_string(out, "head");
  put_unit(out, model.head.f_h);
  put_unit(out, model.head.f_t);
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

ScoringModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  binary::expect_magic(in, kCheckpointMagic);
  const auto version = binary::get_u32(in);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kBadFormat, "unsupported checkpoint version " + std::to_string(version));
  }
  ScoringModel model;
  const auto kind = binary::get_u32(in);
  if (kind > static_cast<std::uint32_t>(ModelKind::kBaseline2)) {
    throw Error(ErrorCode::kBadFormat, "unknown model kind tag");
  }
  model.kind = static_cast<ModelKind>(kind);
  EncoderConfig c;
  c.d = static_cast<int>(binary::get_u64(in));
  c.layers = static_cast<int>(binary::get_u64(in));
  const auto vocab_size = binary::get_u64(in);
  c.max_len = static_cast<int>(binary::get_u64(in));
  c.seed = binary::get_u64(in);
  c.positional = (binary::get_u32(in) & 1u) != 0;
  c.init_scale = binary::get_f64(in);
  model.prompt_id = binary::get_string(in);
  model.score_min = static_cast<int>(get_i64(in));
  model.score_max = static_cast<int>(get_i64(in));
  if (vocab_size < 2 || vocab_size > (1u << 24) || c.d <= 0 || c.d > 4096 || c.layers <= 0 ||
      c.layers > 256) {
    throw Error(ErrorCode::kBadFormat, "implausible checkpoint header");
  }

  if (binary::get_string(in) != "vocab") throw Error(ErrorCode::kBadFormat, "missing vocab section");
  std::vector<std::string> tokens;
  tokens.reserve(vocab_size);
  for (std::uint64_t i = 0; i < vocab_size; ++i) tokens.push_back(binary::get_string(in));
  Vocabulary vocab = Vocabulary::from_tokens(std::move(tokens));

  if (binary::get_string(in) != "encoder") {
    throw Error(ErrorCode::kBadFormat, "missing encoder section");
  }
  const auto n_tensors = binary::get_u32(in);
  EncoderParams params;
  params.layers.resize(static_cast<std::size_t>(c.layers));
  if (c.positional) params.positional = Matrix::Zero(1, 1);  // placeholder so visit includes it
  std::uint32_t seen = 0;
  std::string error;
  params.visit([&](const std::string& name, Matrix& m) {
    if (!error.empty()) return;
    if (seen >= n_tensors) {
      error = "too few tensors";
      return;
    }
    if (binary::get_string(in) != name) {
      error = "unexpected tensor order at " + name;
      return;
    }
    m = binary::get_matrix(in);
    ++seen;
  });
  if (!error.empty() || seen != n_tensors) {
    throw Error(ErrorCode::kBadFormat, error.empty() ? "tensor count" : error);
  }

  if (binary::get_string(in) != "head") throw Error(ErrorCode::kBadFormat, "missing head section");
  model.head.f_h = get_unit(in, c.d);
  model.head.f_t = get_unit(in, c.d);
  model.encoder = EncoderModel(c, std::move(vocab), std::move(params));
  return model;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error(ErrorCode::kIo, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

}  // namespace aoes
