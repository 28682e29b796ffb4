#include "gfusion/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace gfusion {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f32(std::string& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw CheckpointError(std::string(what) + " exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  double f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const FusionParams& p) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, checked_u32(p.shape.shared_dim, "shared_dim"));
  put_u32(out, checked_u32(p.shape.proj_dim, "proj_dim"));
  const auto mods = p.shape.modalities().members();
  put_u32(out, static_cast<std::uint32_t>(mods.size()));
  for (Modality m : mods) {
    out.push_back(tag_of(m));
    put_u32(out, checked_u32(p.shape.raw_dims[index_of(m)], "raw dim"));
  }
  std::uint32_t blocks = 0;
  p.for_each_block([&](const std::string&, std::size_t, std::size_t,
                       std::span<const double>) { ++blocks; });
  put_u32(out, blocks);
  p.for_each_block([&](const std::string& name, std::size_t rows, std::size_t cols,
                       std::span<const double> values) {
    put_u32(out, checked_u32(name.size(), "block name"));
    out += name;
    put_u32(out, checked_u32(rows, "rows"));
    put_u32(out, checked_u32(cols, "cols"));
    for (double v : values) put_f32(out, v);
  });
  return out;
}

FusionParams decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError("not a model checkpoint (bad magic)");
  }
  Reader r(bytes);
  r.text(sizeof(kCheckpointMagic), "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelShape shape;
  shape.shared_dim = r.u32("shared_dim");
  shape.proj_dim = r.u32("proj_dim");
  const std::uint32_t n_mods = r.u32("modality count");
  if (n_mods == 0 || n_mods > kModalityCount) {
    throw CheckpointError("invalid modality count " + std::to_string(n_mods));
  }
  for (std::uint32_t i = 0; i < n_mods; ++i) {
    const char tag = static_cast<char>(r.u8("modality tag"));
    const auto m = modality_from_tag(std::string_view(&tag, 1));
    if (!m) throw CheckpointError(std::string("unknown modality tag '") + tag + "'");
    if (shape.raw_dims[index_of(*m)] != 0) {
      throw CheckpointError(std::string("duplicate modality '") + tag + "'");
    }
    shape.raw_dims[index_of(*m)] = r.u32("raw dim");
    if (shape.raw_dims[index_of(*m)] == 0) throw CheckpointError("zero raw dim");
  }

  FusionParams p;
  try {
    p = FusionParams::zeros(shape);
  } catch (const ModelError& e) {
    throw CheckpointError(std::string("invalid model shape: ") + e.what());
  }
  std::uint32_t expected_blocks = 0;
  p.for_each_block([&](const std::string&, std::size_t, std::size_t,
                       std::span<double>) { ++expected_blocks; });
  const std::uint32_t blocks = r.u32("block count");
  if (blocks != expected_blocks) {
    throw CheckpointError("expected " + std::to_string(expected_blocks) +
                          " parameter blocks, found " + std::to_string(blocks));
  }
  p.for_each_block([&](const std::string& name, std::size_t rows, std::size_t cols,
                       std::span<double> values) {
    const std::string stored = r.text(r.u32("block name length"), "block name");
    if (stored != name) {
      throw CheckpointError("expected block '" + name + "', found '" + stored + "'");
    }
    const std::uint32_t stored_rows = r.u32("rows");
    const std::uint32_t stored_cols = r.u32("cols");
    if (stored_rows != rows || stored_cols != cols) {
      throw CheckpointError("block '" + name + "' has shape " +
                            std::to_string(stored_rows) + "x" +
                            std::to_string(stored_cols) + ", expected " +
                            std::to_string(rows) + "x" + std::to_string(cols));
    }
    for (double& v : values) v = r.f32("parameter values");
  });
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
  return p;
}

void save_checkpoint(const FusionParams& p, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(p);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for checkpoint " + path.string());
}

FusionParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace gfusion
