#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gfusion/modality.hpp"

namespace gfusion {

enum class Split { train, val, test };

std::string_view split_name(Split s);
std::optional<Split> split_from_name(std::string_view name);

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;

  std::size_t of(Split s) const;
  std::size_t total() const { return train + val + test; }
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

struct ModalityEmbedding {
  std::string backbone;
  std::vector<float> values;  // pooled embedding, float32 by contract

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const ModalityEmbedding&, const ModalityEmbedding&) = default;
};

struct EmbeddingRecord {
  std::string id;
  Split split = Split::train;
  int label = 0;  // 0 non-sarcastic, 1 sarcastic
  std::array<std::optional<ModalityEmbedding>, kModalityCount> embeddings;

  const ModalityEmbedding* embedding(Modality m) const {
    const auto& e = embeddings[index_of(m)];
    return e ? &*e : nullptr;
  }
  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

struct ModalitySchema {
  std::size_t dim = 0;
  std::string backbone;
  friend bool operator==(const ModalitySchema&, const ModalitySchema&) = default;
};

// Thrown for malformed or inconsistent manifests. `line()` is 1-based and 0
// when the problem is not tied to a line of a file.
class ManifestError : public std::runtime_error {
 public:
  ManifestError(const std::string& detail, std::size_t line = 0,
                const std::string& source = {});
  std::size_t line() const { return line_; }
  const std::string& detail() const { return detail_; }

 private:
  std::string detail_;
  std::size_t line_;
};

struct Manifest {
  std::string dataset;
  std::array<std::optional<ModalitySchema>, kModalityCount> schema;
  std::vector<EmbeddingRecord> records;

  ModalitySet modalities() const;
  SplitCounts split_counts() const;
  std::vector<const EmbeddingRecord*> split(Split s) const;

  // Checks ids, labels, finiteness and per-record agreement with `schema`.
  void validate() const;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

// File layout: line 1 is the schema object, each following line one record.
//   {"dataset":..., "modalities":{"t":{"backbone":...,"dim":N},...},
//    "splits":{"train":N,"val":N,"test":N}}
//   {"id":...,"split":"train","label":0,
//    "embeddings":{"t":{"backbone":...,"dim":N,"values":[...]}}}
// Numbers are written as the shortest decimal that round-trips the float32.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::string_view text);
void save_manifest(const Manifest& m, const std::filesystem::path& path);
std::string serialize_manifest(const Manifest& m);

struct SynthOptions {
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  std::size_t dim = 16;
  double snr = 3.0;
  std::uint64_t seed = 7;
};

// Two-modality (t, a) cross-modal incongruity task. For each sample, in
// order: cue bits c_t then c_a via Rng::coin() (+1 when set), then dim
// Gaussians for text and dim Gaussians for audio via the polar method.
// Coordinate 0 of each modality is cue * snr + noise; label = (c_t != c_a).
// Records are emitted train, then val, then test, with ids "synth-%06d".
Manifest synth_incongruity(const SynthOptions& opts);

}  // namespace gfusion
