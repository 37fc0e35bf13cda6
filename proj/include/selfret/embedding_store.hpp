#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace selfret {

/// Row-major matrix of real vectors addressed by string id.
///
/// Values are held in double precision; the on-disk format stores float32,
/// which widens losslessly, so write(ingest(x)) reproduces x byte for byte.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  /// Throws DataError on non-finite entries or duplicate ids, DimError when
  /// `values.size() != ids.size() * dim`.
  EmbeddingSet(std::vector<std::string> ids, std::size_t dim,
               std::vector<double> values);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return ids_.empty(); }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::string& id(std::size_t row) const { return ids_.at(row); }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * dim_, dim_};
  }
  std::span<const double> values() const noexcept { return values_; }

  std::optional<std::size_t> find(std::string_view id) const;
  /// Throws KeyError for unknown ids.
  std::size_t index_of(std::string_view id) const;

 private:
  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<double> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ManifestRecord {
  std::string id;
  std::vector<std::string> captions;
};

/// Ordered image-id -> captions map; record order is row order.
class CaptionManifest {
 public:
  CaptionManifest() = default;
  explicit CaptionManifest(std::vector<ManifestRecord> records);

  std::size_t size() const noexcept { return records_.size(); }
  const std::vector<ManifestRecord>& records() const noexcept {
    return records_;
  }
  std::vector<std::string> ids() const;
  const ManifestRecord* find(std::string_view id) const;
  std::size_t total_captions() const;

 private:
  std::vector<ManifestRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Metadata carried by manifests and other text outputs.
struct FileStamp {
  int schema_version = 1;
  std::string config_hash;
};

inline constexpr std::array<char, 4> kEmbeddingMagic{'E', 'M', 'B', '1'};
inline constexpr std::array<char, 4> kSimilarityMagic{'S', 'I', 'M', '1'};

struct RawMatrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;
};

/// Reads `magic`, u32 LE rows, u32 LE cols, rows*cols f32 LE.
RawMatrix read_matrix_file(const std::filesystem::path& path,
                           std::array<char, 4> magic);
void write_matrix_file(const std::filesystem::path& path,
                       std::array<char, 4> magic, std::uint32_t rows,
                       std::uint32_t cols, std::span<const double> values);

/// JSON-lines manifest. An optional leading line without an "id" field is
/// treated as the file stamp.
CaptionManifest read_manifest(const std::filesystem::path& path,
                              FileStamp* stamp = nullptr);
void write_manifest(const std::filesystem::path& path,
                    const CaptionManifest& manifest,
                    const std::optional<FileStamp>& stamp = std::nullopt);

/// Binds the rows of an EMB1 file to manifest ids in order.
EmbeddingSet ingest_embeddings(const std::filesystem::path& path,
                               const std::filesystem::path& manifest_path);
EmbeddingSet ingest_embeddings(const std::filesystem::path& path,
                               const CaptionManifest& manifest);
void write_embeddings(const std::filesystem::path& path,
                      const EmbeddingSet& set);

double l2_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

/// Scales every row to unit L2 norm. Throws DegenerateVector on a zero row.
EmbeddingSet normalize(const EmbeddingSet& set);
std::vector<double> normalized(std::span<const double> v);
bool is_normalized(const EmbeddingSet& set, double tolerance = 1e-6);

struct MultimodalSet {
  EmbeddingSet base;      // rows are concat(z, t)
  std::size_t image_dim = 0;
  std::size_t text_dim = 0;
  bool half_normalized = true;
};

struct MultimodalOptions {
  /// Normalize the image and text halves independently before concatenation.
  bool half_norm = true;
  /// Required text embedding width; 0 means "same as the image width".
  std::size_t text_dim = 0;
};

using TextEmbedder = std::function<std::vector<double>(const std::string&)>;

/// m = concat(z, t) with t the mean of the caption embeddings of the image.
MultimodalSet build_multimodal(const EmbeddingSet& images,
                               const CaptionManifest& captions,
                               const TextEmbedder& text_embedder,
                               const MultimodalOptions& options = {});

/// Same as build_multimodal, with caption embeddings precomputed: row k of
/// `caption_table` belongs to the k-th caption in manifest order.
MultimodalSet build_multimodal_from_table(const EmbeddingSet& images,
                                          const CaptionManifest& captions,
                                          const EmbeddingSet& caption_table,
                                          const MultimodalOptions& options = {});

}  // namespace selfret
