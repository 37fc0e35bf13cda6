#include "selfret/embedding_store.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "selfret/error.hpp"

namespace selfret {

namespace fs = std::filesystem;
using nlohmann::json;

EmbeddingSet::EmbeddingSet(std::vector<std::string> ids, std::size_t dim,
                           std::vector<double> values)
    : ids_(std::move(ids)), dim_(dim), values_(std::move(values)) {
  if (dim_ == 0) throw DimError("embedding dimension must be positive");
  if (values_.size() != ids_.size() * dim_) {
    throw DimError("expected " + std::to_string(ids_.size() * dim_) +
                   " values, got " + std::to_string(values_.size()));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw DataError("non-finite value in row " + std::to_string(i / dim_) +
                      " (id '" + ids_[i / dim_] + "')");
    }
  }
  index_.reserve(ids_.size());
  for (std::size_t r = 0; r < ids_.size(); ++r) {
    if (!index_.emplace(ids_[r], r).second) {
      throw DataError("duplicate id '" + ids_[r] + "'");
    }
  }
}

std::optional<std::size_t> EmbeddingSet::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingSet::index_of(std::string_view id) const {
  auto r = find(id);
  if (!r) throw KeyError("unknown id '" + std::string(id) + "'");
  return *r;
}

CaptionManifest::CaptionManifest(std::vector<ManifestRecord> records)
    : records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!index_.emplace(records_[i].id, i).second) {
      throw DataError("duplicate manifest id '" + records_[i].id + "'");
    }
  }
}

std::vector<std::string> CaptionManifest::ids() const {
  std::vector<std::string> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.id);
  return out;
}

const ManifestRecord* CaptionManifest::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &records_[it->second];
}

std::size_t CaptionManifest::total_captions() const {
  std::size_t n = 0;
  for (const auto& r : records_) n += r.captions.size();
  return n;
}

namespace {

std::uint32_t load_u32_le(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

void store_u32_le(std::uint32_t v, char* p) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<char>((v >> (8 * i)) & 0xff);
}

std::string magic_string(std::array<char, 4> magic) {
  return std::string(magic.begin(), magic.end());
}

}  // namespace

RawMatrix read_matrix_file(const fs::path& path, std::array<char, 4> magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 12) {
    throw FormatError("'" + path.string() + "': truncated header");
  }
  if (!std::equal(magic.begin(), magic.end(), bytes.begin())) {
    throw FormatError("'" + path.string() + "': bad magic, expected " +
                      magic_string(magic));
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  RawMatrix m;
  m.rows = load_u32_le(p + 4);
  m.cols = load_u32_le(p + 8);
  const std::uint64_t count = std::uint64_t(m.rows) * m.cols;
  if (bytes.size() != 12 + count * 4) {
    throw FormatError("'" + path.string() + "': header declares " +
                      std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                      " but payload has " + std::to_string(bytes.size() - 12) +
                      " bytes");
  }
  m.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    m.values[i] = std::bit_cast<float>(load_u32_le(p + 12 + 4 * i));
  }
  return m;
}

void write_matrix_file(const fs::path& path, std::array<char, 4> magic,
                       std::uint32_t rows, std::uint32_t cols,
                       std::span<const double> values) {
  if (values.size() != std::size_t(rows) * cols) {
    throw DimError("matrix payload does not match declared shape");
  }
  std::string bytes(12 + values.size() * 4, '\0');
  std::copy(magic.begin(), magic.end(), bytes.begin());
  store_u32_le(rows, bytes.data() + 4);
  store_u32_le(cols, bytes.data() + 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    store_u32_le(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])),
                 bytes.data() + 12 + 4 * i);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

CaptionManifest read_manifest(const fs::path& path, FileStamp* stamp) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest '" + path.string() + "'");
  std::vector<ManifestRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " +
                        e.what());
    }
    if (!j.is_object()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": record is not an object");
    }
    if (!j.contains("id")) {
      if (records.empty() && j.contains("schema_version")) {
        if (stamp) {
          stamp->schema_version = j.value("schema_version", 1);
          stamp->config_hash = j.value("config_hash", std::string{});
        }
        continue;
      }
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": missing \"id\"");
    }
    ManifestRecord rec;
    try {
      rec.id = j.at("id").get<std::string>();
      if (j.contains("captions")) {
        rec.captions = j.at("captions").get<std::vector<std::string>>();
      }
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " +
                        e.what());
    }
    records.push_back(std::move(rec));
  }
  return CaptionManifest(std::move(records));
}

void write_manifest(const fs::path& path, const CaptionManifest& manifest,
                    const std::optional<FileStamp>& stamp) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  if (stamp) {
    out << json{{"schema_version", stamp->schema_version},
                {"config_hash", stamp->config_hash}}
               .dump()
        << '\n';
  }
  for (const auto& r : manifest.records()) {
    out << json{{"id", r.id}, {"captions", r.captions}}.dump() << '\n';
  }
}

EmbeddingSet ingest_embeddings(const fs::path& path,
                               const CaptionManifest& manifest) {
  RawMatrix m = read_matrix_file(path, kEmbeddingMagic);
  if (m.rows != manifest.size()) {
    throw ManifestMismatch("'" + path.string() + "' has " +
                           std::to_string(m.rows) + " rows but manifest has " +
                           std::to_string(manifest.size()) + " ids");
  }
  if (m.cols == 0) throw FormatError("'" + path.string() + "': zero dim");
  std::vector<double> values(m.values.begin(), m.values.end());
  return EmbeddingSet(manifest.ids(), m.cols, std::move(values));
}

EmbeddingSet ingest_embeddings(const fs::path& path,
                               const fs::path& manifest_path) {
  return ingest_embeddings(path, read_manifest(manifest_path));
}

void write_embeddings(const fs::path& path, const EmbeddingSet& set) {
  write_matrix_file(path, kEmbeddingMagic,
                    static_cast<std::uint32_t>(set.size()),
                    static_cast<std::uint32_t>(set.dim()), set.values());
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

std::vector<double> normalized(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0)) throw DegenerateVector("cannot normalize a zero vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

EmbeddingSet normalize(const EmbeddingSet& set) {
  std::vector<double> values;
  values.reserve(set.size() * set.dim());
  for (std::size_t r = 0; r < set.size(); ++r) {
    const double n = l2_norm(set.row(r));
    if (!(n > 0.0)) {
      throw DegenerateVector("row " + std::to_string(r) + " ('" + set.id(r) +
                             "') has zero norm");
    }
    for (double x : set.row(r)) values.push_back(x / n);
  }
  return EmbeddingSet(set.ids(), set.dim(), std::move(values));
}

bool is_normalized(const EmbeddingSet& set, double tolerance) {
  for (std::size_t r = 0; r < set.size(); ++r) {
    if (std::abs(l2_norm(set.row(r)) - 1.0) > tolerance) return false;
  }
  return true;
}

namespace {

void append_half(std::vector<double>& out, std::span<const double> half,
                 bool norm, const std::string& what) {
  if (!norm) {
    out.insert(out.end(), half.begin(), half.end());
    return;
  }
  const double n = l2_norm(half);
  if (!(n > 0.0)) throw DegenerateVector(what + " has zero norm");
  for (double x : half) out.push_back(x / n);
}

template <class EmbedCaption>
MultimodalSet build_impl(const EmbeddingSet& images,
                         const CaptionManifest& captions,
                         const MultimodalOptions& options,
                         EmbedCaption&& embed_caption) {
  if (captions.size() != images.size()) {
    throw ManifestMismatch("captions cover " + std::to_string(captions.size()) +
                           " ids but there are " +
                           std::to_string(images.size()) + " images");
  }
  const std::size_t text_dim =
      options.text_dim == 0 ? images.dim() : options.text_dim;
  std::vector<double> values;
  values.reserve(images.size() * (images.dim() + text_dim));
  std::vector<double> mean(text_dim);
  for (std::size_t r = 0; r < images.size(); ++r) {
    const ManifestRecord* rec = captions.find(images.id(r));
    if (rec == nullptr) {
      throw ManifestMismatch("no captions for image '" + images.id(r) + "'");
    }
    if (rec->captions.empty()) {
      throw ManifestMismatch("image '" + images.id(r) + "' has zero captions");
    }
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t j = 0; j < rec->captions.size(); ++j) {
      std::span<const double> t = embed_caption(*rec, j);
      if (t.size() != text_dim) {
        throw DimError("text embedding of width " + std::to_string(t.size()) +
                       ", expected " + std::to_string(text_dim));
      }
      for (std::size_t k = 0; k < text_dim; ++k) mean[k] += t[k];
    }
    const double m = static_cast<double>(rec->captions.size());
    for (double& x : mean) x /= m;
    append_half(values, images.row(r), options.half_norm,
                "image embedding of '" + images.id(r) + "'");
    append_half(values, mean, options.half_norm,
                "mean text embedding of '" + images.id(r) + "'");
  }
  MultimodalSet out;
  out.base = EmbeddingSet(images.ids(), images.dim() + text_dim,
                          std::move(values));
  out.image_dim = images.dim();
  out.text_dim = text_dim;
  out.half_normalized = options.half_norm;
  return out;
}

}  // namespace

MultimodalSet build_multimodal(const EmbeddingSet& images,
                               const CaptionManifest& captions,
                               const TextEmbedder& text_embedder,
                               const MultimodalOptions& options) {
  std::vector<double> scratch;
  return build_impl(images, captions, options,
                    [&](const ManifestRecord& rec, std::size_t j) {
                      scratch = text_embedder(rec.captions[j]);
                      return std::span<const double>(scratch);
                    });
}

MultimodalSet build_multimodal_from_table(const EmbeddingSet& images,
                                          const CaptionManifest& captions,
                                          const EmbeddingSet& caption_table,
                                          const MultimodalOptions& options) {
  if (caption_table.size() != captions.total_captions()) {
    throw ManifestMismatch("caption table has " +
                           std::to_string(caption_table.size()) +
                           " rows but manifest lists " +
                           std::to_string(captions.total_captions()) +
                           " captions");
  }
  std::unordered_map<std::string, std::size_t> first_row;
  std::size_t offset = 0;
  for (const auto& rec : captions.records()) {
    first_row.emplace(rec.id, offset);
    offset += rec.captions.size();
  }
  MultimodalOptions opts = options;
  if (opts.text_dim == 0) opts.text_dim = caption_table.dim();
  return build_impl(images, captions, opts,
                    [&](const ManifestRecord& rec, std::size_t j) {
                      return caption_table.row(first_row.at(rec.id) + j);
                    });
}

}  // namespace selfret
