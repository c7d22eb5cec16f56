#pragma once

// Pluggable sources for the reinforcement pipeline: synthetic captions per
// sample and per-teacher embeddings, either precomputed (MMEB files keyed
// by row id) or from the built-in seeded synthetic teacher.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mmdr/error.hpp"
#include "mmdr/image.hpp"
#include "mmdr/mmeb.hpp"
#include "mmdr/png_io.hpp"
#include "mmdr/rng.hpp"
#include "mmdr/toygen.hpp"

namespace mmdr {

// Row-id convention for precomputed embedding files. Image and text ids
// live in separate files, so the j=0 slot may coincide with the real
// caption slot without ambiguity.
constexpr std::uint64_t image_row_id(std::uint64_t sample_id, std::uint32_t j) {
  return (sample_id << 8) | (j & 0xFF);
}
constexpr std::uint64_t text_row_id(std::uint64_t sample_id) { return sample_id << 8; }
constexpr std::uint64_t syn_row_id(std::uint64_t sample_id, std::uint32_t s) {
  return (sample_id << 8) | ((s + 1) & 0xFF);
}

struct PlainPair {
  std::uint64_t id = 0;
  RasterImage image;
  std::string caption;
};

class CaptionProvider {
 public:
  virtual ~CaptionProvider() = default;
  // Exactly `want` synthetic captions for the sample, or ProviderFailure.
  virtual std::vector<std::string> captions(std::uint64_t id, const std::string& real_caption,
                                            std::size_t want) = 0;
};

// JSONL-backed captions: one {"id": n, "captions": [...]} object per line.
class JsonlCaptionProvider : public CaptionProvider {
 public:
  explicit JsonlCaptionProvider(const std::string& path) {
    std::ifstream f(path);
    require(bool(f), Errc::io_error, "cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      require(!j.is_discarded() && j.is_object() && j.contains("id") && j.contains("captions") &&
                  j["captions"].is_array(),
              Errc::bad_format,
              path + ":" + std::to_string(lineno) + ": expected {id, captions:[...]}");
      std::vector<std::string> caps;
      for (const auto& c : j["captions"]) {
        require(c.is_string(), Errc::bad_format,
                path + ":" + std::to_string(lineno) + ": captions must be strings");
        caps.push_back(c.get<std::string>());
      }
      by_id_[j["id"].get<std::uint64_t>()] = std::move(caps);
    }
  }

  std::vector<std::string> captions(std::uint64_t id, const std::string&,
                                    std::size_t want) override {
    auto it = by_id_.find(id);
    require(it != by_id_.end(), Errc::provider_failure,
            "no captions for sample " + std::to_string(id));
    require(it->second.size() >= want, Errc::provider_failure,
            "sample " + std::to_string(id) + " has " + std::to_string(it->second.size()) +
                " captions, need " + std::to_string(want));
    return {it->second.begin(), it->second.begin() + std::ptrdiff_t(want)};
  }

 private:
  std::unordered_map<std::uint64_t, std::vector<std::string>> by_id_;
};

// Built-in caption source: attribute-preserving paraphrases for captions
// the toy parser understands, generic photo templates otherwise.
class TemplateCaptionProvider : public CaptionProvider {
 public:
  std::vector<std::string> captions(std::uint64_t, const std::string& real_caption,
                                    std::size_t want) override {
    std::vector<std::string> out;
    out.reserve(want);
    auto spec = toygen::parse_caption(real_caption);
    for (std::size_t s = 0; s < want; ++s) {
      if (spec) {
        out.push_back(toygen::paraphrase(*spec, s));
      } else {
        static const char* prefix[5] = {"a photo of ", "an image of ", "a picture of ",
                                        "a close-up of ", "a rendering of "};
        out.push_back(std::string(prefix[s % 5]) + real_caption);
      }
    }
    return out;
  }
};

class TeacherProvider {
 public:
  virtual ~TeacherProvider() = default;
  virtual std::size_t teacher_count() const = 0;
  virtual const std::vector<std::uint32_t>& dims() const = 0;
  // K unit-norm rows, one per teacher, for the (augmented) image or text.
  virtual std::vector<std::vector<float>> embed_image(const RasterImage& image,
                                                      std::uint64_t row_id) = 0;
  virtual std::vector<std::vector<float>> embed_text(const std::string& caption,
                                                     std::uint64_t row_id) = 0;
};

// Deterministic content-based teacher. Both modalities are reduced to the
// same 64-dim feature space (images directly; captions by re-rendering the
// described tile when parseable) and pushed through one seeded projection
// per teacher, so corresponding pairs land close together. Foreign captions
// fall back to a hashed bag of words.
class SyntheticTeacher : public TeacherProvider {
 public:
  static constexpr std::size_t kFeatureDim = 64;

  SyntheticTeacher(std::vector<std::uint32_t> dims, std::uint64_t seed)
      : dims_(std::move(dims)) {
    require(!dims_.empty(), Errc::teacher_count_mismatch, "need at least one teacher dim");
    for (std::uint32_t d : dims_) {
      require(d >= 1, Errc::embedding_dim_mismatch, "teacher dim must be positive");
      Rng proj_rng(derive_seed(seed, projections_.size(), 7));
      projections_.emplace_back(Matrix<float>::random_normal(d, kFeatureDim, proj_rng, 0.125));
    }
  }

  std::size_t teacher_count() const override { return dims_.size(); }
  const std::vector<std::uint32_t>& dims() const override { return dims_; }

  std::vector<std::vector<float>> embed_image(const RasterImage& image, std::uint64_t) override {
    ++forwards_;
    return project(image_features(image));
  }

  std::vector<std::vector<float>> embed_text(const std::string& caption, std::uint64_t) override {
    ++forwards_;
    if (auto spec = toygen::parse_caption(caption))
      return project(image_features(toygen::render_cell(*spec, 32, 32)));
    return project(text_features(caption));
  }

  std::uint64_t forward_count() const { return forwards_.load(); }

  // Contrast features over a 4x4 grid: per-cell chroma (red/blue offsets
  // from the cell's luminance), per-cell luminance relative to the image
  // mean, and a mean-centered luminance histogram. Centering removes the
  // background level every sample shares, which would otherwise dominate
  // all cosines.
  static std::vector<float> image_features(const RasterImage& img) {
    std::vector<float> f(kFeatureDim, 0.0f);
    std::vector<double> sums(48, 0.0);
    std::vector<std::uint32_t> cell_px(16, 0), hist(16, 0);
    double lum_total = 0.0;
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        const std::uint8_t* p = img.at(x, y);
        std::size_t cell = (y * 4 / img.height) * 4 + (x * 4 / img.width);
        sums[cell * 3] += p[0];
        sums[cell * 3 + 1] += p[1];
        sums[cell * 3 + 2] += p[2];
        ++cell_px[cell];
        double lum = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        lum_total += lum;
        ++hist[std::min<std::size_t>(std::size_t(lum / 16.0), 15)];
      }
    double total = double(img.width) * double(img.height);
    double img_lum = lum_total / total;
    for (std::size_t c = 0; c < 16; ++c) {
      double n = cell_px[c] ? double(cell_px[c]) : 1.0;
      double r = sums[c * 3] / n, g = sums[c * 3 + 1] / n, b = sums[c * 3 + 2] / n;
      double cell_lum = 0.299 * r + 0.587 * g + 0.114 * b;
      f[c * 2] = float((r - cell_lum) / 255.0);
      f[c * 2 + 1] = float((b - cell_lum) / 255.0);
      f[32 + c] = float((cell_lum - img_lum) / 255.0);
    }
    for (std::size_t bin = 0; bin < 16; ++bin)
      f[48 + bin] = float(hist[bin] / total - 1.0 / 16.0);
    return f;
  }

  static std::vector<float> text_features(const std::string& caption) {
    std::vector<float> f(kFeatureDim, 0.0f);
    std::string word;
    auto flush = [&] {
      if (word.empty()) return;
      std::uint64_t h = 1469598103934665603ull;
      for (char c : word) h = (h ^ std::uint8_t(c)) * 1099511628211ull;
      std::uint64_t m = Rng(h).next_u64();
      f[m % kFeatureDim] += (m >> 63) ? 1.0f : -1.0f;
      word.clear();
    };
    for (char c : caption) {
      if (std::isalnum(static_cast<unsigned char>(c)))
        word += char(std::tolower(static_cast<unsigned char>(c)));
      else
        flush();
    }
    flush();
    return f;
  }

 private:
  std::vector<std::vector<float>> project(const std::vector<float>& feat) const {
    std::vector<std::vector<float>> out;
    out.reserve(dims_.size());
    for (std::size_t k = 0; k < dims_.size(); ++k) {
      const Matrix<float>& P = projections_[k];
      std::vector<float> e(dims_[k], 0.0f);
      for (std::size_t r = 0; r < P.rows(); ++r) {
        double acc = 0.0;
        const float* row = P.row(r);
        for (std::size_t c = 0; c < kFeatureDim; ++c) acc += double(row[c]) * double(feat[c]);
        e[r] = float(acc);
      }
      double norm = 0.0;
      for (float v : e) norm += double(v) * double(v);
      norm = std::sqrt(norm);
      if (norm < 1e-12) {
        e.assign(dims_[k], 0.0f);
        e[0] = 1.0f;
      } else {
        for (float& v : e) v = float(v / norm);
      }
      out.push_back(std::move(e));
    }
    return out;
  }

  std::vector<std::uint32_t> dims_;
  std::vector<Matrix<float>> projections_;
  std::atomic<std::uint64_t> forwards_{0};
};

// Precomputed embeddings from MMEB files, one image file and one text file
// per teacher, looked up by the row-id convention above.
class MmebTeacherProvider : public TeacherProvider {
 public:
  struct Shard {
    std::string image_file;
    std::string text_file;
  };

  explicit MmebTeacherProvider(const std::vector<Shard>& shards,
                               const std::vector<std::uint32_t>& expected_dims = {}) {
    require(!shards.empty(), Errc::teacher_count_mismatch, "need at least one teacher shard");
    require(expected_dims.empty() || expected_dims.size() == shards.size(),
            Errc::teacher_count_mismatch, "expected-dim list does not match shard count");
    for (std::size_t k = 0; k < shards.size(); ++k) {
      Teacher t;
      t.image_dim = load(shards[k].image_file, t.images);
      t.text_dim = load(shards[k].text_file, t.texts);
      require(t.image_dim == t.text_dim, Errc::embedding_dim_mismatch,
              shards[k].text_file + ": text dim " + std::to_string(t.text_dim) +
                  " differs from image dim " + std::to_string(t.image_dim));
      if (!expected_dims.empty())
        require(t.image_dim == expected_dims[k], Errc::embedding_dim_mismatch,
                shards[k].image_file + ": teacher dim " + std::to_string(t.image_dim) +
                    ", expected " + std::to_string(expected_dims[k]));
      dims_.push_back(t.image_dim);
      teachers_.push_back(std::move(t));
    }
  }

  std::size_t teacher_count() const override { return teachers_.size(); }
  const std::vector<std::uint32_t>& dims() const override { return dims_; }

  std::vector<std::vector<float>> embed_image(const RasterImage&, std::uint64_t row_id) override {
    return lookup(row_id, /*image=*/true);
  }
  std::vector<std::vector<float>> embed_text(const std::string&, std::uint64_t row_id) override {
    return lookup(row_id, /*image=*/false);
  }

 private:
  struct Teacher {
    std::uint32_t image_dim = 0, text_dim = 0;
    std::unordered_map<std::uint64_t, std::vector<float>> images, texts;
  };

  static std::uint32_t load(const std::string& path,
                            std::unordered_map<std::uint64_t, std::vector<float>>& out) {
    MmebTensor t = read_mmeb(path);
    require(t.dims.size() == 2, Errc::bad_format, path + ": expected a rank-2 embedding tensor");
    auto dim = std::uint32_t(t.dims[1]);
    require(dim >= 1, Errc::embedding_dim_mismatch, path + ": zero embedding dim");
    for (std::size_t r = 0; r < t.row_ids.size(); ++r)
      out[t.row_ids[r]] = std::vector<float>(t.values.begin() + std::ptrdiff_t(r * dim),
                                             t.values.begin() + std::ptrdiff_t((r + 1) * dim));
    return dim;
  }

  std::vector<std::vector<float>> lookup(std::uint64_t row_id, bool image) const {
    std::vector<std::vector<float>> out;
    out.reserve(teachers_.size());
    for (const Teacher& t : teachers_) {
      const auto& map = image ? t.images : t.texts;
      auto it = map.find(row_id);
      require(it != map.end(), Errc::provider_failure,
              std::string(image ? "image" : "text") + " row id " + std::to_string(row_id) +
                  " missing from teacher files");
      out.push_back(it->second);
    }
    return out;
  }

  std::vector<std::uint32_t> dims_;
  std::vector<Teacher> teachers_;
};

// Plain-pair corpus IO: a directory of image files with same-stem .txt
// captions, or a JSONL index with {"id", "image", "caption"} lines.

inline std::vector<PlainPair> load_pairs_from_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  require(fs::is_directory(dir), Errc::io_error, dir + " is not a directory");
  std::vector<fs::path> images;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    if (ext == ".png" || ext == ".ppm") images.push_back(entry.path());
  }
  std::sort(images.begin(), images.end());
  std::vector<PlainPair> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    PlainPair p;
    p.id = i;
    p.image = images[i].extension() == ".png" ? read_png(images[i].string())
                                              : read_ppm(images[i].string());
    fs::path caption_path = images[i];
    caption_path.replace_extension(".txt");
    std::ifstream cf(caption_path);
    require(bool(cf), Errc::io_error, "missing caption file " + caption_path.string());
    std::string caption((std::istreambuf_iterator<char>(cf)), std::istreambuf_iterator<char>());
    while (!caption.empty() && (caption.back() == '\n' || caption.back() == '\r'))
      caption.pop_back();
    p.caption = std::move(caption);
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<PlainPair> load_pairs_from_jsonl(const std::string& path) {
  namespace fs = std::filesystem;
  std::ifstream f(path);
  require(bool(f), Errc::io_error, "cannot open " + path);
  fs::path base = fs::path(path).parent_path();
  std::vector<PlainPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    require(!j.is_discarded() && j.is_object() && j.contains("id") && j.contains("image") &&
                j.contains("caption"),
            Errc::bad_format,
            path + ":" + std::to_string(lineno) + ": expected {id, image, caption}");
    PlainPair p;
    p.id = j["id"].get<std::uint64_t>();
    fs::path img = base / j["image"].get<std::string>();
    p.image = img.extension() == ".png" ? read_png(img.string()) : read_ppm(img.string());
    p.caption = j["caption"].get<std::string>();
    out.push_back(std::move(p));
  }
  return out;
}

inline void save_pairs_to_dir(const std::vector<PlainPair>& pairs, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (const PlainPair& p : pairs) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%08llu", static_cast<unsigned long long>(p.id));
    write_png(p.image, (fs::path(dir) / (std::string(stem) + ".png")).string());
    std::ofstream cf(fs::path(dir) / (std::string(stem) + ".txt"));
    require(bool(cf), Errc::io_error, "cannot write caption for sample " + std::to_string(p.id));
    cf << p.caption << "\n";
  }
}

}  // namespace mmdr
