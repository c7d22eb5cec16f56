#pragma once

// Reinforced-dataset container. File layout (all integers little-endian):
//
//   "MDRS" | version u16 | TLV blocks
//   block := tag char[4] | payload_len u64 | payload
//   MANI:  K u32, K x (d_k u32, temp_k f64), J u32, S u32, gzip u8, dtype u8
//   RECD:  one gzip frame per record (level from MANI)
//   INDX:  count u64, count x (id u64, block_offset u64, frame_len u64)
//   footer: INDX block offset u64 | "MDRI"
//
// Records are append-only; the index trails them and can be rebuilt by a
// full scan. Record body layout is in decode_record below.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmdr/augment.hpp"
#include "mmdr/bf16.hpp"
#include "mmdr/error.hpp"
#include "mmdr/image.hpp"
#include "mmdr/providers.hpp"
#include "mmdr/rng.hpp"
#include "mmdr/wire.hpp"
#include "mmdr/zio.hpp"

namespace mmdr {

struct StoreManifest {
  std::vector<std::uint32_t> teacher_dims;  // size K
  std::vector<double> teacher_temps;        // size K
  std::uint32_t num_augmentations = 1;      // J
  std::uint32_t num_syn_captions = 0;       // S
  int gzip_level = 6;
  std::uint64_t sample_count = 0;  // filled from the index on open

  std::size_t teacher_count() const { return teacher_dims.size(); }
  std::size_t ensemble_dim() const {
    std::size_t d = 0;
    for (std::uint32_t dk : teacher_dims) d += dk;
    return d;
  }

  void validate() const {
    require(!teacher_dims.empty(), Errc::manifest_mismatch, "manifest needs K >= 1 teachers");
    require(teacher_temps.size() == teacher_dims.size(), Errc::manifest_mismatch,
            "teacher temperature count must equal teacher count");
    for (std::uint32_t d : teacher_dims)
      require(d >= 1, Errc::manifest_mismatch, "teacher dims must be positive");
    for (double t : teacher_temps)
      require(t > 0.0, Errc::manifest_mismatch, "teacher temperatures must be positive");
    require(num_augmentations >= 1, Errc::manifest_mismatch, "manifest needs J >= 1");
    require(gzip_level >= 0 && gzip_level <= 9, Errc::manifest_mismatch,
            "gzip level must lie in [0, 9]");
  }

  bool layout_equals(const StoreManifest& o) const {
    return teacher_dims == o.teacher_dims && teacher_temps == o.teacher_temps &&
           num_augmentations == o.num_augmentations && num_syn_captions == o.num_syn_captions;
  }
};

struct ReinforcedRecord {
  std::uint64_t id = 0;
  RasterImage image;
  std::string real_caption;
  std::vector<std::string> syn_captions;       // S
  std::vector<AugmentationParams> aug_params;  // J
  // bf16 unit-norm embeddings, row-major over [j][k] / [s][k] / [k].
  std::vector<std::vector<Bf16Buffer>> img_embeds;  // J x K, each d_k values
  std::vector<std::vector<Bf16Buffer>> syn_embeds;  // S x K
  std::vector<Bf16Buffer> txt_embed;                // K
};

namespace detail {

// Norm slack for stored rows: bf16 rounding moves a unit vector's norm by
// at most 2^-8 per component, so 2^-7 total is a safe acceptance band.
inline constexpr double kUnitNormTol = 0.0078125;

inline void check_embed_row(const Bf16Buffer& row, std::uint32_t dim, const char* what) {
  require(row.size() == dim, Errc::manifest_mismatch,
          std::string(what) + " has " + std::to_string(row.size()) + " values, manifest says " +
              std::to_string(dim));
  double norm = 0.0;
  for (std::uint16_t bits : row.bits()) {
    float v = bf16_to_f32(bits);
    require(std::isfinite(v), Errc::manifest_mismatch,
            std::string(what) + " contains a non-finite value");
    norm += double(v) * double(v);
  }
  norm = std::sqrt(norm);
  require(std::abs(norm - 1.0) <= kUnitNormTol, Errc::non_unit_rows,
          std::string(what) + " norm " + std::to_string(norm) + " outside 1 +/- 2^-7");
}

}  // namespace detail

inline void validate_record(const ReinforcedRecord& rec, const StoreManifest& m) {
  const std::size_t K = m.teacher_count();
  const std::size_t J = m.num_augmentations, S = m.num_syn_captions;
  rec.image.validate();
  require(rec.syn_captions.size() == S, Errc::manifest_mismatch,
          "record has " + std::to_string(rec.syn_captions.size()) + " synthetic captions, manifest says " +
              std::to_string(S));
  require(rec.aug_params.size() == J, Errc::manifest_mismatch,
          "record has " + std::to_string(rec.aug_params.size()) + " augmentation sets, manifest says " +
              std::to_string(J));
  require(rec.img_embeds.size() == J && rec.syn_embeds.size() == S && rec.txt_embed.size() == K,
          Errc::manifest_mismatch, "embedding array lengths do not match the manifest");
  for (const auto& per_j : rec.img_embeds) {
    require(per_j.size() == K, Errc::manifest_mismatch, "image embedding teacher count mismatch");
    for (std::size_t k = 0; k < K; ++k)
      detail::check_embed_row(per_j[k], m.teacher_dims[k], "image embedding");
  }
  for (const auto& per_s : rec.syn_embeds) {
    require(per_s.size() == K, Errc::manifest_mismatch,
            "synthetic caption embedding teacher count mismatch");
    for (std::size_t k = 0; k < K; ++k)
      detail::check_embed_row(per_s[k], m.teacher_dims[k], "synthetic caption embedding");
  }
  for (std::size_t k = 0; k < K; ++k)
    detail::check_embed_row(rec.txt_embed[k], m.teacher_dims[k], "caption embedding");
}

inline std::vector<std::uint8_t> encode_record(const ReinforcedRecord& rec,
                                               const StoreManifest& m) {
  validate_record(rec, m);
  wire::Writer w;
  w.u64(rec.id);
  w.u16(rec.image.width);
  w.u16(rec.image.height);
  w.bytes(rec.image.pixels.data(), rec.image.pixels.size());
  w.str(rec.real_caption);
  for (const std::string& s : rec.syn_captions) w.str(s);
  for (const AugmentationParams& p : rec.aug_params) w.blob(serialize_params(p));
  auto put_rows = [&](const std::vector<Bf16Buffer>& rows) {
    for (const Bf16Buffer& row : rows)
      for (std::uint16_t bits : row.bits()) w.u16(bits);
  };
  for (const auto& per_j : rec.img_embeds) put_rows(per_j);
  for (const auto& per_s : rec.syn_embeds) put_rows(per_s);
  put_rows(rec.txt_embed);
  return w.take();
}

inline ReinforcedRecord decode_record(const std::uint8_t* data, std::size_t size,
                                      const StoreManifest& m) {
  wire::Reader r(data, size);
  ReinforcedRecord rec;
  rec.id = r.u64();
  std::uint16_t iw = r.u16(), ih = r.u16();
  require(iw > 0 && ih > 0, Errc::bad_format, "record image has empty dimensions");
  rec.image = RasterImage{iw, ih};
  r.raw(rec.image.pixels.data(), rec.image.pixels.size());
  rec.real_caption = r.str();
  rec.syn_captions.resize(m.num_syn_captions);
  for (auto& s : rec.syn_captions) s = r.str();
  rec.aug_params.resize(m.num_augmentations);
  for (auto& p : rec.aug_params) {
    std::vector<std::uint8_t> blob = r.blob();
    p = parse_params(blob);
  }
  auto get_rows = [&](std::vector<Bf16Buffer>& rows) {
    rows.resize(m.teacher_count());
    for (std::size_t k = 0; k < m.teacher_count(); ++k) {
      rows[k].bits().resize(m.teacher_dims[k]);
      for (auto& bits : rows[k].bits()) bits = r.u16();
    }
  };
  rec.img_embeds.resize(m.num_augmentations);
  for (auto& per_j : rec.img_embeds) get_rows(per_j);
  rec.syn_embeds.resize(m.num_syn_captions);
  for (auto& per_s : rec.syn_embeds) get_rows(per_s);
  get_rows(rec.txt_embed);
  r.expect_end("record body");
  return rec;
}

struct IndexEntry {
  std::uint64_t id = 0;
  std::uint64_t offset = 0;     // file offset of the RECD tag
  std::uint64_t frame_len = 0;  // compressed payload length
};

namespace detail {

inline void encode_manifest(wire::Writer& w, const StoreManifest& m) {
  w.u32(std::uint32_t(m.teacher_count()));
  for (std::size_t k = 0; k < m.teacher_count(); ++k) {
    w.u32(m.teacher_dims[k]);
    w.f64(m.teacher_temps[k]);
  }
  w.u32(m.num_augmentations);
  w.u32(m.num_syn_captions);
  w.u8(std::uint8_t(m.gzip_level));
  w.u8(1);  // embedding dtype: bf16
}

inline StoreManifest decode_manifest(const std::uint8_t* data, std::size_t size) {
  wire::Reader r(data, size);
  StoreManifest m;
  std::uint32_t K = r.u32();
  require(K >= 1 && K <= 1024, Errc::bad_format, "implausible teacher count");
  m.teacher_dims.resize(K);
  m.teacher_temps.resize(K);
  for (std::uint32_t k = 0; k < K; ++k) {
    m.teacher_dims[k] = r.u32();
    m.teacher_temps[k] = r.f64();
  }
  m.num_augmentations = r.u32();
  m.num_syn_captions = r.u32();
  m.gzip_level = r.u8();
  std::uint8_t dtype = r.u8();
  require(dtype == 1, Errc::bad_format, "unsupported embedding dtype tag");
  r.expect_end("manifest");
  m.validate();
  return m;
}

inline void write_block(std::ofstream& f, const char tag[4],
                        const std::vector<std::uint8_t>& payload) {
  f.write(tag, 4);
  std::uint8_t len[8];
  for (int i = 0; i < 8; ++i) len[i] = std::uint8_t((std::uint64_t(payload.size()) >> (8 * i)) & 0xFF);
  f.write(reinterpret_cast<const char*>(len), 8);
  f.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size()));
  require(bool(f), Errc::io_error, "store write failed");
}

}  // namespace detail

class StoreWriter {
 public:
  StoreWriter(const std::string& path, StoreManifest manifest)
      : path_(path), manifest_(std::move(manifest)) {
    if (manifest_.teacher_temps.empty())
      manifest_.teacher_temps.assign(manifest_.teacher_dims.size(), 0.01);
    manifest_.validate();
    f_.open(path, std::ios::binary | std::ios::trunc);
    require(bool(f_), Errc::io_error, "cannot create store " + path);
    f_.write("MDRS", 4);
    char version[2] = {1, 0};
    f_.write(version, 2);
    wire::Writer w;
    detail::encode_manifest(w, manifest_);
    detail::write_block(f_, "MANI", w.data());
    offset_ = 4 + 2 + 12 + w.size();
  }

  StoreWriter(const StoreWriter&) = delete;
  StoreWriter& operator=(const StoreWriter&) = delete;

  ~StoreWriter() {
    try {
      finish();
    } catch (...) {
      // Destructor must not throw; call finish() explicitly to observe errors.
    }
  }

  const StoreManifest& manifest() const { return manifest_; }
  std::uint64_t count() const { return index_.size(); }

  // Appends one compressed record frame; returns its block offset.
  std::uint64_t write_record(const ReinforcedRecord& rec) {
    require(f_.is_open(), Errc::io_error, "store already finished");
    std::vector<std::uint8_t> body = encode_record(rec, manifest_);
    std::vector<std::uint8_t> frame = gzip_compress(body, manifest_.gzip_level);
    std::uint64_t at = offset_;
    detail::write_block(f_, "RECD", frame);
    index_.push_back({rec.id, at, frame.size()});
    offset_ += 12 + frame.size();
    manifest_.sample_count = index_.size();
    return at;
  }

  void finish() {
    if (!f_.is_open()) return;
    wire::Writer w;
    w.u64(index_.size());
    for (const IndexEntry& e : index_) {
      w.u64(e.id);
      w.u64(e.offset);
      w.u64(e.frame_len);
    }
    std::uint64_t indx_at = offset_;
    detail::write_block(f_, "INDX", w.data());
    std::uint8_t footer[12];
    for (int i = 0; i < 8; ++i) footer[i] = std::uint8_t((indx_at >> (8 * i)) & 0xFF);
    footer[8] = 'M';
    footer[9] = 'D';
    footer[10] = 'R';
    footer[11] = 'I';
    f_.write(reinterpret_cast<const char*>(footer), 12);
    require(bool(f_), Errc::io_error, "store finalize failed");
    f_.close();
  }

 private:
  std::string path_;
  StoreManifest manifest_;
  std::ofstream f_;
  std::uint64_t offset_ = 0;
  std::vector<IndexEntry> index_;
};

struct TrainingView {
  RasterImage augmented_image;
  std::string real_caption;
  std::string syn_caption;  // empty when the store has S = 0
  std::uint32_t j = 0;
  std::uint32_t s = 0;
  bool has_syn = false;
  // Decoded f32 rows, one per teacher: the stored slices, never recomputed.
  std::vector<std::vector<float>> img_embeds;
  std::vector<std::vector<float>> txt_embeds;
  std::vector<std::vector<float>> syn_embeds;
};

struct StoreStats {
  std::uint64_t sample_count = 0;
  // Raw (uncompressed) bytes per record section, summed over the store.
  std::uint64_t images = 0;
  std::uint64_t captions = 0;
  std::uint64_t syn_captions = 0;
  std::uint64_t aug_params = 0;
  std::uint64_t txt_embeds = 0;  // real plus synthetic caption embeddings
  std::uint64_t img_embeds = 0;
  std::uint64_t total_raw = 0;
  std::uint64_t compressed = 0;  // sum of record frame bytes
  std::uint64_t file_bytes = 0;

  std::uint64_t embed_bytes() const { return txt_embeds + img_embeds; }
};

class StoreReader {
 public:
  explicit StoreReader(const std::string& path) : path_(path) {
    f_.open(path, std::ios::binary);
    require(bool(f_), Errc::io_error, "cannot open store " + path);
    f_.seekg(0, std::ios::end);
    file_size_ = std::uint64_t(f_.tellg());
    require(file_size_ >= 4 + 2 + 12 + 12, Errc::bad_format, path + ": too small for a store");

    char head[6];
    f_.seekg(0);
    f_.read(head, 6);
    require(std::memcmp(head, "MDRS", 4) == 0, Errc::bad_format, path + ": not an MDRS store");
    require(head[4] == 1 && head[5] == 0, Errc::bad_format, path + ": unsupported store version");

    // Manifest block directly after the header.
    char tag[4];
    std::uint64_t len = read_block_header(6, tag);
    require(std::memcmp(tag, "MANI", 4) == 0, Errc::bad_format, path + ": missing manifest");
    std::vector<std::uint8_t> mani(len);
    f_.read(reinterpret_cast<char*>(mani.data()), std::streamsize(len));
    require(bool(f_), Errc::bad_format, path + ": truncated manifest");
    manifest_ = detail::decode_manifest(mani.data(), mani.size());

    // Trailing footer locates the index block.
    std::uint8_t footer[12];
    f_.seekg(std::streamoff(file_size_ - 12));
    f_.read(reinterpret_cast<char*>(footer), 12);
    require(std::memcmp(footer + 8, "MDRI", 4) == 0, Errc::bad_format,
            path + ": missing index footer");
    std::uint64_t indx_at = 0;
    for (int i = 0; i < 8; ++i) indx_at |= std::uint64_t(footer[i]) << (8 * i);
    require(indx_at + 12 <= file_size_ - 12, Errc::bad_format, path + ": index offset out of range");
    len = read_block_header(indx_at, tag);
    require(std::memcmp(tag, "INDX", 4) == 0, Errc::bad_format, path + ": footer does not point at the index");
    std::vector<std::uint8_t> indx(len);
    f_.read(reinterpret_cast<char*>(indx.data()), std::streamsize(len));
    require(bool(f_), Errc::bad_format, path + ": truncated index");
    wire::Reader r(indx);
    std::uint64_t count = r.u64();
    index_.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      IndexEntry e;
      e.id = r.u64();
      e.offset = r.u64();
      e.frame_len = r.u64();
      by_id_[e.id] = index_.size();
      index_.push_back(e);
    }
    r.expect_end("store index");
    manifest_.sample_count = count;
  }

  const StoreManifest& manifest() const { return manifest_; }
  std::size_t count() const { return index_.size(); }
  const std::vector<IndexEntry>& index() const { return index_; }
  std::uint64_t file_size() const { return file_size_; }
  bool contains(std::uint64_t id) const { return by_id_.count(id) != 0; }

  std::vector<std::uint64_t> ids() const {
    std::vector<std::uint64_t> out;
    out.reserve(index_.size());
    for (const IndexEntry& e : index_) out.push_back(e.id);
    return out;
  }

  ReinforcedRecord read_record(std::uint64_t id) const {
    auto it = by_id_.find(id);
    require(it != by_id_.end(), Errc::unknown_id, "no record with id " + std::to_string(id));
    return read_entry(index_[it->second]);
  }

  // Uniform (j, s) choice from the seed, augmentation replayed on the fly.
  TrainingView draw_training_view(std::uint64_t id, std::uint64_t rng_seed) const {
    ReinforcedRecord rec = read_record(id);
    Rng rng(rng_seed);
    TrainingView v;
    v.j = std::uint32_t(rng.next_below(manifest_.num_augmentations));
    v.has_syn = manifest_.num_syn_captions > 0;
    v.s = v.has_syn ? std::uint32_t(rng.next_below(manifest_.num_syn_captions)) : 0;
    v.augmented_image = apply_augmentation(rec.image, rec.aug_params[v.j]);
    v.real_caption = rec.real_caption;
    for (const Bf16Buffer& row : rec.img_embeds[v.j]) v.img_embeds.push_back(row.decode());
    for (const Bf16Buffer& row : rec.txt_embed) v.txt_embeds.push_back(row.decode());
    if (v.has_syn) {
      v.syn_caption = rec.syn_captions[v.s];
      for (const Bf16Buffer& row : rec.syn_embeds[v.s]) v.syn_embeds.push_back(row.decode());
    }
    return v;
  }

  StoreStats stats() const {
    StoreStats st;
    st.sample_count = index_.size();
    st.file_bytes = file_size_;
    const std::uint64_t d_ens = manifest_.ensemble_dim();
    for (const IndexEntry& e : index_) {
      ReinforcedRecord rec = read_entry(e);
      st.images += 4 + rec.image.pixels.size();
      st.captions += 4 + rec.real_caption.size();
      for (const std::string& s : rec.syn_captions) st.syn_captions += 4 + s.size();
      for (const AugmentationParams& p : rec.aug_params)
        st.aug_params += 4 + serialize_params(p).size();
      st.img_embeds += std::uint64_t(manifest_.num_augmentations) * d_ens * 2;
      st.txt_embeds += std::uint64_t(manifest_.num_syn_captions + 1) * d_ens * 2;
      st.compressed += e.frame_len;
    }
    st.total_raw = st.images + st.captions + st.syn_captions + st.aug_params + st.txt_embeds +
                   st.img_embeds;
    return st;
  }

 private:
  std::uint64_t read_block_header(std::uint64_t at, char tag[4]) const {
    f_.seekg(std::streamoff(at));
    std::uint8_t hdr[12];
    f_.read(reinterpret_cast<char*>(hdr), 12);
    require(bool(f_), Errc::bad_format, path_ + ": truncated block header");
    std::memcpy(tag, hdr, 4);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= std::uint64_t(hdr[4 + i]) << (8 * i);
    require(len <= file_size_, Errc::bad_format, path_ + ": block length out of range");
    return len;
  }

  ReinforcedRecord read_entry(const IndexEntry& e) const {
    std::vector<std::uint8_t> frame;
    {
      std::lock_guard<std::mutex> lock(io_mu_);
      char tag[4];
      std::uint64_t len = read_block_header(e.offset, tag);
      require(std::memcmp(tag, "RECD", 4) == 0, Errc::bad_format,
              path_ + ": index points at a non-record block");
      require(len == e.frame_len, Errc::bad_format, path_ + ": index frame length mismatch");
      frame.resize(len);
      f_.read(reinterpret_cast<char*>(frame.data()), std::streamsize(len));
      require(bool(f_), Errc::bad_format, path_ + ": truncated record frame");
    }
    std::vector<std::uint8_t> body = gzip_decompress(frame);
    ReinforcedRecord rec = decode_record(body.data(), body.size(), manifest_);
    return rec;
  }

  std::string path_;
  mutable std::ifstream f_;
  mutable std::mutex io_mu_;
  std::uint64_t file_size_ = 0;
  StoreManifest manifest_;
  std::vector<IndexEntry> index_;
  std::unordered_map<std::uint64_t, std::size_t> by_id_;
};

// Full TLV walk that inflates every record frame; must agree with the
// stored index for a well-formed store.
inline std::vector<IndexEntry> scan_index(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(bool(f), Errc::io_error, "cannot open store " + path);
  f.seekg(0, std::ios::end);
  std::uint64_t file_size = std::uint64_t(f.tellg());
  char head[6];
  f.seekg(0);
  f.read(head, 6);
  require(bool(f) && std::memcmp(head, "MDRS", 4) == 0, Errc::bad_format,
          path + ": not an MDRS store");

  StoreManifest manifest;
  bool have_manifest = false;
  std::vector<IndexEntry> out;
  std::uint64_t at = 6;
  while (at + 12 <= file_size - 12) {
    f.seekg(std::streamoff(at));
    std::uint8_t hdr[12];
    f.read(reinterpret_cast<char*>(hdr), 12);
    require(bool(f), Errc::bad_format, path + ": truncated block header");
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= std::uint64_t(hdr[4 + i]) << (8 * i);
    require(at + 12 + len <= file_size, Errc::bad_format, path + ": block overruns the file");
    std::vector<std::uint8_t> payload(len);
    f.read(reinterpret_cast<char*>(payload.data()), std::streamsize(len));
    require(bool(f), Errc::bad_format, path + ": truncated block payload");
    if (std::memcmp(hdr, "MANI", 4) == 0) {
      manifest = detail::decode_manifest(payload.data(), payload.size());
      have_manifest = true;
    } else if (std::memcmp(hdr, "RECD", 4) == 0) {
      require(have_manifest, Errc::bad_format, path + ": record before manifest");
      std::vector<std::uint8_t> body = gzip_decompress(payload);
      ReinforcedRecord rec = decode_record(body.data(), body.size(), manifest);
      out.push_back({rec.id, at, len});
    } else if (std::memcmp(hdr, "INDX", 4) == 0) {
      break;  // trailing index reached
    } else {
      fail(Errc::bad_format, path + ": unknown block tag");
    }
    at += 12 + len;
  }
  return out;
}

// End-to-end reinforcement: sample J augmentations per pair, collect S
// synthetic captions, embed everything through the teachers, write records.

struct ReinforceConfig {
  AugmentPolicy policy;
  std::uint32_t num_augmentations = 1;  // J
  std::uint32_t num_syn_captions = 0;   // S
  std::vector<double> teacher_temps;    // empty = 0.01 per teacher
  int gzip_level = 6;
  std::uint64_t seed = 0;
};

struct ReinforceReport {
  std::uint64_t written = 0;
  std::vector<std::pair<std::uint64_t, std::string>> skipped;  // id, reason
};

inline ReinforceReport reinforce(const std::vector<PlainPair>& pairs,
                                 CaptionProvider* caption_provider, TeacherProvider& teacher,
                                 const ReinforceConfig& cfg, const std::string& out_path) {
  require(cfg.num_syn_captions == 0 || caption_provider != nullptr, Errc::invalid_argument,
          "synthetic captions requested without a caption provider");
  require(cfg.num_augmentations >= 1 && cfg.num_augmentations <= 256, Errc::invalid_argument,
          "augmentation count must lie in [1, 256]");
  require(cfg.num_syn_captions <= 255, Errc::invalid_argument,
          "synthetic caption count must lie in [0, 255]");

  StoreManifest manifest;
  manifest.teacher_dims = teacher.dims();
  manifest.teacher_temps = cfg.teacher_temps.empty()
                               ? std::vector<double>(teacher.teacher_count(), 0.01)
                               : cfg.teacher_temps;
  manifest.num_augmentations = cfg.num_augmentations;
  manifest.num_syn_captions = cfg.num_syn_captions;
  manifest.gzip_level = cfg.gzip_level;

  StoreWriter writer(out_path, manifest);
  ReinforceReport report;

  auto encode_rows = [&](const std::vector<std::vector<float>>& rows) {
    require(rows.size() == teacher.teacher_count(), Errc::teacher_count_mismatch,
            "provider returned a wrong number of teacher embeddings");
    std::vector<Bf16Buffer> out;
    out.reserve(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      require(rows[k].size() == manifest.teacher_dims[k], Errc::embedding_dim_mismatch,
              "provider returned dim " + std::to_string(rows[k].size()) + " for teacher " +
                  std::to_string(k) + ", expected " + std::to_string(manifest.teacher_dims[k]));
      out.push_back(Bf16Buffer::encode(rows[k]));
    }
    return out;
  };

  for (const PlainPair& pair : pairs) {
    try {
      ReinforcedRecord rec;
      rec.id = pair.id;
      rec.image = pair.image;
      rec.real_caption = pair.caption;
      if (cfg.num_syn_captions > 0)
        rec.syn_captions = caption_provider->captions(pair.id, pair.caption,
                                                      cfg.num_syn_captions);
      for (std::uint32_t j = 0; j < cfg.num_augmentations; ++j) {
        AugmentationParams params = sample_augmentation(derive_seed(cfg.seed, pair.id, j, 0),
                                                        cfg.policy, pair.image.width,
                                                        pair.image.height);
        RasterImage augmented = apply_augmentation(pair.image, params);
        rec.aug_params.push_back(std::move(params));
        rec.img_embeds.push_back(
            encode_rows(teacher.embed_image(augmented, image_row_id(pair.id, j))));
      }
      for (std::uint32_t s = 0; s < cfg.num_syn_captions; ++s)
        rec.syn_embeds.push_back(
            encode_rows(teacher.embed_text(rec.syn_captions[s], syn_row_id(pair.id, s))));
      rec.txt_embed = encode_rows(teacher.embed_text(pair.caption, text_row_id(pair.id)));
      writer.write_record(rec);
      ++report.written;
    } catch (const Error& e) {
      if (e.code() != Errc::provider_failure) throw;
      report.skipped.emplace_back(pair.id, e.what());
    }
  }
  writer.finish();
  return report;
}

}  // namespace mmdr
