// Copyright 2026 The lssl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// MNIST-style IDX ingestion (plain or gzip), random crop streams for
// contrastive batches, and Gaussian fixtures.

#ifndef LSSL_DATA_HPP_
#define LSSL_DATA_HPP_

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lssl/linalg.hpp"
#include "lssl/losses.hpp"

#include "json.hpp"

namespace lssl {

/// Malformed or unreadable dataset file.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

struct ImageDataset {
  Matrix images;            // N x (H*W), row-major pixels in [0, 1]
  std::vector<int> labels;  // N class ids
  int height = 0;
  int width = 0;
  std::string source;

  std::size_t size() const { return labels.size(); }

  void validate() const {
    if (static_cast<std::size_t>(images.rows()) != labels.size())
      throw DataError("dataset: " + std::to_string(images.rows()) + " images but " +
                      std::to_string(labels.size()) + " labels");
    if (images.cols() != static_cast<Eigen::Index>(height) * width)
      throw DataError("dataset: image width mismatch");
    if (images.size() > 0 && (images.minCoeff() < 0.0 || images.maxCoeff() > 1.0))
      throw DataError("dataset: pixel outside [0, 1]");
  }
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline bool is_gzip(const std::vector<unsigned char>& b) {
  return b.size() >= 2 && b[0] == 0x1f && b[1] == 0x8b;
}

inline std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in, const std::string& path) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 16) != Z_OK) throw DataError("zlib init failed for '" + path + "'");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<unsigned char> out;
  unsigned char chunk[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk;
    zs.avail_out = sizeof(chunk);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError("'" + path + "': corrupt gzip stream at compressed byte offset " +
                      std::to_string(zs.total_in));
    }
    out.insert(out.end(), chunk, chunk + (sizeof(chunk) - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw DataError("'" + path + "': gzip stream truncated at compressed byte offset " +
                      std::to_string(zs.total_in));
    }
  }
  inflateEnd(&zs);
  return out;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                               const std::string& path, const char* what) {
  if (off + 4 > b.size())
    throw DataError("'" + path + "': truncated at byte offset " + std::to_string(b.size()) +
                    " while reading " + what + " (needs bytes " + std::to_string(off) + ".." +
                    std::to_string(off + 3) + ")");
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>((v >> s) & 0xff));
}

}  // namespace detail

/// Raw IDX payload: magic, dimension sizes and the unsigned-byte data.
struct IdxFile {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> data;
};

/// Parses an IDX file (gzip detected by its magic bytes). Only unsigned-byte
/// payloads with magic 2049 (labels, 1 dim) or 2051 (images, 3 dims).
inline IdxFile read_idx(const std::string& path) {
  std::vector<unsigned char> bytes = detail::read_file_bytes(path);
  if (detail::is_gzip(bytes)) bytes = detail::gunzip(bytes, path);
  IdxFile f;
  f.magic = detail::read_be32(bytes, 0, path, "magic number");
  std::size_t ndims = 0;
  if (f.magic == kIdxImageMagic) {
    ndims = 3;
  } else if (f.magic == kIdxLabelMagic) {
    ndims = 1;
  } else {
    throw DataError("'" + path + "': bad magic " + std::to_string(f.magic) +
                    " at byte offset 0 (expected 2049 or 2051)");
  }
  std::size_t count = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    f.dims.push_back(detail::read_be32(bytes, 4 + 4 * d, path, "dimension size"));
    count *= f.dims.back();
  }
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header + count)
    throw DataError("'" + path + "': truncated at byte offset " + std::to_string(bytes.size()) +
                    ", expected " + std::to_string(header + count) + " bytes");
  if (bytes.size() > header + count)
    throw DataError("'" + path + "': " + std::to_string(bytes.size() - header - count) +
                    " trailing bytes after offset " + std::to_string(header + count));
  f.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return f;
}

/// Loads an image file and its label file; pixels are scaled by 1/255.
inline ImageDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const IdxFile img = read_idx(images_path);
  const IdxFile lab = read_idx(labels_path);
  if (img.magic != kIdxImageMagic) throw DataError("'" + images_path + "' is not an image file");
  if (lab.magic != kIdxLabelMagic) throw DataError("'" + labels_path + "' is not a label file");
  if (img.dims[0] != lab.dims[0])
    throw DataError("count mismatch: " + std::to_string(img.dims[0]) + " images in '" + images_path +
                    "' vs " + std::to_string(lab.dims[0]) + " labels in '" + labels_path + "'");
  ImageDataset ds;
  ds.height = static_cast<int>(img.dims[1]);
  ds.width = static_cast<int>(img.dims[2]);
  ds.images.resize(img.dims[0], static_cast<Eigen::Index>(ds.height) * ds.width);
  for (Eigen::Index i = 0; i < ds.images.size(); ++i)
    ds.images.data()[i] = img.data[static_cast<std::size_t>(i)] / 255.0;
  for (unsigned char c : lab.data) {
    if (c > 9) throw DataError("'" + labels_path + "': label " + std::to_string(c) + " out of range");
    ds.labels.push_back(c);
  }
  ds.source = images_path;
  ds.validate();
  return ds;
}

/// Loads `train` or `t10k` files from a directory, with or without .gz.
inline ImageDataset load_mnist(const std::string& dir, const std::string& split) {
  require(split == "train" || split == "t10k", "load_mnist: split must be 'train' or 't10k'");
  auto pick = [&](const std::string& stem) {
    const std::filesystem::path base = std::filesystem::path(dir) / stem;
    if (std::filesystem::exists(base)) return base.string();
    const std::string gz = base.string() + ".gz";
    if (std::filesystem::exists(gz)) return gz;
    throw DataError("missing MNIST file '" + base.string() + "[.gz]'");
  };
  return load_idx(pick(split + "-images-idx3-ubyte"), pick(split + "-labels-idx1-ubyte"));
}

/// Uncompressed IDX encoding; pixels are quantized as round(255 v).
inline std::vector<unsigned char> encode_idx_images(const ImageDataset& ds) {
  std::vector<unsigned char> b;
  detail::put_be32(b, kIdxImageMagic);
  detail::put_be32(b, static_cast<std::uint32_t>(ds.images.rows()));
  detail::put_be32(b, static_cast<std::uint32_t>(ds.height));
  detail::put_be32(b, static_cast<std::uint32_t>(ds.width));
  for (Eigen::Index i = 0; i < ds.images.size(); ++i)
    b.push_back(static_cast<unsigned char>(std::lround(std::clamp(ds.images.data()[i], 0.0, 1.0) * 255.0)));
  return b;
}

inline std::vector<unsigned char> encode_idx_labels(const ImageDataset& ds) {
  std::vector<unsigned char> b;
  detail::put_be32(b, kIdxLabelMagic);
  detail::put_be32(b, static_cast<std::uint32_t>(ds.labels.size()));
  for (int l : ds.labels) b.push_back(static_cast<unsigned char>(l));
  return b;
}

inline void write_bytes(const std::string& path, const std::vector<unsigned char>& b) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

inline void write_idx(const ImageDataset& ds, const std::string& images_path,
                      const std::string& labels_path) {
  write_bytes(images_path, encode_idx_images(ds));
  write_bytes(labels_path, encode_idx_labels(ds));
}

/// The first n images (in file order).
inline ImageDataset take(const ImageDataset& ds, std::size_t n) {
  n = std::min(n, ds.size());
  ImageDataset out = ds;
  out.images = ds.images.topRows(static_cast<Eigen::Index>(n));
  out.labels.resize(n);
  return out;
}

/// Row-major size x size crop at (top, left), optionally mirrored left-right.
inline Vector crop_image(const ImageDataset& ds, std::size_t index, int top, int left, int size,
                         bool flip = false) {
  require(top >= 0 && left >= 0 && top + size <= ds.height && left + size <= ds.width,
          "crop_image: window outside image");
  Vector out(static_cast<Eigen::Index>(size) * size);
  const auto row = ds.images.row(static_cast<Eigen::Index>(index));
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const int sx = flip ? left + size - 1 - x : left + x;
      out(y * size + x) = row((top + y) * ds.width + sx);
    }
  return out;
}

/// One contrastive batch: anchor and positive are crops of the same image,
/// negative is a crop of a different image.
struct CropBatch {
  Matrix anchor, positive, negative;
  std::vector<std::size_t> anchor_index, negative_index;

  /// (pos, neg, ctx) network inputs: the positive crop is the context copy.
  TripleBatch triple() const { return {anchor, negative, positive}; }
};

/// Endless stream of crop batches. Each epoch visits a fresh seeded
/// permutation of the images; the last partial batch of an epoch is dropped.
/// Negatives come from the next sample of the same batch (round robin), or
/// from a random other image when the batch holds one sample.
class CropStream {
 public:
  CropStream(const ImageDataset& ds, int crop, std::size_t batch_size, std::uint64_t seed,
             bool flip = false)
      : ds_(&ds), crop_(crop), batch_(batch_size), flip_(flip), rng_(seed) {
    require(crop >= 1 && crop <= ds.height && crop <= ds.width, "CropStream: crop larger than image");
    require(batch_size >= 1 && batch_size <= ds.size(), "CropStream: batch size must be in [1, N]");
    require(ds.size() >= 2, "CropStream: need at least two images for negatives");
  }

  std::size_t batches_per_epoch() const { return ds_->size() / batch_; }
  std::size_t epoch() const { return epoch_; }

  /// Position in the stream; restore() on a stream over the same dataset
  /// and crop settings continues with identical batches.
  nlohmann::json state() const {
    return {{"rng", rng_.state()}, {"order", order_}, {"cursor", cursor_}, {"epoch", epoch_},
            {"crop", crop_},       {"batch_size", batch_}, {"flip", flip_}};
  }

  void restore(const nlohmann::json& j) {
    require(j.at("crop").get<int>() == crop_ && j.at("batch_size").get<std::size_t>() == batch_ &&
                j.at("flip").get<bool>() == flip_,
            "CropStream: state has different crop, batch_size or flip settings");
    rng_.set_state(j.at("rng").get<std::string>());
    order_ = j.at("order").get<std::vector<std::size_t>>();
    cursor_ = j.at("cursor").get<std::size_t>();
    epoch_ = j.at("epoch").get<std::size_t>();
    require(order_.empty() || order_.size() == ds_->size(), "CropStream: state is for another dataset");
  }

  CropBatch next() {
    if (order_.empty() || cursor_ + batch_ > order_.size()) reshuffle();
    CropBatch b;
    const Eigen::Index dim = static_cast<Eigen::Index>(crop_) * crop_;
    const Eigen::Index n = static_cast<Eigen::Index>(batch_);
    b.anchor.resize(n, dim);
    b.positive.resize(n, dim);
    b.negative.resize(n, dim);
    for (std::size_t i = 0; i < batch_; ++i) b.anchor_index.push_back(order_[cursor_ + i]);
    for (std::size_t i = 0; i < batch_; ++i) {
      std::size_t neg;
      if (batch_ > 1) {
        neg = b.anchor_index[(i + 1) % batch_];
      } else {
        neg = rng_.index(ds_->size() - 1);
        if (neg >= b.anchor_index[i]) ++neg;
      }
      b.negative_index.push_back(neg);
    }
    for (std::size_t i = 0; i < batch_; ++i) {
      const Eigen::Index r = static_cast<Eigen::Index>(i);
      b.anchor.row(r) = random_crop(b.anchor_index[i]).transpose();
      b.positive.row(r) = random_crop(b.anchor_index[i]).transpose();
      b.negative.row(r) = random_crop(b.negative_index[i]).transpose();
    }
    cursor_ += batch_;
    return b;
  }

 private:
  void reshuffle() {
    order_.resize(ds_->size());
    std::iota(order_.begin(), order_.end(), 0);
    for (std::size_t i = order_.size() - 1; i > 0; --i) std::swap(order_[i], order_[rng_.index(i + 1)]);
    cursor_ = 0;
    ++epoch_;
  }

  Vector random_crop(std::size_t index) {
    const int top = static_cast<int>(rng_.index(static_cast<std::size_t>(ds_->height - crop_ + 1)));
    const int left = static_cast<int>(rng_.index(static_cast<std::size_t>(ds_->width - crop_ + 1)));
    const bool flip = flip_ && rng_.uniform(0.0, 1.0) < 0.5;
    return crop_image(*ds_, index, top, left, crop_, flip);
  }

  const ImageDataset* ds_;
  int crop_;
  std::size_t batch_;
  bool flip_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

/// Labeled feature vectors (no image structure).
struct FeatureSet {
  Matrix x;
  std::vector<int> labels;
};

/// i.i.d. standard normal rows; labels cycle through `classes` and are then
/// shuffled, so every class appears floor(n / classes) or one more times.
inline FeatureSet synthetic_gaussian(std::size_t n, std::size_t dim, Rng& rng, int classes = 10) {
  require(n >= 1 && dim >= 1 && classes >= 1, "synthetic_gaussian: n, dim, classes must be >= 1");
  FeatureSet s;
  s.x = gaussian_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim), rng);
  for (std::size_t i = 0; i < n; ++i) s.labels.push_back(static_cast<int>(i % classes));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(s.labels[i], s.labels[rng.index(i + 1)]);
  return s;
}

}  // namespace lssl

#endif  // LSSL_DATA_HPP_
