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


#include "lssl/data.hpp"

#include <gtest/gtest.h>
#include <zlib.h>

#include <filesystem>
#include <set>

#include "test_support.hpp"

namespace lssl {
namespace {

namespace fs = std::filesystem;
using testing::tiny_dataset;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("lssl_data_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::vector<unsigned char> slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Idx, RoundTripIsByteIdentical) {
  TempDir dir;
  ImageDataset ds = tiny_dataset(3, 5, 4, 1);
  write_idx(ds, dir.file("a-img"), dir.file("a-lab"));
  ImageDataset back = load_idx(dir.file("a-img"), dir.file("a-lab"));
  EXPECT_EQ(back.size(), 3u);
  EXPECT_EQ(back.height, 5);
  EXPECT_EQ(back.width, 4);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_LT((back.images - ds.images).cwiseAbs().maxCoeff(), 1e-15);
  write_idx(back, dir.file("b-img"), dir.file("b-lab"));
  EXPECT_EQ(slurp(dir.file("a-img")), slurp(dir.file("b-img")));
  EXPECT_EQ(slurp(dir.file("a-lab")), slurp(dir.file("b-lab")));
}

TEST(Idx, HeaderLayout) {
  ImageDataset ds = tiny_dataset(2, 3, 3, 2);
  auto b = encode_idx_images(ds);
  ASSERT_EQ(b.size(), 16u + 18u);
  EXPECT_EQ(b[2], 0x08);
  EXPECT_EQ(b[3], 0x03);  // 2051 = 0x00000803
  EXPECT_EQ(b[7], 2);
}

TEST(Idx, TruncatedFileNamesByteOffset) {
  TempDir dir;
  ImageDataset ds = tiny_dataset(3, 4, 4, 3);
  auto bytes = encode_idx_images(ds);
  bytes.resize(bytes.size() - 5);
  write_bytes(dir.file("img"), bytes);
  try {
    read_idx(dir.file("img"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("byte offset " + std::to_string(bytes.size())), std::string::npos) << msg;
  }
  write_bytes(dir.file("short"), std::vector<unsigned char>{0, 0, 8});
  EXPECT_THROW(read_idx(dir.file("short")), DataError);
}

TEST(Idx, WrongMagicRejected) {
  TempDir dir;
  write_bytes(dir.file("bad"), std::vector<unsigned char>{0, 0, 9, 9, 0, 0, 0, 0});
  try {
    read_idx(dir.file("bad"));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
}

TEST(Idx, CountMismatchRejected) {
  TempDir dir;
  ImageDataset a = tiny_dataset(3, 2, 2, 4), b = tiny_dataset(4, 2, 2, 5);
  write_bytes(dir.file("img"), encode_idx_images(a));
  write_bytes(dir.file("lab"), encode_idx_labels(b));
  EXPECT_THROW(load_idx(dir.file("img"), dir.file("lab")), DataError);
  EXPECT_THROW(load_idx(dir.file("lab"), dir.file("img")), DataError);
}

TEST(Idx, MissingFileRejected) {
  EXPECT_THROW(read_idx("/nonexistent/lssl.idx"), DataError);
}

TEST(Idx, GzipDetectedByMagic) {
  TempDir dir;
  ImageDataset ds = tiny_dataset(4, 3, 3, 6);
  const auto raw = encode_idx_images(ds);
  gzFile gz = gzopen(dir.file("img.gz").c_str(), "wb");
  gzwrite(gz, raw.data(), static_cast<unsigned>(raw.size()));
  gzclose(gz);
  write_bytes(dir.file("lab"), encode_idx_labels(ds));
  ImageDataset back = load_idx(dir.file("img.gz"), dir.file("lab"));
  EXPECT_LT((back.images - ds.images).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Idx, TruncatedGzipRejected) {
  TempDir dir;
  const auto raw = encode_idx_images(tiny_dataset(50, 8, 8, 7));
  gzFile gz = gzopen(dir.file("img.gz").c_str(), "wb");
  gzwrite(gz, raw.data(), static_cast<unsigned>(raw.size()));
  gzclose(gz);
  auto bytes = slurp(dir.file("img.gz"));
  bytes.resize(bytes.size() / 2);
  write_bytes(dir.file("cut.gz"), bytes);
  EXPECT_THROW(read_idx(dir.file("cut.gz")), DataError);
}

TEST(Mnist, BundledSubsetLoads) {
  ImageDataset train = load_mnist(LSSL_DATA_DIR "/mnist", "train");
  ImageDataset test = load_mnist(LSSL_DATA_DIR "/mnist", "t10k");
  EXPECT_EQ(train.size(), 8000u);
  EXPECT_EQ(test.size(), 2000u);
  EXPECT_EQ(train.height, 28);
  EXPECT_EQ(train.width, 28);
  EXPECT_GE(train.images.minCoeff(), 0.0);
  EXPECT_LE(train.images.maxCoeff(), 1.0);
  std::set<int> classes(train.labels.begin(), train.labels.end());
  EXPECT_EQ(classes.size(), 10u);
  EXPECT_THROW(load_mnist(LSSL_DATA_DIR "/mnist", "valid"), ConfigError);
}

TEST(CropStream, FullSizeCropIsWholeImage) {
  ImageDataset ds = tiny_dataset(6, 4, 4, 8);
  CropStream s(ds, 4, 3, 9);
  CropBatch b = s.next();
  for (std::size_t i = 0; i < 3; ++i) {
    const Eigen::Index r = static_cast<Eigen::Index>(i);
    EXPECT_EQ(Vector(b.anchor.row(r).transpose()),
              Vector(ds.images.row(static_cast<Eigen::Index>(b.anchor_index[i])).transpose()));
    EXPECT_EQ(b.anchor.row(r), b.positive.row(r));
  }
}

TEST(CropStream, SeededStreamRepeats) {
  ImageDataset ds = tiny_dataset(20, 8, 8, 10);
  CropStream a(ds, 5, 4, 11, true), b(ds, 5, 4, 11, true);
  for (int i = 0; i < 12; ++i) {
    CropBatch x = a.next(), y = b.next();
    EXPECT_EQ(x.anchor, y.anchor);
    EXPECT_EQ(x.negative, y.negative);
    EXPECT_EQ(x.positive, y.positive);
  }
}

TEST(CropStream, NegativesAlwaysFromAnotherImage) {
  ImageDataset ds = tiny_dataset(7, 6, 6, 12);
  for (std::size_t batch : {1u, 2u, 7u}) {
    CropStream s(ds, 3, batch, 13);
    std::size_t draws = 0;
    while (draws < 10000) {
      CropBatch b = s.next();
      for (std::size_t i = 0; i < batch; ++i, ++draws) {
        ASSERT_NE(b.anchor_index[i], b.negative_index[i]);
      }
    }
  }
}

TEST(CropStream, EpochVisitsEachImageOnce) {
  ImageDataset ds = tiny_dataset(12, 4, 4, 14);
  CropStream s(ds, 2, 4, 15);
  std::multiset<std::size_t> seen;
  for (std::size_t i = 0; i < s.batches_per_epoch(); ++i)
    for (auto idx : s.next().anchor_index) seen.insert(idx);
  EXPECT_EQ(seen.size(), 12u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 12u);
}

TEST(CropImage, FlipMirrorsColumns) {
  ImageDataset ds = tiny_dataset(1, 3, 3, 16);
  Vector plain = crop_image(ds, 0, 0, 0, 3, false), flipped = crop_image(ds, 0, 0, 0, 3, true);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) EXPECT_EQ(flipped(y * 3 + x), plain(y * 3 + 2 - x));
  EXPECT_THROW(crop_image(ds, 0, 1, 1, 3), ConfigError);
}

TEST(CropStream, RestoredStateContinuesIdentically) {
  ImageDataset ds = tiny_dataset(7, 6, 6, 11);
  CropStream a(ds, 4, 3, 5, true);
  for (int i = 0; i < 4; ++i) a.next();
  CropStream b(ds, 4, 3, 99, true);
  b.restore(nlohmann::json::parse(a.state().dump()));
  for (int i = 0; i < 6; ++i) {
    CropBatch x = a.next(), y = b.next();
    EXPECT_EQ(x.anchor, y.anchor);
    EXPECT_EQ(x.negative, y.negative);
    EXPECT_EQ(x.positive, y.positive);
  }
  EXPECT_EQ(a.epoch(), b.epoch());
  const ImageDataset fewer = take(ds, 5);
  CropStream small(fewer, 4, 3, 5, true);
  EXPECT_THROW(small.restore(a.state()), ConfigError);
  CropStream unflipped(ds, 4, 3, 5, false);
  EXPECT_THROW(unflipped.restore(a.state()), ConfigError);
}

TEST(Synthetic, ShapeSeedAndMean) {
  Rng a(17), b(17);
  FeatureSet x = synthetic_gaussian(2000, 50, a), y = synthetic_gaussian(2000, 50, b);
  EXPECT_EQ(x.x.rows(), 2000);
  EXPECT_EQ(x.x.cols(), 50);
  EXPECT_EQ(x.x, y.x);
  EXPECT_EQ(x.labels, y.labels);
  EXPECT_LT(std::abs(x.x.mean()), 4.0 / std::sqrt(2000.0 * 50.0));
  std::vector<int> counts(10, 0);
  for (int l : x.labels) ++counts[l];
  for (int c : counts) EXPECT_EQ(c, 200);
  EXPECT_THROW(synthetic_gaussian(0, 3, a), ConfigError);
}

}  // namespace
}  // namespace lssl
