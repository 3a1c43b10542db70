// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <set>
#include <string>

#include "lpa/dataset.hpp"

namespace lpa {
namespace {

std::vector<double> motif_patch(const LabeledImageSet& set, std::size_t i, std::array<std::size_t, 2> at) {
  std::vector<double> out;
  const auto img = set.image(i);
  for (std::size_t u = 0; u < kMotifSize; ++u)
    for (std::size_t v = 0; v < kMotifSize; ++v) out.push_back(img[(at[0] + u) * set.width + at[1] + v]);
  return out;
}

LabeledImageSet quantized_set(std::size_t m, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<std::size_t> label(0, k - 1);
  LabeledImageSet set;
  set.channels = c;
  set.height = h;
  set.width = w;
  set.num_classes = k;
  for (std::size_t i = 0; i < m; ++i) {
    set.labels.push_back(label(rng));
    for (std::size_t p = 0; p < c * h * w; ++p) set.pixels.push_back(byte(rng) / 255.0);
  }
  return set;
}

TEST(Synthetic, SameSeedSameImages) {
  SynthConfig cfg;
  const auto a = synth_local_textures(cfg, 7, "train");
  const auto b = synth_local_textures(cfg, 7, "train");
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.labels, b.labels);
  const auto c = synth_local_textures(cfg, 8, "train");
  EXPECT_NE(a.pixels, c.pixels);
  const auto test = synth_local_textures(cfg, 7, "test");
  EXPECT_NE(a.pixels, test.pixels);
}

TEST(Synthetic, ShapeAndRange) {
  SynthConfig cfg;
  cfg.num_classes = 6;
  cfg.per_class = 5;
  const auto set = synth_local_textures(cfg, 1);
  ASSERT_EQ(set.size(), 30u);
  EXPECT_EQ(set.pixels.size(), 30u * 32 * 32);
  for (double p : set.pixels) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(set.indices_of(k).size(), 5u);
}

TEST(Synthetic, StampsSitOnTheLattice) {
  SynthConfig cfg;
  std::vector<std::array<std::size_t, 2>> anchors;
  const auto set = synth_local_textures(cfg, 3, "train", &anchors);
  ASSERT_EQ(anchors.size(), set.size());
  for (const auto& a : anchors) {
    EXPECT_EQ(a[0] % cfg.lattice, 0u);
    EXPECT_EQ(a[1] % cfg.lattice, 0u);
    EXPECT_LE(a[0] + kMotifSize, cfg.image_size);
  }
}

TEST(Synthetic, MotifsStayDistinctUnderMirroring) {
  for (std::size_t a = 0; a < 16; ++a) {
    const auto ma = texture_motif(a);
    for (std::size_t b = 0; b < 16; ++b) {
      const auto mb = texture_motif(b);
      bool mirror = true, same = true;
      for (std::size_t u = 0; u < kMotifSize; ++u) {
        for (std::size_t v = 0; v < kMotifSize; ++v) {
          mirror = mirror && ma[u * kMotifSize + v] == mb[u * kMotifSize + kMotifSize - 1 - v];
          same = same && ma[u * kMotifSize + v] == mb[u * kMotifSize + v];
        }
      }
      if (a != b) {
        EXPECT_FALSE(same) << a << " vs " << b;
        EXPECT_FALSE(mirror) << a << " mirrors " << b;
      }
    }
  }
}

TEST(Synthetic, NearestNeighborOnMotifPatchesSeparatesClasses) {
  SynthConfig cfg;
  std::vector<std::array<std::size_t, 2>> train_at, test_at;
  const auto train = synth_local_textures(cfg, 11, "train", &train_at);
  const auto test = synth_local_textures(cfg, 11, "test", &test_at);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto q = motif_patch(test, i, test_at[i]);
    double best = std::numeric_limits<double>::infinity();
    std::size_t label = 0;
    for (std::size_t j = 0; j < train.size(); ++j) {
      const auto r = motif_patch(train, j, train_at[j]);
      double d = 0.0;
      for (std::size_t p = 0; p < q.size(); ++p) d += (q[p] - r[p]) * (q[p] - r[p]);
      if (d < best) {
        best = d;
        label = train.labels[j];
      }
    }
    correct += label == test.labels[i];
  }
  EXPECT_GT(double(correct) / double(test.size()), 0.9);
}

TEST(Synthetic, RejectsBadConfigs) {
  SynthConfig cfg;
  cfg.num_classes = 17;
  EXPECT_THROW(synth_local_textures(cfg, 0), DimensionError);
  cfg = {};
  cfg.image_size = 3;
  EXPECT_THROW(synth_local_textures(cfg, 0), DimensionError);
  cfg = {};
  cfg.lattice = 0;
  EXPECT_THROW(synth_local_textures(cfg, 0), DimensionError);
}

TEST(RawFormat, HeaderLayout) {
  const auto set = quantized_set(2, 1, 2, 3, 5, 0);
  const auto bytes = encode_raw(set);
  ASSERT_EQ(bytes.size(), 16u + 2 * (2 + 6));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "IMG1");
  EXPECT_EQ(bytes[4], 2);
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[10], 2);
  EXPECT_EQ(bytes[12], 3);
  EXPECT_EQ(bytes[14], 5);
  EXPECT_EQ(bytes[16], set.labels[0]);
  EXPECT_EQ(bytes[18], static_cast<std::uint8_t>(std::lround(set.pixels[0] * 255)));
}

TEST(RawFormat, RoundTripIsBitIdentical) {
  const auto set = quantized_set(13, 3, 4, 5, 7, 42);
  const auto bytes = encode_raw(set);
  const auto back = decode_raw(bytes);
  EXPECT_EQ(back.pixels, set.pixels);
  EXPECT_EQ(back.labels, set.labels);
  EXPECT_EQ(back.channels, 3u);
  EXPECT_EQ(back.height, 4u);
  EXPECT_EQ(back.width, 5u);
  EXPECT_EQ(back.num_classes, 7u);
  EXPECT_EQ(encode_raw(back), bytes);
}

TEST(RawFormat, EmptySetRoundTrips) {
  LabeledImageSet set;
  set.channels = 1;
  set.height = set.width = 8;
  set.num_classes = 3;
  const auto back = decode_raw(encode_raw(set));
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.height, 8u);
  EXPECT_EQ(back.num_classes, 3u);
}

TEST(RawFormat, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "dataset_io_test.img1";
  const auto set = quantized_set(4, 1, 8, 8, 2, 9);
  write_raw(path, set);
  const auto back = load_raw(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.pixels, set.pixels);
  EXPECT_EQ(back.labels, set.labels);
}

TEST(RawFormat, CorruptMagicReportsOffsetZero) {
  auto bytes = encode_raw(quantized_set(1, 1, 2, 2, 2, 1));
  bytes[1] = 'X';
  try {
    decode_raw(bytes);
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(RawFormat, TruncationReportsWhereDataRanOut) {
  const auto full = encode_raw(quantized_set(3, 1, 2, 2, 2, 1));
  const std::vector<std::uint8_t> cut(full.begin(), full.end() - 1);
  try {
    decode_raw(cut);
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 16u + 2 * 6 + 2);
  }
  EXPECT_THROW(decode_raw(std::span(full).first(10)), FormatError);
}

TEST(RawFormat, RejectsOutOfRangeLabelAndTrailingBytes) {
  auto bytes = encode_raw(quantized_set(1, 1, 2, 2, 2, 1));
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_raw(extra), FormatError);
  bytes[16] = 9;
  try {
    decode_raw(bytes);
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 16u);
  }
}

TEST(RawFormat, MissingFileThrows) {
  EXPECT_THROW(load_raw("/nonexistent/dir/none.img1"), std::runtime_error);
}

TEST(Patchify, SinglePatchIsTheFlattenedImage) {
  std::vector<double> img(16);
  for (std::size_t i = 0; i < 16; ++i) img[i] = double(i) / 16.0;
  const auto p = patchify(img, 1, 4, 4, 4);
  EXPECT_EQ(p.shape(), (Shape{1, 16}));
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), img);
}

TEST(Patchify, RasterOrderPixelByPixel) {
  std::vector<double> img(64);
  for (std::size_t i = 0; i < 64; ++i) img[i] = double(i);
  const auto p = patchify(img, 1, 8, 8, 4);
  ASSERT_EQ(p.shape(), (Shape{4, 16}));
  for (std::size_t n = 0; n < 4; ++n) {
    const std::size_t row0 = (n / 2) * 4, col0 = (n % 2) * 4;
    for (std::size_t u = 0; u < 4; ++u)
      for (std::size_t v = 0; v < 4; ++v)
        EXPECT_EQ(p.at(n, u * 4 + v), img[(row0 + u) * 8 + col0 + v]) << n << " " << u << " " << v;
  }
}

TEST(Patchify, ChannelMajorWithinPatch) {
  std::vector<double> img(2 * 4 * 4);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = double(i);
  const auto p = patchify(img, 2, 4, 4, 2);
  ASSERT_EQ(p.shape(), (Shape{4, 8}));
  // Patch 3 covers rows 2..3, columns 2..3; its second half is channel 1.
  EXPECT_EQ(p.at(3, 0), 10.0);
  EXPECT_EQ(p.at(3, 3), 15.0);
  EXPECT_EQ(p.at(3, 4), 26.0);
}

TEST(Patchify, UnpatchifyInverts) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> img(3 * 12 * 8);
  for (auto& x : img) x = u(rng);
  for (std::size_t patch : {1u, 2u, 4u}) {
    const auto p = patchify(img, 3, 12, 8, patch);
    EXPECT_EQ(unpatchify(p, 3, 12, 8, patch), img);
  }
}

TEST(Patchify, BatchMatchesPerImage) {
  std::vector<double> imgs(2 * 64);
  for (std::size_t i = 0; i < imgs.size(); ++i) imgs[i] = double(i);
  const auto all = patchify_batch(Tensor({2, 1, 8, 8}, imgs), 4);
  ASSERT_EQ(all.shape(), (Shape{8, 16}));
  const auto second = patchify(std::span(imgs).subspan(64), 1, 8, 8, 4);
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(all.at(4 + n, j), second.at(n, j));
}

TEST(Patchify, RejectsIndivisibleSizes) {
  std::vector<double> img(6 * 6);
  EXPECT_THROW(patchify(img, 1, 6, 6, 4), DimensionError);
  EXPECT_THROW(patchify(img, 1, 6, 6, 0), DimensionError);
  EXPECT_THROW(patchify(img, 1, 4, 4, 2), DimensionError);
}

TEST(ImageSet, SubsetAndIndices) {
  const auto set = quantized_set(10, 1, 2, 2, 3, 2);
  const std::vector<std::size_t> pick{7, 1};
  const auto sub = set.subset(pick);
  ASSERT_EQ(sub.size(), 2u);
  EXPECT_EQ(sub.labels[0], set.labels[7]);
  EXPECT_EQ(std::vector<double>(sub.image(1).begin(), sub.image(1).end()),
            std::vector<double>(set.image(1).begin(), set.image(1).end()));
  const auto zeros = set.indices_of(std::size_t{0});
  for (auto i : zeros) EXPECT_EQ(set.labels[i], 0u);
  EXPECT_TRUE(std::is_sorted(zeros.begin(), zeros.end()));
}

}  // namespace
}  // namespace lpa
