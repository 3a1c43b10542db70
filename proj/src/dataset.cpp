// SPDX-License-Identifier: Apache-2.0

#include "lpa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "lpa/rng.hpp"

namespace lpa {

Tensor LabeledImageSet::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw DimensionError("batch: no images selected");
  std::vector<double> out;
  out.reserve(indices.size() * image_numel());
  for (auto i : indices) {
    if (i >= size()) throw DimensionError("batch: image " + std::to_string(i) + " out of range");
    auto img = image(i);
    out.insert(out.end(), img.begin(), img.end());
  }
  return Tensor({indices.size(), channels, height, width}, std::move(out));
}

LabeledImageSet LabeledImageSet::subset(std::span<const std::size_t> indices) const {
  LabeledImageSet out;
  out.channels = channels;
  out.height = height;
  out.width = width;
  out.num_classes = num_classes;
  out.split = split;
  for (auto i : indices) {
    auto img = image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(labels.at(i));
  }
  return out;
}

std::vector<std::size_t> LabeledImageSet::indices_of(std::span<const std::size_t> classes) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (std::find(classes.begin(), classes.end(), labels[i]) != classes.end()) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> LabeledImageSet::indices_of(std::size_t label) const {
  return indices_of(std::span<const std::size_t>(&label, 1));
}

std::array<double, kMotifSize * kMotifSize> texture_motif(std::size_t label) {
  // Oriented bars, edges, diagonals and checks. No two are equal, and no
  // motif is the horizontal mirror of another, so flip augmentation never
  // turns one class into another.
  static constexpr const char* kPatterns[16] = {
      "1111000011110000", "1010101010101010", "1000010000100001", "1111100110011111",
      "1111111100000000", "1100110011001100", "1010010110100101", "1100110000110011",
      "1111100010001000", "0110100110010110", "1000110011101111", "0110011001100110",
      "0000111111110000", "1001011001101001", "1100011000110001", "1000100010001111",
  };
  if (label >= 16) throw DimensionError("texture_motif: at most 16 classes supported");
  std::array<double, kMotifSize * kMotifSize> m{};
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = kPatterns[label][i] == '1' ? 0.9 : 0.1;
  return m;
}

LabeledImageSet synth_local_textures(const SynthConfig& config, std::uint64_t seed,
                                     const std::string& split,
                                     std::vector<std::array<std::size_t, 2>>* anchors) {
  if (config.num_classes == 0 || config.num_classes > 16) {
    throw DimensionError("synth_local_textures: num_classes must be in [1, 16]");
  }
  if (config.image_size < kMotifSize || config.per_class == 0) {
    throw DimensionError("synth_local_textures: image too small or no samples requested");
  }
  LabeledImageSet set;
  set.channels = 1;
  set.height = set.width = config.image_size;
  set.num_classes = config.num_classes;
  set.split = split;
  Rng rng = make_stream(seed, "synth:" + split);
  std::normal_distribution<double> noise(0.0, config.noise);
  const std::size_t side = config.image_size;
  if (config.lattice == 0) throw DimensionError("synth_local_textures: lattice step must be positive");
  // Stamp corners lie on a lattice so that, with patch sizes that are
  // multiples of the lattice step, a motif never straddles two patches.
  std::uniform_int_distribution<std::size_t> pos(0, (side - kMotifSize) / config.lattice);
  if (anchors) anchors->clear();

  for (std::size_t k = 0; k < config.per_class; ++k) {
    for (std::size_t label = 0; label < config.num_classes; ++label) {
      std::vector<double> img(side * side);
      for (auto& p : img) p = 0.5 + noise(rng);
      const auto motif = texture_motif(label);
      std::vector<std::array<std::size_t, 2>> placed;
      for (std::size_t s = 0; s < config.stamps_per_image; ++s) {
        for (int attempt = 0; attempt < 100; ++attempt) {
          const std::array<std::size_t, 2> at{pos(rng) * config.lattice, pos(rng) * config.lattice};
          const bool overlaps = std::any_of(placed.begin(), placed.end(), [&](const auto& p) {
            return at[0] < p[0] + kMotifSize && p[0] < at[0] + kMotifSize &&
                   at[1] < p[1] + kMotifSize && p[1] < at[1] + kMotifSize;
          });
          if (overlaps) continue;
          placed.push_back(at);
          for (std::size_t u = 0; u < kMotifSize; ++u) {
            for (std::size_t v = 0; v < kMotifSize; ++v) {
              img[(at[0] + u) * side + at[1] + v] = motif[u * kMotifSize + v] + noise(rng);
            }
          }
          break;
        }
      }
      for (auto& p : img) p = std::clamp(p, 0.0, 1.0);
      set.pixels.insert(set.pixels.end(), img.begin(), img.end());
      set.labels.push_back(label);
      if (anchors) anchors->push_back(placed.empty() ? std::array<std::size_t, 2>{0, 0} : placed[0]);
    }
  }
  return set;
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::size_t offset() const { return pos_; }
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated ") + what, pos_);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = bytes_[pos_] | (std::uint16_t(bytes_[pos_ + 1]) << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= std::uint32_t(bytes_[pos_ + k]) << (8 * k);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_raw(const LabeledImageSet& set) {
  const auto fits16 = [](std::size_t v) { return v <= 0xffff; };
  if (!fits16(set.channels) || !fits16(set.height) || !fits16(set.width) ||
      !fits16(set.num_classes) || set.size() > 0xffffffffu) {
    throw DimensionError("encode_raw: dimensions exceed the IMG1 field widths");
  }
  std::vector<std::uint8_t> out{'I', 'M', 'G', '1'};
  put_u32(out, static_cast<std::uint32_t>(set.size()));
  put_u16(out, static_cast<std::uint16_t>(set.channels));
  put_u16(out, static_cast<std::uint16_t>(set.height));
  put_u16(out, static_cast<std::uint16_t>(set.width));
  put_u16(out, static_cast<std::uint16_t>(set.num_classes));
  for (std::size_t i = 0; i < set.size(); ++i) {
    put_u16(out, static_cast<std::uint16_t>(set.labels[i]));
    for (double p : set.image(i)) {
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)));
    }
  }
  return out;
}

LabeledImageSet decode_raw(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  auto magic = in.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), "IMG1")) throw FormatError("bad magic", 0);
  LabeledImageSet set;
  const std::uint32_t count = in.u32("image count");
  set.channels = in.u16("channel count");
  set.height = in.u16("height");
  set.width = in.u16("width");
  set.num_classes = in.u16("class count");
  set.pixels.reserve(std::size_t(count) * set.image_numel());
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = in.offset();
    const std::uint16_t label = in.u16("label");
    if (label >= set.num_classes) throw FormatError("label out of range", at);
    set.labels.push_back(label);
    for (auto b : in.take(set.image_numel(), "pixel data")) set.pixels.push_back(b / 255.0);
  }
  if (in.offset() != bytes.size()) throw FormatError("trailing bytes", in.offset());
  return set;
}

void write_raw(const std::filesystem::path& path, const LabeledImageSet& set) {
  const auto bytes = encode_raw(set);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

LabeledImageSet load_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_raw(bytes);
}

namespace {

void check_patchable(std::size_t height, std::size_t width, std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw DimensionError("image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible into " + std::to_string(patch) + "-pixel patches");
  }
}

}  // namespace

Tensor patchify(std::span<const double> image, std::size_t channels, std::size_t height,
                std::size_t width, std::size_t patch) {
  check_patchable(height, width, patch);
  if (image.size() != channels * height * width) {
    throw DimensionError("patchify: buffer of " + std::to_string(image.size()) +
                         " does not match the declared image size");
  }
  const std::size_t gh = height / patch, gw = width / patch, row = channels * patch * patch;
  std::vector<double> out(gh * gw * row);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      double* dst = out.data() + (py * gw + px) * row;
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t u = 0; u < patch; ++u) {
          const double* src = image.data() + (c * height + py * patch + u) * width + px * patch;
          std::copy_n(src, patch, dst + (c * patch + u) * patch);
        }
      }
    }
  }
  return Tensor({gh * gw, row}, std::move(out));
}

std::vector<double> unpatchify(const Tensor& patches, std::size_t channels, std::size_t height,
                               std::size_t width, std::size_t patch) {
  check_patchable(height, width, patch);
  const std::size_t gh = height / patch, gw = width / patch, row = channels * patch * patch;
  if (patches.shape() != Shape{gh * gw, row}) {
    throw DimensionError("unpatchify: patches " + shape_str(patches.shape()) +
                         " do not match the declared image size");
  }
  std::vector<double> image(channels * height * width);
  const auto pd = patches.data();
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      const double* src = pd.data() + (py * gw + px) * row;
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t u = 0; u < patch; ++u) {
          double* dst = image.data() + (c * height + py * patch + u) * width + px * patch;
          std::copy_n(src + (c * patch + u) * patch, patch, dst);
        }
      }
    }
  }
  return image;
}

Tensor patchify_batch(const Tensor& images, std::size_t patch) {
  if (images.rank() != 4) {
    throw DimensionError("patchify_batch: expected [B x C x H x W], got " + shape_str(images.shape()));
  }
  const std::size_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  check_patchable(h, w, patch);
  const std::size_t per = c * h * w;
  std::vector<double> out;
  out.reserve(images.numel());
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor p = patchify(images.data().subspan(i * per, per), c, h, w, patch);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  const std::size_t n = (h / patch) * (w / patch);
  return Tensor({b * n, c * patch * patch}, std::move(out));
}

}  // namespace lpa
