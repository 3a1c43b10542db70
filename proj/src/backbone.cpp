// SPDX-License-Identifier: Apache-2.0

#include "lpa/backbone.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <type_traits>

#include "lpa/dataset.hpp"
#include "lpa/ops.hpp"

namespace lpa {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void BackboneConfig::validate() const {
  if (patch_size == 0 || image_size % patch_size != 0) {
    throw DimensionError("image size " + std::to_string(image_size) + " is not divisible by patch size " +
                         std::to_string(patch_size));
  }
  if (num_heads == 0 || dim % num_heads != 0) {
    throw DimensionError("model width " + std::to_string(dim) + " is not divisible by " +
                         std::to_string(num_heads) + " heads");
  }
  if (lpa_layers > kSelfAttentionBlocks) {
    throw DimensionError("at most " + std::to_string(kSelfAttentionBlocks) + " LPA layers");
  }
  if (channels == 0) throw DimensionError("image needs at least one channel");
  if (!(input_std > 0.0)) throw DimensionError("input standard deviation must be positive");
}

namespace {

Tensor normal(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

FeedForward make_ffn(std::size_t dim, std::size_t hidden, double init_std, Rng& rng) {
  return {normal({dim, hidden}, init_std, rng), Tensor::zeros({hidden}, true),
          normal({hidden, dim}, init_std, rng), Tensor::zeros({dim}, true)};
}

// layer_norm(x) * g + b over the last axis.
Tensor affine_norm(const Tensor& x, const Tensor& g, const Tensor& b) {
  return add(mul(layer_norm(x), g), b);
}

// x: [rows × d].
Tensor feed_forward(const Tensor& x, const FeedForward& f) {
  return add(matmul(gelu(add(matmul(x, f.w1), f.b1)), f.w2), f.b2);
}

template <typename Layer, typename Fn>
void visit_vanilla(Layer& layer, const std::string& prefix, Fn& fn) {
  for (std::size_t h = 0; h < layer.num_heads; ++h) {
    const auto s = std::to_string(h);
    fn(prefix + "w_q." + s, layer.w_q[h]);
    fn(prefix + "w_k." + s, layer.w_k[h]);
    fn(prefix + "w_v." + s, layer.w_v[h]);
  }
  fn(prefix + "w_o", layer.w_o);
  fn(prefix + "b_o", layer.b_o);
}

}  // namespace

template <typename Self, typename Fn>
void Backbone::visit_parameters(Self& self, Fn&& fn) {
  fn(std::string("patch.w"), self.patch_w_);
  fn(std::string("patch.b"), self.patch_b_);
  fn(std::string("pos_embed"), self.pos_embed_);
  fn(std::string("cls_token"), self.cls_token_);
  for (std::size_t i = 0; i < self.blocks_.size(); ++i) {
    auto& block = self.blocks_[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    std::visit(
        [&](auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, LpaLayer>) {
            visit_vanilla(layer.attention, p + "attn.", fn);
            for (std::size_t h = 0; h < layer.lambda.size(); ++h) {
              fn(p + "attn.lambda." + std::to_string(h), layer.lambda[h]);
              fn(p + "attn.v." + std::to_string(h), layer.v[h]);
            }
          } else {
            visit_vanilla(layer, p + "attn.", fn);
          }
        },
        block.attention);
    fn(p + "norm1.g", block.norm1_g);
    fn(p + "norm1.b", block.norm1_b);
    fn(p + "norm2.g", block.norm2_g);
    fn(p + "norm2.b", block.norm2_b);
    fn(p + "ffn.w1", block.ffn.w1);
    fn(p + "ffn.b1", block.ffn.b1);
    fn(p + "ffn.w2", block.ffn.w2);
    fn(p + "ffn.b2", block.ffn.b2);
  }
  auto& cb = self.class_block_;
  visit_vanilla(cb.attention, "class.attn.", fn);
  fn(std::string("class.norm1.g"), cb.norm1_g);
  fn(std::string("class.norm1.b"), cb.norm1_b);
  fn(std::string("class.norm2.g"), cb.norm2_g);
  fn(std::string("class.norm2.b"), cb.norm2_b);
  fn(std::string("class.ffn.w1"), cb.ffn.w1);
  fn(std::string("class.ffn.b1"), cb.ffn.b1);
  fn(std::string("class.ffn.w2"), cb.ffn.w2);
  fn(std::string("class.ffn.b2"), cb.ffn.b2);
  fn(std::string("norm.g"), self.norm_g_);
  fn(std::string("norm.b"), self.norm_b_);
  if (self.head_w_.defined()) {
    fn(std::string("head.w"), self.head_w_);
    fn(std::string("head.b"), self.head_b_);
  }
}

void Backbone::rebuild_grid() { grid_ = build_patch_grid(config_.grid_side(), config_.grid_side()); }

Backbone Backbone::create(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  Backbone m;
  m.config_ = config;
  m.rebuild_grid();
  Rng rng = make_stream(seed, "init");
  const std::size_t d = config.dim, n = m.grid_.size();
  const std::size_t patch_width = config.channels * config.patch_size * config.patch_size;
  const double sd = config.init_std;
  m.patch_w_ = normal({patch_width, d}, sd, rng);
  m.patch_b_ = Tensor::zeros({d}, true);
  m.pos_embed_ = normal({n, d}, sd, rng);
  m.cls_token_ = normal({1, d}, sd, rng);
  for (std::size_t i = 0; i < kSelfAttentionBlocks; ++i) {
    TransformerBlock block;
    if (i < config.lpa_layers) {
      block.attention = LpaLayer::create(d, config.num_heads, sd, config.lambda0, config.alpha, rng);
    } else {
      block.attention = VanillaLayer::create(d, config.num_heads, sd, rng);
    }
    block.norm1_g = Tensor::full({d}, 1.0, true);
    block.norm1_b = Tensor::zeros({d}, true);
    block.norm2_g = Tensor::full({d}, 1.0, true);
    block.norm2_b = Tensor::zeros({d}, true);
    block.ffn = make_ffn(d, config.hidden(), sd, rng);
    m.blocks_.push_back(std::move(block));
  }
  m.class_block_.attention = VanillaLayer::create(d, config.num_heads, sd, rng);
  m.class_block_.norm1_g = Tensor::full({d}, 1.0, true);
  m.class_block_.norm1_b = Tensor::zeros({d}, true);
  m.class_block_.norm2_g = Tensor::full({d}, 1.0, true);
  m.class_block_.norm2_b = Tensor::zeros({d}, true);
  m.class_block_.ffn = make_ffn(d, config.hidden(), sd, rng);
  m.norm_g_ = Tensor::full({d}, 1.0, true);
  m.norm_b_ = Tensor::zeros({d}, true);
  return m;
}

void Backbone::add_classes(std::size_t count, Rng& rng) {
  if (count == 0) return;
  const std::size_t d = config_.dim, old = num_classes(), total = old + count;
  std::normal_distribution<double> dist(0.0, config_.init_std);
  std::vector<double> w(d * total), b(total, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < total; ++c) {
      w[r * total + c] = c < old ? head_w_.data()[r * old + c] : dist(rng);
    }
  }
  for (std::size_t c = 0; c < old; ++c) b[c] = head_b_.data()[c];
  head_w_ = Tensor({d, total}, std::move(w), true);
  head_b_ = Tensor({total}, std::move(b), true);
}

BackboneOutput Backbone::forward(const Tensor& images, bool capture_trace) const {
  const auto& c = config_;
  if (images.rank() != 4 || images.dim(1) != c.channels || images.dim(2) != c.image_size ||
      images.dim(3) != c.image_size) {
    throw DimensionError("backbone expects [B x " + std::to_string(c.channels) + " x " +
                         std::to_string(c.image_size) + " x " + std::to_string(c.image_size) +
                         "] images, got " + shape_str(images.shape()));
  }
  const std::size_t batch = images.dim(0), n = grid_.size(), d = c.dim;
  BackboneOutput out;

  Tensor patches = patchify_batch(images, c.patch_size);
  if (c.input_mean != 0.0 || c.input_std != 1.0) {
    const Tensor shift = Tensor::full(patches.shape(), -c.input_mean);
    patches = scale(add(patches, shift), 1.0 / c.input_std);
  }
  Tensor h = add(matmul(patches, patch_w_), patch_b_);
  h = add(reshape(h, {batch, n, d}), pos_embed_);
  for (const auto& block : blocks_) {
    LayerTrace* trace = nullptr;
    if (capture_trace) trace = &out.trace.layers.emplace_back();
    h = add(h, attention_forward(affine_norm(h, block.norm1_g, block.norm1_b), block.attention, grid_, trace));
    const Tensor y = reshape(affine_norm(h, block.norm2_g, block.norm2_b), {batch * n, d});
    h = add(h, reshape(feed_forward(y, block.ffn), {batch, n, d}));
  }

  const Tensor cls = add(Tensor::zeros({batch, 1, d}), cls_token_);
  const Tensor tokens = concat({cls, h}, 1);
  const auto& cb = class_block_;
  LayerTrace* trace = nullptr;
  if (capture_trace) trace = &out.trace.layers.emplace_back();
  Tensor token = add(reshape(cls, {batch, d}),
                     class_attention_forward(affine_norm(tokens, cb.norm1_g, cb.norm1_b), cb.attention, trace));
  token = add(token, feed_forward(affine_norm(token, cb.norm2_g, cb.norm2_b), cb.ffn));

  out.representation = affine_norm(token, norm_g_, norm_b_);
  if (head_w_.defined()) out.logits = add(matmul(out.representation, head_w_), head_b_);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Backbone::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  visit_parameters(*this, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::vector<Tensor> Backbone::parameters() const {
  std::vector<Tensor> out;
  visit_parameters(*this, [&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

Backbone Backbone::clone(bool trainable) const {
  Backbone copy = *this;
  visit_parameters(copy, [&](const std::string&, Tensor& t) {
    t = t.clone();
    t.set_requires_grad(trainable);
  });
  return copy;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto dim : t.shape()) put_u32(out, static_cast<std::uint32_t>(dim));
  const auto data = t.data();
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(data.data());
  out.insert(out.end(), bytes, bytes + data.size() * sizeof(double));
}

class Cursor {
 public:
  explicit Cursor(std::span<const std::uint8_t> b) : bytes_(b) {}
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated ") + what, pos_);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    return s[0] | (std::uint32_t(s[1]) << 8) | (std::uint32_t(s[2]) << 16) | (std::uint32_t(s[3]) << 24);
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

constexpr const char* kMetaName = "meta.config";
constexpr std::size_t kMetaSize = 13;

Tensor config_tensor(const BackboneConfig& c, std::size_t num_classes) {
  return Tensor({kMetaSize}, {double(c.channels), double(c.image_size), double(c.patch_size), double(c.dim),
                              double(c.num_heads), double(c.hidden()), double(c.lpa_layers), c.lambda0,
                              c.alpha, c.init_std, double(num_classes), c.input_mean, c.input_std});
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Backbone& model) {
  std::vector<std::uint8_t> out{'L', 'P', 'A', '1'};
  put_u32(out, static_cast<std::uint32_t>(kSelfAttentionBlocks));
  put_u32(out, static_cast<std::uint32_t>(model.config().num_heads));
  put_u32(out, static_cast<std::uint32_t>(model.config().dim));
  put_u32(out, static_cast<std::uint32_t>(model.grid().size()));
  put_tensor(out, kMetaName, config_tensor(model.config(), model.num_classes()));
  for (const auto& [name, t] : model.named_parameters()) put_tensor(out, name, t);
  return out;
}

Backbone decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Cursor in(bytes);
  auto magic = in.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), "LPA1")) throw FormatError("bad checkpoint magic", 0);
  const std::uint32_t layers = in.u32("layer count");
  const std::uint32_t heads = in.u32("head count");
  const std::uint32_t dim = in.u32("width");
  const std::uint32_t grid = in.u32("grid size");

  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> data;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  while (!in.done()) {
    Entry e;
    e.offset = in.offset();
    const auto len = in.u32("name length");
    auto name = in.take(len, "name");
    e.name.assign(name.begin(), name.end());
    const auto rank = in.u32("rank");
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(in.u32("dimension"));
    const std::size_t count = shape_numel(e.shape);
    auto raw = in.take(count * sizeof(double), "tensor data");
    e.data.resize(count);
    std::memcpy(e.data.data(), raw.data(), raw.size());
    entries.push_back(std::move(e));
  }
  if (entries.empty() || entries.front().name != kMetaName || entries.front().data.size() != kMetaSize) {
    throw FormatError("missing " + std::string(kMetaName), 20);
  }
  const auto& meta = entries.front().data;
  BackboneConfig c;
  c.channels = std::size_t(meta[0]);
  c.image_size = std::size_t(meta[1]);
  c.patch_size = std::size_t(meta[2]);
  c.dim = std::size_t(meta[3]);
  c.num_heads = std::size_t(meta[4]);
  c.ffn_hidden = std::size_t(meta[5]);
  c.lpa_layers = std::size_t(meta[6]);
  c.lambda0 = meta[7];
  c.alpha = meta[8];
  c.init_std = meta[9];
  const auto num_classes = std::size_t(meta[10]);
  c.input_mean = meta[11];
  c.input_std = meta[12];
  if (layers != kSelfAttentionBlocks || heads != c.num_heads || dim != c.dim ||
      grid != c.grid_side() * c.grid_side()) {
    throw FormatError("header counts disagree with the stored configuration", 4);
  }

  Backbone model = Backbone::create(c, 0);
  Rng unused(0);
  model.add_classes(num_classes, unused);
  std::size_t next = 1;
  Backbone::visit_parameters(model, [&](const std::string& name, Tensor& slot) {
    if (next >= entries.size()) throw FormatError("missing tensor " + name, bytes.size());
    auto& e = entries[next++];
    if (e.name != name || e.shape != slot.shape()) {
      throw FormatError("expected tensor " + name + " " + shape_str(slot.shape()) + ", found " + e.name +
                            " " + shape_str(e.shape),
                        e.offset);
    }
    slot = Tensor(e.shape, std::move(e.data), true);
  });
  if (next != entries.size()) throw FormatError("unexpected tensor " + entries[next].name, entries[next].offset);
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Backbone& model) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Backbone load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace lpa
