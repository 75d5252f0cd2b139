#include "corrtrack/model.hpp"

#include <cmath>

#include "corrtrack/errors.hpp"
#include "corrtrack/rng.hpp"

namespace corrtrack {

namespace {

constexpr int kInputChannels = 5;  // rgb + normalized x, y

// FNV-1a; std::hash is implementation-defined and would tie checkpoints to
// one standard library.
uint64_t name_hash(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<uint8_t>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor with_coord_channels(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeMismatch("image must be H x W x 3");
  const int64_t H = image.dim(0), W = image.dim(1);
  Tensor out({H, W, kInputChannels});
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) {
      out.at(y, x, 0) = image.at(y, x, 0);
      out.at(y, x, 1) = image.at(y, x, 1);
      out.at(y, x, 2) = image.at(y, x, 2);
      out.at(y, x, 3) = W > 1 ? 2.0 * x / static_cast<double>(W - 1) - 1.0 : 0.0;
      out.at(y, x, 4) = H > 1 ? 2.0 * y / static_cast<double>(H - 1) - 1.0 : 0.0;
    }
  }
  return out;
}

struct TensorSpec {
  std::string name;
  std::vector<int64_t> shape;
  bool is_weight;  // fan-in scaled init; biases start at zero
  int64_t fan_in;
};

std::vector<TensorSpec> tensor_specs(const ArchConfig& a) {
  std::vector<TensorSpec> specs;
  auto conv = [&](const std::string& name, int64_t cin, int64_t cout) {
    specs.push_back({name + ".w", {3, 3, cin, cout}, true, 9 * cin});
    specs.push_back({name + ".b", {cout}, false, 0});
  };
  auto linear = [&](const std::string& name, int64_t cin, int64_t cout) {
    specs.push_back({name + ".w", {cin, cout}, true, cin});
    specs.push_back({name + ".b", {cout}, false, 0});
  };
  const int64_t C = a.channels;
  conv("enc.conv1", kInputChannels, C);
  conv("enc.conv2", C, C);
  conv("enc.conv3", C, C);
  const int64_t ctx_dim = static_cast<int64_t>(a.ctx_tiles_x) * a.ctx_tiles_y * C;
  for (int r = 1; r <= a.decoder_rounds; ++r) {
    linear("dec.mix" + std::to_string(r), C + 2 + ctx_dim, C);
  }
  // Head input: [encoder, decoder] where the decoder output carries the
  // mixed features, the pixel coordinates, and the other view's tile
  // context (the context block enters through the heads' first layer).
  const int64_t U = 2 * C + 2 + ctx_dim;
  auto head = [&](const std::string& name, int64_t out_dim) {
    linear(name + ".l1", U, a.head_hidden);
    linear(name + ".l2", a.head_hidden, out_dim);
  };
  head("head_point_own", 4);    // xyz + raw confidence
  head("head_point_cross", 4);
  head("head_desc", a.descriptor_dim);
  head("head_vis", 1);
  return specs;
}

struct TapedParams {
  std::map<std::string, ad::Value> nodes;
  ad::Value operator[](const std::string& name) const {
    auto it = nodes.find(name);
    if (it == nodes.end()) throw Error("missing parameter tensor: " + name);
    return it->second;
  }
};

// Shared encoder: three 3x3 conv stages with tanh.
ad::Value encode(const TapedParams& p, ad::Value x) {
  ad::Value h = ad::tanh_(ad::conv3x3_same(x, p["enc.conv1.w"], p["enc.conv1.b"]));
  h = ad::tanh_(ad::conv3x3_same(h, p["enc.conv2.w"], p["enc.conv2.b"]));
  h = ad::tanh_(ad::conv3x3_same(h, p["enc.conv3.w"], p["enc.conv3.b"]));
  return h;
}

// One shared decoder applied role-symmetrically: the branch for view v sees
// (own features + pixel coordinates, tile-pooled other-view context).
std::pair<ad::Value, ad::Value> decode(const TapedParams& p, const ArchConfig& arch,
                                       ad::Value coords, ad::Value h1, ad::Value h2) {
  const int rounds = arch.decoder_rounds;
  ad::Value f1 = h1, f2 = h2;
  for (int r = 1; r <= rounds; ++r) {
    const std::string base = "dec.mix" + std::to_string(r);
    ad::Value ctx1 = ad::mean_over_tiles(f2, arch.ctx_tiles_y, arch.ctx_tiles_x);
    ad::Value ctx2 = ad::mean_over_tiles(f1, arch.ctx_tiles_y, arch.ctx_tiles_x);
    ad::Value in1 = ad::concat_channels(f1, coords);
    ad::Value in2 = ad::concat_channels(f2, coords);
    ad::Value n1 = ad::tanh_(ad::pixelwise_linear_ctx(in1, ctx1, p[base + ".w"], p[base + ".b"]));
    ad::Value n2 = ad::tanh_(ad::pixelwise_linear_ctx(in2, ctx2, p[base + ".w"], p[base + ".b"]));
    f1 = n1;
    f2 = n2;
  }
  return {f1, f2};
}

ad::Value head_mlp(const TapedParams& p, const std::string& name, ad::Value u, ad::Value ctx) {
  ad::Value h = ad::tanh_(ad::pixelwise_linear_ctx(u, ctx, p[name + ".l1.w"], p[name + ".l1.b"]));
  return ad::pixelwise_linear(h, p[name + ".l2.w"], p[name + ".l2.b"]);
}

TapedOutputs run_forward(ad::Tape& tape, const ModelParams& params, const Tensor& image1,
                         const Tensor& image2, bool params_as_leaves) {
  params.arch.validate();
  if (!image1.same_shape(image2)) throw ShapeMismatch("the two images must share a resolution");

  TapedParams tp;
  for (const auto& [name, tensor] : params.tensors) {
    const bool frozen = params.arch.frozen_encoder && ModelParams::is_encoder(name);
    const bool leaf = params_as_leaves && !frozen;
    ad::Value v = leaf ? tape.leaf(tensor) : tape.constant(tensor);
    tp.nodes.emplace(name, v);
  }

  ad::Value x1 = tape.constant(with_coord_channels(image1));
  ad::Value x2 = tape.constant(with_coord_channels(image2));
  const int64_t H = image1.dim(0), W = image1.dim(1);
  Tensor coord_map({H, W, 2});
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) {
      coord_map.at(y, x, 0) = W > 1 ? 2.0 * x / static_cast<double>(W - 1) - 1.0 : 0.0;
      coord_map.at(y, x, 1) = H > 1 ? 2.0 * y / static_cast<double>(H - 1) - 1.0 : 0.0;
    }
  }
  ad::Value coords = tape.constant(std::move(coord_map));
  ad::Value h1 = encode(tp, x1);
  ad::Value h2 = encode(tp, x2);
  auto [d1, d2] = decode(tp, params.arch, coords, h1, h2);
  // The other view's tile summary is part of each branch's decoder output;
  // it enters the heads through their context-aware first layer.
  ad::Value tiles1 = ad::mean_over_tiles(d2, params.arch.ctx_tiles_y, params.arch.ctx_tiles_x);
  ad::Value tiles2 = ad::mean_over_tiles(d1, params.arch.ctx_tiles_y, params.arch.ctx_tiles_x);
  ad::Value u1 = ad::concat_channels(ad::concat_channels(h1, d1), coords);
  ad::Value u2 = ad::concat_channels(ad::concat_channels(h2, d2), coords);

  TapedOutputs out;
  ad::Value point1 = head_mlp(tp, "head_point_own", u1, tiles1);
  ad::Value point2 = head_mlp(tp, "head_point_cross", u2, tiles2);
  out.pointmap1 = ad::slice_channels(point1, 0, 3);
  out.pointmap2 = ad::slice_channels(point2, 0, 3);
  out.confidence1 = ad::reshape(ad::one_plus_exp(ad::slice_channels(point1, 3, 4)), {H, W});
  out.confidence2 = ad::reshape(ad::one_plus_exp(ad::slice_channels(point2, 3, 4)), {H, W});
  out.descriptors1 = ad::l2_normalize_rows(head_mlp(tp, "head_desc", u1, tiles1));
  out.descriptors2 = ad::l2_normalize_rows(head_mlp(tp, "head_desc", u2, tiles2));
  out.vis_logits1 = ad::reshape(head_mlp(tp, "head_vis", u1, tiles1), {H, W});
  out.vis_logits2 = ad::reshape(head_mlp(tp, "head_vis", u2, tiles2), {H, W});
  out.param_nodes = std::move(tp.nodes);
  return out;
}

}  // namespace

void ArchConfig::validate() const {
  if (channels < 1) throw Error("ArchConfig: channels must be >= 1");
  if (descriptor_dim < 2) throw Error("ArchConfig: descriptor_dim must be >= 2");
  if (decoder_rounds < 1) throw Error("ArchConfig: decoder_rounds must be >= 1");
  if (head_hidden < 1) throw Error("ArchConfig: head_hidden must be >= 1");
  if (ctx_tiles_x < 1 || ctx_tiles_y < 1) throw Error("ArchConfig: context tiles must be >= 1");
}

bool ArchConfig::compatible(const ArchConfig& other) const {
  return channels == other.channels && descriptor_dim == other.descriptor_dim &&
         decoder_rounds == other.decoder_rounds && head_hidden == other.head_hidden &&
         ctx_tiles_x == other.ctx_tiles_x && ctx_tiles_y == other.ctx_tiles_y;
}

ModelParams init_params(uint64_t seed, const ArchConfig& arch) {
  arch.validate();
  ModelParams params;
  params.arch = arch;
  for (const auto& spec : tensor_specs(arch)) {
    Tensor t(spec.shape);
    if (spec.is_weight) {
      Rng rng(mix_seed(seed, name_hash(spec.name)));
      const double scale = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
      for (int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    }
    params.tensors.emplace(spec.name, std::move(t));
  }
  return params;
}

ForwardOutputs forward(const ModelParams& params, const Tensor& image1, const Tensor& image2) {
  ad::Tape tape;
  TapedOutputs t = run_forward(tape, params, image1, image2, /*params_as_leaves=*/false);
  ForwardOutputs out;
  out.view1 = {tape.val(t.pointmap1), tape.val(t.confidence1), tape.val(t.descriptors1),
               tape.val(t.vis_logits1)};
  out.view2 = {tape.val(t.pointmap2), tape.val(t.confidence2), tape.val(t.descriptors2),
               tape.val(t.vis_logits2)};
  return out;
}

TapedOutputs forward_taped(ad::Tape& tape, const ModelParams& params, const Tensor& image1,
                           const Tensor& image2) {
  return run_forward(tape, params, image1, image2, /*params_as_leaves=*/true);
}

}  // namespace corrtrack
