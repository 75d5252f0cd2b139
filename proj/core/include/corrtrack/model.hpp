#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "corrtrack/autodiff.hpp"
#include "corrtrack/tensor.hpp"

namespace corrtrack {

// Architecture hyperparameters. The network is resolution-independent:
// a shared 3-stage convolutional encoder over [rgb, x, y] input channels,
// two rounds of cross-view mixing (per-pixel linear on the own feature
// concatenated with a tile grid of mean-pooled other-view context), and per-pixel MLP
// heads fed with [encoder, decoder] features. Pointmap heads are separate
// per branch (own-frame for view 1, cross-frame for view 2); the descriptor
// and visibility heads are shared across branches.
struct ArchConfig {
  int channels = 16;
  int descriptor_dim = 16;
  int decoder_rounds = 2;
  int head_hidden = 32;
  // Cross-view context: a ctx_tiles_x x ctx_tiles_y grid of mean-pooled
  // other-view tiles, concatenated per pixel before the mixing linear.
  int ctx_tiles_x = 3;
  int ctx_tiles_y = 2;
  bool frozen_encoder = false;

  void validate() const;
  bool compatible(const ArchConfig& other) const;
};

struct ModelParams {
  ArchConfig arch;
  // Ordered by name so iteration (init, updates, serialization) is
  // deterministic. "enc.*" tensors belong to the encoder.
  std::map<std::string, Tensor> tensors;

  static bool is_encoder(const std::string& name) { return name.rfind("enc.", 0) == 0; }
};

struct ViewOutputs {
  Tensor pointmap;     // H x W x 3, in the view-1 camera frame
  Tensor confidence;   // H x W, >= 1 everywhere (1 + exp(raw))
  Tensor descriptors;  // H x W x d, unit per pixel
  Tensor vis_logits;   // H x W, visibility of this view's pixels in the other
};

struct ForwardOutputs {
  ViewOutputs view1;
  ViewOutputs view2;
};

// Deterministic init from the seed; weights are normal with 1/sqrt(fan_in)
// scale, biases zero.
ModelParams init_params(uint64_t seed, const ArchConfig& arch);

ForwardOutputs forward(const ModelParams& params, const Tensor& image1, const Tensor& image2);

// Taped forward for training: parameters become tape leaves (frozen encoder
// tensors are recorded as constants so their gradient stays exactly zero).
struct TapedOutputs {
  ad::Value pointmap1, confidence1, descriptors1, vis_logits1;
  ad::Value pointmap2, confidence2, descriptors2, vis_logits2;
  std::map<std::string, ad::Value> param_nodes;
};

TapedOutputs forward_taped(ad::Tape& tape, const ModelParams& params, const Tensor& image1,
                           const Tensor& image2);

}  // namespace corrtrack
