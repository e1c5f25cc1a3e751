#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "seaseg/ops.hpp"

namespace seaseg {

// Named weights and batch-norm statistics keyed by hierarchical path ("enc1.block0.conv1.w").
// Paths are unique and shapes are fixed once added.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& path, Tensor<T> value);
  BnRunning<T>& add_bn_stats(const std::string& path, int channels);

  bool contains(const std::string& path) const { return params_.count(path) > 0; }
  const Tensor<T>& at(const std::string& path) const;
  std::span<T> values(const std::string& path);
  // Replaces the values of an existing parameter; the shape must match.
  void assign(const std::string& path, const Tensor<T>& value);

  bool has_bn_stats(const std::string& path) const { return bn_.count(path) > 0; }
  BnRunning<T>& bn_stats(const std::string& path);
  const BnRunning<T>& bn_stats(const std::string& path) const;

  // Insertion order.
  const std::vector<std::string>& names() const { return order_; }
  const std::vector<std::string>& bn_names() const { return bn_order_; }

  // Number of trainable scalars (running statistics excluded).
  std::int64_t parameter_count() const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor<T>> params_;
  std::vector<std::string> bn_order_;
  std::map<std::string, BnRunning<T>> bn_;
};

// Binds store entries to leaves on one tape, one leaf per path.
template <typename T>
class ParamBinder {
 public:
  ParamBinder(Tape<T>& tape, ParamStore<T>& store, bool requires_grad = true)
      : tape_(tape), store_(store), requires_grad_(requires_grad) {}

  Var<T> operator()(const std::string& path);
  Tape<T>& tape() { return tape_; }
  ParamStore<T>& store() { return store_; }
  const std::map<std::string, Var<T>>& bound() const { return bound_; }

  // Gradient for every bound parameter, zeros where none flowed.
  std::map<std::string, Tensor<T>> gradients(const Gradients<T>& grads) const;

 private:
  Tape<T>& tape_;
  ParamStore<T>& store_;
  bool requires_grad_;
  std::map<std::string, Var<T>> bound_;
};

enum class SeFusion { kSum, kMax };

struct SeConfig {
  int reduction = 16;
  SeFusion fusion = SeFusion::kSum;
  bool operator==(const SeConfig&) const = default;
};

// Per-forward settings shared by all layers.
template <typename T>
struct LayerContext {
  ParamBinder<T>& params;
  BnMode mode = BnMode::kTrain;
  BnOptions bn{};
};

// Normal(0, sqrt(2 / fan_in)), deterministic for a seed.
template <typename T>
Tensor<T> he_normal_init(const Shape& shape, int fan_in, std::uint64_t seed);

// Seed for a parameter path: initialisation does not depend on creation order, so two models
// sharing a path get identical starting weights.
std::uint64_t path_seed(std::uint64_t seed, const std::string& path);

// Initialisers. Convolution weights are He-normal, biases zero, BN gamma 1 and beta 0.
template <typename T>
void init_conv(ParamStore<T>& store, const std::string& path, int out_ch, int in_ch, int kernel,
               bool bias, std::uint64_t seed);
template <typename T>
void init_bn(ParamStore<T>& store, const std::string& path, int channels);
template <typename T>
void init_cse(ParamStore<T>& store, const std::string& path, int channels, int reduction,
              std::uint64_t seed);
template <typename T>
void init_sse(ParamStore<T>& store, const std::string& path, int channels, std::uint64_t seed);
template <typename T>
void init_scse(ParamStore<T>& store, const std::string& path, int channels, int reduction,
               std::uint64_t seed);
template <typename T>
void init_basic_block(ParamStore<T>& store, const std::string& path, int in_ch, int out_ch,
                      int stride, std::uint64_t seed);
template <typename T>
void init_decoder_block(ParamStore<T>& store, const std::string& path, int in_ch, int skip_ch,
                        int out_ch, bool with_se, int reduction, std::uint64_t seed);

template <typename T>
Var<T> conv_bn_elu(LayerContext<T>& ctx, const std::string& path, Var<T> x, int stride, int padding);

// Channel squeeze-and-excitation: x ⊙ sigmoid(W2·elu(W1·gap(x))).
template <typename T>
Var<T> cse_forward(LayerContext<T>& ctx, const std::string& path, Var<T> x, int reduction);

// Spatial squeeze-and-excitation: x ⊙ sigmoid(conv1x1(x)), one gate per pixel.
template <typename T>
Var<T> sse_forward(LayerContext<T>& ctx, const std::string& path, Var<T> x);

// Concurrent cSE and sSE, fused by elementwise sum or max.
template <typename T>
Var<T> scse_forward(LayerContext<T>& ctx, const std::string& path, Var<T> x, const SeConfig& se);

// ResNet basic block: elu(bn(conv3x3(elu(bn(conv3x3(x))))) + shortcut(x)). The shortcut is a
// 1x1 projection with BN when the stride or the channel count changes.
template <typename T>
Var<T> basic_block_forward(LayerContext<T>& ctx, const std::string& path, Var<T> x, int stride);

// Bilinear x2 upsample, concatenate the skip, two conv3x3+BN+ELU, then scSE when the block was
// initialised with it.
template <typename T>
Var<T> decoder_block_forward(LayerContext<T>& ctx, const std::string& path, Var<T> x, Var<T> skip,
                             const SeConfig& se);

}  // namespace seaseg
