#include "seaseg/nn.hpp"

#include <cmath>
#include <random>

namespace seaseg {

template <typename T>
Tensor<T>& ParamStore<T>::add(const std::string& path, Tensor<T> value) {
  if (params_.count(path)) throw ValidationError("duplicate parameter path '" + path + "'");
  order_.push_back(path);
  return params_.emplace(path, std::move(value)).first->second;
}

template <typename T>
BnRunning<T>& ParamStore<T>::add_bn_stats(const std::string& path, int channels) {
  if (bn_.count(path)) throw ValidationError("duplicate batch-norm path '" + path + "'");
  bn_order_.push_back(path);
  return bn_.emplace(path, BnRunning<T>(channels)).first->second;
}

template <typename T>
const Tensor<T>& ParamStore<T>::at(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw ValidationError("unknown parameter '" + path + "'");
  return it->second;
}

template <typename T>
std::span<T> ParamStore<T>::values(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw ValidationError("unknown parameter '" + path + "'");
  return it->second.data();
}

template <typename T>
void ParamStore<T>::assign(const std::string& path, const Tensor<T>& value) {
  auto it = params_.find(path);
  if (it == params_.end()) throw ValidationError("unknown parameter '" + path + "'");
  if (it->second.shape() != value.shape()) {
    throw ShapeError("parameter '" + path + "' has shape " + shape_str(it->second.shape()) +
                     ", cannot assign " + shape_str(value.shape()));
  }
  std::copy(value.data().begin(), value.data().end(), it->second.data().begin());
}

template <typename T>
BnRunning<T>& ParamStore<T>::bn_stats(const std::string& path) {
  auto it = bn_.find(path);
  if (it == bn_.end()) throw ValidationError("unknown batch-norm statistics '" + path + "'");
  return it->second;
}

template <typename T>
const BnRunning<T>& ParamStore<T>::bn_stats(const std::string& path) const {
  auto it = bn_.find(path);
  if (it == bn_.end()) throw ValidationError("unknown batch-norm statistics '" + path + "'");
  return it->second;
}

template <typename T>
std::int64_t ParamStore<T>::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& [name, t] : params_) total += t.numel();
  return total;
}

template <typename T>
Var<T> ParamBinder<T>::operator()(const std::string& path) {
  auto it = bound_.find(path);
  if (it != bound_.end()) return it->second;
  Var<T> v = tape_.param(store_.at(path), requires_grad_);
  bound_.emplace(path, v);
  return v;
}

template <typename T>
std::map<std::string, Tensor<T>> ParamBinder<T>::gradients(const Gradients<T>& grads) const {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [path, v] : bound_) out.emplace(path, grads.of(v));
  return out;
}

std::uint64_t path_seed(std::uint64_t seed, const std::string& path) {
  // FNV-1a over the path, mixed with the seed by splitmix64.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : path) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = h ^ (seed + 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
Tensor<T> he_normal_init(const Shape& shape, int fan_in, std::uint64_t seed) {
  if (fan_in <= 0) throw ValidationError("he_normal_init: fan_in must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  Tensor<T> t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
void init_conv(ParamStore<T>& store, const std::string& path, int out_ch, int in_ch, int kernel,
               bool bias, std::uint64_t seed) {
  const std::string w = path + ".w";
  store.add(w, he_normal_init<T>(Shape{out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel,
                                 path_seed(seed, w)));
  if (bias) store.add(path + ".b", Tensor<T>(Shape{out_ch}));
}

template <typename T>
void init_bn(ParamStore<T>& store, const std::string& path, int channels) {
  store.add(path + ".gamma", Tensor<T>(Shape{channels}, T(1)));
  store.add(path + ".beta", Tensor<T>(Shape{channels}));
  store.add_bn_stats(path, channels);
}

template <typename T>
void init_cse(ParamStore<T>& store, const std::string& path, int channels, int reduction,
              std::uint64_t seed) {
  if (reduction <= 0 || channels % reduction != 0) {
    throw ValidationError("cSE: reduction " + std::to_string(reduction) + " does not divide " +
                          std::to_string(channels) + " channels");
  }
  const int hidden = channels / reduction;
  init_conv(store, path + ".fc1", hidden, channels, 1, true, seed);
  init_conv(store, path + ".fc2", channels, hidden, 1, true, seed);
}

template <typename T>
void init_sse(ParamStore<T>& store, const std::string& path, int channels, std::uint64_t seed) {
  init_conv(store, path + ".conv", 1, channels, 1, true, seed);
}

template <typename T>
void init_scse(ParamStore<T>& store, const std::string& path, int channels, int reduction,
               std::uint64_t seed) {
  init_cse(store, path + ".cse", channels, reduction, seed);
  init_sse(store, path + ".sse", channels, seed);
}

template <typename T>
void init_basic_block(ParamStore<T>& store, const std::string& path, int in_ch, int out_ch,
                      int stride, std::uint64_t seed) {
  if (stride != 1 && stride != 2) throw ValidationError("basic block stride must be 1 or 2");
  init_conv(store, path + ".conv1", out_ch, in_ch, 3, false, seed);
  init_bn(store, path + ".bn1", out_ch);
  init_conv(store, path + ".conv2", out_ch, out_ch, 3, false, seed);
  init_bn(store, path + ".bn2", out_ch);
  if (stride != 1 || in_ch != out_ch) {
    init_conv(store, path + ".proj", out_ch, in_ch, 1, false, seed);
    init_bn(store, path + ".proj_bn", out_ch);
  }
}

template <typename T>
void init_decoder_block(ParamStore<T>& store, const std::string& path, int in_ch, int skip_ch,
                        int out_ch, bool with_se, int reduction, std::uint64_t seed) {
  init_conv(store, path + ".conv1", out_ch, in_ch + skip_ch, 3, false, seed);
  init_bn(store, path + ".bn1", out_ch);
  init_conv(store, path + ".conv2", out_ch, out_ch, 3, false, seed);
  init_bn(store, path + ".bn2", out_ch);
  if (with_se) init_scse(store, path + ".se", out_ch, reduction, seed);
}

namespace {

template <typename T>
Var<T> bn(LayerContext<T>& ctx, const std::string& path, Var<T> x) {
  return batchnorm(x, ctx.params(path + ".gamma"), ctx.params(path + ".beta"),
                   ctx.params.store().bn_stats(path), ctx.mode, ctx.bn);
}

template <typename T>
Var<T> conv(LayerContext<T>& ctx, const std::string& path, Var<T> x, int stride, int padding) {
  std::optional<Var<T>> bias;
  if (ctx.params.store().contains(path + ".b")) bias = ctx.params(path + ".b");
  return conv2d(x, ctx.params(path + ".w"), bias, stride, padding);
}

}  // namespace

template <typename T>
Var<T> conv_bn_elu(LayerContext<T>& ctx, const std::string& path, Var<T> x, int stride, int padding) {
  return elu(bn(ctx, path + ".bn", conv(ctx, path + ".conv", x, stride, padding)));
}

template <typename T>
Var<T> cse_forward(LayerContext<T>& ctx, const std::string& path, Var<T> x, int reduction) {
  const int channels = x.shape().at(1);
  if (reduction <= 0 || channels % reduction != 0) {
    throw ValidationError("cSE: reduction " + std::to_string(reduction) + " does not divide " +
                          std::to_string(channels) + " channels");
  }
  const Shape& w1 = ctx.params.store().at(path + ".fc1.w").shape();
  if (w1[0] != channels / reduction || w1[1] != channels) {
    throw ShapeError("cSE '" + path + "': weights " + shape_str(w1) + " do not match " +
                     std::to_string(channels) + " channels at reduction " + std::to_string(reduction));
  }
  Var<T> squeezed = global_avg_pool(x);
  Var<T> hidden = elu(conv(ctx, path + ".fc1", squeezed, 1, 0));
  Var<T> weights = sigmoid(conv(ctx, path + ".fc2", hidden, 1, 0));
  return gate(x, weights);
}

template <typename T>
Var<T> sse_forward(LayerContext<T>& ctx, const std::string& path, Var<T> x) {
  return gate(x, sigmoid(conv(ctx, path + ".conv", x, 1, 0)));
}

template <typename T>
Var<T> scse_forward(LayerContext<T>& ctx, const std::string& path, Var<T> x, const SeConfig& se) {
  Var<T> c = cse_forward(ctx, path + ".cse", x, se.reduction);
  Var<T> s = sse_forward(ctx, path + ".sse", x);
  return se.fusion == SeFusion::kSum ? add(c, s) : maximum(c, s);
}

template <typename T>
Var<T> basic_block_forward(LayerContext<T>& ctx, const std::string& path, Var<T> x, int stride) {
  const int in_ch = x.shape().at(1);
  const int out_ch = ctx.params.store().at(path + ".conv1.w").dim(0);
  const bool needs_proj = stride != 1 || in_ch != out_ch;
  const bool has_proj = ctx.params.store().contains(path + ".proj.w");
  if (needs_proj != has_proj) {
    throw ValidationError("basic block '" + path + "': projection " +
                          (has_proj ? "present but not needed" : "required but missing"));
  }
  Var<T> y = elu(bn(ctx, path + ".bn1", conv(ctx, path + ".conv1", x, stride, 1)));
  y = bn(ctx, path + ".bn2", conv(ctx, path + ".conv2", y, 1, 1));
  Var<T> shortcut = has_proj ? bn(ctx, path + ".proj_bn", conv(ctx, path + ".proj", x, stride, 0)) : x;
  return elu(add(y, shortcut));
}

template <typename T>
Var<T> decoder_block_forward(LayerContext<T>& ctx, const std::string& path, Var<T> x, Var<T> skip,
                             const SeConfig& se) {
  Var<T> up = upsample_bilinear2x(x);
  const Shape& us = up.shape();
  const Shape& ss = skip.shape();
  if (ss.size() != 4 || us[0] != ss[0] || us[2] != ss[2] || us[3] != ss[3]) {
    throw ShapeError("decoder '" + path + "': upsampled input " + shape_str(us) +
                     " does not match skip " + shape_str(ss));
  }
  Var<T> y = concat_channels(up, skip);
  y = elu(bn(ctx, path + ".bn1", conv(ctx, path + ".conv1", y, 1, 1)));
  y = elu(bn(ctx, path + ".bn2", conv(ctx, path + ".conv2", y, 1, 1)));
  if (ctx.params.store().contains(path + ".se.cse.fc1.w")) y = scse_forward(ctx, path + ".se", y, se);
  return y;
}

#define SEASEG_INSTANTIATE_NN(T)                                                                   \
  template class ParamStore<T>;                                                                    \
  template class ParamBinder<T>;                                                                   \
  template Tensor<T> he_normal_init<T>(const Shape&, int, std::uint64_t);                          \
  template void init_conv(ParamStore<T>&, const std::string&, int, int, int, bool, std::uint64_t); \
  template void init_bn(ParamStore<T>&, const std::string&, int);                                  \
  template void init_cse(ParamStore<T>&, const std::string&, int, int, std::uint64_t);             \
  template void init_sse(ParamStore<T>&, const std::string&, int, std::uint64_t);                  \
  template void init_scse(ParamStore<T>&, const std::string&, int, int, std::uint64_t);            \
  template void init_basic_block(ParamStore<T>&, const std::string&, int, int, int, std::uint64_t); \
  template void init_decoder_block(ParamStore<T>&, const std::string&, int, int, int, bool, int,   \
                                   std::uint64_t);                                                 \
  template Var<T> conv_bn_elu(LayerContext<T>&, const std::string&, Var<T>, int, int);             \
  template Var<T> cse_forward(LayerContext<T>&, const std::string&, Var<T>, int);                  \
  template Var<T> sse_forward(LayerContext<T>&, const std::string&, Var<T>);                       \
  template Var<T> scse_forward(LayerContext<T>&, const std::string&, Var<T>, const SeConfig&);     \
  template Var<T> basic_block_forward(LayerContext<T>&, const std::string&, Var<T>, int);          \
  template Var<T> decoder_block_forward(LayerContext<T>&, const std::string&, Var<T>, Var<T>,      \
                                        const SeConfig&);

SEASEG_INSTANTIATE_NN(float)
SEASEG_INSTANTIATE_NN(double)

}  // namespace seaseg
