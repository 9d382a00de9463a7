#include "deva/nn.hpp"

#include <cmath>

namespace deva {

namespace {

template <typename T>
Tensor<T> xavier(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<T> w(in * out);
  for (auto& v : w) v = static_cast<T>(dist(rng));
  return make_parameter<T>({in, out}, std::move(w));
}

}  // namespace

template <typename T>
Tensor<T> apply_dropout(const Tensor<T>& x, double p, const RunMode& mode) {
  if (!mode.training || p == 0.0) return x;
  if (!mode.rng) throw std::logic_error("training pass without a dropout generator");
  return dropout(x, p, true, *mode.rng);
}

template <typename T>
LinearLayer<T>::LinearLayer(std::size_t in, std::size_t out, Activation act,
                            std::mt19937_64& init_rng)
    : weight(xavier<T>(in, out, init_rng)),
      bias(make_parameter<T>({out}, std::vector<T>(out, T(0)))),
      activation(act) {}

template <typename T>
Tensor<T> LinearLayer<T>::forward(const Tensor<T>& x) const {
  if (x.shape().back() != in_features()) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not end in " +
                     std::to_string(in_features()));
  }
  auto y = add_bias(matmul(x, weight), bias);
  return activation == Activation::relu ? relu(y) : y;
}

template <typename T>
void LinearLayer<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
void LinearLayer<T>::set_identity(double noise, std::mt19937_64& rng) {
  const std::size_t n = in_features();
  if (n != out_features()) throw ShapeError("set_identity: layer is not square");
  std::normal_distribution<double> dist(0.0, noise);
  auto w = weight.mutable_data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      w[i * n + j] = static_cast<T>((i == j ? 1.0 : 0.0) + (noise > 0 ? dist(rng) : 0.0));
  for (auto& b : bias.mutable_data()) b = T(0);
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(std::size_t d, std::size_t heads_, double dropout_,
                                          std::mt19937_64& init_rng)
    : heads(heads_), dropout(dropout_) {
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("attention width " + std::to_string(d) +
                                " is not divisible by head count " + std::to_string(heads));
  }
  w_q = xavier<T>(d, d, init_rng);
  w_k = xavier<T>(d, d, init_rng);
  w_v = xavier<T>(d, d, init_rng);
  w_o = xavier<T>(d, d, init_rng);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::forward(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                                         const RunMode& mode, std::vector<T>* weights_out) const {
  const std::size_t d = width();
  const bool unbatched = q_in.rank() == 2;
  if (q_in.rank() != kv_in.rank() || (q_in.rank() != 2 && q_in.rank() != 3) ||
      q_in.shape().back() != d || kv_in.shape().back() != d ||
      (!unbatched && q_in.dim(0) != kv_in.dim(0))) {
    throw ShapeError("cross_attention: query " + shape_str(q_in.shape()) + " and key/value " +
                     shape_str(kv_in.shape()) + " incompatible with width " + std::to_string(d));
  }
  const Tensor<T> q3 = unbatched ? reshape(q_in, {1, q_in.dim(0), d}) : q_in;
  const Tensor<T> kv3 = unbatched ? reshape(kv_in, {1, kv_in.dim(0), d}) : kv_in;
  auto ctx = attention(matmul(q3, w_q), matmul(kv3, w_k), matmul(kv3, w_v), heads, weights_out);
  auto out = apply_dropout(matmul(ctx, w_o), dropout, mode);
  return unbatched ? reshape(out, q_in.shape()) : out;
}

template <typename T>
void MultiHeadAttention<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".w_q", w_q});
  out.push_back({prefix + ".w_k", w_k});
  out.push_back({prefix + ".w_v", w_v});
  out.push_back({prefix + ".w_o", w_o});
}

template <typename T>
TransformerEncoderLayer<T>::TransformerEncoderLayer(std::size_t d, std::size_t heads,
                                                    std::size_t ffn_factor, double dropout_,
                                                    std::mt19937_64& init_rng)
    : attn(d, heads, dropout_, init_rng),
      ff1(d, ffn_factor * d, Activation::relu, init_rng),
      ff2(ffn_factor * d, d, Activation::none, init_rng),
      ln1_gamma(make_parameter<T>({d}, std::vector<T>(d, T(1)))),
      ln1_beta(make_parameter<T>({d}, std::vector<T>(d, T(0)))),
      ln2_gamma(make_parameter<T>({d}, std::vector<T>(d, T(1)))),
      ln2_beta(make_parameter<T>({d}, std::vector<T>(d, T(0)))),
      dropout(dropout_) {}

template <typename T>
Tensor<T> TransformerEncoderLayer<T>::forward(const Tensor<T>& x, const RunMode& mode) const {
  auto n1 = layer_norm(x, ln1_gamma, ln1_beta, kLayerNormEps);
  auto h = add(x, attn.forward(n1, n1, mode));
  auto n2 = layer_norm(h, ln2_gamma, ln2_beta, kLayerNormEps);
  return add(h, apply_dropout(ff2.forward(ff1.forward(n2)), dropout, mode));
}

template <typename T>
void TransformerEncoderLayer<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  attn.collect(prefix + ".attn", out);
  ff1.collect(prefix + ".ff1", out);
  ff2.collect(prefix + ".ff2", out);
  out.push_back({prefix + ".ln1.gamma", ln1_gamma});
  out.push_back({prefix + ".ln1.beta", ln1_beta});
  out.push_back({prefix + ".ln2.gamma", ln2_gamma});
  out.push_back({prefix + ".ln2.beta", ln2_beta});
}

template <typename T>
void TransformerEncoderLayer<T>::zero_residual_branches() {
  for (auto& v : attn.w_o.mutable_data()) v = T(0);
  for (auto& v : ff2.weight.mutable_data()) v = T(0);
  for (auto& v : ff2.bias.mutable_data()) v = T(0);
}

template Tensor<float> apply_dropout(const Tensor<float>&, double, const RunMode&);
template Tensor<double> apply_dropout(const Tensor<double>&, double, const RunMode&);
template class LinearLayer<float>;
template class LinearLayer<double>;
template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;
template class TransformerEncoderLayer<float>;
template class TransformerEncoderLayer<double>;

}  // namespace deva
