#pragma once

// Small dense networks: forward pass, reverse-mode gradients, Adam and
// categorical-distribution helpers. Samples are stored column-wise.

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace emv::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation : std::uint8_t { Identity = 0, Tanh = 1 };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::Identity;

  [[nodiscard]] int inputs() const { return static_cast<int>(weight.cols()); }
  [[nodiscard]] int outputs() const { return static_cast<int>(weight.rows()); }
};

struct Mlp {
  std::vector<DenseLayer> layers;
  // Bumped on every parameter update; forward caches remember the value they
  // were produced with.
  std::uint64_t version = 0;

  [[nodiscard]] int input_size() const { return layers.empty() ? 0 : layers.front().inputs(); }
  [[nodiscard]] int output_size() const { return layers.empty() ? 0 : layers.back().outputs(); }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  /// Parameters flattened layer by layer, weights (row-major) then biases.
  [[nodiscard]] std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& l : layers) {
      for (int r = 0; r < l.weight.rows(); ++r)
        for (int c = 0; c < l.weight.cols(); ++c) out.push_back(l.weight(r, c));
      for (int r = 0; r < l.bias.size(); ++r) out.push_back(l.bias(r));
    }
    return out;
  }

  void unflatten(const std::vector<double>& values) {
    if (values.size() != parameter_count()) throw std::invalid_argument("mlp: parameter count mismatch");
    std::size_t k = 0;
    for (auto& l : layers) {
      for (int r = 0; r < l.weight.rows(); ++r)
        for (int c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = values[k++];
      for (int r = 0; r < l.bias.size(); ++r) l.bias(r) = values[k++];
    }
    ++version;
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const auto& x = a.layers[i];
      const auto& y = b.layers[i];
      if (x.activation != y.activation || x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols())
        return false;
      if (x.weight != y.weight || x.bias != y.bias) return false;
    }
    return true;
  }
};

/// Builds an MLP with the given layer widths (input first). Hidden layers use
/// `hidden`, the output layer is linear. Weights are orthogonal with gain
/// sqrt(2) for hidden layers and `output_gain` for the last; biases are zero.
template <typename Rng>
Mlp make_mlp(const std::vector<int>& widths, double output_gain, Rng& rng, Activation hidden = Activation::Tanh) {
  if (widths.size() < 2) throw std::invalid_argument("mlp: need at least input and output widths");
  Mlp m;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const int in = widths[i];
    const int out = widths[i + 1];
    if (in <= 0 || out <= 0) throw std::invalid_argument("mlp: layer widths must be positive");
    const bool last = i + 2 == widths.size();
    const double gain = last ? output_gain : std::sqrt(2.0);

    // Orthogonal init from the QR decomposition of a Gaussian matrix.
    const int big = std::max(in, out);
    const int small = std::min(in, out);
    Matrix g(big, small);
    for (int c = 0; c < small; ++c)
      for (int r = 0; r < big; ++r) g(r, c) = normal(rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(big, small);
    const Matrix rdiag = qr.matrixQR().topLeftCorner(small, small);
    for (int c = 0; c < small; ++c) {
      if (rdiag(c, c) < 0) q.col(c) *= -1.0;
    }
    DenseLayer layer;
    layer.weight = out >= in ? Matrix(q) : Matrix(q.transpose());
    layer.weight *= gain;
    layer.bias = Vector::Zero(out);
    layer.activation = last ? Activation::Identity : hidden;
    m.layers.push_back(std::move(layer));
  }
  return m;
}

// tanh(x) = 1 - 2 / (exp(2x) + 1), applied in place. Eigen vectorises exp for
// doubles but not tanh, so this form is an order of magnitude faster here.
inline void tanh_in_place(Matrix& z) {
  auto a = z.array();
  a = 1.0 - 2.0 / ((2.0 * a).exp() + 1.0);
}

/// Activations of one forward pass. Reusing a cache across calls also reuses
/// its storage.
struct ForwardCache {
  Matrix input;
  std::vector<Matrix> outputs;  // post-activation output of each layer
  std::uint64_t version = 0;
  const Mlp* owner = nullptr;
  // Backward-pass workspace.
  Matrix delta;
  Matrix scratch;

  [[nodiscard]] const Matrix& layer_input(std::size_t i) const { return i == 0 ? input : outputs[i - 1]; }
};

namespace detail {

inline void check_input(const Mlp& m, const Matrix& input) {
  if (m.layers.empty()) throw std::invalid_argument("mlp: no layers");
  if (input.rows() != m.input_size()) {
    throw std::invalid_argument("mlp: input has " + std::to_string(input.rows()) + " rows, expected " +
                                std::to_string(m.input_size()));
  }
}

inline void affine(const DenseLayer& l, const Matrix& x, Matrix& out) {
  out.noalias() = l.weight * x;
  out.colwise() += l.bias;
  if (l.activation == Activation::Tanh) tanh_in_place(out);
}

}  // namespace detail

/// Forward pass retaining every activation in `cache`; returns the output
/// held by the cache.
inline const Matrix& mlp_forward(const Mlp& m, const Matrix& input, ForwardCache& cache) {
  detail::check_input(m, input);
  cache.input = input;
  cache.outputs.resize(m.layers.size());
  for (std::size_t i = 0; i < m.layers.size(); ++i) detail::affine(m.layers[i], cache.layer_input(i), cache.outputs[i]);
  cache.version = m.version;
  cache.owner = &m;
  return cache.outputs.back();
}

inline Matrix mlp_forward(const Mlp& m, const Matrix& input) {
  detail::check_input(m, input);
  Matrix x;
  Matrix y;
  detail::affine(m.layers.front(), input, x);
  for (std::size_t i = 1; i < m.layers.size(); ++i) {
    detail::affine(m.layers[i], x, y);
    x.swap(y);
  }
  return x;
}

inline Vector mlp_forward(const Mlp& m, const Vector& input) {
  return mlp_forward(m, Matrix(input)).col(0);
}

struct MlpGradient {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Matrix input;

  static MlpGradient zeros_like(const Mlp& m) {
    MlpGradient g;
    for (const auto& l : m.layers) {
      g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
  }

  [[nodiscard]] std::vector<double> flatten() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < weight.size(); ++i) {
      for (int r = 0; r < weight[i].rows(); ++r)
        for (int c = 0; c < weight[i].cols(); ++c) out.push_back(weight[i](r, c));
      for (int r = 0; r < bias[i].size(); ++r) out.push_back(bias[i](r));
    }
    return out;
  }

  MlpGradient& operator*=(double s) {
    for (auto& w : weight) w *= s;
    for (auto& b : bias) b *= s;
    input *= s;
    return *this;
  }
};

/// Reverse-mode pass. `d_output` holds dL/d(output) for every sample column.
/// The input gradient is only formed when `with_input` is set.
inline MlpGradient mlp_gradient(const Mlp& m, ForwardCache& cache, const Matrix& d_output, bool with_input = true) {
  if (cache.owner != &m || cache.version != m.version || cache.outputs.size() != m.layers.size()) {
    throw std::logic_error("mlp: stale forward cache");
  }
  if (d_output.rows() != m.output_size() || d_output.cols() != cache.outputs.back().cols()) {
    throw std::invalid_argument("mlp: output gradient shape mismatch");
  }
  MlpGradient g;
  g.weight.resize(m.layers.size());
  g.bias.resize(m.layers.size());
  Matrix& delta = cache.delta;
  delta = d_output;
  for (std::size_t idx = m.layers.size(); idx-- > 0;) {
    const auto& l = m.layers[idx];
    if (l.activation == Activation::Tanh) delta.array() *= 1.0 - cache.outputs[idx].array().square();
    g.weight[idx].noalias() = delta * cache.layer_input(idx).transpose();
    g.bias[idx] = delta.rowwise().sum();
    if (idx > 0 || with_input) {
      cache.scratch.noalias() = l.weight.transpose() * delta;
      delta.swap(cache.scratch);
    }
  }
  if (with_input) g.input = delta;
  return g;
}

// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<Matrix> m_weight, v_weight;
  std::vector<Vector> m_bias, v_bias;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 5e-4;

  static AdamState for_params(const Mlp& m, double learning_rate) {
    AdamState s;
    s.learning_rate = learning_rate;
    for (const auto& l : m.layers) {
      s.m_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      s.v_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      s.m_bias.push_back(Vector::Zero(l.bias.size()));
      s.v_bias.push_back(Vector::Zero(l.bias.size()));
    }
    return s;
  }
};

/// Bias-corrected Adam descent step on `params`.
inline void adam_update(AdamState& s, Mlp& params, const MlpGradient& g) {
  if (s.m_weight.size() != params.layers.size() || g.weight.size() != params.layers.size()) {
    throw std::invalid_argument("adam: shape mismatch");
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  auto apply = [&](auto& param, auto& m, auto& v, const auto& grad) {
    m = s.beta1 * m + (1.0 - s.beta1) * grad;
    v = s.beta2 * v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
    param.array() -= s.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + s.epsilon);
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& l = params.layers[i];
    if (g.weight[i].rows() != l.weight.rows() || g.weight[i].cols() != l.weight.cols() ||
        g.bias[i].size() != l.bias.size()) {
      throw std::invalid_argument("adam: gradient shape mismatch");
    }
    apply(l.weight, s.m_weight[i], s.v_weight[i], g.weight[i]);
    apply(l.bias, s.m_bias[i], s.v_bias[i], g.bias[i]);
  }
  ++params.version;
}

// ---------------------------------------------------------------------------
// Categorical distribution over logits.

inline double log_sum_exp(const Eigen::Ref<const Vector>& logits) {
  const double mx = logits.maxCoeff();
  return mx + std::log((logits.array() - mx).exp().sum());
}

inline Vector log_softmax(const Eigen::Ref<const Vector>& logits) {
  if (!logits.allFinite()) throw std::invalid_argument("categorical: non-finite logits");
  return logits.array() - log_sum_exp(logits);
}

inline Vector softmax(const Eigen::Ref<const Vector>& logits) { return log_softmax(logits).array().exp(); }

struct LogProbEntropy {
  double log_prob = 0.0;
  double entropy = 0.0;
};

inline LogProbEntropy categorical_logprob_entropy(const Eigen::Ref<const Vector>& logits, int index) {
  if (index < 0 || index >= logits.size()) throw std::out_of_range("categorical: index out of range");
  const Vector lp = log_softmax(logits);
  const Vector p = lp.array().exp();
  return {lp(index), -(p.array() * lp.array()).sum()};
}

/// Inverse-CDF draw using one uniform variate from `rng`.
template <typename Rng>
int categorical_sample(const Eigen::Ref<const Vector>& logits, Rng& rng) {
  const Vector p = softmax(logits);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    acc += p(i);
    if (u < acc) return i;
  }
  return static_cast<int>(p.size()) - 1;
}

inline int argmax(const Eigen::Ref<const Vector>& logits) {
  Eigen::Index idx = 0;
  logits.maxCoeff(&idx);
  return static_cast<int>(idx);
}

// ---------------------------------------------------------------------------
// Checkpoint format (all integers and doubles little-endian):
//   magic "EMVMLP01" | u32 version | u32 layer count |
//   per layer: u32 inputs, u32 outputs, u8 activation |
//   per layer: weights row-major f64, then biases f64

inline constexpr char kCheckpointMagic[8] = {'E', 'M', 'V', 'M', 'L', 'P', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  static_assert(std::is_integral_v<T>);
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw std::runtime_error("checkpoint: truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(static_cast<T>(bytes[i]) << (8 * i));
  return value;
}

inline void write_f64(std::ostream& os, double v) { write_le(os, std::bit_cast<std::uint64_t>(v)); }
inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_le<std::uint64_t>(is)); }

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Mlp& m) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint32_t>(os, kCheckpointVersion);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.layers.size()));
  for (const auto& l : m.layers) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(l.inputs()));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(l.outputs()));
    detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(l.activation));
  }
  for (const auto& l : m.layers) {
    for (int r = 0; r < l.weight.rows(); ++r)
      for (int c = 0; c < l.weight.cols(); ++c) detail::write_f64(os, l.weight(r, c));
    for (int r = 0; r < l.bias.size(); ++r) detail::write_f64(os, l.bias(r));
  }
}

inline Mlp read_checkpoint(std::istream& is) {
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::read_le<std::uint32_t>(is);
  if (count == 0 || count > 64) throw std::runtime_error("checkpoint: implausible layer count");
  Mlp m;
  m.layers.resize(count);
  for (auto& l : m.layers) {
    const auto in = detail::read_le<std::uint32_t>(is);
    const auto out = detail::read_le<std::uint32_t>(is);
    const auto act = detail::read_le<std::uint8_t>(is);
    if (act > 1) throw std::runtime_error("checkpoint: unknown activation tag");
    l.weight.resize(out, in);
    l.bias.resize(out);
    l.activation = static_cast<Activation>(act);
  }
  for (std::size_t i = 1; i < m.layers.size(); ++i) {
    if (m.layers[i].inputs() != m.layers[i - 1].outputs()) throw std::runtime_error("checkpoint: layers do not chain");
  }
  for (auto& l : m.layers) {
    for (int r = 0; r < l.weight.rows(); ++r)
      for (int c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = detail::read_f64(is);
    for (int r = 0; r < l.bias.size(); ++r) l.bias(r) = detail::read_f64(is);
  }
  return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const Mlp& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  write_checkpoint(os, m);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

inline Mlp load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  try {
    return read_checkpoint(is);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace emv::nn
