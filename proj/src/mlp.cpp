#include "stratgrad/mlp.hpp"

#include "stratgrad/rng.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace stratgrad {

namespace {

constexpr Eigen::Index kChunk = 1024;
constexpr std::uint64_t kInitStream = 0x696e6974;

void check_batch(const MlpParams& params, Eigen::Index rows, Eigen::Index cols, std::span<const int> labels) {
  if (cols != params.shape().num_inputs())
    throw std::invalid_argument("mlp: input width " + std::to_string(cols) + " does not match layer size " +
                                std::to_string(params.shape().num_inputs()));
  if (static_cast<std::size_t>(rows) != labels.size())
    throw std::invalid_argument("mlp: " + std::to_string(rows) + " inputs but " + std::to_string(labels.size()) +
                                " labels");
  for (int y : labels)
    if (y < 0 || y >= params.shape().num_classes())
      throw std::invalid_argument("mlp: label " + std::to_string(y) + " out of range");
}

void activate(Eigen::MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::Sigmoid: z = (1.0 + (-z.array()).exp()).inverse().matrix(); break;
    case Activation::Tanh: z = z.array().tanh().matrix(); break;
  }
}

/// delta <- delta * f'(.) expressed through the activation value.
void scale_by_derivative(Eigen::MatrixXd& delta, const Eigen::MatrixXd& act, Activation a) {
  switch (a) {
    case Activation::Sigmoid: delta.array() *= act.array() * (1.0 - act.array()); break;
    case Activation::Tanh: delta.array() *= 1.0 - act.array().square(); break;
  }
}

/// Hidden activations and output log-probabilities of one chunk.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> hidden;
  Eigen::MatrixXd log_prob;
};

ForwardCache run_forward(const MlpParams& params, const Eigen::Ref<const RowMatrixXd>& inputs) {
  ForwardCache cache;
  const std::size_t layers = params.num_layers();
  cache.hidden.reserve(layers - 1);
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = l == 0 ? Eigen::MatrixXd(inputs * params.weight(0))
                               : Eigen::MatrixXd(cache.hidden.back() * params.weight(l));
    z.rowwise() += params.bias(l).transpose();
    if (l + 1 < layers) {
      activate(z, params.shape().hidden);
      cache.hidden.push_back(std::move(z));
    } else {
      const Eigen::VectorXd row_max = z.rowwise().maxCoeff();
      z.colwise() -= row_max;
      const Eigen::VectorXd log_norm = z.array().exp().rowwise().sum().log().matrix();
      z.colwise() -= log_norm;
      cache.log_prob = std::move(z);
    }
  }
  return cache;
}

/// Output-layer delta of the per-sample loss: softmax - onehot.
Eigen::MatrixXd output_delta(const ForwardCache& cache, std::span<const int> labels) {
  Eigen::MatrixXd delta = cache.log_prob.array().exp().matrix();
  for (Eigen::Index i = 0; i < delta.rows(); ++i) delta(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  return delta;
}

double chunk_loss_sum(const ForwardCache& cache, std::span<const int> labels) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < cache.log_prob.rows(); ++i) s -= cache.log_prob(i, labels[static_cast<std::size_t>(i)]);
  return s;
}

/// Per-layer deltas (index l: gradient of the per-sample loss w.r.t. layer l's pre-activation).
std::vector<Eigen::MatrixXd> run_backward(const MlpParams& params, const ForwardCache& cache, std::span<const int> labels,
                                          std::size_t down_to = 0) {
  const std::size_t layers = params.num_layers();
  std::vector<Eigen::MatrixXd> deltas(layers);
  deltas[layers - 1] = output_delta(cache, labels);
  for (std::size_t l = layers - 1; l > down_to; --l) {
    Eigen::MatrixXd d = deltas[l] * params.weight(l).transpose();
    scale_by_derivative(d, cache.hidden[l - 1], params.shape().hidden);
    deltas[l - 1] = std::move(d);
  }
  return deltas;
}

double weight_penalty(const MlpParams& params) {
  double s = 0.0;
  for (std::size_t l = 0; l < params.num_layers(); ++l) s += params.weight(l).squaredNorm();
  return s;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b.data(), 4);
}

void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, sizeof v);
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b.data(), 8);
}

std::uint64_t get_le(std::istream& is, int bytes, const std::filesystem::path& path) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), bytes);
  if (is.gcount() != bytes) throw std::runtime_error("read_params: truncated file " + path.string());
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace

std::string_view activation_name(Activation a) { return a == Activation::Sigmoid ? "sigmoid" : "tanh"; }

Activation parse_activation(std::string_view name) {
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

void MlpShape::validate() const {
  if (layer_sizes.size() < 2) throw std::invalid_argument("MlpShape: need at least two layer sizes");
  for (auto s : layer_sizes)
    if (s < 1) throw std::invalid_argument("MlpShape: layer sizes must be positive");
}

Eigen::Index MlpShape::parameter_count() const {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) n += (layer_sizes[l] + 1) * layer_sizes[l + 1];
  return n;
}

MlpParams::MlpParams(MlpShape shape) : shape_(std::move(shape)) {
  shape_.validate();
  data_ = Eigen::VectorXd::Zero(shape_.parameter_count());
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < shape_.num_layers(); ++l) {
    offsets_.push_back(off);
    off += (shape_.layer_sizes[l] + 1) * shape_.layer_sizes[l + 1];
  }
}

Eigen::Map<Eigen::MatrixXd> MlpParams::weight(std::size_t l) {
  return {data_.data() + offsets_[l], shape_.layer_sizes[l], shape_.layer_sizes[l + 1]};
}

Eigen::Map<const Eigen::MatrixXd> MlpParams::weight(std::size_t l) const {
  return {data_.data() + offsets_[l], shape_.layer_sizes[l], shape_.layer_sizes[l + 1]};
}

Eigen::Map<Eigen::VectorXd> MlpParams::bias(std::size_t l) {
  return {data_.data() + offsets_[l] + shape_.layer_sizes[l] * shape_.layer_sizes[l + 1], shape_.layer_sizes[l + 1]};
}

Eigen::Map<const Eigen::VectorXd> MlpParams::bias(std::size_t l) const {
  return {data_.data() + offsets_[l] + shape_.layer_sizes[l] * shape_.layer_sizes[l + 1], shape_.layer_sizes[l + 1]};
}

Eigen::ArrayXd MlpParams::weight_mask() const {
  Eigen::ArrayXd mask = Eigen::ArrayXd::Zero(data_.size());
  for (std::size_t l = 0; l < num_layers(); ++l)
    mask.segment(offsets_[l], shape_.layer_sizes[l] * shape_.layer_sizes[l + 1]).setOnes();
  return mask;
}

MlpParams init_params(const MlpShape& shape, std::uint64_t seed) {
  MlpParams params(shape);
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    Rng rng = Rng::stream(seed, {kInitStream, l});
    const double scale = 1.0 / std::sqrt(static_cast<double>(shape.layer_sizes[l]));
    auto w = params.weight(l);
    // Row-major fill so the draw order matches the serialized layout.
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = scale * rng.normal();
  }
  return params;
}

Eigen::VectorXd forward(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& input) {
  if (input.size() != params.shape().num_inputs())
    throw std::invalid_argument("forward: input length " + std::to_string(input.size()) + " does not match layer size " +
                                std::to_string(params.shape().num_inputs()));
  const RowMatrixXd row = input.transpose();
  return forward_batch(params, row).row(0).transpose();
}

Eigen::MatrixXd forward_batch(const MlpParams& params, const Eigen::Ref<const RowMatrixXd>& inputs) {
  if (inputs.cols() != params.shape().num_inputs())
    throw std::invalid_argument("forward: input width does not match layer size");
  Eigen::MatrixXd out(inputs.rows(), params.shape().num_classes());
  for (Eigen::Index start = 0; start < inputs.rows(); start += kChunk) {
    const Eigen::Index n = std::min(kChunk, inputs.rows() - start);
    out.middleRows(start, n) = run_forward(params, inputs.middleRows(start, n)).log_prob.array().exp().matrix();
  }
  return out;
}

std::vector<int> predict(const MlpParams& params, const Eigen::Ref<const RowMatrixXd>& inputs) {
  const Eigen::MatrixXd probs = forward_batch(params, inputs);
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c)
      if (probs(i, c) > probs(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

LossGrad loss_and_grad(const MlpParams& params, const Eigen::Ref<const RowMatrixXd>& inputs,
                       std::span<const int> labels, double lambda) {
  check_batch(params, inputs.rows(), inputs.cols(), labels);
  if (inputs.rows() == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  MlpParams grad(params.shape());
  double loss_sum = 0.0;
  for (Eigen::Index start = 0; start < inputs.rows(); start += kChunk) {
    const Eigen::Index n = std::min(kChunk, inputs.rows() - start);
    const auto x = inputs.middleRows(start, n);
    const auto y = labels.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(n));
    const ForwardCache cache = run_forward(params, x);
    loss_sum += chunk_loss_sum(cache, y);
    const auto deltas = run_backward(params, cache, y);
    for (std::size_t l = 0; l < params.num_layers(); ++l) {
      if (l == 0)
        grad.weight(0).noalias() += x.transpose() * deltas[0];
      else
        grad.weight(l).noalias() += cache.hidden[l - 1].transpose() * deltas[l];
      grad.bias(l) += deltas[l].colwise().sum().transpose();
    }
  }
  const double inv_n = 1.0 / static_cast<double>(inputs.rows());
  grad.flat() *= inv_n;
  grad.flat().array() += lambda * params.weight_mask() * params.flat().array();
  return {loss_sum * inv_n + 0.5 * lambda * weight_penalty(params), std::move(grad)};
}

double loss(const MlpParams& params, const Eigen::Ref<const RowMatrixXd>& inputs, std::span<const int> labels,
            double lambda) {
  check_batch(params, inputs.rows(), inputs.cols(), labels);
  if (inputs.rows() == 0) throw std::invalid_argument("loss: empty batch");
  double loss_sum = 0.0;
  for (Eigen::Index start = 0; start < inputs.rows(); start += kChunk) {
    const Eigen::Index n = std::min(kChunk, inputs.rows() - start);
    loss_sum += chunk_loss_sum(run_forward(params, inputs.middleRows(start, n)),
                               labels.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(n)));
  }
  return loss_sum / static_cast<double>(inputs.rows()) + 0.5 * lambda * weight_penalty(params);
}

GradientMoments per_sample_moments(const MlpParams& params, const Eigen::Ref<const RowMatrixXd>& inputs,
                                   std::span<const int> labels, double lambda) {
  check_batch(params, inputs.rows(), inputs.cols(), labels);
  const Eigen::Index n = inputs.rows();
  if (n < 2) throw std::invalid_argument("per_sample_moments: need at least two samples");
  const ForwardCache cache = run_forward(params, inputs);
  const auto deltas = run_backward(params, cache, labels);
  GradientMoments out{MlpParams(params.shape()), MlpParams(params.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_dof = 1.0 / static_cast<double>(n - 1);
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    const auto compute = [&](const auto& a_prev) {
      auto mean_w = out.mean.weight(l);
      auto var_w = out.variance.weight(l);
      mean_w.noalias() = a_prev.transpose() * deltas[l];
      mean_w *= inv_n;
      const Eigen::VectorXd mean_b = deltas[l].colwise().sum().transpose() * inv_n;
      out.mean.bias(l) = mean_b;
      for (Eigen::Index i = 0; i < n; ++i) {
        var_w.array() += (a_prev.row(i).transpose() * deltas[l].row(i) - mean_w).array().square();
        out.variance.bias(l).array() += (deltas[l].row(i).transpose() - mean_b).array().square();
      }
    };
    if (l == 0)
      compute(inputs);
    else
      compute(cache.hidden[l - 1]);
  }
  out.variance.flat() *= inv_dof;
  out.mean.flat().array() += lambda * params.weight_mask() * params.flat().array();
  return out;
}

FullGradientRun full_gradient_train(MlpParams params, const Eigen::Ref<const RowMatrixXd>& inputs,
                                    std::span<const int> labels, std::size_t steps, double alpha, double lambda,
                                    const StepObserver& observer) {
  if (steps == 0) throw std::invalid_argument("full_gradient_train: steps must be >= 1");
  FullGradientRun run;
  run.losses.reserve(steps + 1);
  for (std::size_t s = 0; s < steps; ++s) {
    auto lg = loss_and_grad(params, inputs, labels, lambda);
    run.losses.push_back(lg.loss);
    if (observer) observer(s, params);
    params.flat() -= alpha * lg.grad.flat();
    if (!params.all_finite())
      throw std::runtime_error("full_gradient_train: non-finite parameters after step " + std::to_string(s + 1));
  }
  run.losses.push_back(loss(params, inputs, labels, lambda));
  run.params = std::move(params);
  return run;
}

TrackedWeight output_tracked_weight(const MlpShape& shape) { return {shape.num_layers() - 1, 0, 0}; }

Eigen::VectorXd tracked_sample_gradients(const MlpParams& params, const Eigen::Ref<const RowMatrixXd>& inputs,
                                         std::span<const int> labels, TrackedWeight tracked, double lambda) {
  check_batch(params, inputs.rows(), inputs.cols(), labels);
  if (tracked.layer >= params.num_layers() || tracked.in_index < 0 || tracked.out_index < 0 ||
      tracked.in_index >= params.shape().layer_sizes[tracked.layer] ||
      tracked.out_index >= params.shape().layer_sizes[tracked.layer + 1])
    throw std::invalid_argument("tracked_sample_gradients: tracked weight index out of range");
  const double decay = lambda * params.weight(tracked.layer)(tracked.in_index, tracked.out_index);
  Eigen::VectorXd out(inputs.rows());
  for (Eigen::Index start = 0; start < inputs.rows(); start += kChunk) {
    const Eigen::Index n = std::min(kChunk, inputs.rows() - start);
    const auto x = inputs.middleRows(start, n);
    const auto y = labels.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(n));
    const ForwardCache cache = run_forward(params, x);
    const auto deltas = run_backward(params, cache, y, tracked.layer);
    const auto& delta = deltas[tracked.layer];
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = tracked.layer == 0 ? x(i, tracked.in_index) : cache.hidden[tracked.layer - 1](i, tracked.in_index);
      out[start + i] = a * delta(i, tracked.out_index) + decay;
    }
  }
  return out;
}

Eigen::MatrixXd record_weight_gradient(std::span<const MlpParams> snapshots, const Eigen::Ref<const RowMatrixXd>& inputs,
                                       std::span<const int> labels, TrackedWeight tracked, double lambda) {
  Eigen::MatrixXd out(inputs.rows(), static_cast<Eigen::Index>(snapshots.size()));
  for (std::size_t t = 0; t < snapshots.size(); ++t)
    out.col(static_cast<Eigen::Index>(t)) = tracked_sample_gradients(snapshots[t], inputs, labels, tracked, lambda);
  return out;
}

void write_params(const MlpParams& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_params: cannot open " + path.string());
  os.write("MLP1", 4);
  const auto& sizes = params.shape().layer_sizes;
  put_u32(os, static_cast<std::uint32_t>(sizes.size()));
  for (auto s : sizes) put_u32(os, static_cast<std::uint32_t>(s));
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    const auto w = params.weight(l);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) put_f64(os, w(i, j));
    for (double b : params.bias(l)) put_f64(os, b);
  }
  if (!os) throw std::runtime_error("write_params: write failed for " + path.string());
}

MlpParams read_params(const std::filesystem::path& path, Activation hidden) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_params: cannot open " + path.string());
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (is.gcount() != 4 || std::memcmp(magic.data(), "MLP1", 4) != 0)
    throw std::runtime_error("read_params: bad magic in " + path.string());
  const auto count = get_le(is, 4, path);
  if (count < 2 || count > 64) throw std::runtime_error("read_params: implausible layer count " + std::to_string(count));
  MlpShape shape;
  shape.hidden = hidden;
  for (std::uint64_t i = 0; i < count; ++i) shape.layer_sizes.push_back(static_cast<Eigen::Index>(get_le(is, 4, path)));
  MlpParams params(shape);
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    auto w = params.weight(l);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        const std::uint64_t v = get_le(is, 8, path);
        std::memcpy(&w(i, j), &v, sizeof v);
      }
    for (auto& b : params.bias(l)) {
      const std::uint64_t v = get_le(is, 8, path);
      std::memcpy(&b, &v, sizeof v);
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error("read_params: trailing bytes in " + path.string());
  return params;
}

}  // namespace stratgrad
