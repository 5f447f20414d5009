#include "dmden/model.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>

#include "dmden/error.hpp"
#include "dmden/textio.hpp"

namespace dmden {
namespace {

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& z) { return 1.0 / (1.0 + (-z).exp()); }

MlpGradients zeros_like(const std::vector<DenseLayer>& layers) {
  MlpGradients g;
  g.reserve(layers.size());
  for (const auto& l : layers)
    g.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  return g;
}

Batch noised_inputs(const TrainingBatch& batch, const NoiseSchedule& s) {
  Batch x_t(batch.x0.rows(), batch.x0.cols());
  for (Eigen::Index j = 0; j < batch.x0.cols(); ++j) {
    const int t = batch.t[static_cast<std::size_t>(j)];
    x_t.col(j) = std::sqrt(s.alpha_bar(t)) * batch.x0.col(j) +
                 std::sqrt(s.one_minus_alpha_bar(t)) * batch.eps.col(j);
  }
  return x_t;
}

void check_batch(const MlpNetwork& net, const TrainingBatch& batch) {
  const Eigen::Index B = batch.x0.cols();
  if (B < 1) throw ParameterError("loss: empty batch");
  if (batch.x0.rows() != net.dim() || batch.eps.rows() != net.dim() || batch.eps.cols() != B ||
      static_cast<Eigen::Index>(batch.t.size()) != B)
    throw ParameterError("loss: batch shape mismatch");
}

}  // namespace

Vector time_embed(int t, int width) {
  if (width < 2 || width % 2 != 0) throw ParameterError("time_embed: width must be even and >= 2");
  Vector e(width);
  const int half = width / 2;
  for (int i = 0; i < half; ++i) {
    const double angle = t / std::pow(10000.0, 2.0 * i / width);
    e[2 * i] = std::sin(angle);
    e[2 * i + 1] = std::cos(angle);
  }
  return e;
}

Vector time_embed(int t, const NoiseSchedule& s, int width) {
  if (t < 1 || t > s.T()) throw IndexError("time_embed: step out of range");
  return time_embed(t, width);
}

// ---------------------------------------------------------------------------

MlpNetwork::MlpNetwork(int dim, int embed_width, std::vector<int> hidden)
    : dim_(dim), embed_(embed_width) {
  if (dim < 1) throw ParameterError("mlp: dimension must be >= 1");
  if (embed_width < 2 || embed_width % 2 != 0)
    throw ParameterError("mlp: embedding width must be even and >= 2");
  int in = dim + embed_width;
  for (int h : hidden) {
    if (h < 1) throw ParameterError("mlp: hidden widths must be >= 1");
    layers_.push_back({Matrix::Zero(h, in), Vector::Zero(h)});
    in = h;
  }
  layers_.push_back({Matrix::Zero(dim, in), Vector::Zero(dim)});
}

MlpNetwork MlpNetwork::random(int dim, int embed_width, std::vector<int> hidden, Rng& rng) {
  MlpNetwork net(dim, embed_width, std::move(hidden));
  for (auto& l : net.layers_) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = scale * rng.normal();
  }
  return net;
}

std::vector<int> MlpNetwork::layer_dims() const {
  std::vector<int> dims{static_cast<int>(layers_.front().weight.cols())};
  for (const auto& l : layers_) dims.push_back(static_cast<int>(l.weight.rows()));
  return dims;
}

std::size_t MlpNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

double MlpNetwork::parameter(std::size_t index) const {
  return const_cast<MlpNetwork*>(this)->parameter(index);
}

double& MlpNetwork::parameter(std::size_t index) {
  for (auto& l : layers_) {
    const auto w = static_cast<std::size_t>(l.weight.size());
    if (index < w) {
      const auto cols = static_cast<std::size_t>(l.weight.cols());
      return l.weight(static_cast<Eigen::Index>(index / cols), static_cast<Eigen::Index>(index % cols));
    }
    index -= w;
    const auto b = static_cast<std::size_t>(l.bias.size());
    if (index < b) return l.bias[static_cast<Eigen::Index>(index)];
    index -= b;
  }
  throw IndexError("mlp: parameter index out of range");
}

Batch MlpNetwork::assemble_input(const Batch& x_t, std::span<const int> t) const {
  if (x_t.rows() != dim_) throw ParameterError("mlp: input has wrong dimension");
  if (static_cast<Eigen::Index>(t.size()) != x_t.cols())
    throw ParameterError("mlp: one step per column required");
  Batch input(dim_ + embed_, x_t.cols());
  input.topRows(dim_) = x_t;
  for (Eigen::Index j = 0; j < x_t.cols(); ++j)
    input.col(j).tail(embed_) = time_embed(t[static_cast<std::size_t>(j)], embed_);
  return input;
}

Batch MlpNetwork::run(Batch h, MlpTape* tape) const {
  if (tape) {
    tape->inputs.clear();
    tape->preactivations.clear();
  }
  const std::size_t last = layers_.size() - 1;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Batch z = layer.weight * h;
    z.colwise() += layer.bias;
    if (tape) tape->inputs.push_back(std::move(h));
    if (l == last) return z;
    Batch a = (z.array() * sigmoid(z.array())).matrix();
    if (tape) tape->preactivations.push_back(std::move(z));
    h = std::move(a);
  }
  return h;
}

Vector MlpNetwork::forward(const Vector& x_t, int t) const {
  Batch x = x_t;
  return forward(x, t).col(0);
}

Batch MlpNetwork::forward(const Batch& x_t, int t) const {
  if (x_t.rows() != dim_) throw ParameterError("mlp: input has wrong dimension");
  Batch input(dim_ + embed_, x_t.cols());
  input.topRows(dim_) = x_t;
  input.bottomRows(embed_).colwise() = time_embed(t, embed_);
  return run(std::move(input), nullptr);
}

Batch MlpNetwork::forward(const Batch& x_t, std::span<const int> t) const {
  return run(assemble_input(x_t, t), nullptr);
}

Batch MlpNetwork::forward_with_tape(const Batch& x_t, std::span<const int> t, MlpTape& tape) const {
  return run(assemble_input(x_t, t), &tape);
}

MlpGradients MlpNetwork::backward(const MlpTape& tape, const Batch& grad_output) const {
  if (tape.inputs.size() != layers_.size() || tape.preactivations.size() + 1 != layers_.size())
    throw ParameterError("mlp: tape does not match network");
  MlpGradients grad = zeros_like(layers_);
  Batch delta = grad_output;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    grad[l].weight.noalias() = delta * tape.inputs[l].transpose();
    grad[l].bias = delta.rowwise().sum();
    if (l == 0) break;
    Batch upstream = layers_[l].weight.transpose() * delta;
    const Eigen::ArrayXXd z = tape.preactivations[l - 1].array();
    const Eigen::ArrayXXd sg = sigmoid(z);
    // d/dz [z sigmoid(z)] = sigmoid(z) (1 + z (1 - sigmoid(z)))
    delta = (upstream.array() * sg * (1.0 + z * (1.0 - sg))).matrix();
  }
  return grad;
}

bool MlpNetwork::all_finite() const {
  for (const auto& l : layers_)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

// ---------------------------------------------------------------------------

LossResult loss_eps(const MlpNetwork& net, const TrainingBatch& batch, const NoiseSchedule& s) {
  check_batch(net, batch);
  const auto B = static_cast<double>(batch.x0.cols());
  const Batch x_t = noised_inputs(batch, s);
  MlpTape tape;
  const Batch eps_hat = net.forward_with_tape(x_t, batch.t, tape);
  const Batch diff = eps_hat - batch.eps;
  LossResult r;
  r.loss = diff.squaredNorm() / B;
  r.grad = net.backward(tape, (2.0 / B) * diff);
  return r;
}

LossResult loss_mu(const MlpNetwork& net, const TrainingBatch& batch, const NoiseSchedule& s) {
  check_batch(net, batch);
  for (int t : batch.t)
    if (t < 2) throw ParameterError("loss_mu: step 1 has zero reverse variance");
  const Eigen::Index B = batch.x0.cols();
  const Batch x_t = noised_inputs(batch, s);
  MlpTape tape;
  const Batch eps_hat = net.forward_with_tape(x_t, batch.t, tape);

  Batch grad_out(x_t.rows(), B);
  double total = 0.0;
  for (Eigen::Index j = 0; j < B; ++j) {
    const int t = batch.t[static_cast<std::size_t>(j)];
    const double sqrt_alpha = std::sqrt(s.alpha(t));
    const double eps_coef = s.beta(t) / std::sqrt(s.one_minus_alpha_bar(t));
    const double inv_two_var = 0.5 / s.sigma_sq(t);
    const Vector mu_theta = (x_t.col(j) - eps_coef * eps_hat.col(j)) / sqrt_alpha;
    const Vector mu_true = posterior_mean(x_t.col(j), batch.x0.col(j), s, t);
    const Vector r = mu_theta - mu_true;
    total += inv_two_var * r.squaredNorm();
    grad_out.col(j) = (2.0 * inv_two_var * (-eps_coef / sqrt_alpha) / static_cast<double>(B)) * r;
  }
  LossResult out;
  out.loss = total / static_cast<double>(B);
  out.grad = net.backward(tape, grad_out);
  return out;
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "eps") return LossKind::Eps;
  if (name == "mu") return LossKind::Mu;
  throw ParameterError("unknown loss kind '" + name + "' (expected eps or mu)");
}

std::string to_string(LossKind kind) { return kind == LossKind::Eps ? "eps" : "mu"; }

void TrainConfig::validate() const {
  if (batch_size < 1) throw ParameterError("train.batch must be >= 1");
  if (epochs < 0) throw ParameterError("train.epochs must be >= 0");
  if (!(learning_rate >= 0.0)) throw ParameterError("train.lr must be >= 0");
  if (!(final_lr_factor > 0.0 && final_lr_factor <= 1.0))
    throw ParameterError("train.lr_final_factor must lie in (0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ParameterError("train.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ParameterError("train.beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ParameterError("train.eps must be > 0");
  if (dataset_size < 1) throw ParameterError("train.dataset must be >= 1");
  if (validation_size < 1) throw ParameterError("train.validation must be >= 1");
}

AdamOptimizer::AdamOptimizer(const MlpNetwork& net, double beta1, double beta2, double epsilon)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), m_(zeros_like(net.layers())),
      v_(zeros_like(net.layers())) {}

void AdamOptimizer::step(MlpNetwork& net, const MlpGradients& grad, double learning_rate) {
  ++count_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(count_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(count_));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseAbs2();
    param.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + epsilon_);
  };
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, m_[l].weight, v_[l].weight, grad[l].weight);
    update(layers[l].bias, m_[l].bias, v_[l].bias, grad[l].bias);
  }
}

TrainingBatch draw_training_batch(const Gmm& g, const NoiseSchedule& s, int size, int t_min, Rng& rng) {
  TrainingBatch b;
  b.x0 = sample(g, size, rng);
  b.t.resize(static_cast<std::size_t>(size));
  for (auto& t : b.t) t = rng.uniform_int(t_min, s.T());
  b.eps = rng.normal_batch(g.N(), size);
  return b;
}

TrainResult train(MlpNetwork net, const Gmm& g, const NoiseSchedule& s, const TrainConfig& cfg) {
  cfg.validate();
  if (net.dim() != g.N()) throw ParameterError("train: network and prior dimensions differ");
  const int t_min = cfg.loss == LossKind::Mu ? 2 : 1;
  if (t_min > s.T()) throw ParameterError("train: mu loss needs T >= 2");
  auto loss_fn = cfg.loss == LossKind::Eps ? loss_eps : loss_mu;

  Rng data_rng = Rng::stream(cfg.seed, 0);
  Rng val_rng = Rng::stream(cfg.seed, 1);
  Rng batch_rng = Rng::stream(cfg.seed, 2);

  const Batch dataset = sample(g, cfg.dataset_size, data_rng);
  const TrainingBatch validation = draw_training_batch(g, s, cfg.validation_size, t_min, val_rng);

  TrainResult result{std::move(net), {}, {}};
  MlpNetwork& model = result.net;
  result.validation_loss.push_back(loss_fn(model, validation, s).loss);

  AdamOptimizer adam(model, cfg.beta1, cfg.beta2, cfg.epsilon);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(cfg.dataset_size));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);

  TrainingBatch batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double progress = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 0.0;
    const double lr = cfg.learning_rate *
                      (cfg.final_lr_factor +
                       (1.0 - cfg.final_lr_factor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));

    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(batch_rng.uniform_int(0, static_cast<int>(i) - 1))]);

    double epoch_total = 0.0;
    long long seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto count = static_cast<Eigen::Index>(
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start));
      batch.x0.resize(g.N(), count);
      for (Eigen::Index j = 0; j < count; ++j) batch.x0.col(j) = dataset.col(order[start + static_cast<std::size_t>(j)]);
      batch.t.resize(static_cast<std::size_t>(count));
      for (auto& t : batch.t) t = batch_rng.uniform_int(t_min, s.T());
      batch.eps = batch_rng.normal_batch(g.N(), count);

      const LossResult r = loss_fn(model, batch, s);
      if (!std::isfinite(r.loss))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", sample offset " + std::to_string(start));
      adam.step(model, r.grad, lr);
      epoch_total += r.loss * static_cast<double>(count);
      seen += count;
    }
    if (!model.all_finite())
      throw NumericError("train: non-finite parameters after epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(epoch_total / static_cast<double>(seen));
    result.validation_loss.push_back(loss_fn(model, validation, s).loss);
  }
  return result;
}

// ---------------------------------------------------------------------------

MlpDenoiser::MlpDenoiser(MlpNetwork net, NoiseSchedule schedule)
    : net_(std::move(net)), schedule_(std::move(schedule)) {}

Batch MlpDenoiser::step_batch(const Batch& x_t, int t) const {
  if (t < 1 || t > schedule_.T()) throw IndexError("mlp step out of range");
  const Batch eps_hat = net_.forward(x_t, t);
  const double coef = schedule_.beta(t) / std::sqrt(schedule_.one_minus_alpha_bar(t));
  return (x_t - coef * eps_hat) / std::sqrt(schedule_.alpha(t));
}

MlpDenoiser as_denoiser(MlpNetwork net, NoiseSchedule s) { return MlpDenoiser(std::move(net), std::move(s)); }

void write_mlp(std::ostream& out, const MlpNetwork& net) {
  out << "DMDEN-MLP v1\n";
  const auto dims = net.layer_dims();
  for (std::size_t i = 0; i < dims.size(); ++i) out << (i ? " " : "") << dims[i];
  out << '\n';
  for (const auto& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) out << textio::join(l.weight.row(r)) << '\n';
    out << textio::join(l.bias) << '\n';
  }
}

MlpNetwork read_mlp(std::istream& in) {
  if (textio::read_line(in, "mlp header") != "DMDEN-MLP v1")
    throw IoError("mlp: missing 'DMDEN-MLP v1' header");
  const auto tokens = textio::split_ws(textio::read_line(in, "mlp layer dimensions"));
  if (tokens.size() < 2) throw IoError("mlp: need at least input and output dimensions");
  std::vector<int> dims;
  for (auto tok : tokens) dims.push_back(static_cast<int>(textio::parse_int(tok)));
  const int dim = dims.back();
  const int embed = dims.front() - dim;
  if (dim < 1 || embed < 2 || embed % 2 != 0) throw IoError("mlp: inconsistent layer dimensions");

  MlpNetwork net(dim, embed, std::vector<int>(dims.begin() + 1, dims.end() - 1));
  for (auto& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      const auto row = textio::read_doubles(in, static_cast<std::size_t>(l.weight.cols()), "mlp weights");
      l.weight.row(r) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), l.weight.cols());
    }
    const auto bias = textio::read_doubles(in, static_cast<std::size_t>(l.bias.size()), "mlp bias");
    l.bias = Eigen::Map<const Vector>(bias.data(), l.bias.size());
  }
  return net;
}

void save_mlp(const std::filesystem::path& path, const MlpNetwork& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_mlp(out, net);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

MlpNetwork load_mlp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  return read_mlp(in);
}

}  // namespace dmden
