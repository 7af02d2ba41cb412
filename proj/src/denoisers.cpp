// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#include "difftune/denoisers.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "difftune/rng.hpp"
#include "difftune/text_io.hpp"

namespace difftune {

ColumnBatch Denoiser::predict_eps_each(const ColumnBatch& xt, std::span<const Timestep> t,
                                       std::span<const Condition> cond) const {
  if (static_cast<Eigen::Index>(t.size()) != xt.cols() ||
      static_cast<Eigen::Index>(cond.size()) != xt.cols())
    throw InvalidArgument("predict_eps_each: timestep/condition count differs from batch size");
  ColumnBatch eps(xt.rows(), xt.cols());
  for (Eigen::Index j = 0; j < xt.cols(); ++j) eps.col(j) = predict_eps(xt.col(j), t[j], cond[j]);
  return eps;
}

// -- ClosedFormDenoiser ------------------------------------------------------

ClosedFormDenoiser::ClosedFormDenoiser(PointDataset support, NoiseSchedule schedule)
    : support_(std::move(support)), schedule_(std::move(schedule)) {
  for (int c = 0; c < support_.num_classes(); ++c) {
    bool present = false;
    for (int label : support_.labels()) present |= (label == c);
    class_atoms_.push_back(present ? support_.select(Condition::label(c)).points() : PointMatrix());
  }
}

const PointMatrix& ClosedFormDenoiser::atoms(Condition cond) const {
  if (cond.is_unconditional()) return support_.points();
  if (cond.index() >= static_cast<int>(class_atoms_.size()))
    throw InvalidArgument("unknown condition " + std::to_string(cond.index()));
  const PointMatrix& a = class_atoms_[cond.index()];
  if (a.rows() == 0)
    throw InvalidArgument("empty support for class " + std::to_string(cond.index()));
  return a;
}

Eigen::VectorXd ClosedFormDenoiser::posterior_weights(const Point& xt, Timestep t,
                                                      Condition cond) const {
  if (t < 1 || t > schedule_.num_steps())
    throw InvalidArgument("ideal denoiser needs 1 <= t <= T (posterior is degenerate at t = 0)");
  if (xt.size() != dim()) throw InvalidArgument("ideal denoiser: dimension mismatch");
  if (!xt.allFinite()) throw InvalidArgument("ideal denoiser: non-finite xt");
  const PointMatrix& x0 = atoms(cond);
  const double a = schedule_.alpha_bar(t);
  const double inv_two_var = 1.0 / (2.0 * (1.0 - a));

  Eigen::VectorXd logw =
      -((x0 * std::sqrt(a)).rowwise() - xt.transpose()).rowwise().squaredNorm() * inv_two_var;
  logw.array() -= logw.maxCoeff();
  Eigen::VectorXd w = logw.array().exp();
  return w / w.sum();
}

Point ClosedFormDenoiser::denoise(const Point& xt, Timestep t, Condition cond) const {
  const Eigen::VectorXd w = posterior_weights(xt, t, cond);
  return atoms(cond).transpose() * w;
}

ColumnBatch ClosedFormDenoiser::predict_eps(const ColumnBatch& xt, Timestep t,
                                            Condition cond) const {
  ColumnBatch eps(xt.rows(), xt.cols());
  for (Eigen::Index j = 0; j < xt.cols(); ++j) {
    const Point x = xt.col(j);
    eps.col(j) = x0_to_eps(denoise(x, t, cond), x, t, schedule_);
  }
  return eps;
}

// -- MlpDenoiser -------------------------------------------------------------

namespace {

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& z) { return 1.0 / (1.0 + (-z).exp()); }

std::vector<std::pair<int, int>> layer_shapes(const MlpArchitecture& arch) {
  std::vector<std::pair<int, int>> shapes;  // (out, in)
  int in = arch.input_dim();
  for (int width : arch.hidden) {
    shapes.emplace_back(width, in);
    in = width;
  }
  shapes.emplace_back(arch.data_dim, in);
  return shapes;
}

void validate(const MlpArchitecture& arch) {
  if (arch.data_dim < 1 || arch.num_classes < 0 || arch.time_frequencies < 1 ||
      arch.cond_embed_dim < 0)
    throw InvalidArgument("invalid MLP architecture");
  for (int w : arch.hidden)
    if (w < 1) throw InvalidArgument("MLP hidden widths must be positive");
}

}  // namespace

Eigen::Index MlpArchitecture::param_count() const {
  Eigen::Index n = static_cast<Eigen::Index>(num_classes + 1) * cond_embed_dim;
  for (auto [out, in] : layer_shapes(*this)) n += static_cast<Eigen::Index>(out) * in + out;
  return n;
}

Eigen::VectorXd time_embedding(Timestep t, int frequencies) {
  Eigen::VectorXd e(2 * frequencies);
  for (int k = 0; k < frequencies; ++k) {
    const double w = std::pow(10000.0, -static_cast<double>(k) / frequencies);
    e[k] = std::sin(t * w);
    e[frequencies + k] = std::cos(t * w);
  }
  return e;
}

struct MlpDenoiser::Forward {
  std::vector<Eigen::MatrixXd> activations;  // input to each layer
  std::vector<Eigen::MatrixXd> preact;       // pre-activation of each layer
  Eigen::MatrixXd output;
};

MlpDenoiser::MlpDenoiser(MlpArchitecture arch, ParamVector params)
    : arch_(std::move(arch)), params_(std::move(params)) {
  validate(arch_);
  if (params_.size() != arch_.param_count())
    throw InvalidArgument("parameter vector has " + std::to_string(params_.size()) +
                          " entries, architecture needs " + std::to_string(arch_.param_count()));
}

MlpDenoiser MlpDenoiser::initialize(const MlpArchitecture& arch, Seed seed) {
  validate(arch);
  Rng rng(derive_seed(seed, {0x6d6c70}));
  ParamVector p = ParamVector::Zero(arch.param_count());
  Eigen::Index off = 0;
  const Eigen::Index table = static_cast<Eigen::Index>(arch.num_classes + 1) * arch.cond_embed_dim;
  for (Eigen::Index i = 0; i < table; ++i) p[off++] = rng.normal();
  const auto shapes = layer_shapes(arch);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto [out, in] = shapes[l];
    const bool last = l + 1 == shapes.size();
    const double scale = std::sqrt(1.0 / in);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(out) * in; ++i)
      p[off++] = last ? 0.0 : scale * rng.normal();
    off += out;  // zero biases
  }
  return MlpDenoiser(arch, std::move(p));
}

int MlpDenoiser::table_row(Condition cond) const {
  if (cond.is_unconditional()) return arch_.num_classes;
  if (cond.index() >= arch_.num_classes)
    throw InvalidArgument("unknown condition index " + std::to_string(cond.index()));
  return cond.index();
}

Eigen::Map<const Eigen::VectorXd> MlpDenoiser::condition_embedding(int row) const {
  return {params_.data() + static_cast<Eigen::Index>(row) * arch_.cond_embed_dim,
          arch_.cond_embed_dim};
}

Eigen::Map<Eigen::VectorXd> MlpDenoiser::mutable_condition_embedding(int row) {
  return {params_.data() + static_cast<Eigen::Index>(row) * arch_.cond_embed_dim,
          arch_.cond_embed_dim};
}

MlpDenoiser::Forward MlpDenoiser::run_forward(const ColumnBatch& xt, std::span<const Timestep> t,
                                              std::span<const Condition> cond) const {
  const Eigen::Index batch = xt.cols();
  if (xt.rows() != arch_.data_dim) throw InvalidArgument("MLP input has wrong dimension");
  if (static_cast<Eigen::Index>(t.size()) != batch ||
      static_cast<Eigen::Index>(cond.size()) != batch)
    throw InvalidArgument("MLP batch: timestep/condition count differs from batch size");

  const int d = arch_.data_dim;
  const int te = arch_.time_embed_dim();
  Eigen::MatrixXd input(arch_.input_dim(), batch);
  input.topRows(d) = xt;
  for (Eigen::Index j = 0; j < batch; ++j) {
    input.block(d, j, te, 1) = time_embedding(t[j], arch_.time_frequencies);
    if (arch_.cond_embed_dim > 0)
      input.block(d + te, j, arch_.cond_embed_dim, 1) = condition_embedding(table_row(cond[j]));
  }

  Forward f;
  f.activations.push_back(std::move(input));
  const double* p = params_.data() + static_cast<Eigen::Index>(arch_.num_classes + 1) *
                                         arch_.cond_embed_dim;
  const auto shapes = layer_shapes(arch_);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto [out, in] = shapes[l];
    Eigen::Map<const Eigen::MatrixXd> w(p, out, in);
    p += static_cast<Eigen::Index>(out) * in;
    Eigen::Map<const Eigen::VectorXd> b(p, out);
    p += out;
    Eigen::MatrixXd z = w * f.activations.back();
    z.colwise() += b;
    if (!z.allFinite())
      throw NumericalError("non-finite activation at layer " + std::to_string(l),
                           static_cast<long>(l));
    if (l + 1 == shapes.size()) {
      f.output = z;
      f.preact.push_back(std::move(z));
    } else {
      Eigen::MatrixXd a = (z.array() * sigmoid(z.array())).matrix();
      f.preact.push_back(std::move(z));
      f.activations.push_back(std::move(a));
    }
  }
  return f;
}

ColumnBatch MlpDenoiser::forward(const ColumnBatch& xt, std::span<const Timestep> t,
                                 std::span<const Condition> cond) const {
  return run_forward(xt, t, cond).output;
}

Point MlpDenoiser::forward(const Point& xt, Timestep t, Condition cond) const {
  const Timestep ts[1] = {t};
  const Condition cs[1] = {cond};
  ColumnBatch x = xt;
  return run_forward(x, ts, cs).output.col(0);
}

ColumnBatch MlpDenoiser::predict_eps(const ColumnBatch& xt, Timestep t, Condition cond) const {
  const std::vector<Timestep> ts(xt.cols(), t);
  const std::vector<Condition> cs(xt.cols(), cond);
  return run_forward(xt, ts, cs).output;
}

LossGradient MlpDenoiser::loss_and_gradient(const EpsBatch& batch) const {
  const Eigen::Index n = batch.size();
  if (n < 1) throw InvalidArgument("mlp_backward: empty batch");
  if (batch.target.rows() != batch.xt.rows() || batch.target.cols() != n ||
      batch.weights.size() != n)
    throw InvalidArgument("mlp_backward: batch fields have inconsistent sizes");
  if ((batch.weights.array() < 0.0).any())
    throw InvalidArgument("mlp_backward: weights must be nonnegative");

  const Forward f = run_forward(batch.xt, batch.t, batch.cond);
  const Eigen::MatrixXd residual = batch.target - f.output;
  LossGradient out;
  out.loss = (residual.colwise().squaredNorm().transpose().array() * batch.weights.array()).sum() /
             static_cast<double>(n);
  out.grad = ParamVector::Zero(params_.size());

  // dL/d(output)
  Eigen::MatrixXd g = residual * (-2.0 / static_cast<double>(n));
  g.array().rowwise() *= batch.weights.transpose().array();

  const auto shapes = layer_shapes(arch_);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = static_cast<Eigen::Index>(arch_.num_classes + 1) * arch_.cond_embed_dim;
  for (auto [o, i] : shapes) {
    offsets.push_back(off);
    off += static_cast<Eigen::Index>(o) * i + o;
  }

  for (std::size_t l = shapes.size(); l-- > 0;) {
    const auto [o, i] = shapes[l];
    Eigen::Map<const Eigen::MatrixXd> w(params_.data() + offsets[l], o, i);
    Eigen::Map<Eigen::MatrixXd> dw(out.grad.data() + offsets[l], o, i);
    Eigen::Map<Eigen::VectorXd> db(out.grad.data() + offsets[l] + static_cast<Eigen::Index>(o) * i,
                                   o);
    dw.noalias() = g * f.activations[l].transpose();
    db = g.rowwise().sum();
    Eigen::MatrixXd upstream = w.transpose() * g;
    if (l == 0) {
      if (arch_.cond_embed_dim > 0) {
        const int start = arch_.data_dim + arch_.time_embed_dim();
        for (Eigen::Index j = 0; j < n; ++j) {
          const Eigen::Index row = table_row(batch.cond[j]);
          out.grad.segment(row * arch_.cond_embed_dim, arch_.cond_embed_dim) +=
              upstream.block(start, j, arch_.cond_embed_dim, 1);
        }
      }
    } else {
      const Eigen::ArrayXXd z = f.preact[l - 1].array();
      const Eigen::ArrayXXd s = sigmoid(z);
      g = (upstream.array() * (s * (1.0 + z * (1.0 - s)))).matrix();
    }
  }
  if (!out.grad.allFinite()) throw NumericalError("non-finite gradient", -1);
  return out;
}

// -- checkpoints -------------------------------------------------------------

namespace {
constexpr std::string_view kMlpMagic = "difftune-mlp v1";

std::string hidden_string(const std::vector<int>& hidden) {
  std::string s;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(hidden[i]);
  }
  return s.empty() ? "none" : s;
}
}  // namespace

void save_checkpoint(const MlpDenoiser& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  const MlpArchitecture& a = model.arch();
  out << kMlpMagic << '\n';
  out << "d=" << a.data_dim << ",classes=" << a.num_classes << ",hidden=" << hidden_string(a.hidden)
      << ",freqs=" << a.time_frequencies << ",cond_dim=" << a.cond_embed_dim
      << ",params=" << a.param_count() << '\n';
  for (Eigen::Index i = 0; i < model.params().size(); ++i)
    out << text::format_exact(model.params()[i]) << '\n';
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

MlpDenoiser load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != kMlpMagic)
    throw FormatError("malformed checkpoint header: expected '" + std::string(kMlpMagic) + "'");
  if (!std::getline(in, line)) throw FormatError("checkpoint missing architecture line");
  const auto kv = text::parse_key_values(text::trim(line), "checkpoint architecture");
  for (const char* key : {"d", "classes", "hidden", "freqs", "cond_dim", "params"})
    if (!kv.count(key)) throw FormatError(std::string("checkpoint missing '") + key + "'");
  MlpArchitecture a;
  a.data_dim = static_cast<int>(text::parse_integer(kv.at("d"), "d"));
  a.num_classes = static_cast<int>(text::parse_integer(kv.at("classes"), "classes"));
  a.time_frequencies = static_cast<int>(text::parse_integer(kv.at("freqs"), "freqs"));
  a.cond_embed_dim = static_cast<int>(text::parse_integer(kv.at("cond_dim"), "cond_dim"));
  a.hidden.clear();
  if (kv.at("hidden") != "none")
    for (auto w : text::split(kv.at("hidden"), 'x'))
      a.hidden.push_back(static_cast<int>(text::parse_integer(w, "hidden")));
  const long long count = text::parse_integer(kv.at("params"), "params");
  validate(a);
  if (count != a.param_count())
    throw FormatError("checkpoint declares " + std::to_string(count) +
                      " parameters, architecture needs " + std::to_string(a.param_count()));
  ParamVector p(count);
  long long i = 0;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    if (i >= count) throw FormatError("checkpoint has more parameters than declared");
    p[i] = text::parse_exact(line, "parameter " + std::to_string(i));
    ++i;
  }
  if (i != count)
    throw FormatError("checkpoint truncated at parameter " + std::to_string(i));
  return MlpDenoiser(a, std::move(p));
}

// -- Adam --------------------------------------------------------------------

void adam_step(ParamVector& params, const ParamVector& grads, AdamState& state,
               const AdamHyperparams& hp) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw InvalidArgument("adam_step: shape mismatch");
  if (!grads.allFinite()) throw NumericalError("adam_step: non-finite gradient", state.step);
  state.step += 1;
  state.m = hp.beta1 * state.m + (1.0 - hp.beta1) * grads;
  state.v = hp.beta2 * state.v + (1.0 - hp.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  params.array() -= hp.learning_rate * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + hp.epsilon);
}

}  // namespace difftune
