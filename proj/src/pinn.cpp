#include "sorbfit/pinn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "sorbfit/error.hpp"

namespace sorbfit::pinn {

namespace {

using Arr = Eigen::ArrayXXd;

Arr sigmoid(const Arr& z) { return 1.0 / (1.0 + (-z).exp()); }

double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }
double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

int scaled(int w, double mult) { return std::max(1, static_cast<int>(std::lround(w * mult))); }

}  // namespace

// ---------------------------------------------------------------- network

Network::Network(const ArchSpec& spec) : spec_(spec) {
  if (spec.input_dim < 1 || spec.scale_widths.empty() || spec.backbone_widths.empty())
    throw Error(Errc::InvalidArgument, "network needs inputs, scale pathways and a backbone");
  if (!(spec.dropout >= 0.0 && spec.dropout < 1.0)) throw Error(Errc::InvalidArgument, "dropout must be in [0, 1)");
  if (!(spec.width_mult > 0.0)) throw Error(Errc::InvalidArgument, "width_mult must be positive");
  for (int w : spec.scale_widths)
    if (w < 1) throw Error(Errc::InvalidArgument, "widths must be >= 1");
  for (int w : spec.backbone_widths)
    if (w < 1) throw Error(Errc::InvalidArgument, "widths must be >= 1");

  std::size_t off = 0;
  auto dense_slot = [&](int in, int out) {
    DenseSlot s{in, out, off, off + static_cast<std::size_t>(in) * static_cast<std::size_t>(out)};
    off = s.b + static_cast<std::size_t>(out);
    return s;
  };
  for (int w : spec.scale_widths) {
    scale.push_back(dense_slot(spec.input_dim, scaled(w, spec.width_mult)));
    concat_width_ += scale.back().out;
  }
  gate = dense_slot(2, concat_width_);
  int prev = concat_width_;
  for (int w : spec.backbone_widths) {
    const int width = scaled(w, spec.width_mult);
    backbone_.push_back(width);
    dense.push_back(dense_slot(prev, width));
    BatchNormSlot s{width, off, off + static_cast<std::size_t>(width)};
    off = s.beta + static_cast<std::size_t>(width);
    bn.push_back(s);
    running_mean.push_back(Vector::Zero(width));
    running_var.push_back(Vector::Ones(width));
    prev = width;
  }
  out = dense_slot(prev, 1);
  theta.assign(off, 0.0);

  for (std::size_t j = 0; j < backbone_.size(); ++j) {
    int src = -1;
    for (std::size_t k = 0; k < j; ++k)
      if (backbone_[k] == backbone_[j]) src = static_cast<int>(k);
    skip_.push_back(src);
  }

  Rng rng = make_rng(spec.seed);
  auto kaiming = [&](const DenseSlot& s) {
    const double sd = std::sqrt(2.0 / s.in);
    auto w = W(s);
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = sd * standard_normal(rng);
  };
  for (const auto& s : scale) kaiming(s);
  kaiming(gate);
  for (std::size_t j = 0; j < dense.size(); ++j) {
    kaiming(dense[j]);
    std::fill_n(theta.begin() + static_cast<std::ptrdiff_t>(bn[j].gamma), bn[j].width, 1.0);
  }
  const double a = 0.1 * std::sqrt(6.0 / (out.in + out.out));
  auto wo = W(out);
  for (Eigen::Index c = 0; c < wo.cols(); ++c) wo(0, c) = uniform(rng, -a, a);
}

Network build_network(const ArchSpec& spec) { return Network(spec); }

Vector forward(const Network& net, const Matrix& X, const Matrix& PT, const ForwardOptions& opt, Tape* tape) {
  if (X.rows() != net.spec().input_dim)
    throw Error(Errc::DimensionMismatch, "input has " + std::to_string(X.rows()) + " features, network expects " +
                                             std::to_string(net.spec().input_dim));
  if (PT.rows() != 2 || PT.cols() != X.cols()) throw Error(Errc::DimensionMismatch, "gate input must be 2 x batch");
  const auto B = X.cols();
  Tape local;
  Tape& t = tape ? *tape : local;
  t.x = X;
  t.pt.resize(2, B);
  for (int r = 0; r < 2; ++r)
    t.pt.row(r) = (PT.row(r).array() - net.gate_center[static_cast<std::size_t>(r)]) / net.gate_scale[static_cast<std::size_t>(r)];

  t.scale_z.clear();
  t.ms.resize(net.concat_width(), B);
  Eigen::Index row = 0;
  for (const auto& s : net.scale) {
    Matrix z = (net.W(s) * X).colwise() + net.b(s);
    t.ms.middleRows(row, s.out) = (z.array() * sigmoid(z.array())).matrix();
    row += s.out;
    t.scale_z.push_back(std::move(z));
  }
  Matrix zg = (net.W(net.gate) * t.pt).colwise() + net.b(net.gate);
  t.gate = sigmoid(zg.array()).matrix();

  const std::size_t L = net.dense.size();
  t.in.assign(L, {});
  t.z.assign(L, {});
  t.xhat.assign(L, {});
  t.u.assign(L, {});
  t.mask.assign(L, {});
  t.h.assign(L, {});
  t.mean.assign(L, {});
  t.inv_std.assign(L, {});
  t.batch_stats = opt.train && !opt.reuse;
  const double keep = 1.0 - net.spec().dropout;
  Matrix hprev = t.gate.cwiseProduct(t.ms);
  for (std::size_t j = 0; j < L; ++j) {
    t.in[j] = std::move(hprev);
    t.z[j] = (net.W(net.dense[j]) * t.in[j]).colwise() + net.b(net.dense[j]);
    if (opt.reuse) {
      t.mean[j] = opt.reuse->mean[j];
      t.inv_std[j] = opt.reuse->inv_std[j];
    } else if (opt.train) {
      t.mean[j] = t.z[j].rowwise().mean();
      const Vector var = (t.z[j].colwise() - t.mean[j]).array().square().rowwise().mean();
      t.inv_std[j] = (var.array() + kBatchNormEps).rsqrt();
    } else {
      t.mean[j] = net.running_mean[j];
      t.inv_std[j] = (net.running_var[j].array() + kBatchNormEps).rsqrt();
    }
    t.xhat[j] = ((t.z[j].colwise() - t.mean[j]).array().colwise() * t.inv_std[j].array()).matrix();
    Eigen::Map<const Vector> gamma(net.theta.data() + net.bn[j].gamma, net.bn[j].width);
    Eigen::Map<const Vector> beta(net.theta.data() + net.bn[j].beta, net.bn[j].width);
    t.u[j] = ((t.xhat[j].array().colwise() * gamma.array()).colwise() + beta.array()).matrix();
    Matrix a = (t.u[j].array() * sigmoid(t.u[j].array())).matrix();
    if (opt.train && net.spec().dropout > 0.0) {
      if (opt.reuse) {
        t.mask[j] = opt.reuse->mask[j];
      } else {
        if (!opt.dropout_rng) throw Error(Errc::InvalidArgument, "train-mode dropout needs an rng");
        t.mask[j].resize(a.rows(), a.cols());
        for (Eigen::Index c = 0; c < a.cols(); ++c)
          for (Eigen::Index r = 0; r < a.rows(); ++r) t.mask[j](r, c) = uniform01(*opt.dropout_rng) < keep ? 1.0 / keep : 0.0;
      }
      a = a.cwiseProduct(t.mask[j]);
    }
    const int src = net.skip_source(j);
    if (src >= 0) a += t.h[static_cast<std::size_t>(src)];
    t.h[j] = a;
    hprev = a;
  }
  t.out_z = (net.W(net.out) * t.h[L - 1]).row(0).transpose();
  t.out_z.array() += net.b(net.out)[0];
  t.y = t.out_z.unaryExpr([](double z) { return softplus(z); });
  return t.y;
}

void backward(const Network& net, const Tape& t, const Vector& dy, Params& grad, Matrix* dX, Matrix* dPT) {
  if (grad.size() != net.parameter_count()) grad.assign(net.parameter_count(), 0.0);
  const auto B = t.x.cols();
  if (dy.size() != B) throw Error(Errc::DimensionMismatch, "upstream gradient length differs from the batch");
  auto gW = [&](const DenseSlot& s) { return Eigen::Map<Matrix>(grad.data() + s.w, s.out, s.in); };
  auto gb = [&](const DenseSlot& s) { return Eigen::Map<Vector>(grad.data() + s.b, s.out); };

  const std::size_t L = net.dense.size();
  const Vector dz = dy.array() * t.out_z.unaryExpr([](double z) { return logistic(z); }).array();
  gW(net.out).noalias() += dz.transpose() * t.h[L - 1].transpose();
  gb(net.out)[0] += dz.sum();
  std::vector<Matrix> dh(L);
  dh[L - 1] = net.W(net.out).transpose() * dz.transpose();
  Matrix dh0;
  for (std::size_t jj = L; jj-- > 0;) {
    Matrix& d = dh[jj];
    const int src = net.skip_source(jj);
    if (src >= 0) {
      auto& ds = dh[static_cast<std::size_t>(src)];
      if (ds.size() == 0) ds = d;
      else ds += d;
    }
    Matrix da = t.mask[jj].size() ? d.cwiseProduct(t.mask[jj]) : d;
    const Arr su = sigmoid(t.u[jj].array());
    const Matrix du = (da.array() * (su + t.u[jj].array() * su * (1.0 - su))).matrix();
    Eigen::Map<Vector> ggamma(grad.data() + net.bn[jj].gamma, net.bn[jj].width);
    Eigen::Map<Vector> gbeta(grad.data() + net.bn[jj].beta, net.bn[jj].width);
    Eigen::Map<const Vector> gamma(net.theta.data() + net.bn[jj].gamma, net.bn[jj].width);
    ggamma += du.cwiseProduct(t.xhat[jj]).rowwise().sum();
    gbeta += du.rowwise().sum();
    const Matrix dxhat = (du.array().colwise() * gamma.array()).matrix();
    Matrix dzj;
    if (t.batch_stats) {
      const Vector s1 = dxhat.rowwise().sum();
      const Vector s2 = dxhat.cwiseProduct(t.xhat[jj]).rowwise().sum();
      const double n = static_cast<double>(B);
      dzj = (((n * dxhat.array()).colwise() - s1.array() - (t.xhat[jj].array().colwise() * s2.array())).colwise() *
             (t.inv_std[jj].array() / n))
                .matrix();
    } else {
      dzj = (dxhat.array().colwise() * t.inv_std[jj].array()).matrix();
    }
    gW(net.dense[jj]).noalias() += dzj * t.in[jj].transpose();
    gb(net.dense[jj]) += dzj.rowwise().sum();
    Matrix dinput = net.W(net.dense[jj]).transpose() * dzj;
    if (jj == 0) dh0 = std::move(dinput);
    else {
      auto& prev = dh[jj - 1];
      if (prev.size() == 0) prev = std::move(dinput);
      else prev += dinput;
    }
  }
  const Matrix dgate = dh0.cwiseProduct(t.ms);
  const Matrix dms = dh0.cwiseProduct(t.gate);
  const Matrix dzg = (dgate.array() * t.gate.array() * (1.0 - t.gate.array())).matrix();
  gW(net.gate).noalias() += dzg * t.pt.transpose();
  gb(net.gate) += dzg.rowwise().sum();
  if (dPT) {
    *dPT = net.W(net.gate).transpose() * dzg;
    for (int r = 0; r < 2; ++r) dPT->row(r) /= net.gate_scale[static_cast<std::size_t>(r)];
  }
  if (dX) dX->setZero(t.x.rows(), B);
  Eigen::Index row = 0;
  for (std::size_t s = 0; s < net.scale.size(); ++s) {
    const auto& slot = net.scale[s];
    const Arr sz = sigmoid(t.scale_z[s].array());
    const Matrix dzs =
        (dms.middleRows(row, slot.out).array() * (sz + t.scale_z[s].array() * sz * (1.0 - sz))).matrix();
    gW(slot).noalias() += dzs * t.x.transpose();
    gb(slot) += dzs.rowwise().sum();
    if (dX) dX->noalias() += net.W(slot).transpose() * dzs;
    row += slot.out;
  }
}

void update_running_stats(Network& net, const Tape& t) {
  if (!t.batch_stats || t.x.cols() < 2) return;
  const double n = static_cast<double>(t.x.cols());
  for (std::size_t j = 0; j < net.dense.size(); ++j) {
    const Vector var = (t.inv_std[j].array().square().inverse() - kBatchNormEps).max(0.0);
    net.running_mean[j] = (1.0 - kBatchNormMomentum) * net.running_mean[j] + kBatchNormMomentum * t.mean[j];
    net.running_var[j] = (1.0 - kBatchNormMomentum) * net.running_var[j] + kBatchNormMomentum * var * (n / (n - 1.0));
  }
}

Vector predict(const Network& net, const Matrix& X, const Matrix& PT) {
  constexpr Eigen::Index kChunk = 256;
  Vector out(X.cols());
  for (Eigen::Index s = 0; s < X.cols(); s += kChunk) {
    const auto n = std::min(kChunk, X.cols() - s);
    out.segment(s, n) = forward(net, X.middleCols(s, n), PT.middleCols(s, n));
  }
  return out;
}

Vector dqdp_reverse(const Network& net, const Matrix& X, const Matrix& PT, const Matrix& dXdp) {
  Tape t;
  forward(net, X, PT, {}, &t);
  Params scratch(net.parameter_count(), 0.0);
  Matrix dX, dPT;
  backward(net, t, Vector::Ones(X.cols()), scratch, &dX, &dPT);
  return (dX.cwiseProduct(dXdp).colwise().sum() + dPT.row(0)).transpose();
}

Vector dqdp_central(const Network& net, const Matrix& X_plus, const Matrix& PT_plus, const Matrix& X_minus,
                    const Matrix& PT_minus, double h) {
  return (predict(net, X_plus, PT_plus) - predict(net, X_minus, PT_minus)) / (2.0 * h);
}

// ---------------------------------------------------------------- losses

double data_weight(double y) { return logistic(kWeightSharpness * (y - kWeightThreshold)) + 0.5; }

LossBreakdown loss_terms(std::span<const double> preds, std::span<const double> targets, std::span<const double> pressures,
                         std::span<const data::Lithology> lithologies, const QmaxTable& qmax,
                         std::span<const double> dqdp, std::array<double, 4> lambdas) {
  const std::size_t n = preds.size();
  if (targets.size() != n || pressures.size() != n || lithologies.size() != n || (!dqdp.empty() && dqdp.size() != n))
    throw Error(Errc::LengthMismatch, "loss inputs differ in length");
  LossBreakdown lb;
  lb.lambdas = lambdas;
  if (n == 0) return lb;
  std::size_t n_high = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double yh = preds[i], y = targets[i], qm = qmax.of(lithologies[i]);
    lb.data += data_weight(y) * (y - yh) * (y - yh);
    if (pressures[i] > kPhysicsPressure) {
      ++n_high;
      lb.physics += std::max(0.0, yh - qm) + kLowerBandWeight * std::max(0.0, kLowerBandFraction * qm - yh);
    }
    lb.bounds += std::max(0.0, -yh) + std::max(0.0, yh - qm);
    if (!dqdp.empty()) lb.monotonicity += std::max(0.0, -dqdp[i] - kMonotonicitySlack);
  }
  const double nn = static_cast<double>(n);
  lb.data /= nn;
  lb.physics = n_high ? lb.physics / static_cast<double>(n_high) : 0.0;
  lb.bounds /= nn;
  lb.monotonicity /= nn;
  const auto t = lb.terms();
  lb.total = 0.0;
  for (std::size_t k = 0; k < 4; ++k) lb.total += lambdas[k] * t[k];
  return lb;
}

std::array<Vector, 4> loss_gradients(std::span<const double> preds, std::span<const double> targets,
                                     std::span<const double> pressures, std::span<const double> qmax_rows,
                                     std::span<const double> dqdp) {
  const auto n = static_cast<Eigen::Index>(preds.size());
  std::array<Vector, 4> g{Vector::Zero(n), Vector::Zero(n), Vector::Zero(n), Vector::Zero(n)};
  if (n == 0) return g;
  Eigen::Index n_high = 0;
  for (double p : pressures) n_high += p > kPhysicsPressure;
  const double nn = static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double yh = preds[k], y = targets[k], qm = qmax_rows[k];
    g[0][i] = -2.0 * data_weight(y) * (y - yh) / nn;
    if (pressures[k] > kPhysicsPressure) {
      double d = 0.0;
      if (yh > qm) d += 1.0;
      if (yh < kLowerBandFraction * qm) d -= kLowerBandWeight;
      g[1][i] = d / static_cast<double>(n_high);
    }
    double d = 0.0;
    if (yh < 0.0) d -= 1.0;
    if (yh > qm) d += 1.0;
    g[2][i] = d / nn;
    if (!dqdp.empty() && -dqdp[k] - kMonotonicitySlack > 0.0) g[3][i] = -1.0 / nn;
  }
  return g;
}

std::array<double, 4> adaptive_lambdas(const std::array<double, 4>& grad_norms, EmaState& state, double alpha,
                                       std::array<bool, 4> active) {
  for (std::size_t k = 0; k < 4; ++k)
    if (active[k]) state.g[k] = (1.0 - alpha) * state.g[k] + alpha * grad_norms[k];
  state.initialized = true;
  double gmax = 0.0;
  for (std::size_t k = 0; k < 4; ++k)
    if (active[k]) gmax = std::max(gmax, state.g[k]);
  std::array<double, 4> lam{1.0, 1.0, 1.0, 1.0};
  for (std::size_t k = 0; k < 4; ++k)
    if (active[k]) lam[k] = gmax / (state.g[k] + kLambdaEps);
  return lam;
}

// ---------------------------------------------------------------- training

double lr_at(Phase phase, int epoch, const TrainSchedule& s) {
  auto cosine = [](double hi, double lo, int e, int len) {
    return lo + (hi - lo) * (1.0 + std::cos(std::numbers::pi * e / len)) / 2.0;
  };
  switch (phase) {
    case Phase::Warmup: return s.lr_phase1;
    case Phase::Physics: return cosine(s.lr2_max, s.lr2_min, epoch, s.epochs[1]);
    case Phase::Full: return cosine(s.lr3_max, s.lr3_min, epoch, s.epochs[2]);
  }
  return s.lr_phase1;
}

std::array<double, 4> phase_weights(Phase phase, int epoch, const TrainSchedule& s) {
  if (!s.physics_enabled) return {1.0, 0.0, 0.0, 0.0};
  switch (phase) {
    case Phase::Warmup: return {1.0, 0.0, 0.0, 0.0};
    case Phase::Physics: return {1.0, static_cast<double>(epoch) / s.epochs[1], 0.0, 0.0};
    case Phase::Full: return s.phase3_weights;
  }
  return {1.0, 0.0, 0.0, 0.0};
}

std::array<double, 4> monitor_weights(Phase phase, const TrainSchedule& s) {
  if (!s.physics_enabled) return {1.0, 0.0, 0.0, 0.0};
  switch (phase) {
    case Phase::Warmup: return {1.0, 0.0, 0.0, 0.0};
    case Phase::Physics: return {1.0, 1.0, 0.0, 0.0};
    case Phase::Full: return s.phase3_weights;
  }
  return {1.0, 0.0, 0.0, 0.0};
}

Dataset Dataset::subset(const std::vector<std::size_t>& cols) const {
  std::vector<Eigen::Index> idx(cols.begin(), cols.end());
  Dataset d;
  d.X = X(Eigen::all, idx);
  d.X_plus = X_plus(Eigen::all, idx);
  d.X_minus = X_minus(Eigen::all, idx);
  d.PT = PT(Eigen::all, idx);
  d.PT_plus = PT_plus(Eigen::all, idx);
  d.PT_minus = PT_minus(Eigen::all, idx);
  d.y = y(idx);
  for (auto c : cols) d.lithology.push_back(lithology.at(c));
  d.h = h;
  return d;
}

namespace {

std::vector<double> qmax_rows(const std::vector<data::Lithology>& lith, const QmaxTable& q) {
  std::vector<double> out;
  for (auto l : lith) out.push_back(q.of(l));
  return out;
}

double norm(const Params& g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

struct AdamW {
  Params m, v;
  long t = 0;

  void step(Params& theta, const Params& g, double lr, const TrainSchedule& s) {
    if (m.empty()) m.assign(theta.size(), 0.0), v.assign(theta.size(), 0.0);
    ++t;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      theta[i] -= lr * ((m[i] / bc1) / (std::sqrt(v[i] / bc2) + s.adam_eps) + s.weight_decay * theta[i]);
    }
  }
};

std::span<const double> span_of(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

std::vector<double> row_span(const Matrix& m, Eigen::Index r) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.cols(); ++i) out[static_cast<std::size_t>(i)] = m(r, i);
  return out;
}

}  // namespace

LossBreakdown loss_and_gradient(const Network& net, const Dataset& batch, const std::array<double, 4>& lambdas,
                                const QmaxTable& qmax, const ForwardOptions& opt, Params& grad,
                                Tape* main_tape) {
  Tape local;
  Tape& tape = main_tape ? *main_tape : local;
  const Vector yh = forward(net, batch.X, batch.PT, opt, &tape);
  const bool need_mono = lambdas[3] > 0.0;
  Tape tp, tm;
  Vector dq;
  if (need_mono) {
    ForwardOptions fr;
    fr.train = opt.train;
    fr.reuse = &tape;
    const Vector yp = forward(net, batch.X_plus, batch.PT_plus, fr, &tp);
    const Vector ym = forward(net, batch.X_minus, batch.PT_minus, fr, &tm);
    dq = (yp - ym) / (2.0 * batch.h);
  }
  const auto p = row_span(batch.PT, 0);
  const auto qm = qmax_rows(batch.lithology, qmax);
  const auto g = loss_gradients(span_of(yh), span_of(batch.y), p, qm, span_of(dq));
  const Vector dy = lambdas[0] * g[0] + lambdas[1] * g[1] + lambdas[2] * g[2];
  backward(net, tape, dy, grad);
  if (need_mono) {
    const Vector dmono = lambdas[3] * g[3] / (2.0 * batch.h);
    backward(net, tp, dmono, grad);
    backward(net, tm, -dmono, grad);
  }
  return loss_terms(span_of(yh), span_of(batch.y), p, batch.lithology, qmax, span_of(dq), lambdas);
}

double evaluate_loss(const Network& net, const Dataset& d, const std::array<double, 4>& weights, const QmaxTable& qmax,
                     LossBreakdown* breakdown) {
  const Vector yh = predict(net, d.X, d.PT);
  const auto pressures = row_span(d.PT, 0);
  Vector dq;
  if (weights[3] > 0.0) dq = dqdp_central(net, d.X_plus, d.PT_plus, d.X_minus, d.PT_minus, d.h);
  const auto lb = loss_terms(span_of(yh), span_of(d.y), pressures, d.lithology, qmax, span_of(dq), weights);
  if (breakdown) *breakdown = lb;
  return lb.total;
}

TrainResult train(Network& net, const Dataset& tr, const Dataset& val, const TrainSchedule& s, const QmaxTable& qmax,
                  std::uint64_t seed) {
  if (tr.size() == 0 || val.size() == 0) throw Error(Errc::EmptyInput, "training and validation partitions must be non-empty");
  if (s.batch_size < 1) throw Error(Errc::InvalidArgument, "batch size must be >= 1");
  for (int r = 0; r < 2; ++r) {
    const auto row = tr.PT.row(r).array();
    const double mu = row.mean();
    const double sd = std::sqrt((row - mu).square().mean());
    net.gate_center[static_cast<std::size_t>(r)] = mu;
    net.gate_scale[static_cast<std::size_t>(r)] = sd > 0.0 ? sd : 1.0;
  }
  TrainResult res;
  AdamW opt;
  EmaState ema;
  Rng drop_rng = make_rng(derive_seed(seed, 0xD0D0));
  Params grad(net.parameter_count()), gdata, gphys;
  const std::size_t n = tr.size();

  for (int ph = 1; ph <= 3; ++ph) {
    const auto phase = static_cast<Phase>(ph);
    const std::size_t pi = static_cast<std::size_t>(ph - 1);
    const auto mon_w = monitor_weights(phase, s);
    double best = std::numeric_limits<double>::infinity();
    auto best_theta = net.theta;
    auto best_rm = net.running_mean;
    auto best_rv = net.running_var;
    int since = 0;
    for (int e = 0; e < s.epochs[pi]; ++e) {
      const double lr = lr_at(phase, e, s);
      const auto w = phase_weights(phase, e, s);
      const bool adaptive = phase == Phase::Physics && s.adaptive_in_phase2 && s.physics_enabled;
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      Rng shuf = make_rng(derive_seed(seed, static_cast<std::uint64_t>(ph), static_cast<std::uint64_t>(e)));
      shuffle(order.begin(), order.end(), shuf);

      EpochRecord rec;
      rec.phase = ph;
      rec.epoch = e;
      rec.lr = lr;
      rec.schedule_weights = w;
      int batches = 0;
      for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(s.batch_size)) {
        const std::size_t stop = std::min(n, start + static_cast<std::size_t>(s.batch_size));
        std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(stop));
        const Dataset batch = tr.subset(std::vector<std::size_t>(idx.begin(), idx.end()));
        Tape tape;
        ForwardOptions fo;
        fo.train = true;
        fo.dropout_rng = &drop_rng;
        std::fill(grad.begin(), grad.end(), 0.0);
        LossBreakdown lb;
        if (adaptive) {
          gdata.assign(grad.size(), 0.0);
          gphys.assign(grad.size(), 0.0);
          lb = loss_and_gradient(net, batch, {1.0, 0.0, 0.0, 0.0}, qmax, fo, gdata, &tape);
          const auto qm = qmax_rows(batch.lithology, qmax);
          const auto g = loss_gradients(span_of(tape.y), span_of(batch.y), row_span(batch.PT, 0), qm, {});
          backward(net, tape, g[1], gphys);
          const auto a = adaptive_lambdas({norm(gdata), norm(gphys), 0.0, 0.0}, ema, 0.1, {true, true, false, false});
          std::array<double, 4> lam = w;
          lam[0] = w[0] * a[0];
          lam[1] = w[1] * a[1];
          for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = lam[0] * gdata[i] + lam[1] * gphys[i];
          lb.lambdas = lam;
          lb.total = lam[0] * lb.data + lam[1] * lb.physics;
        } else {
          lb = loss_and_gradient(net, batch, w, qmax, fo, grad, &tape);
        }
        if (!std::isfinite(lb.total))
          throw Error(Errc::DivergenceDetected, "non-finite loss in phase " + std::to_string(ph) + ", epoch " +
                                                    std::to_string(e) + ", lr " + std::to_string(lr));
        const double gn = norm(grad);
        if (!std::isfinite(gn))
          throw Error(Errc::DivergenceDetected, "non-finite gradient in phase " + std::to_string(ph) + ", epoch " +
                                                    std::to_string(e));
        if (gn > s.clip_norm)
          for (auto& v : grad) v *= s.clip_norm / gn;
        opt.step(net.theta, grad, lr, s);
        update_running_stats(net, tape);

        rec.train.data += lb.data;
        rec.train.physics += lb.physics;
        rec.train.bounds += lb.bounds;
        rec.train.monotonicity += lb.monotonicity;
        rec.train.total += lb.total;
        rec.train.lambdas = lb.lambdas;
        ++batches;
      }
      rec.train.data /= batches;
      rec.train.physics /= batches;
      rec.train.bounds /= batches;
      rec.train.monotonicity /= batches;
      rec.train.total /= batches;
      rec.val_monitor = evaluate_loss(net, val, mon_w, qmax);
      if (!std::isfinite(rec.val_monitor))
        throw Error(Errc::DivergenceDetected, "non-finite validation loss in phase " + std::to_string(ph));
      res.history.push_back(rec);
      res.epochs_run[pi] = e + 1;
      if (rec.val_monitor < best - s.tolerance) {
        best = rec.val_monitor;
        best_theta = net.theta;
        best_rm = net.running_mean;
        best_rv = net.running_var;
        since = 0;
      } else if (++since >= s.patience) {
        res.stopped_early[pi] = true;
        break;
      }
    }
    if (std::isfinite(best)) {
      net.theta = best_theta;
      net.running_mean = best_rm;
      net.running_var = best_rv;
    }
    res.best_val[pi] = best;
  }
  return res;
}

// ---------------------------------------------------------------- serialization

nlohmann::json to_json(const ArchSpec& a) {
  return {{"input_dim", a.input_dim},
          {"scale_widths", a.scale_widths},
          {"backbone_widths", a.backbone_widths},
          {"dropout", a.dropout},
          {"width_mult", a.width_mult},
          {"seed", a.seed}};
}

ArchSpec arch_from_json(const nlohmann::json& j) {
  try {
    ArchSpec a;
    for (const auto& [k, _] : j.items())
      if (k != "input_dim" && k != "scale_widths" && k != "backbone_widths" && k != "dropout" && k != "width_mult" &&
          k != "seed")
        throw Error(Errc::InvalidArgument, "unknown key '" + k + "' in architecture");
    a.input_dim = j.value("input_dim", a.input_dim);
    if (j.contains("scale_widths")) a.scale_widths = j["scale_widths"].get<std::vector<int>>();
    if (j.contains("backbone_widths")) a.backbone_widths = j["backbone_widths"].get<std::vector<int>>();
    a.dropout = j.value("dropout", a.dropout);
    a.width_mult = j.value("width_mult", a.width_mult);
    a.seed = j.value("seed", a.seed);
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("architecture: ") + e.what());
  }
}

nlohmann::json to_json(const TrainSchedule& s) {
  return {{"epochs", s.epochs},
          {"lr_phase1", s.lr_phase1},
          {"lr2_max", s.lr2_max},
          {"lr2_min", s.lr2_min},
          {"lr3_max", s.lr3_max},
          {"lr3_min", s.lr3_min},
          {"phase3_weights", s.phase3_weights},
          {"batch_size", s.batch_size},
          {"weight_decay", s.weight_decay},
          {"clip_norm", s.clip_norm},
          {"patience", s.patience},
          {"tolerance", s.tolerance},
          {"beta1", s.beta1},
          {"beta2", s.beta2},
          {"adam_eps", s.adam_eps},
          {"adaptive_in_phase2", s.adaptive_in_phase2},
          {"physics_enabled", s.physics_enabled},
          {"pressure_step", s.pressure_step}};
}

TrainSchedule schedule_from_json(const nlohmann::json& j) {
  const auto ref = to_json(TrainSchedule{});
  if (!j.is_object()) throw Error(Errc::InvalidArgument, "schedule must be an object");
  for (const auto& [k, _] : j.items())
    if (!ref.contains(k)) throw Error(Errc::InvalidArgument, "unknown key '" + k + "' in schedule");
  try {
    TrainSchedule s;
    if (j.contains("epochs")) s.epochs = j["epochs"].get<std::array<int, 3>>();
    s.lr_phase1 = j.value("lr_phase1", s.lr_phase1);
    s.lr2_max = j.value("lr2_max", s.lr2_max);
    s.lr2_min = j.value("lr2_min", s.lr2_min);
    s.lr3_max = j.value("lr3_max", s.lr3_max);
    s.lr3_min = j.value("lr3_min", s.lr3_min);
    if (j.contains("phase3_weights")) s.phase3_weights = j["phase3_weights"].get<std::array<double, 4>>();
    s.batch_size = j.value("batch_size", s.batch_size);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    s.clip_norm = j.value("clip_norm", s.clip_norm);
    s.patience = j.value("patience", s.patience);
    s.tolerance = j.value("tolerance", s.tolerance);
    s.beta1 = j.value("beta1", s.beta1);
    s.beta2 = j.value("beta2", s.beta2);
    s.adam_eps = j.value("adam_eps", s.adam_eps);
    s.adaptive_in_phase2 = j.value("adaptive_in_phase2", s.adaptive_in_phase2);
    s.physics_enabled = j.value("physics_enabled", s.physics_enabled);
    s.pressure_step = j.value("pressure_step", s.pressure_step);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("schedule: ") + e.what());
  }
}

nlohmann::json to_json(const Network& net) {
  nlohmann::json rm = nlohmann::json::array(), rv = nlohmann::json::array();
  for (std::size_t j = 0; j < net.running_mean.size(); ++j) {
    rm.push_back(std::vector<double>(net.running_mean[j].data(), net.running_mean[j].data() + net.running_mean[j].size()));
    rv.push_back(std::vector<double>(net.running_var[j].data(), net.running_var[j].data() + net.running_var[j].size()));
  }
  return {{"format", "sorbfit-network-1"},
          {"arch", to_json(net.spec())},
          {"parameter_count", net.parameter_count()},
          {"gate_center", net.gate_center},
          {"gate_scale", net.gate_scale},
          {"running_mean", rm},
          {"running_var", rv},
          {"theta", std::vector<double>(net.theta.begin(), net.theta.end())}};
}

Network network_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "sorbfit-network-1") throw Error(Errc::ParseError, "unknown network format");
    Network net(arch_from_json(j.at("arch")));
    const auto theta = j.at("theta").get<std::vector<double>>();
    if (theta.size() != net.parameter_count()) throw Error(Errc::ParseError, "parameter count mismatch");
    net.theta.assign(theta.begin(), theta.end());
    net.gate_center = j.at("gate_center").get<std::array<double, 2>>();
    net.gate_scale = j.at("gate_scale").get<std::array<double, 2>>();
    const auto& rm = j.at("running_mean");
    const auto& rv = j.at("running_var");
    if (rm.size() != net.running_mean.size() || rv.size() != net.running_var.size())
      throw Error(Errc::ParseError, "batch-norm buffer count mismatch");
    for (std::size_t k = 0; k < rm.size(); ++k) {
      const auto m = rm[k].get<std::vector<double>>();
      const auto v = rv[k].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(m.size()) != net.running_mean[k].size() ||
          static_cast<Eigen::Index>(v.size()) != net.running_var[k].size())
        throw Error(Errc::ParseError, "batch-norm buffer width mismatch");
      net.running_mean[k] = Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size()));
      net.running_var[k] = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("network: ") + e.what());
  }
}

std::string history_csv(const TrainResult& r) {
  std::ostringstream os;
  os.precision(10);
  os << "phase,epoch,lr,data,physics,bounds,monotonicity,total,lambda_data,lambda_physics,lambda_bounds,"
        "lambda_monotonicity,val_monitor\n";
  for (const auto& e : r.history) {
    os << e.phase << ',' << e.epoch << ',' << e.lr << ',' << e.train.data << ',' << e.train.physics << ','
       << e.train.bounds << ',' << e.train.monotonicity << ',' << e.train.total;
    for (double l : e.train.lambdas) os << ',' << l;
    os << ',' << e.val_monitor << '\n';
  }
  return os.str();
}

}  // namespace sorbfit::pinn
