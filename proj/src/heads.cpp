#include "seqmem/heads.hpp"

#include "seqmem/init.hpp"
#include "seqmem/rng.hpp"
#include "seqmem/training.hpp"

#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>

namespace seqmem {

namespace {

std::vector<int> argmax_columns(const Matrix& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.cols()));
  for (Index i = 0; i < scores.cols(); ++i) {
    Index arg = 0;
    scores.col(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

void check_labels(const Matrix& states, std::span<const int> labels, Index classes, const char* who) {
  if (labels.empty()) throw std::invalid_argument(std::string(who) + ": no samples");
  if (states.cols() != static_cast<Index>(labels.size()))
    throw DimensionError(std::string(who) + ": states and labels disagree in count");
  for (int y : labels)
    if (y < 0 || y >= classes) throw std::invalid_argument(std::string(who) + ": label out of range");
}

std::vector<Index> shuffled(Index n, SplitMix64& rng) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  for (Index i = n - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
  return order;
}

Matrix gather_columns(const Matrix& m, std::span<const Index> idx) {
  Matrix out(m.rows(), static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Index>(j)) = m.col(idx[j]);
  return out;
}

}  // namespace

Matrix LinearClassifier::scores(const Matrix& states) const {
  if (states.rows() != w.cols()) throw DimensionError("LinearClassifier: state size mismatch");
  Matrix s = w * states;
  s.colwise() += b;
  return s;
}

std::vector<int> LinearClassifier::predict(const Matrix& states) const { return argmax_columns(scores(states)); }

Standardizer Standardizer::fit(const Matrix& states) {
  Standardizer st;
  const double n = static_cast<double>(states.cols());
  st.mean = states.rowwise().mean();
  st.scale = ((states.colwise() - st.mean).array().square().rowwise().sum() / n).sqrt();
  for (Index i = 0; i < st.scale.size(); ++i)
    if (!(st.scale(i) > 1e-12)) st.scale(i) = 1.0;
  return st;
}

Matrix Standardizer::apply(const Matrix& states) const {
  return ((states.colwise() - mean).array().colwise() / scale.array()).matrix();
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size() || labels.empty()) throw std::invalid_argument("accuracy: size mismatch or empty");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

LinearClassifier fit_ridge_head(const Matrix& states, std::span<const int> labels, double ridge, Index classes) {
  check_labels(states, labels, classes, "fit_ridge_head");
  Matrix design(states.cols(), states.rows() + 1);
  design.leftCols(states.rows()) = states.transpose();
  design.col(states.rows()).setOnes();
  const Matrix w = fit_linear_head(design, labels, ridge, classes);
  return {w.leftCols(states.rows()), w.col(states.rows())};
}

LinearClassifier fit_svm_head(const Matrix& states, std::span<const int> labels, Index classes,
                              const SvmOptions& options, std::vector<double>* objective_trace) {
  check_labels(states, labels, classes, "fit_svm_head");
  if (std::set<int>(labels.begin(), labels.end()).size() < 2)
    throw std::invalid_argument("fit_svm_head: training data contains a single class");
  if (options.c_reg <= 0.0 || options.batch_size < 1) throw std::invalid_argument("fit_svm_head: bad options");

  const Index p = states.rows();
  const Index n = states.cols();
  const Standardizer st = Standardizer::fit(states);
  Matrix x(p + 1, n);
  x.topRows(p) = st.apply(states);
  x.row(p).setOnes();
  Matrix y = -Matrix::Ones(classes, n);
  for (Index i = 0; i < n; ++i) y(labels[static_cast<std::size_t>(i)], i) = 1.0;

  const double lambda = 1.0 / (options.c_reg * static_cast<double>(n));
  const double radius = 1.0 / std::sqrt(lambda);
  Matrix w = Matrix::Zero(classes, p + 1);
  Matrix avg = w;
  SplitMix64 rng(hash_keys(options.seed, 0x73766dULL));
  long long step = 0;

  auto objective = [&](const Matrix& wk) {
    const Matrix margins = y.cwiseProduct(wk * x);
    const double hinge = (1.0 - margins.array()).max(0.0).sum() / static_cast<double>(n);
    return (0.5 * lambda * wk.squaredNorm() + hinge) / static_cast<double>(classes);
  };

  if (objective_trace) objective_trace->clear();
  for (Index epoch = 0; epoch < options.epochs; ++epoch) {
    const auto order = shuffled(n, rng);
    for (Index begin = 0; begin < n; begin += options.batch_size) {
      const Index len = std::min(options.batch_size, n - begin);
      const std::span<const Index> idx(order.data() + begin, static_cast<std::size_t>(len));
      const Matrix xb = gather_columns(x, idx);
      const Matrix yb = gather_columns(y, idx);
      ++step;
      const double eta = 1.0 / (lambda * static_cast<double>(step));
      const Matrix active = (yb.cwiseProduct(w * xb).array() < 1.0).cast<double>().matrix().cwiseProduct(yb);
      w = (1.0 - eta * lambda) * w + (eta / static_cast<double>(len)) * active * xb.transpose();
      for (Index k = 0; k < classes; ++k) {
        const double norm = w.row(k).norm();
        if (norm > radius) w.row(k) *= radius / norm;
      }
      avg += (w - avg) / static_cast<double>(step);
    }
    if (objective_trace) objective_trace->push_back(objective(avg));
  }

  LinearClassifier out;
  out.w = avg.leftCols(p).array().rowwise() / st.scale.transpose().array();
  out.b = avg.col(p) - out.w * st.mean;
  return out;
}

Matrix FeedForwardHead::logits(const Matrix& states) const {
  Matrix out;
  if (hidden() == 0) {
    if (states.rows() != w2.cols()) throw DimensionError("FeedForwardHead: state size mismatch");
    out = w2 * states;
  } else {
    if (states.rows() != w1.cols()) throw DimensionError("FeedForwardHead: state size mismatch");
    Matrix h = w1 * states;
    h.colwise() += b1.col(0);
    out = w2 * Matrix(h.array().tanh());
  }
  out.colwise() += b2.col(0);
  return out;
}

std::vector<int> FeedForwardHead::predict(const Matrix& states) const { return argmax_columns(logits(states)); }

FfLossGrad ff_loss_and_grad(const FeedForwardHead& head, const Matrix& states, std::span<const int> labels) {
  check_labels(states, labels, head.w2.rows(), "ff_loss_and_grad");
  const double n = static_cast<double>(labels.size());
  Matrix h;
  const Matrix* feat = &states;
  if (head.hidden() > 0) {
    h = head.w1 * states;
    h.colwise() += head.b1.col(0);
    h = h.array().tanh();
    feat = &h;
  }
  Matrix logits = head.w2 * *feat;
  logits.colwise() += head.b2.col(0);

  FfLossGrad out;
  Matrix dlogits(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.cols(); ++i) {
    Vector g;
    out.loss += cross_entropy(logits.col(i), labels[static_cast<std::size_t>(i)], &g);
    dlogits.col(i) = g / n;
  }
  out.loss /= n;
  out.grads.w2 = dlogits * feat->transpose();
  out.grads.b2 = dlogits.rowwise().sum();
  if (head.hidden() > 0) {
    const Matrix da = (head.w2.transpose() * dlogits).cwiseProduct(Matrix(1.0 - h.array().square()));
    out.grads.w1 = da * states.transpose();
    out.grads.b1 = da.rowwise().sum();
  } else {
    out.grads.w1 = Matrix(0, states.rows());
    out.grads.b1 = Matrix(0, 1);
  }
  return out;
}

FeedForwardHead fit_ff_head(const Matrix& states, std::span<const int> labels, Index classes, const FfOptions& options,
                            const Matrix* val_states, std::span<const int> val_labels) {
  check_labels(states, labels, classes, "fit_ff_head");
  if (options.hidden < 0 || options.batch_size < 1) throw std::invalid_argument("fit_ff_head: bad options");
  const Index p = states.rows();
  const Index n = states.cols();
  const Standardizer st = Standardizer::fit(states);
  const Matrix x = st.apply(states);
  std::optional<Matrix> xv;
  if (val_states) {
    check_labels(*val_states, val_labels, classes, "fit_ff_head");
    xv = st.apply(*val_states);
  }

  FeedForwardHead head;
  const Index h = options.hidden;
  if (h > 0) {
    head.w1 = uniform_fan_in(h, p, p, hash_keys(options.seed, 1));
    head.b1 = Matrix::Zero(h, 1);
    head.w2 = uniform_fan_in(classes, h, h, hash_keys(options.seed, 2));
  } else {
    head.w1 = Matrix(0, p);
    head.b1 = Matrix(0, 1);
    head.w2 = uniform_fan_in(classes, p, p, hash_keys(options.seed, 2));
  }
  head.b2 = Matrix::Zero(classes, 1);

  AdamState adam;
  const AdamOptions opts{options.lr, 0.9, 0.999, 1e-8};
  SplitMix64 rng(hash_keys(options.seed, 3));
  FeedForwardHead best = head;
  double best_acc = -1.0;
  std::vector<int> batch_labels;

  for (Index epoch = 0; epoch < options.epochs; ++epoch) {
    const auto order = shuffled(n, rng);
    for (Index begin = 0; begin < n; begin += options.batch_size) {
      const Index len = std::min(options.batch_size, n - begin);
      const std::span<const Index> idx(order.data() + begin, static_cast<std::size_t>(len));
      batch_labels.clear();
      for (Index i : idx) batch_labels.push_back(labels[static_cast<std::size_t>(i)]);
      const FfLossGrad lg = ff_loss_and_grad(head, gather_columns(x, idx), batch_labels);
      if (!std::isfinite(lg.loss)) throw DivergenceError("fit_ff_head: non-finite loss");
      if (h > 0) {
        Matrix* w[] = {&head.w1, &head.b1, &head.w2, &head.b2};
        const Matrix* g[] = {&lg.grads.w1, &lg.grads.b1, &lg.grads.w2, &lg.grads.b2};
        adam_update(w, g, adam, opts);
      } else {
        Matrix* w[] = {&head.w2, &head.b2};
        const Matrix* g[] = {&lg.grads.w2, &lg.grads.b2};
        adam_update(w, g, adam, opts);
      }
    }
    if (xv) {
      const double acc = accuracy(head.predict(*xv), val_labels);
      if (acc > best_acc) {
        best_acc = acc;
        best = head;
      }
    }
  }
  if (!xv) best = head;

  // Fold the standardization into the first layer.
  Matrix& first = h > 0 ? best.w1 : best.w2;
  Matrix& bias = h > 0 ? best.b1 : best.b2;
  first = first.array().rowwise() / st.scale.transpose().array();
  bias.col(0) -= first * st.mean;
  return best;
}

}  // namespace seqmem
