#include "seqmem/init.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace seqmem;
using testutil::gaussian;

namespace {

LaesModel fitted_laes(Index p, std::uint64_t seed) {
  const auto data = synthetic_copy_task(30, 8, 2, seed);
  LaesFitOptions o;
  o.hidden = p;
  return fit_laes(data.batch, o);
}

int argmax(const Vector& v) {
  Index i = 0;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

double orthogonality_gap(const Matrix& w) {
  return (w.transpose() * w - Matrix::Identity(w.cols(), w.cols())).norm();
}

}  // namespace

TEST(OrthogonalInit, RecurrentMatricesOrthogonal) {
  EXPECT_LE(orthogonality_gap(init_orthogonal_rnn(32, 3, 10, 1).u), 1e-10);
  EXPECT_LE(orthogonality_gap(init_orthogonal_lmn(32, 3, 10, 1).w_mm), 1e-10);
  EXPECT_LE(orthogonality_gap(init_orthogonal_linear_rnn(32, 3, 10, 1).b), 1e-10);
}

TEST(OrthogonalInit, ShapesAndFanInBounds) {
  const LmnParams w = init_orthogonal_lmn(16, 3, 10, 5);
  EXPECT_EQ(w.w_xh.rows(), 16);
  EXPECT_EQ(w.w_xh.cols(), 3);
  EXPECT_EQ(w.w_mh.rows(), 16);
  EXPECT_EQ(w.w_hm.cols(), 16);
  EXPECT_EQ(w.w_o.rows(), 10);
  EXPECT_LE(w.w_xh.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(3.0));
  EXPECT_LE(w.w_mh.cwiseAbs().maxCoeff(), 1.0 / 4.0);
  EXPECT_LE(w.w_o.cwiseAbs().maxCoeff(), 1.0 / 4.0);
}

TEST(OrthogonalInit, SeedDeterminism) {
  const RnnParams a = init_orthogonal_rnn(8, 1, 2, 3);
  const RnnParams b = init_orthogonal_rnn(8, 1, 2, 3);
  const RnnParams c = init_orthogonal_rnn(8, 1, 2, 4);
  EXPECT_TRUE(a.u == b.u && a.v == b.v && a.w_o == b.w_o);
  EXPECT_FALSE(a.u == c.u);
  const LmnParams l1 = init_orthogonal_lmn(8, 1, 2, 3);
  const LmnParams l2 = init_orthogonal_lmn(8, 1, 2, 3);
  EXPECT_TRUE(l1.w_mm == l2.w_mm && l1.w_mh == l2.w_mh);
}

TEST(LstmInit, ForgetBiasOne) {
  const LstmParams w = init_lstm(6, 2, 3, 1);
  EXPECT_TRUE(w.bias_f == Matrix::Constant(6, 1, 1.0));
  EXPECT_EQ(w.bias_i.norm() + w.bias_g.norm() + w.bias_o.norm(), 0.0);
  EXPECT_LE(w.gate_i.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(8.0));
}

TEST(LaesInit, AssignmentsAndShapes) {
  const LaesModel laes = fitted_laes(6, 1);
  const Matrix readout = gaussian(3, 6, 2);
  const RnnParams rnn = init_rnn_from_laes(laes, readout);
  EXPECT_TRUE(rnn.v == laes.a && rnn.u == laes.b && rnn.w_o == readout);
  const LmnParams lmn = init_lmn_from_laes(laes, readout);
  EXPECT_TRUE(lmn.w_xh == laes.a && lmn.w_mm == laes.b && lmn.w_o == readout);
  EXPECT_EQ(lmn.w_mh.norm(), 0.0);
  EXPECT_TRUE(lmn.w_hm == Matrix::Identity(6, 6));
  const LinearRnnParams lin = init_linear_rnn_from_laes(laes, readout);
  EXPECT_TRUE(lin.a == laes.a && lin.b == laes.b);
  EXPECT_THROW(init_rnn_from_laes(laes, gaussian(3, 5, 1)), DimensionError);
}

TEST(LaesInit, ZeroLaesGivesZeroNetworks) {
  LaesModel zero{Matrix::Zero(4, 2), Matrix::Zero(4, 4), Vector::Zero(2)};
  const Matrix readout = Matrix::Zero(2, 4);
  const Matrix x = gaussian(6, 2, 1);
  EXPECT_EQ(rnn_forward(init_rnn_from_laes(zero, readout), x).hidden.norm(), 0.0);
  EXPECT_EQ(lmn_forward(init_lmn_from_laes(zero, readout), x).memory.norm(), 0.0);
}

TEST(LaesInit, RejectsCenteredLaes) {
  LaesModel laes = fitted_laes(4, 1);
  laes.mean(0) = 0.5;
  EXPECT_THROW(init_lmn_from_laes(laes, Matrix::Zero(2, 4)), std::invalid_argument);
}

TEST(LaesInit, LmnIsClosedRecurrence) {
  const LaesModel laes = fitted_laes(6, 3);
  const LmnParams lmn = init_lmn_from_laes(laes, gaussian(2, 6, 1));
  const Matrix x = gaussian(12, 2, 4);
  const ForwardTrace tr = lmn_forward(lmn, x);
  // m^t = sum_k B^k tanh(A x^{t-k})
  for (Index t = 0; t < 12; ++t) {
    Vector sum = Vector::Zero(6);
    Matrix power = Matrix::Identity(6, 6);
    for (Index k = 0; k <= t; ++k) {
      sum += power * (laes.a * x.row(t - k).transpose()).array().tanh().matrix();
      power = laes.b * power;
    }
    EXPECT_LE((tr.memory.col(t) - sum).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(LaesInit, TinyInputsLinearize) {
  const LaesModel laes = fitted_laes(6, 5);
  const Matrix readout = gaussian(2, 6, 1);
  const Matrix x = gaussian(8, 2, 6) * 1e-4;
  const Matrix lin = linear_rnn_forward(init_linear_rnn_from_laes(laes, readout), x).memory;
  const Matrix enc = laes_encode(laes, x).transpose();
  EXPECT_LE((lin - enc).norm(), 1e-15 * enc.norm() + 1e-20);
  const Matrix lmn = lmn_forward(init_lmn_from_laes(laes, readout), x).memory;
  const Matrix rnn = rnn_forward(init_rnn_from_laes(laes, readout), x).hidden;
  EXPECT_LE((lmn - lin).norm() / lin.norm(), 1e-6);
  EXPECT_LE((rnn - lin).norm() / lin.norm(), 1e-6);
}

TEST(LaesInit, RnnDeviationGrowsWithInputScale) {
  for (std::uint64_t draw = 0; draw < 10; ++draw) {
    const LaesModel laes = fitted_laes(8, 10 + draw);
    const Matrix readout = Matrix::Zero(2, 8);
    const RnnParams rnn = init_rnn_from_laes(laes, readout);
    const LinearRnnParams lin = init_linear_rnn_from_laes(laes, readout);
    const Matrix x = gaussian(8, 2, 100 + draw);
    double previous = -1.0;
    for (double scale : {0.01, 0.1, 1.0}) {
      const double dev = (rnn_forward(rnn, scale * x).hidden - linear_rnn_forward(lin, scale * x).memory).norm();
      EXPECT_GE(dev, previous) << "draw " << draw << " scale " << scale;
      previous = dev;
    }
  }
}

TEST(LaesInit, ArgmaxAgreesWithLinearRnnOnSmallDrive) {
  const auto data = synthetic_copy_task(400, 10, 1, 31);
  LaesFitOptions o;
  o.hidden = 10;
  const LaesModel laes = fit_laes(data.batch, o);
  const Matrix finals = laes_final_states(laes, data.batch).transpose();
  const Matrix readout = fit_linear_head(finals, data.labels, 1e-6, 2);
  // Scale the inputs so that ||A x^t||_inf <= 0.1 everywhere.
  double drive = 0.0;
  for (const Matrix& s : data.batch.sequences) drive = std::max(drive, (laes.a * s.transpose()).cwiseAbs().maxCoeff());
  const double scale = 0.1 / drive;
  const LmnParams lmn = init_lmn_from_laes(laes, readout);
  const LinearRnnParams lin = init_linear_rnn_from_laes(laes, readout);
  Index agree = 0;
  for (const Matrix& s : data.batch.sequences)
    agree += argmax(lmn_forward(lmn, scale * s).logits) == argmax(linear_rnn_forward(lin, scale * s).logits);
  EXPECT_GE(double(agree) / double(data.size()), 0.99);
}

TEST(LaesInit, MnistScalePredictionsAgree) {
  const std::filesystem::path dir = SEQMEM_DATA_DIR;
  if (!std::filesystem::exists(dir / "train-images-idx3-ubyte")) GTEST_SKIP() << "MNIST not available in " << dir;
  const ImageSet all = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  std::vector<Index> first(2000);
  for (Index i = 0; i < 2000; ++i) first[static_cast<std::size_t>(i)] = i;
  const auto data = make_sequences(subset_images(all, first), nullptr, ScaleMode::Unit, 1);
  const auto [fit_part, probe] = split(data, 1000, 1);
  LaesFitOptions o;
  o.hidden = 128;
  o.prefixes.stride = 4;
  const LaesModel laes = fit_laes(fit_part.batch, o);
  const Matrix readout = fit_linear_head(laes_final_states(laes, fit_part.batch).transpose(), fit_part.labels, 1e-6, 10);
  const LmnParams lmn = init_lmn_from_laes(laes, readout);
  const LinearRnnParams lin = init_linear_rnn_from_laes(laes, readout);
  Index agree = 0;
  for (const Matrix& s : probe.batch.sequences)
    agree += argmax(lmn_forward(lmn, s).logits) == argmax(linear_rnn_forward(lin, s).logits);
  EXPECT_GE(double(agree) / double(probe.size()), 0.99);
}

TEST(LinearHead, SeparableToySetIsPerfect) {
  Matrix states(40, 3);
  std::vector<int> labels(40);
  SplitMix64 g(3);
  for (Index i = 0; i < 40; ++i) {
    const int y = static_cast<int>(i % 3);
    labels[static_cast<std::size_t>(i)] = y;
    states.row(i) = 0.05 * gaussian(1, 3, 50 + i);
    states(i, y) += 1.0;
  }
  const Matrix w = fit_linear_head(states, labels, 1e-6, 3);
  ASSERT_EQ(w.rows(), 3);
  ASSERT_EQ(w.cols(), 3);
  for (Index i = 0; i < 40; ++i) EXPECT_EQ(argmax(w * states.row(i).transpose()), labels[static_cast<std::size_t>(i)]);
}

TEST(LinearHead, SingleSampleReproducesTarget) {
  const Matrix s = gaussian(1, 5, 2);
  const std::vector<int> labels{2};
  const Matrix w = fit_linear_head(s, labels, 0.0, 4);
  const Vector out = w * s.row(0).transpose();
  EXPECT_LE((out - Vector::Unit(4, 2)).norm(), 1e-10);
}

TEST(LinearHead, RejectsBadLabels) {
  const std::vector<int> labels{0, 5};
  EXPECT_THROW(fit_linear_head(gaussian(2, 3, 1), labels, 0.0, 3), std::invalid_argument);
  EXPECT_THROW(fit_linear_head(gaussian(2, 3, 1), std::vector<int>{}, 0.0, 3), std::invalid_argument);
}
