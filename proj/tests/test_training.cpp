#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "musefm/baselines.hpp"
#include "musefm/training.hpp"

using namespace musefm;
using ad::Tensor;

namespace {

SystemProfile tiny_profile() {
  SystemProfile p = SystemProfile::toy();
  p.scenarios = 6;
  p.samples_per_scenario = 2;
  p.val_fraction = 1.0 / 6;
  p.test_fraction = 1.0 / 6;
  return p;
}

const Dataset& tiny_dataset() {
  static const Dataset ds = generate_dataset(tiny_profile(), 0, 1);
  return ds;
}

TrainConfig tiny_train(int epochs = 2) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 4;
  return c;
}

Tensor rows_of(const CMatrix& W) {
  // K x 2N_t rows from an N_t x K precoder
  std::vector<double> v;
  for (int k = 0; k < W.cols(); ++k)
    for (int n = 0; n < W.rows(); ++n) {
      v.push_back(W(n, k).real());
      v.push_back(W(n, k).imag());
    }
  return Tensor::constant({static_cast<std::size_t>(W.cols()), static_cast<std::size_t>(2 * W.rows())}, v);
}

}  // namespace

TEST(Schedule, CosineEndpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(1e-3, 0, 100), 1e-3);
  EXPECT_NEAR(cosine_lr(1e-3, 100, 100), 0.0, 1e-20);
  EXPECT_NEAR(cosine_lr(1e-3, 50, 100), 5e-4, 1e-15);
}

TEST(Optimizer, AdamScalarReference) {
  ad::ParameterStore s;
  auto& x = s.add_constant("x", "backbone", {1}, 1.0);
  TrainConfig cfg;
  AdamState st;
  // two steps with gradients 0.5 then -0.2, reference formula written out by hand
  const double g1 = 0.5, g2 = -0.2, lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  x.mutable_grad()[0] = g1;
  adam_step(s, st, lr, cfg);
  double m = (1 - b1) * g1, v = (1 - b2) * g1 * g1;
  double ref = 1.0 - lr * (m / (1 - b1)) / (std::sqrt(v / (1 - b2)) + eps);
  EXPECT_NEAR(x.values()[0], ref, 1e-15);
  x.mutable_grad()[0] = g2;
  adam_step(s, st, lr, cfg);
  m = b1 * m + (1 - b1) * g2;
  v = b2 * v + (1 - b2) * g2 * g2;
  ref -= lr * (m / (1 - b1 * b1)) / (std::sqrt(v / (1 - b2 * b2)) + eps);
  EXPECT_NEAR(x.values()[0], ref, 1e-15);
}

TEST(Optimizer, ClipGlobalNorm) {
  ad::ParameterStore s;
  auto& a = s.add_constant("a", "backbone", {2}, 0.0);
  a.mutable_grad() = {3.0, 4.0};
  EXPECT_NEAR(clip_gradients(s, 1.0), 5.0, 1e-15);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(a.grad()[1], 0.8, 1e-15);
}

TEST(Loss, Examples) {
  const auto& val = tiny_dataset().split("val");
  const auto ex = build_examples(TaskId::CE, val).front();
  TaskOutput out;
  out.task = TaskId::CE;
  std::vector<double> t;
  const CMatrix& H = ex.sample->H[0];
  for (int m = 0; m < H.cols(); ++m)
    for (int n = 0; n < H.rows(); ++n) {
      t.push_back(H(n, m).real());
      t.push_back(H(n, m).imag());
    }
  out.head = Tensor::constant({8, 32}, t);
  EXPECT_EQ(task_loss(out, ex, 10.0).item(), 0.0);

  const auto dex = build_examples(TaskId::DECODING, val).front();
  TaskOutput d;
  d.task = TaskId::DECODING;
  std::vector<double> logits;
  // p = z clipped at 1e-7 -> logit = +-log((1 - 1e-7) / 1e-7)
  const double L = std::log((1 - 1e-7) / 1e-7);
  for (auto z : dex.in.dec->z_tilde) logits.push_back(z ? L : -L);
  d.head = Tensor::constant({16, 1}, logits);
  EXPECT_LE(task_loss(d, dex, 10.0).item() * 16, 16 * 1e-6);
}

TEST(Loss, PrecodingMatchesSumRate) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const CMatrix H = awgn(16, 2, 1.0, rng);
    const CMatrix W = zf_precode(H, 1.0);
    EXPECT_NEAR(negative_sum_rate(rows_of(W), H, 0.1).item(), -sum_rate(H, W, 0.1), 1e-12);
    const CMatrix R = awgn(16, 2, 0.1, rng);
    EXPECT_NEAR(negative_sum_rate(rows_of(R), H, 0.3).item(), -sum_rate(H, R, 0.3), 1e-12);
  }
}

TEST(Loss, Multitask) {
  const TaskWeights l{0.3, 0.7, -5.0, 0.2, 0.05};
  EXPECT_EQ(multitask_loss(l, {1, 0, 0, 0, 0}), 0.3);
  EXPECT_EQ(multitask_loss(l, {0, 0, 0, 2, 0}), 0.4);
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    TaskWeights a, b;
    double dot = 0;
    for (int i = 0; i < 5; ++i) {
      a[i] = uniform(rng, -2, 2);
      b[i] = uniform(rng, 0, 2);
      dot += a[i] * b[i];
    }
    ASSERT_NEAR(multitask_loss(a, b), dot, 1e-12);
  }
}

TEST(Validation, BetaZeroAndRandomGuessBer) {
  const MuseModel m(ModelConfig::from_profile(SystemProfile::toy()));
  const auto& val = tiny_dataset().split("val");
  EXPECT_EQ(validation_loss(m, val, 10.0, {0, 0, 0, 0, 0}), 0.0);
  EXPECT_THROW(validation_loss(m, {}, 10.0, {1, 1, 1, 1, 1}), ValidationError);
  // random-guess decoder: BER metric near one half
  const auto examples = build_examples(TaskId::DECODING, generate_dataset(tiny_profile(), 4, 1).split("train"));
  Rng rng(5);
  double acc = 0;
  int n = 0;
  for (int rep = 0; rep < 50; ++rep)
    for (const auto& ex : examples) {
      TaskOutput o;
      o.task = TaskId::DECODING;
      o.b_hat.resize(8);
      for (auto& b : o.b_hat) b = static_cast<std::uint8_t>(uniform_int(rng, 0, 1));
      acc += task_metric(o, ex, 10.0);
      ++n;
    }
  EXPECT_NEAR(acc / n, 0.5, 0.05);
}

TEST(Fit, OneHotAlphaUpdatesBackbone) {
  MuseModel m(ModelConfig::from_profile(SystemProfile::toy()));
  std::vector<double> before;
  for (const auto& p : m.params().params())
    if (p.group == "backbone") before.insert(before.end(), p.tensor.values().begin(), p.tensor.values().end());
  TrainConfig c = tiny_train(1);
  c.alpha = {0, 0, 0, 1, 0};
  fit(m, tiny_dataset(), c);
  double change = 0;
  std::size_t i = 0;
  for (const auto& p : m.params().params())
    if (p.group == "backbone")
      for (double v : p.tensor.values()) change += std::abs(v - before[i++]);
  EXPECT_GT(change, 0.0);
  // other tasks' batch-norm statistics never moved
  EXPECT_EQ(m.params().buffers().at("bn.ce.var")[0], 1.0);
}

TEST(Fit, DeterministicAndCheckpointReload) {
  const auto dir = std::filesystem::temp_directory_path() / "musefm_fit_test";
  std::filesystem::remove_all(dir);
  MuseModel a(ModelConfig::from_profile(SystemProfile::toy())), b(ModelConfig::from_profile(SystemProfile::toy()));
  const auto ra = fit(a, tiny_dataset(), tiny_train(2), dir);
  const auto rb = fit(b, tiny_dataset(), tiny_train(2));
  ASSERT_EQ(ra.log.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e)
    for (int t = 0; t < kNumTasks; ++t) EXPECT_EQ(ra.log[e].loss[t], rb.log[e].loss[t]);
  EXPECT_EQ(ra.steps, 2u * 4u);  // 4 train scenarios x 2 samples x 2 users = 16 CE examples, batch 4

  const auto& val = tiny_dataset().split("val");
  const MuseModel r = MuseModel::load(dir);
  const TaskWeights beta{1, 1, 1, 1, 1};
  EXPECT_EQ(validation_loss(a, val, 10.0, beta), validation_loss(r, val, 10.0, beta));
  EXPECT_EQ(validation_loss(a, val, 10.0, beta), ra.best_val);

  std::ifstream log(dir / "train_log.csv");
  std::string header, line;
  std::getline(log, header);
  EXPECT_EQ(header, log_csv_header());
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, 2);
  std::filesystem::remove_all(dir);
}

TEST(Fit, RejectsBadConfig) {
  MuseModel m(ModelConfig::from_profile(SystemProfile::toy()));
  TrainConfig c = tiny_train(1);
  c.alpha = {0, 0, 0, 0, 0};
  EXPECT_THROW(fit(m, tiny_dataset(), c), ValidationError);
  c = tiny_train(1);
  c.lr0 = 0;
  EXPECT_THROW(fit(m, tiny_dataset(), c), ValidationError);
  EXPECT_THROW(parse_weights("1,2"), ValidationError);
}

TEST(Config, KeyValueRoundTrip) {
  TrainConfig c = TrainConfig::for_profile("paper");
  EXPECT_EQ(c.batch_size, 100);
  EXPECT_EQ(c.epochs, 500);
  EXPECT_DOUBLE_EQ(c.lr0, 1e-4);
  TrainConfig d;
  d.apply(c.to_kv());
  EXPECT_EQ(d.to_kv(), c.to_kv());
}

TEST(Resample, ChangesNoiseNotChannels) {
  const auto& val = tiny_dataset().split("val");
  const auto r = resample_at(val, tiny_profile(), 0.0);
  EXPECT_EQ(r[0].samples[0].H[0], val[0].samples[0].H[0]);
  EXPECT_NE(r[0].samples[0].ce[0].Y_p, val[0].samples[0].ce[0].Y_p);
  EXPECT_EQ(r[0].samples[0].ce[0].snr_db, 0.0);
  const auto r2 = resample_at(val, tiny_profile(), 0.0);
  EXPECT_EQ(r2[0].samples[0].ce[0].Y_p, r[0].samples[0].ce[0].Y_p);
}
