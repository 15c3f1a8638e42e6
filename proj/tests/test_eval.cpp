#include <doctest.h>

#include "mcmim/eval.hpp"
#include "mcmim/train.hpp"

using namespace mcmim;

namespace {

TrainConfig tiny_cfg() {
  return parse_config_text(
      "model.layers 2\nmodel.dim 16\nmodel.heads 2\nmodel.patch 4\nmodel.vocab 16\n"
      "data.image_size 16\ndata.train 24\ndata.test 12\ndata.classes 3\n"
      "tokenizer.iters 4\nepochs 2\nbatch_size 8\nwarmup_epochs 1\nseed 21\n"
      "probe.epochs 10\n");
}

}  // namespace

TEST_CASE("top1_accuracy: trivial cases and errors") {
  CHECK(top1_accuracy({1, 2, 3}, {1, 2, 3}) == 100.0);
  CHECK(top1_accuracy({0, 0, 0}, {1, 2, 3}) == 0.0);
  CHECK(top1_accuracy({1, 2, 3, 4}, {1, 2, 3, 0}) == 75.0);
  CHECK_THROWS_AS(top1_accuracy({}, {}), ConfigError);
  CHECK_THROWS_AS(top1_accuracy({1}, {1, 2}), ConfigError);
}

TEST_CASE("top1_accuracy: invariant to example order") {
  const std::vector<int> pred = {0, 1, 2, 0, 1, 2};
  const std::vector<int> label = {0, 1, 0, 0, 2, 2};
  const double base = top1_accuracy(pred, label);
  const std::vector<int> perm = {5, 3, 1, 0, 4, 2};
  std::vector<int> p2(6), l2(6);
  for (int i = 0; i < 6; ++i) {
    p2[i] = pred[perm[i]];
    l2[i] = label[perm[i]];
  }
  CHECK(top1_accuracy(p2, l2) == base);
}

TEST_CASE("probe: one-hot feature injection reaches 100%") {
  const int classes = 3;
  Matrix<float> train_x(60, classes), test_x(30, classes);
  std::vector<int> train_y(60), test_y(30);
  for (int i = 0; i < 60; ++i) {
    train_y[i] = i % classes;
    train_x(i, train_y[i]) = 1.0f;
  }
  for (int i = 0; i < 30; ++i) {
    test_y[i] = i % classes;
    test_x(i, test_y[i]) = 1.0f;
  }
  const MetricsRow row =
      train_linear_classifier(train_x, train_y, test_x, test_y, classes, 20, 0.1, 1);
  CHECK(row.top1 == 100.0);
}

TEST_CASE("probe: deterministic and leaves the encoder untouched") {
  const TrainConfig cfg = tiny_cfg();
  const Dataset ds = generate_toy_dataset(cfg.seed, cfg.data_train, cfg.data_test,
                                          cfg.data_classes, cfg.data_image_size);
  const ModelParams<float> params = init_params<float>(cfg.arch(), cfg.seed);

  std::vector<std::vector<float>> before;
  for_each_tensor(params, [&](const std::string&, const Matrix<float>& m, bool) {
    before.push_back(m.data);
  });
  const MetricsRow r1 = linear_probe(params, ds, cfg.probe_epochs, cfg.probe_lr, cfg.seed);
  const MetricsRow r2 = linear_probe(params, ds, cfg.probe_epochs, cfg.probe_lr, cfg.seed);
  CHECK(r1.top1 == r2.top1);
  CHECK(r1.epoch == r2.epoch);
  size_t idx = 0;
  for_each_tensor(params, [&](const std::string&, const Matrix<float>& m, bool) {
    CHECK(m.data == before[idx++]);
  });
}

TEST_CASE("probe: label-free dataset is rejected") {
  const TrainConfig cfg = tiny_cfg();
  Dataset ds = generate_toy_dataset(cfg.seed, 4, 2, 2, cfg.data_image_size);
  ds.train[1].label.reset();
  const ModelParams<float> params = init_params<float>(cfg.arch(), 1);
  CHECK_THROWS_AS(linear_probe(params, ds, 2, 0.01, 1), ConfigError);
}

TEST_CASE("fine_tune: trains, reports a valid row, and respects decay=1.0") {
  TrainConfig cfg = tiny_cfg();
  const Dataset ds = generate_toy_dataset(cfg.seed, cfg.data_train, cfg.data_test,
                                          cfg.data_classes, cfg.data_image_size);
  ModelParams<float> params = init_params<float>(cfg.arch(), cfg.seed);
  const std::vector<float> pe_before = params.patch_embed_w.data;
  const std::vector<float> head_before = params.head_w2.data;

  FinetuneOptions opt = FinetuneOptions::from_config(cfg);
  opt.epochs = 2;
  opt.warmup_epochs = 1;
  opt.layer_decay = 1.0;
  const MetricsRow row = fine_tune(params, ds, opt);
  CHECK(row.mode == "finetune");
  CHECK(row.top1 >= 0.0);
  CHECK(row.top1 <= 100.0);
  CHECK(params.patch_embed_w.data != pe_before);  // everything trainable
  CHECK(params.head_w2.data == head_before);      // MIM head dropped
}
