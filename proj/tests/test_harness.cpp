#include "eventbind/harness/augment.hpp"
#include "eventbind/harness/checkpoint.hpp"
#include "eventbind/harness/config.hpp"
#include "eventbind/harness/dataset_io.hpp"
#include "eventbind/harness/eval.hpp"
#include "eventbind/harness/model.hpp"
#include "eventbind/harness/synthetic.hpp"
#include "eventbind/harness/train.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"
#include "support/tiny.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

namespace eventbind::harness {
namespace {

using ad::Mat;
using eventbind::testing::TempDir;
using eventbind::testing::tiny_run_config;

const std::vector<std::string> kShapes{"square", "triangle", "disk", "cross", "bar"};

bool same_samples(const Dataset& a, const Dataset& b) {
  if (a.samples.size() != b.samples.size() || a.categories != b.categories) return false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const auto& x = a.samples[i];
    const auto& y = b.samples[i];
    if (x.id != y.id || x.category != y.category || x.events.events != y.events.events || x.image != y.image) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Config

TEST(Config, SerializeParseRoundTrip) {
  RunConfig c;
  c.seed = 99;
  c.lr = 3.5e-4;
  c.weights = {1.0, 0.5, 0.0, 2.0};
  c.event.prompts = 3;
  c.text.tmpl = "a photo of a {}.";
  c.no_image = true;
  c.simulator.speed_hi = 1.25;
  const RunConfig back = RunConfig::parse(c.serialize());
  EXPECT_EQ(back.serialize(), c.serialize());
  EXPECT_EQ(back.lr, 3.5e-4);
  EXPECT_EQ(back.text.tmpl, "a photo of a {}.");
  EXPECT_TRUE(back.no_image);
}

TEST(Config, CommentsBlankLinesAndWhitespace) {
  const RunConfig c = RunConfig::parse("# toy run\n\n  epochs = 3 \nbatch_size=4\r\n");
  EXPECT_EQ(c.epochs, 3);
  EXPECT_EQ(c.batch_size, 4);
}

TEST(Config, RejectsMalformedInput) {
  EXPECT_THROW(RunConfig::parse("no_such_key=1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("epochs=ten\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("epochs=10x\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("augment=maybe\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("epochs\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("preset=huge\n"), ConfigError);
  EXPECT_THROW(RunConfig::load("/nonexistent/run.cfg"), ConfigError);
}

TEST(Config, VitB16PresetThenOverrides) {
  const RunConfig c = RunConfig::parse("epochs=2\npreset=vit_b16\n");
  EXPECT_EQ(c.preset, "vit_b16");
  EXPECT_EQ(c.lr, 1e-5);
  EXPECT_EQ(c.event.image_size, 224);
  EXPECT_EQ(c.event.patch, 16);
  EXPECT_EQ(c.event.prompts, 16);
  EXPECT_EQ(c.epochs, 2);
  EXPECT_EQ(c.weight_decay, 2e-4);
  EXPECT_EQ(c.min_lr, 1e-8);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ValidationCatchesInconsistentGeometry) {
  auto invalid = [](const std::string& text) {
    try {
      RunConfig::parse(text).validate();
    } catch (const ConfigError&) {
      return true;
    }
    return false;
  };
  EXPECT_FALSE(invalid(""));
  EXPECT_TRUE(invalid("events_per_frame=128\n"));  // 8 frames vs encoder's 4
  EXPECT_TRUE(invalid("target_resolution=16\n"));
  EXPECT_TRUE(invalid("few_shot_k=41\n"));
  EXPECT_TRUE(invalid("alpha=-1\n"));
  EXPECT_TRUE(invalid("heads=3\n"));
  EXPECT_TRUE(invalid("categories=square\n"));
  EXPECT_TRUE(invalid("sim_size_min=0.4\nsim_size_max=0.3\n"));
  EXPECT_TRUE(invalid("lr=0\n"));
}

TEST(Config, CategoryFile) {
  TempDir dir;
  const auto path = dir.path() / "cats.txt";
  std::ofstream(path) << "alpha\n\nbeta\ngamma\n";
  const RunConfig c = RunConfig::parse("category_file=" + path.string() + "\n");
  EXPECT_EQ(c.categories, (std::vector<std::string>{"alpha", "beta", "gamma"}));
}

TEST(Config, StructureDescribesSwitches) {
  RunConfig c;
  EXPECT_EQ(c.structure(), "event[prompts,temporal] text[hybrid,content]");
  c.event.event_prompts = false;
  c.event.temporal_modeling = false;
  c.text.hybrid_prompts = false;
  c.content_prompts = false;
  c.no_image = true;
  EXPECT_EQ(c.structure(), "event[plain] text[plain] image[absent]");
}

// ---------------------------------------------------------------------------
// Synthetic data

TEST(Synthetic, DeterministicUnderSeed) {
  const Dataset a = make_synthetic_dataset(5, kShapes, 6);
  const Dataset b = make_synthetic_dataset(5, kShapes, 6);
  const Dataset c = make_synthetic_dataset(6, kShapes, 6);
  EXPECT_TRUE(same_samples(a, b));
  EXPECT_FALSE(same_samples(a, c));
}

TEST(Synthetic, CountsAndBalance) {
  const Dataset d = make_synthetic_dataset(1, kShapes, 40);
  EXPECT_EQ(d.samples.size(), 200u);
  for (int n : d.per_category_counts()) EXPECT_EQ(n, 40);
  const auto [train, val] = split_dataset(make_synthetic_dataset(1, kShapes, 50), 40);
  for (int n : train.per_category_counts()) EXPECT_EQ(n, 40);
  for (int n : val.per_category_counts()) EXPECT_EQ(n, 10);
}

TEST(Synthetic, StreamsAreNonEmptyValidAndMatchTheImage) {
  const Dataset d = make_synthetic_dataset(2, kShapes, 8);
  for (const auto& s : d.samples) {
    ASSERT_FALSE(s.events.events.empty());
    EXPECT_NO_THROW(s.events.validate());
    bool pos = false, neg = false;
    int x0 = 1 << 30, x1 = -1, y0 = 1 << 30, y1 = -1;
    for (const auto& e : s.events.events) {
      (e.polarity > 0 ? pos : neg) = true;
      x0 = std::min<int>(x0, e.x), x1 = std::max<int>(x1, e.x);
      y0 = std::min<int>(y0, e.y), y1 = std::max<int>(y1, e.y);
    }
    EXPECT_TRUE(pos && neg);
    // the rendered shape lies inside the region swept by the moving edges
    double cx = 0, cy = 0, lit = 0;
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        if (s.image[static_cast<std::size_t>((y * 32 + x) * 3)] > 0) cx += x, cy += y, lit += 1;
      }
    }
    ASSERT_GT(lit, 0);
    EXPECT_GE(cx / lit, x0);
    EXPECT_LE(cx / lit, x1);
    EXPECT_GE(cy / lit, y0);
    EXPECT_LE(cy / lit, y1);
  }
}

TEST(Synthetic, RejectsBadArguments) {
  EXPECT_THROW(make_synthetic_dataset(1, {"one"}, 4), ConfigError);
  EXPECT_THROW(make_synthetic_dataset(1, kShapes, 0), ConfigError);
}

TEST(FewShot, ExactlyKPerCategoryAndRepeatable) {
  const Dataset d = make_synthetic_dataset(3, kShapes, 10);
  const Dataset a = few_shot_subset(d, 5, 11);
  EXPECT_EQ(a.samples.size(), 25u);
  for (int n : a.per_category_counts()) EXPECT_EQ(n, 5);
  EXPECT_TRUE(same_samples(a, few_shot_subset(d, 5, 11)));
  EXPECT_FALSE(same_samples(a, few_shot_subset(d, 5, 12)));
  EXPECT_TRUE(same_samples(few_shot_subset(d, 10, 11), d));
  EXPECT_THROW(few_shot_subset(d, 11, 11), ConfigError);
  EXPECT_THROW(few_shot_subset(d, 0, 11), ConfigError);
}

// ---------------------------------------------------------------------------
// Recognition and retrieval

TEST(Recognition, HandEvaluatedSoftmax) {
  Eigen::RowVectorXd f(2);
  f << 1.0, 0.0;
  const auto p = recognition_logits(f, Mat::Identity(2, 2));
  EXPECT_NEAR(p[0], 0.7311, 1e-4);
  EXPECT_NEAR(p[1], 0.2689, 1e-4);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);

  const auto u = recognition_logits(f, Mat::Ones(4, 2));
  for (double v : u) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_THROW(recognition_logits(f, Mat::Ones(4, 3)), std::invalid_argument);
}

TEST(Recognition, ArgmaxInvariantUnderPositiveScaling) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::RowVectorXd f(6);
    Mat text(7, 6);
    for (auto& v : f) v = rng.normal();
    for (Eigen::Index i = 0; i < text.size(); ++i) text.data()[i] = rng.normal();
    const int base = predict(recognition_logits(f, text));
    const double c = std::exp(rng.uniform(-3.0, 3.0));
    EXPECT_EQ(predict(recognition_logits(f * c, text)), base);
    double sum = 0.0;
    for (double v : recognition_logits(f, text)) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Predict, ArgmaxWithLowestIndexTieBreak) {
  EXPECT_EQ(predict(std::vector<double>{0.2, 0.5, 0.3}), 1);
  EXPECT_EQ(predict(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 0);
  EXPECT_EQ(predict(std::vector<double>{0.0, 0.0, 1.0}), 2);
  EXPECT_THROW(predict(std::vector<double>{}), std::invalid_argument);
}

TEST(Recall, IdenticalItemIsFoundFirst) {
  Mat gallery = Mat::Identity(4, 4);
  const std::vector<int> labels{0, 1, 2, 3};
  EXPECT_EQ(recall_at_k(Mat(gallery.row(2)), gallery, std::vector<int>{2}, labels, 1), 1.0);
  EXPECT_EQ(recall_at_k(Mat(gallery.row(2)), gallery, std::vector<int>{3}, labels, 1), 0.0);
}

TEST(Recall, FullGalleryAlwaysHits) {
  Rng rng(5);
  Mat q(6, 3), g(9, 3);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  const std::vector<int> ql{0, 1, 2, 0, 1, 2}, gl{0, 1, 2, 0, 1, 2, 0, 1, 2};
  EXPECT_EQ(recall_at_k(q, g, ql, gl, 9), 1.0);
}

TEST(Recall, MatchesBruteForceOracleAndIsMonotone) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const int nq = 1 + static_cast<int>(rng.below(10));
    const int ng = 20;
    Mat scores(nq, ng);
    // quantized so ties occur and exercise the index tie-break
    for (Eigen::Index i = 0; i < scores.size(); ++i) scores.data()[i] = static_cast<double>(rng.below(6));
    std::vector<int> ql(static_cast<std::size_t>(nq)), gl(static_cast<std::size_t>(ng));
    for (auto& l : ql) l = static_cast<int>(rng.below(4));
    for (auto& l : gl) l = static_cast<int>(rng.below(4));
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(nq));
    for (int i = 0; i < nq; ++i) {
      for (int j = 0; j < ng; ++j) rows[static_cast<std::size_t>(i)].push_back(scores(i, j));
    }
    double prev = 0.0;
    for (int k = 1; k <= ng; ++k) {
      const double r = recall_at_k(scores, ql, gl, k);
      EXPECT_EQ(r, testing::recall_oracle(rows, ql, gl, k)) << "trial " << trial << " k " << k;
      EXPECT_GE(r, prev);
      prev = r;
    }
  }
}

TEST(Recall, RejectsInvalidArguments) {
  const Mat s = Mat::Ones(2, 3);
  const std::vector<int> ql{0, 1}, gl{0, 1, 1};
  EXPECT_THROW(recall_at_k(s, ql, gl, 0), std::invalid_argument);
  EXPECT_THROW(recall_at_k(s, ql, gl, 4), std::invalid_argument);
  EXPECT_THROW(recall_at_k(Mat(2, 0), ql, std::vector<int>{}, 1), std::invalid_argument);
  EXPECT_THROW(recall_at_k(s, std::vector<int>{0}, gl, 1), std::invalid_argument);
}

TEST(Evaluate, AccuracyEqualsRecomputationFromEmbeddings) {
  const RunConfig cfg = tiny_run_config();
  EventBindModel model(cfg);
  const Dataset d = make_synthetic_dataset(cfg.seed, cfg.categories, 3);
  const auto samples = prepare(d, cfg.representation);
  const EvalResult r = evaluate(model, samples);
  ASSERT_EQ(r.labels.size(), samples.size());
  int correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Mat& text = r.text_matrices[i];
    std::vector<double> sims;
    for (Eigen::Index c = 0; c < text.rows(); ++c) sims.push_back(text.row(c).dot(r.event_embeddings.row(static_cast<Eigen::Index>(i))));
    const int pred = testing::argmax_oracle(sims);
    EXPECT_EQ(pred, r.predictions[i]);
    correct += pred == samples[i].category ? 1 : 0;
  }
  EXPECT_EQ(r.accuracy, static_cast<double>(correct) / static_cast<double>(samples.size()));
  EXPECT_TRUE(r.text_to_event[0].has_value());
  EXPECT_TRUE(r.image_to_event[2].has_value());
}

// ---------------------------------------------------------------------------
// Optimizer and batching

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  nn::ParamStore store;
  ad::Param& p = store.add("p", (Mat(1, 3) << 1.0, -2.0, 0.5).finished());
  p.grad << 0.3, -4.0, 0.0;
  Adam adam(store, 0.1);
  adam.step(0.01);
  // g' = g + wd * p; after bias correction the update is lr * g' / (|g'| + eps)
  const Mat g = (Mat(1, 3) << 0.3 + 0.1, -4.0 - 0.2, 0.05).finished();
  for (int i = 0; i < 3; ++i) {
    const double expected = (Mat(1, 3) << 1.0, -2.0, 0.5).finished()(0, i) - 0.01 * g(0, i) / (std::abs(g(0, i)) + 1e-8);
    EXPECT_NEAR(p.value(0, i), expected, 1e-15);
  }
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, FrozenParametersAreNotUpdated) {
  nn::ParamStore store;
  ad::Param& p = store.add("p", Mat::Ones(1, 1));
  p.trainable = false;
  p.grad(0, 0) = 1.0;
  Adam adam(store, 0.0);
  adam.step(0.1);
  EXPECT_EQ(p.value(0, 0), 1.0);
}

TEST(CosineSchedule, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(1e-3, 1e-8, 0, 200), 1e-3);
  EXPECT_NEAR(cosine_lr(1e-3, 1e-8, 200, 200), 1e-8, 1e-20);
  EXPECT_NEAR(cosine_lr(1e-3, 1e-8, 100, 200), 0.5 * (1e-3 + 1e-8), 1e-18);
  EXPECT_GT(cosine_lr(1e-3, 1e-8, 10, 200), cosine_lr(1e-3, 1e-8, 11, 200));
}

TEST(Batching, DistinctCategoriesAndFullCoverage) {
  std::vector<PreparedSample> samples;
  const std::vector<int> per_cat{7, 3, 5, 1, 4};
  int id = 0;
  for (int c = 0; c < 5; ++c) {
    for (int i = 0; i < per_cat[static_cast<std::size_t>(c)]; ++i) samples.push_back(PreparedSample{id++, c, {}, {}});
  }
  for (int batch : {1, 3, 5, 16}) {
    const auto batches = category_batches(samples, 5, batch, 9, 0);
    std::multiset<std::size_t> seen;
    for (const auto& b : batches) {
      EXPECT_LE(b.size(), static_cast<std::size_t>(batch));
      std::set<int> cats;
      for (std::size_t i : b) {
        seen.insert(i);
        cats.insert(samples[i].category);
      }
      EXPECT_EQ(cats.size(), b.size());
    }
    EXPECT_EQ(seen.size(), samples.size());
    EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), samples.size());
  }
  EXPECT_EQ(category_batches(samples, 5, 3, 9, 2), category_batches(samples, 5, 3, 9, 2));
  EXPECT_NE(category_batches(samples, 5, 3, 9, 2), category_batches(samples, 5, 3, 9, 3));
}

// ---------------------------------------------------------------------------
// Training loop

TEST(Train, OneEpochOneBatchIsOneOptimizerStep) {
  RunConfig cfg = tiny_run_config();
  cfg.max_batches_per_epoch = 1;
  EventBindModel model(cfg);
  const auto [train_set, val_set] = load_datasets(cfg);
  std::vector<Record> records;
  TrainOptions opts;
  opts.write_files = false;
  opts.on_record = [&](const Record& r) { records.push_back(r); };
  const TrainOutcome out = train(model, train_set, val_set, opts);
  EXPECT_EQ(out.steps, 1);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0]["kind"], "step");
  EXPECT_EQ(records[0]["step"], 1);
  EXPECT_EQ(records[0]["terms"], "ie+et+tt+mse");
  EXPECT_EQ(records[1]["kind"], "epoch");
  const std::vector<std::string> keys{"kind", "epoch", "mean_loss", "train_acc", "val_acc", "t2e_r1", "t2e_r5", "t2e_r10",
                                      "i2e_r1", "i2e_r5", "i2e_r10", "tau", "wall_s"};
  std::vector<std::string> got;
  for (const auto& [k, v] : records[1].items()) got.push_back(k);
  EXPECT_EQ(got, keys);
  const double acc = records[1]["val_acc"];
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
}

TEST(Train, ImageAbsentModeRunsToCompletion) {
  RunConfig cfg = tiny_run_config();
  cfg.no_image = true;
  cfg.epochs = 2;
  EventBindModel model(cfg);
  const auto [train_set, val_set] = load_datasets(cfg);
  TrainOptions opts;
  opts.write_files = false;
  const TrainOutcome out = train(model, train_set, val_set, opts);
  EXPECT_EQ(out.epochs_run, 2);
  EXPECT_EQ(out.compositions, std::vector<std::string>{"et"});
  EXPECT_EQ(out.history.find("i2e_r1\":0"), std::string::npos);  // image recall is null, not a number
}

TEST(Train, DeterministicUnderFixedSeed) {
  RunConfig cfg = tiny_run_config();
  cfg.epochs = 2;
  cfg.augment = true;
  auto run = [&] {
    EventBindModel model(cfg);
    const auto [train_set, val_set] = load_datasets(cfg);
    TrainOptions opts;
    opts.write_files = false;
    return train(model, train_set, val_set, opts).step_losses;
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_EQ(a.size(), 8u);
}

TEST(Train, DivergenceGuardAbortsOnNonFiniteLoss) {
  const RunConfig cfg = tiny_run_config();
  EventBindModel model(cfg);
  model.params().at("event.proj").value(0, 0) = std::nan("");
  const auto [train_set, val_set] = load_datasets(cfg);
  TrainOptions opts;
  opts.write_files = false;
  EXPECT_THROW(train(model, train_set, val_set, opts), DivergenceError);
}

TEST(Train, WritesMetricsAndCheckpoints) {
  TempDir dir;
  RunConfig cfg = tiny_run_config(dir.str());
  cfg.epochs = 2;
  cfg.few_shot_k = 2;
  EventBindModel model(cfg);
  const auto [train_set, val_set] = load_datasets(cfg);
  EXPECT_EQ(train_set.samples.size(), 10u);
  const TrainOutcome out = train(model, train_set, val_set);
  std::ifstream metrics(dir.path() / "metrics.ndjson");
  std::string line;
  int steps = 0, epochs = 0;
  while (std::getline(metrics, line)) {
    const auto r = nlohmann::json::parse(line);
    (r["kind"] == "step" ? steps : epochs) += 1;
  }
  EXPECT_EQ(steps, out.steps);
  EXPECT_EQ(epochs, 2);
  const Checkpoint last = Checkpoint::load((dir.path() / "checkpoint.ebck").string());
  EXPECT_EQ(last.epoch, 2u);
  EXPECT_EQ(last.config, cfg.serialize());
  EXPECT_EQ(last.history, out.history);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "best.ebck"));
}

TEST(Train, ZeroEpochsOnlyEvaluates) {
  RunConfig cfg = tiny_run_config();
  cfg.epochs = 0;
  EventBindModel model(cfg);
  const auto [train_set, val_set] = load_datasets(cfg);
  TrainOptions opts;
  opts.write_files = false;
  const TrainOutcome out = train(model, train_set, val_set, opts);
  EXPECT_EQ(out.steps, 0);
  EXPECT_EQ(out.best_epoch, 0);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripIsBitExact) {
  const RunConfig cfg = tiny_run_config();
  EventBindModel a(cfg);
  for (const auto& [name, p] : a.params().items()) p->value.array() += 0.01;  // differ from a fresh init
  const Checkpoint c = Checkpoint::capture(a.params(), cfg.serialize(), 3, "{\"kind\":\"epoch\"}\n");
  const auto bytes = c.encode();
  EXPECT_EQ(Checkpoint::decode(bytes).encode(), bytes);

  EventBindModel b(RunConfig::parse(Checkpoint::decode(bytes).config));
  Checkpoint::decode(bytes).restore(b.params());
  const Dataset d = make_synthetic_dataset(1, cfg.categories, 1);
  const auto s = prepare(d, cfg.representation);
  for (const auto& x : s) {
    EXPECT_EQ(a.event_embedding(x.frames), b.event_embedding(x.frames));
    EXPECT_EQ(a.image_embedding(x.image), b.image_embedding(x.image));
    EXPECT_EQ(a.query(x.frames).text, b.query(x.frames).text);
  }
}

TEST(Checkpoint, HeaderLayout) {
  Checkpoint c;
  c.config = "a=1\n";
  c.epoch = 7;
  c.tensors.emplace("w", (Mat(1, 2) << 1.0, -2.0).finished());
  const auto b = c.encode();
  const std::vector<std::uint8_t> head(b.begin(), b.begin() + 20);
  const std::vector<std::uint8_t> expected{'E', 'B', 'C', 'K', 1, 0, 0, 0, 4, 0, 0, 0, 0, 0, 0, 0, 'a', '=', '1', '\n'};
  EXPECT_EQ(head, expected);
  // + epoch 4, history length 8, count 4, name length 4, name 1, rank 4, dims 16, values 16
  EXPECT_EQ(b.size(), 20u + 4 + 8 + 4 + 4 + 1 + 4 + 16 + 16);
  EXPECT_EQ(b[b.size() - 1], 0xC0);  // -2.0 = 0xC000000000000000
}

TEST(Checkpoint, RejectsMalformedBytes) {
  Checkpoint c;
  c.tensors.emplace("w", Mat::Ones(2, 2));
  const auto good = c.encode();
  auto code = [](const std::vector<std::uint8_t>& b) {
    try {
      Checkpoint::decode(b);
    } catch (const DataError& e) {
      return e.code();
    }
    return DataError::Code::kIo;
  };
  auto bad = good;
  bad[0] = 'X';
  EXPECT_EQ(code(bad), DataError::Code::kBadMagic);
  bad = good;
  bad[4] = 9;
  EXPECT_EQ(code(bad), DataError::Code::kBadVersion);
  bad = good;
  bad.pop_back();
  EXPECT_EQ(code(bad), DataError::Code::kTruncated);
  bad = good;
  bad.push_back(0);
  EXPECT_EQ(code(bad), DataError::Code::kBadHeader);
}

TEST(Checkpoint, RestoreRequiresMatchingTensors) {
  nn::ParamStore store;
  store.add("w", Mat::Zero(2, 2));
  Checkpoint c;
  c.tensors.emplace("w", Mat::Ones(2, 3));
  EXPECT_THROW(c.restore(store), DataError);
  c.tensors.clear();
  c.tensors.emplace("v", Mat::Ones(2, 2));
  EXPECT_THROW(c.restore(store), DataError);
  c.tensors.clear();
  c.tensors.emplace("w", Mat::Ones(2, 2));
  c.restore(store);
  EXPECT_EQ(store.at("w").value, Mat::Ones(2, 2));
}

// ---------------------------------------------------------------------------
// Dataset directories and augmentation

TEST(DatasetIo, RoundTrip) {
  TempDir dir;
  const auto [train_set, val_set] = split_dataset(make_synthetic_dataset(4, kShapes, 3), 2);
  write_dataset(dir.path(), train_set, val_set);
  const auto [tr, va] = read_dataset(dir.path());
  EXPECT_TRUE(same_samples(tr, train_set));
  EXPECT_TRUE(same_samples(va, val_set));
  EXPECT_EQ(tr.sensor_size, 32);
}

TEST(DatasetIo, ReportsMissingAndMalformedFiles) {
  TempDir dir;
  EXPECT_THROW(read_dataset(dir.path()), DataError);
  std::ofstream(dir.path() / "categories.txt") << "a\nb\n";
  std::ofstream(dir.path() / "manifest.tsv") << "0\t5\ttrain\tevents/0.evt1\timages/0.efr1\n";
  EXPECT_THROW(read_dataset(dir.path()), DataError);
  std::ofstream(dir.path() / "manifest.tsv") << "0\t1\ttrain\n";
  EXPECT_THROW(read_dataset(dir.path()), DataError);
}

TEST(Dihedral, SourceMapIsABijectionAndTransformsAreDistinct) {
  const int n = 4;
  Frames base(1, n, n, 1);
  for (std::size_t i = 0; i < base.values.size(); ++i) base.values[i] = static_cast<double>(i);
  std::set<std::vector<double>> outputs;
  for (int k = 0; k < kDihedralCount; ++k) {
    std::set<std::pair<int, int>> sources;
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) sources.insert(dihedral_source(k, y, x, n));
    }
    EXPECT_EQ(sources.size(), static_cast<std::size_t>(n * n));
    outputs.insert(dihedral(base, k).values);
  }
  EXPECT_EQ(outputs.size(), 8u);
  EXPECT_EQ(dihedral(base, 1).at(0, 2, 0, 0), base.at(0, 2, 3, 0));  // x mirrored
  EXPECT_EQ(dihedral(base, 4).at(0, 1, 3, 0), base.at(0, 3, 1, 0));  // transposed
}

TEST(Dihedral, FramesAndImageMoveTogether) {
  PreparedSample s{0, 0, Frames(2, 4, 4, 3), std::vector<double>(4 * 4 * 3, 0.0)};
  s.frames.at(1, 0, 1, 2) = 9.0;
  s.image[(0 * 4 + 1) * 3 + 2] = 9.0;
  const PreparedSample t = dihedral(s, 6);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) EXPECT_EQ(t.frames.at(1, y, x, 2), t.image[static_cast<std::size_t>((y * 4 + x) * 3 + 2)]);
  }
  EXPECT_THROW(dihedral(Frames(1, 2, 3, 1), 1), std::invalid_argument);
}

}  // namespace
}  // namespace eventbind::harness
