#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "jamba/errors.hpp"
#include "jamba/oracles.hpp"
#include "jamba/probe.hpp"
#include "jamba/tasks.hpp"
#include "jamba/train.hpp"
#include "json.hpp"

using namespace jamba;

namespace {

JambaConfig tiny() {
  auto c = grad_check_config();
  c.vocab_size = 32;
  return c;
}

TrainSpec quick(std::size_t steps) {
  TrainSpec t;
  t.steps = steps;
  t.batch = 2;
  t.lr = 1e-3;
  t.eval_every = 0;
  t.eval_samples = 4;
  t.seed = 5;
  return t;
}

TaskSpec induction(std::size_t seq, std::size_t pairs, std::size_t vocab = 32) {
  TaskSpec s;
  s.kind = TaskKind::kInduction;
  s.vocab_size = vocab;
  s.seq_len = seq;
  s.n_pairs = pairs;
  return s;
}

// Upper tail of chi-square with k degrees of freedom (Wilson-Hilferty).
double chi2_upper_tail(double x, double k) {
  const double t = 2.0 / (9.0 * k);
  const double z = (std::cbrt(x / k) - (1.0 - t)) / std::sqrt(t);
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace

TEST(Tasks, GenerationIsDeterministicPerStream) {
  for (auto kind : {TaskKind::kInduction, TaskKind::kSelectiveCopy, TaskKind::kNeedle, TaskKind::kLmBytes}) {
    TaskSpec s;
    s.kind = kind;
    s.vocab_size = 128;
    s.seq_len = 48;
    s.seed = 9;
    const auto a = gen_task(s, 6, 3), b = gen_task(s, 6, 3), c = gen_task(s, 6, 4);
    EXPECT_EQ(a.inputs, b.inputs) << to_string(kind);
    EXPECT_EQ(a.mask, b.mask);
    EXPECT_NE(a.inputs, c.inputs) << to_string(kind);
    for (std::size_t i = 0; i < a.inputs.size(); ++i) {
      ASSERT_GE(a.inputs[i], 0);
      ASSERT_LT(a.inputs[i], 128);
    }
    // targets are the inputs shifted by one within each row
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t t = 0; t + 1 < 48; ++t) EXPECT_EQ(a.targets[r * 48 + t], a.inputs[r * 48 + t + 1]);
    // a prefix of a larger batch is the smaller batch
    const auto big = gen_task(s, 10, 3);
    EXPECT_TRUE(std::equal(a.inputs.begin(), a.inputs.end(), big.inputs.begin()));
  }
}

TEST(Tasks, InductionAnswersAreListedValues) {
  const auto s = induction(40, 5);
  const auto batch = gen_task(s, 20, 1);
  std::size_t answers = 0;
  for (std::size_t r = 0; r < 20; ++r) {
    const auto* in = batch.inputs.data() + r * 40;
    std::map<std::int32_t, std::int32_t> kv;
    for (std::size_t i = 0; i < 10; i += 2) {
      EXPECT_FALSE(kv.count(in[i]));
      kv[in[i]] = in[i + 1];
    }
    for (std::size_t t = 0; t < 40; ++t) {
      if (!batch.mask[r * 40 + t]) continue;
      ++answers;
      EXPECT_GE(t, 10u);
      ASSERT_TRUE(kv.count(in[t]));
      EXPECT_EQ(batch.targets[r * 40 + t], kv[in[t]]);
    }
  }
  EXPECT_GT(answers, 20u * 10);
}

TEST(Tasks, InductionRepeatsPairsInOrder) {
  const auto batch = gen_task(induction(33, 4), 5, 2);
  for (std::size_t r = 0; r < 5; ++r) {
    const auto* in = batch.inputs.data() + r * 33;
    for (std::size_t t = 8; t < 33; ++t) EXPECT_EQ(in[t], in[t - 8]) << r << " " << t;
    EXPECT_EQ(batch.targets[r * 33 + 32], in[1]);
  }
}

TEST(Tasks, SinglePairInduction) {
  const auto batch = gen_task(induction(8, 1), 4, 0);
  for (std::size_t r = 0; r < 4; ++r) {
    const auto* in = batch.inputs.data() + r * 8;
    for (std::size_t t = 2; t < 8; t += 2) EXPECT_EQ(in[t], in[0]);
  }
}

TEST(Tasks, SelectiveCopyStructure) {
  TaskSpec s;
  s.kind = TaskKind::kSelectiveCopy;
  s.vocab_size = 16;
  s.seq_len = 30;
  s.n_content = 6;
  const auto batch = gen_task(s, 8, 0);
  for (std::size_t r = 0; r < 8; ++r) {
    const auto* in = batch.inputs.data() + r * 30;
    std::vector<std::int32_t> content;
    for (std::size_t t = 0; t < 24; ++t)
      if (in[t] != kFillerToken) content.push_back(in[t]);
    ASSERT_EQ(content.size(), 6u);
    EXPECT_EQ(in[24], kMarkerToken);
    std::size_t masked = 0;
    for (std::size_t t = 0; t < 30; ++t) {
      if (!batch.mask[r * 30 + t]) continue;
      EXPECT_EQ(batch.targets[r * 30 + t], content[t - 24]);
      ++masked;
    }
    EXPECT_EQ(masked, 6u);
  }
}

TEST(Tasks, NeedleDepthIsUniform) {
  TaskSpec s;
  s.kind = TaskKind::kNeedle;
  s.vocab_size = 64;
  s.seq_len = 517;
  s.seed = 2024;
  const std::size_t haystack = 512, n = 10000, bins = 16;
  const auto batch = gen_task(s, n, 0);
  ASSERT_EQ(batch.needle_positions.size(), n);
  std::vector<double> observed(bins, 0), expected(bins, 0);
  for (std::size_t d = 0; d <= haystack; ++d) expected[d * bins / (haystack + 1)] += double(n) / (haystack + 1);
  for (std::size_t r = 0; r < n; ++r) {
    const auto d = batch.needle_positions[r];
    ASSERT_LE(d, haystack);
    observed[d * bins / (haystack + 1)] += 1;
    const auto* in = batch.inputs.data() + r * s.seq_len;
    EXPECT_EQ(in[d], kMarkerToken);
    EXPECT_EQ(in[s.seq_len - 2], kQueryToken);
    EXPECT_EQ(in[s.seq_len - 1], in[d + 1]);
    EXPECT_EQ(batch.targets[r * s.seq_len + s.seq_len - 1], in[d + 2]);
    EXPECT_EQ(batch.mask[r * s.seq_len + s.seq_len - 1], 1);
  }
  double chi2 = 0;
  for (std::size_t b = 0; b < bins; ++b) chi2 += (observed[b] - expected[b]) * (observed[b] - expected[b]) / expected[b];
  EXPECT_GT(chi2_upper_tail(chi2, bins - 1), 0.001) << "chi2 " << chi2;
  EXPECT_LT(chi2_upper_tail(200.0, 15), 1e-6);
  EXPECT_NEAR(chi2_upper_tail(15.0, 15), 0.45, 0.03);
}

TEST(Tasks, NeedleFixedDepth) {
  TaskSpec s;
  s.kind = TaskKind::kNeedle;
  s.vocab_size = 16;
  s.seq_len = 25;
  for (double depth : {0.0, 0.5, 1.0}) {
    s.needle_depth = depth;
    const auto batch = gen_task(s, 3, 0);
    for (auto p : batch.needle_positions) EXPECT_EQ(p, static_cast<std::size_t>(depth * 20 + 0.5));
  }
}

TEST(Tasks, ImpossibleSpecs) {
  auto expect_impossible = [](const TaskSpec& s) {
    try {
      gen_task(s, 1);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kImpossibleSpec) << e.what();
    }
  };
  expect_impossible(induction(8, 5));
  expect_impossible(induction(64, 8, 8));
  TaskSpec s;
  s.kind = TaskKind::kSelectiveCopy;
  s.seq_len = 10;
  s.n_content = 6;
  expect_impossible(s);
  s.kind = TaskKind::kNeedle;
  s.seq_len = 4;
  expect_impossible(s);
  s.kind = TaskKind::kLmBytes;
  s.vocab_size = 64;
  s.seq_len = 16;
  expect_impossible(s);
  EXPECT_THROW(parse_task_kind("copying"), Error);
}

TEST(Train, ZeroLearningRateLeavesWeights) {
  auto t = quick(3);
  t.lr = 0;
  const auto init = JambaModel::init(tiny(), t.seed);
  const auto r = train(tiny(), induction(12, 3), t);
  EXPECT_TRUE(r.model.identical_to(init));
  t.optimizer = OptimizerKind::kSgd;
  EXPECT_TRUE(train(tiny(), induction(12, 3), t).model.identical_to(init));
}

TEST(Train, RunIsReproducible) {
  auto t = quick(4);
  t.eval_every = 2;
  t.log_activations = true;
  const auto a = train(tiny(), induction(12, 3), t);
  const auto b = train(tiny(), induction(12, 3), t);
  EXPECT_TRUE(a.model.identical_to(b.model));
  ASSERT_EQ(a.log.rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a.log.rows[i].loss, b.log.rows[i].loss);
    EXPECT_EQ(a.log.rows[i].grad_norm, b.log.rows[i].grad_norm);
    EXPECT_EQ(a.log.rows[i].eval_accuracy, b.log.rows[i].eval_accuracy);
    EXPECT_EQ(a.log.rows[i].tokens_seen, (i + 1) * 2 * 12);
  }
  EXPECT_LT(a.log.rows[0].eval_accuracy, 0);
  EXPECT_GE(a.log.rows[1].eval_accuracy, 0);
  EXPECT_EQ(a.log.activations_to_csv(), b.log.activations_to_csv());
  EXPECT_FALSE(a.log.activations.empty());
  EXPECT_EQ(a.log.to_csv().substr(0, a.log.to_csv().find('\n')),
            "step,loss,aux_loss,eval_accuracy,grad_norm,tokens_seen,wall_ms");
}

TEST(Train, LossDecreasesOnFixedTask) {
  auto t = quick(40);
  t.lr = 1e-2;
  t.batch = 4;
  const auto r = train(tiny(), induction(8, 1, 16), t);
  EXPECT_LT(r.log.rows.back().loss, r.log.rows.front().loss);
}

TEST(Train, DivergenceNamesStep) {
  auto t = quick(5);
  t.lr = 1e300;
  t.clip = 0;
  t.optimizer = OptimizerKind::kSgd;
  try {
    train(tiny(), induction(12, 3), t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDivergence);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Train, TaskVocabMustFitModel) {
  try {
    train(tiny(), induction(12, 3, 64), quick(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kVocabOverflow);
  }
}

TEST(Train, SinglePrecisionWeightsStayRounded) {
  auto t = quick(2);
  t.dtype = DType::kReal32;
  const auto r = train(tiny(), induction(12, 3), t);
  for (const auto& p : r.model.named_parameters())
    for (double v : p.tensor.data()) ASSERT_EQ(v, static_cast<double>(static_cast<float>(v))) << p.name;
}

TEST(Ablation, VariantsAndReport) {
  const auto base = preset("toy-1m").config;
  const auto vs = standard_ablation(base);
  ASSERT_EQ(vs.size(), 5u);
  std::set<std::string> names;
  for (const auto& v : vs) {
    names.insert(v.name);
    EXPECT_EQ(v.config.d_model, base.d_model);
    EXPECT_EQ(v.config.vocab_size, base.vocab_size);
  }
  EXPECT_EQ(names.size(), 5u);
  EXPECT_EQ(vs[0].config.mamba_ratio, 0u);
  EXPECT_EQ(vs[1].config.attn_ratio, 0u);

  std::vector<AblationVariant> small = {{"a", tiny()}, {"b", tiny()}};
  small[1].config.attn_ratio = 0;
  small[1].config.mamba_ratio = 1;
  const auto rep = ablate(small, induction(12, 3), quick(2), 2);
  ASSERT_EQ(rep.entries.size(), 2u);
  EXPECT_EQ(rep.entries[0].log.rows.size(), 2u);
  const auto again = ablate({small[0]}, induction(12, 3), quick(2), 1);
  EXPECT_EQ(again.entries[0].final_loss, rep.entries[0].final_loss);
  const auto csv = rep.curves_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,a,b");
  const auto j = nlohmann::json::parse(rep.summary_json());
  EXPECT_EQ(j.size(), 2u);
}

TEST(Probe, RowsAreDistributions) {
  const auto m = JambaModel::init(tiny(), 3);
  std::vector<std::int32_t> tok = {4, 5, 6, 4, 5, 6, 4, 5};
  const auto r = probe_attention(m, tok);
  ASSERT_EQ(r.heads.size(), m.schedule().count(MixerKind::kAttention) * tiny().n_heads);
  for (const auto& h : r.heads) {
    for (std::size_t i = 0; i < 8; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 8; ++j) {
        s += h.matrix[i * 8 + j];
        if (j > i) EXPECT_EQ(h.matrix[i * 8 + j], 0);
      }
      EXPECT_NEAR(s, 1.0, 1e-10);
    }
  }
  EXPECT_GE(r.best().induction_score, r.heads.front().induction_score);
}

TEST(Probe, InductionScoreOracle) {
  // tokens a b a b: position 2 matches 0 (target 1), position 3 matches 1 (target 2)
  const std::vector<std::int32_t> tok = {7, 8, 7, 8};
  std::vector<double> m(16, 0.0);
  m[0] = 1;
  m[4 + 0] = 1;
  m[8 + 1] = 1;
  m[12 + 0] = 0.5;
  m[12 + 2] = 0.5;
  EXPECT_DOUBLE_EQ(induction_score(m, 4, tok), 0.75);
  const std::vector<std::uint8_t> only_last = {0, 0, 0, 1};
  EXPECT_DOUBLE_EQ(induction_score(m, 4, tok, only_last), 0.5);
  const std::vector<std::uint8_t> none = {1, 1, 0, 0};
  EXPECT_EQ(induction_score(m, 4, tok, none), 0.0);
  const std::vector<std::int32_t> distinct = {1, 2, 3, 4};
  EXPECT_EQ(induction_score(m, 4, distinct), 0.0);
}

TEST(Probe, NeedsAttention) {
  auto c = tiny();
  c.attn_ratio = 0;
  c.mamba_ratio = 1;
  const auto m = JambaModel::init(c, 1);
  const std::vector<std::int32_t> tok = {3, 4};
  try {
    probe_attention(m, tok);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidArgument);
  }
}

TEST(Probe, WritesFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "jamba_probe_test";
  std::filesystem::remove_all(dir);
  const auto m = JambaModel::init(tiny(), 3);
  const std::vector<std::int32_t> tok = {4, 5, 4, 5};
  const auto r = probe_attention(m, tok);
  write_probe(r, dir.string());
  const auto& h = r.heads.front();
  const auto stem = "layer" + std::to_string(h.layer) + "_head" + std::to_string(h.head);
  std::ifstream txt(dir / (stem + ".txt"));
  double first = -1;
  txt >> first;
  EXPECT_NEAR(first, 1.0, 1e-12);
  std::ifstream js(dir / (stem + ".json"));
  const auto j = nlohmann::json::parse(js);
  EXPECT_EQ(j["layer"], h.layer);
  EXPECT_DOUBLE_EQ(j["induction_score"].get<double>(), h.induction_score);
  std::filesystem::remove_all(dir);
}

TEST(Needle, GridCoversEveryCell) {
  const auto m = JambaModel::init(tiny(), 3);
  TaskSpec base;
  base.kind = TaskKind::kNeedle;
  base.vocab_size = 16;
  const auto grid = needle_grid(m, base, {16, 24}, {0.0, 0.5, 1.0}, 4);
  ASSERT_EQ(grid.size(), 6u);
  for (const auto& c : grid) {
    EXPECT_EQ(c.result.answers, 4u);
    EXPECT_GE(c.result.accuracy, 0.0);
    EXPECT_LE(c.result.accuracy, 1.0);
  }
}

TEST(Oracles, ScanCheckPasses) {
  const auto r = scan_check(30, 11);
  EXPECT_EQ(r.trials, 30u);
  EXPECT_LT(r.max_rel_diff, kScanTolerance);
  for (auto c : r.chunk_counts) EXPECT_GT(c, 0u);
}

TEST(Oracles, MaxRelDiff) {
  const std::vector<double> a = {1.0, 2.0, 0.0}, b = {1.0, 2.2, 0.0};
  EXPECT_NEAR(max_rel_diff(a, b), 0.2 / 2.2, 1e-15);
}
