#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "mmttt/adam.hpp"
#include "mmttt/errors.hpp"
#include "mmttt/grad_check.hpp"
#include "mmttt/model.hpp"
#include "mmttt/ops.hpp"
#include "test_util.hpp"

using namespace mmttt;
using mmttt::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

const ModelDims kTinyDims{6, 5, 4, 3, 16};
const ModelConfig kTinyConfig{8, 2, 12, 1};

void zero_biases(std::vector<NamedTensor> params) {
  for (auto& p : params)
    if (p.name.size() >= 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0)
      for (auto& v : p.tensor.mutable_values()) v = 0.0;
}

MaskedBatch masked_query(std::size_t l, std::size_t d, Rng& rng) {
  MaskedBatch m;
  m.masked_text_feat = random_tensor({l, d}, rng, -1, 1, true);
  m.mask_positions = {1, 3};
  m.target_ids = {4, 9};
  return m;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Encoder, ZeroModalitiesReduceToTextPathway) {
  Rng rng(40);
  auto enc = EncoderParams::init(kTinyDims, kTinyConfig, rng);
  zero_biases([&] {
    std::vector<NamedTensor> v;
    enc.collect(v);
    return v;
  }());
  auto masked = masked_query(4, 8, rng);
  auto out = encode(masked, Tensor::zeros({3, 3}), Tensor::zeros({2, 5}), enc);
  const Tensor q = text_query(masked);
  for (const auto* units : {&enc.audio_text, &enc.visual_text}) {
    const auto& unit = (*units)[0];
    const Tensor expected = add(q, feed_forward(layer_norm(q, unit.ff_norm), unit.ff));
    const Tensor& got = units == &enc.audio_text ? out.audio_text : out.visual_text;
    for (std::size_t i = 0; i < expected.numel(); ++i) EXPECT_NEAR(got.values()[i], expected.values()[i], 1e-12);
  }
}

TEST(Encoder, AudioFrameOrderDoesNotMatter) {
  Rng rng(41);
  auto enc = EncoderParams::init(kTinyDims, kTinyConfig, rng);
  auto masked = masked_query(4, 8, rng);
  auto audio = random_tensor({3, 3}, rng), frames = random_tensor({2, 5}, rng);
  auto a = encode(masked, audio, frames, enc);
  auto b = encode(masked, gather_rows(audio, std::vector<std::size_t>{2, 0, 1}), frames, enc);
  for (std::size_t i = 0; i < a.audio_text.numel(); ++i)
    EXPECT_NEAR(a.audio_text.values()[i], b.audio_text.values()[i], 1e-12);
}

TEST(Encoder, BranchesShareNoWeights) {
  Rng rng(42);
  auto enc = EncoderParams::init(kTinyDims, kTinyConfig, rng);
  EXPECT_NE(enc.audio_text[0].attention.query.weight.node_ptr(), enc.visual_text[0].attention.query.weight.node_ptr());
  std::vector<NamedTensor> v;
  enc.collect(v);
  std::set<const void*> nodes;
  for (auto& p : v) nodes.insert(p.tensor.node_ptr().get());
  EXPECT_EQ(nodes.size(), v.size());
}

TEST(Encoder, EndToEndMlmGradCheck) {
  Rng rng(43);
  auto enc = EncoderParams::init(kTinyDims, kTinyConfig, rng);
  auto dec_at = DecoderParams::init(kTinyDims, kTinyConfig, rng);
  auto dec_it = DecoderParams::init(kTinyDims, kTinyConfig, rng);
  auto text = random_tensor({4, 6}, rng, -1, 1);
  auto audio = random_tensor({3, 3}, rng, -1, 1);
  auto frames = random_tensor({3, 5}, rng, -1, 1);
  const std::int64_t tokens[] = {3, 11, 0, 7};
  std::vector<NamedTensor> params;
  enc.collect(params);
  dec_at.collect("decoder_at", params);
  dec_it.collect("decoder_it", params);
  auto loss = [&] {
    Rng mask_rng(5);
    auto masked = apply_mask(project_text(text, enc), tokens, 0.5, enc.mask_embedding, mask_rng);
    auto h = encode(masked, audio, frames, enc);
    return mlm_loss(h.audio_text, h.visual_text, masked.mask_positions, masked.target_ids, dec_at, dec_it);
  };
  auto report = grad_check(loss, params);
  EXPECT_TRUE(report.passed) << report.summary();
}

TEST(Decoder, ShapesAndGather) {
  Rng rng(44);
  auto dec = DecoderParams::init(kTinyDims, kTinyConfig, rng);
  auto seq = random_tensor({5, 8}, rng);
  EXPECT_EQ(decode_masked(seq, std::vector<std::size_t>{2}, dec).shape(), (Shape{1, 16}));

  // Oracle: run the block, project every row, then index.
  const Tensor full = linear(self_attention_unit(seq, dec.blocks[0]), dec.output);
  const std::vector<std::size_t> ends = {0, 4};
  auto logits = decode_masked(seq, ends, dec);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(logits.at(k, c), full.at(ends[k], c));
  EXPECT_THROW(decode_masked(seq, std::vector<std::size_t>{}, dec), UsageError);
}

TEST(MlmLoss, UniformAndSaturated) {
  Rng rng(45);
  const ModelDims dims{6, 5, 4, 3, 64};
  auto dec_at = DecoderParams::init(dims, kTinyConfig, rng);
  auto dec_it = DecoderParams::init(dims, kTinyConfig, rng);
  auto h1 = random_tensor({4, 8}, rng), h2 = random_tensor({4, 8}, rng);
  for (auto* d : {&dec_at, &dec_it}) {
    for (auto& w : d->output.weight.mutable_values()) w = 0.0;
    for (auto& b : d->output.bias.mutable_values()) b = 0.0;
  }
  const std::vector<std::size_t> pos = {0, 2}, tgt = {5, 5};
  EXPECT_NEAR(mlm_loss(h1, h2, pos, tgt, dec_at, dec_it).item(), 2.0 * std::log(64.0), 1e-12);
  for (auto* d : {&dec_at, &dec_it}) d->output.bias.mutable_values()[5] = 1e6;
  EXPECT_NEAR(mlm_loss(h1, h2, pos, tgt, dec_at, dec_it).item(), 0.0, 1e-12);
}

TEST(MlmLoss, FormulaOracleAndPairOrder) {
  Rng rng(46);
  auto dec_at = DecoderParams::init(kTinyDims, kTinyConfig, rng);
  auto dec_it = DecoderParams::init(kTinyDims, kTinyConfig, rng);
  auto h1 = random_tensor({5, 8}, rng), h2 = random_tensor({5, 8}, rng);
  const std::vector<std::size_t> pos = {0, 3, 4}, tgt = {2, 15, 7};
  auto ce = [&](const Tensor& h, const DecoderParams& d) {
    const Tensor full = linear(self_attention_unit(h, d.blocks[0]), d.output);
    double total = 0.0;
    for (std::size_t k = 0; k < pos.size(); ++k) {
      double z = 0.0;
      for (std::size_t c = 0; c < 16; ++c) z += std::exp(full.at(pos[k], c));
      total += std::log(z) - full.at(pos[k], tgt[k]);
    }
    return total / static_cast<double>(pos.size());
  };
  const double loss = mlm_loss(h1, h2, pos, tgt, dec_at, dec_it).item();
  EXPECT_NEAR(loss, ce(h1, dec_at) + ce(h2, dec_it), 1e-10);
  const std::vector<std::size_t> pos_r = {4, 0, 3}, tgt_r = {7, 2, 15};
  EXPECT_NEAR(mlm_loss(h1, h2, pos_r, tgt_r, dec_at, dec_it).item(), loss, 1e-12);
  // One disabled branch leaves only the other term.
  EXPECT_NEAR(mlm_loss(Tensor(), h2, pos, tgt, dec_at, dec_it).item(), ce(h2, dec_it), 1e-10);
}

TEST(MlmLoss, FreshDecodersNearTwoLogV) {
  const ModelDims dims;  // V = 64
  const ModelConfig cfg;
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    auto dec_at = DecoderParams::init(dims, cfg, rng);
    auto dec_it = DecoderParams::init(dims, cfg, rng);
    auto h1 = random_tensor({12, cfg.d_model}, rng), h2 = random_tensor({12, cfg.d_model}, rng);
    std::vector<std::size_t> pos = {1, 5, 9}, tgt(3);
    for (auto& t : tgt) t = rng() % 64;
    total += mlm_loss(h1, h2, pos, tgt, dec_at, dec_it).item();
  }
  EXPECT_NEAR(total / 100.0, 2.0 * std::log(64.0), 0.05 * 2.0 * std::log(64.0));
}

TEST(MlmLoss, LearnableOnFixedBatch) {
  Rng rng(47);
  auto model = Model::init(kTinyDims, kTinyConfig, 47);
  const DatasetHeader h = mmttt::testing::tiny_header();
  std::vector<FeatureRecord> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(mmttt::testing::random_record(h, rng, 6, 2, 3, 1));
  auto params = model.parameters();
  std::vector<Tensor> tensors;
  for (auto& p : params) tensors.push_back(p.tensor);
  AdamState adam(AdamOptions{.lr = 3e-3});
  auto batch_loss = [&] {
    std::vector<Tensor> losses;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Rng mask_rng(1000 + i);
      ForwardOptions fo{.mask_ratio = 0.3, .rng = &mask_rng, .compute_mlm = true, .compute_detection = false};
      losses.push_back(forward(model, batch[i].sample, fo).mlm_loss);
    }
    return scale(sum(concat_rows(losses)), 0.25);
  };
  const double before = batch_loss().item();
  for (int step = 0; step < 200; ++step) {
    model.zero_grad();
    backward(batch_loss());
    adam_step(tensors, adam);
  }
  const double after = batch_loss().item();
  EXPECT_LT(after, 0.5 * before) << before << " -> " << after;
}

TEST(Fusion, PoolSequence) {
  auto one = Tensor::from({1, 3}, {1, 2, 3});
  auto p = pool_sequence(one);
  EXPECT_EQ(std::vector<double>(p.values().begin(), p.values().end()), (std::vector<double>{1, 2, 3}));
  auto sym = Tensor::from({2, 2}, {0.5, -3, -0.5, 3});
  auto z = pool_sequence(sym);
  EXPECT_EQ(z.values()[0], 0.0);
  EXPECT_EQ(z.values()[1], 0.0);
  auto three = Tensor::from({3, 2}, {1, 2, 100, 100, 3, 4});
  const bool valid[] = {true, false, true};
  auto m = pool_sequence(three, valid);
  EXPECT_NEAR(m.values()[0], 2.0, 1e-15);
  EXPECT_NEAR(m.values()[1], 3.0, 1e-15);
}

TEST(Fusion, ZeroInputsZeroBiasesGiveZero) {
  Rng rng(48);
  auto fusion = FusionParams::init(kTinyDims, kTinyConfig, rng);
  std::vector<NamedTensor> v;
  fusion.collect(v);
  zero_biases(v);
  FusionInputs in{Tensor::zeros({1, 8}), Tensor::zeros({1, 8}), Tensor::zeros({1, 4}), Tensor::zeros({1, 6}),
                  Tensor::zeros({1, 6})};
  auto out = fuse(in, fusion);
  for (double x : out.values()) EXPECT_EQ(x, 0.0);
}

TEST(Fusion, SlotPermutationInvariance) {
  Rng rng(49);
  auto fusion = FusionParams::init(kTinyDims, kTinyConfig, rng);
  auto slots = random_tensor({5, 8}, rng);
  auto a = fuse_sequence(slots, fusion);
  auto b = fuse_sequence(gather_rows(slots, std::vector<std::size_t>{3, 1, 4, 0, 2}), fusion);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-12);
  EXPECT_THROW(fuse_sequence(random_tensor({4, 8}, rng), fusion), DimensionError);
}

TEST(Fusion, StepByStepOracle) {
  Rng rng(50);
  auto fusion = FusionParams::init(kTinyDims, kTinyConfig, rng);
  FusionInputs in{random_tensor({1, 8}, rng), random_tensor({1, 8}, rng), random_tensor({1, 4}, rng),
                  random_tensor({1, 6}, rng), random_tensor({1, 6}, rng)};
  const Tensor rows[] = {in.audio_text, in.visual_text, linear(in.motion, fusion.motion_proj),
                         linear(in.comments, fusion.comment_proj), linear(in.publisher, fusion.publisher_proj)};
  const Tensor seq = concat_rows(rows);
  const auto& u = fusion.layer;
  const Tensor normed = layer_norm(seq, u.attention_norm);
  const Tensor h = add(seq, multi_head_attention(normed, normed, u.attention));
  const Tensor out = add(h, feed_forward(layer_norm(h, u.ff_norm), u.ff));
  std::vector<double> expected(8, 0.0);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 8; ++c) expected[c] += out.at(r, c) / 5.0;
  auto got = fuse(in, fusion);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(got.values()[c], expected[c], 1e-10);
}

TEST(Classifier, Examples) {
  Rng rng(51);
  auto clf = ClassifierParams::init(kTinyConfig, rng);
  for (auto& w : clf.head.weight.mutable_values()) w = 0.0;
  for (auto& b : clf.head.bias.mutable_values()) b = 0.0;
  auto x = random_tensor({1, 8}, rng);
  EXPECT_DOUBLE_EQ(classify(x, clf).item(), 0.5);
  clf.head.bias.mutable_values()[kFake] = 1e6;
  EXPECT_NEAR(classify(x, clf).item(), 1.0, 1e-12);

  auto clf2 = ClassifierParams::init(kTinyConfig, rng);
  for (int trial = 0; trial < 20; ++trial) {
    auto f = random_tensor({1, 8}, rng, -3, 3);
    auto logits = linear(f, clf2.head);
    const double e0 = std::exp(logits.values()[0]), e1 = std::exp(logits.values()[1]);
    auto probs = class_probabilities(f, clf2);
    EXPECT_NEAR(probs.values()[1], e1 / (e0 + e1), 1e-12);
    EXPECT_NEAR(probs.values()[0] + probs.values()[1], 1.0, 1e-12);
    EXPECT_GT(probs.values()[1], 0.0);
    EXPECT_LT(probs.values()[1], 1.0);
  }
}

TEST(Classifier, FuseClassifyLossGradCheck) {
  Rng rng(52);
  auto fusion = FusionParams::init(kTinyDims, kTinyConfig, rng);
  auto clf = ClassifierParams::init(kTinyConfig, rng);
  FusionInputs in{random_tensor({1, 8}, rng, -1, 1, true), random_tensor({1, 8}, rng, -1, 1, true),
                  random_tensor({1, 4}, rng), random_tensor({1, 6}, rng), random_tensor({1, 6}, rng)};
  std::vector<NamedTensor> params = {{"x_at", in.audio_text}, {"x_it", in.visual_text}};
  fusion.collect(params);
  clf.collect(params);
  for (int label : {0, 1}) {
    auto report = grad_check([&] { return fnd_loss(classify(fuse(in, fusion), clf), label); }, params);
    EXPECT_TRUE(report.passed) << report.summary();
  }
}

TEST(Model, PartitionsCoverEveryParameterOnce) {
  auto model = Model::init(kTinyDims, kTinyConfig, 1);
  std::set<std::string> names;
  std::set<const void*> nodes;
  std::size_t total = 0;
  for (auto p : {Partition::kEncoder, Partition::kDecoder, Partition::kClassifier})
    for (auto& t : model.parameters(p)) {
      names.insert(t.name);
      nodes.insert(t.tensor.node_ptr().get());
      EXPECT_TRUE(t.tensor.requires_grad()) << t.name;
      total += t.tensor.numel();
    }
  EXPECT_EQ(names.size(), model.parameters().size());
  EXPECT_EQ(nodes.size(), model.parameters().size());
  EXPECT_EQ(total, model.parameter_count());
  for (auto& t : model.parameters(Partition::kEncoder)) EXPECT_EQ(t.name.rfind("encoder.", 0), 0u) << t.name;
  for (auto& t : model.parameters(Partition::kDecoder)) EXPECT_EQ(t.name.rfind("decoder_", 0), 0u) << t.name;
  bool has_mask = false;
  for (auto& t : model.parameters(Partition::kEncoder)) has_mask |= t.name == "encoder.mask_embedding";
  EXPECT_TRUE(has_mask);
}

TEST(Model, InitIsSeededAndValidated) {
  auto a = Model::init(kTinyDims, kTinyConfig, 3), b = Model::init(kTinyDims, kTinyConfig, 3);
  auto c = Model::init(kTinyDims, kTinyConfig, 4);
  for (auto p : {Partition::kEncoder, Partition::kDecoder, Partition::kClassifier}) {
    EXPECT_EQ(a.checksum(p), b.checksum(p));
    EXPECT_NE(a.checksum(p), c.checksum(p));
  }
  EXPECT_THROW(Model::init(kTinyDims, ModelConfig{10, 4, 8, 1}, 0), ConfigError);
  EXPECT_THROW(Model::init(kTinyDims, ModelConfig{8, 2, 8, 0}, 0), ConfigError);
}

TEST(Model, CloneSnapshotRestore) {
  auto model = Model::init(kTinyDims, kTinyConfig, 5);
  auto copy = model.clone();
  EXPECT_EQ(copy.checksum(Partition::kEncoder), model.checksum(Partition::kEncoder));
  const auto snap = model.snapshot(Partition::kEncoder);
  const auto before = model.checksum(Partition::kEncoder);
  model.encoder.mask_embedding.mutable_values()[0] += 1.0;
  EXPECT_NE(model.checksum(Partition::kEncoder), before);
  EXPECT_EQ(copy.checksum(Partition::kEncoder), before);
  model.restore(Partition::kEncoder, snap);
  EXPECT_EQ(model.checksum(Partition::kEncoder), before);
}

TEST(Model, CheckpointRoundTripIsByteStable) {
  auto model = Model::init(kTinyDims, ModelConfig{8, 2, 12, 2}, 6);
  const auto dir = fs::temp_directory_path() / ("mmttt_ckpt_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  save_checkpoint(dir / "a.ckpt", model);
  auto loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", loaded);
  EXPECT_EQ(file_bytes(dir / "a.ckpt"), file_bytes(dir / "b.ckpt"));
  EXPECT_EQ(loaded.parameter_count(), model.parameter_count());
  EXPECT_EQ(loaded.config, model.config);
  for (auto p : {Partition::kEncoder, Partition::kDecoder, Partition::kClassifier})
    EXPECT_EQ(loaded.checksum(p), model.checksum(p));

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), DataError);
  auto bytes = file_bytes(dir / "a.ckpt");
  bytes.resize(bytes.size() / 2);
  std::ofstream(dir / "short.ckpt", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), DataError);
  fs::remove_all(dir);
}

TEST(Forward, AblatedBranchesIgnoreTheirModality) {
  Rng rng(53);
  auto model = Model::init(kTinyDims, kTinyConfig, 7);
  const DatasetHeader h = mmttt::testing::tiny_header();
  auto rec = mmttt::testing::random_record(h, rng, 6, 3, 4, 2);
  auto run = [&](const VideoSample& s, Ablation ab) {
    Rng mask_rng(9);
    ForwardOptions fo{.mask_ratio = 0.3, .rng = &mask_rng, .compute_mlm = true, .ablation = ab};
    auto r = forward(model, s, fo);
    return std::make_pair(r.p_fake.item(), r.mlm_loss.item());
  };
  auto other_audio = rec.sample;
  other_audio.audio_feat = mmttt::testing::random_matrix(2, h.d_a, rng);
  auto other_frames = rec.sample;
  other_frames.keyframe_feat = mmttt::testing::random_matrix(3, h.d_i, rng);

  EXPECT_NE(run(rec.sample, {}), run(other_audio, {}));
  EXPECT_NE(run(rec.sample, {}), run(other_frames, {}));
  EXPECT_EQ(run(rec.sample, {.no_a = true}), run(other_audio, {.no_a = true}));
  EXPECT_EQ(run(rec.sample, {.no_v = true}), run(other_frames, {.no_v = true}));
  EXPECT_EQ(run(rec.sample, {.no_trans = true}), run(other_audio, {.no_trans = true}));
  EXPECT_EQ(run(rec.sample, {.no_trans = true}), run(other_frames, {.no_trans = true}));
}

TEST(Forward, PredictionPathDoesNotMask) {
  Rng rng(54);
  auto model = Model::init(kTinyDims, kTinyConfig, 8);
  auto rec = mmttt::testing::random_record(mmttt::testing::tiny_header(), rng, 5, 2, 2, 0);
  auto r = forward(model, rec.sample, ForwardOptions{});
  EXPECT_TRUE(r.mask_positions.empty());
  EXPECT_FALSE(r.mlm_loss.defined());
  EXPECT_GT(r.p_fake.item(), 0.0);
  EXPECT_LT(r.p_fake.item(), 1.0);
}
