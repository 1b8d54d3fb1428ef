#include "support/torch_doctest.hpp"

#include <cmath>
#include <filesystem>

#include "marionette/error.hpp"
#include "marionette/model.hpp"
#include "support/generators.hpp"

using namespace marionette;
using namespace marionette::model;
using torch::indexing::Slice;

namespace {

ModelConfig small_config() {
  auto cfg = ModelConfig::tiny(3, 4);
  cfg.max_duration = 160;
  cfg.seed = 7;
  return cfg;
}

Tensor random_poses(Rng& rng, int batch, int frames, int joints) {
  auto out = torch::empty({batch, frames, nn::pose_dim(joints)}, nn::options());
  for (int b = 0; b < batch; ++b) out[b].copy_(nn::clip_to_tensor(testing::random_clip(rng, frames, joints)));
  return out;
}

Tensor tags(std::initializer_list<int64_t> v) { return torch::tensor(std::vector<int64_t>(v)); }

// Direct evaluation of the sinusoid at one position.
double pe_value(double pos, int i, int dim) {
  const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
  return i % 2 == 0 ? std::sin(pos * rate) : std::cos(pos * rate);
}

}  // namespace

TEST_CASE("condition encoder") {
  auto model = make_model(small_config());
  torch::NoGradGuard guard;
  Rng rng(1);
  const auto ctx = random_poses(rng, 2, 6, 3);
  const auto a = model->encode_condition(ctx, tags({0, 1}), tags({1, 2}));
  const auto b = model->encode_condition(ctx, tags({0, 1}), tags({1, 2}));
  CHECK(torch::equal(a.mu, b.mu));
  CHECK(torch::equal(a.log_var, b.log_var));
  CHECK(a.mu.sizes() == std::vector<int64_t>{2, 16});
  CHECK(a.log_var.sizes() == std::vector<int64_t>{2, 16});

  const auto shuffled = ctx.index({Slice(), torch::tensor({5, 1, 3, 2, 4, 0})});
  const auto c = model->encode_condition(shuffled, tags({0, 1}), tags({1, 2}));
  CHECK_FALSE(torch::allclose(a.mu, c.mu));

  CHECK_THROWS_AS(model->encode_condition(ctx.slice(1, 0, 5), tags({0, 1}), tags({1, 2})), Error);
}

TEST_CASE("latent sampling") {
  LatentDistribution dist{torch::tensor({{0.5, -1.0, 2.0}}, nn::options()),
                          torch::tensor({{-60.0, -60.0, -60.0}}, nn::options())};
  const auto eps = latent_noise(1, 3, 5);
  CHECK(torch::allclose(MarioNetImpl::sample_latent(dist, SampleMode::Random, eps), dist.mu, 0, 1e-12));
  CHECK(torch::equal(MarioNetImpl::sample_latent(dist, SampleMode::Mean), dist.mu));

  // Monte-Carlo mean of 1e5 draws sits within 3 sigma / sqrt(n) of mu.
  const int n = 100000;
  LatentDistribution wide{torch::tensor({{0.5, -1.0, 2.0}}, nn::options()).expand({n, 3}),
                          torch::tensor({{0.0, std::log(4.0), std::log(0.25)}}, nn::options()).expand({n, 3})};
  const auto draws = MarioNetImpl::sample_latent(wide, SampleMode::Random, latent_noise(n, 3, 11));
  const auto mean = draws.mean(0);
  const std::vector<double> sigma = {1.0, 2.0, 0.5};
  const std::vector<double> mu = {0.5, -1.0, 2.0};
  for (int i = 0; i < 3; ++i) CHECK(std::abs(mean[i].item<double>() - mu[i]) < 3.0 * sigma[i] / std::sqrt(n));
}

TEST_CASE("reverse positional encoding") {
  const auto ten = reverse_positional_encoding(10, 16, 64);
  const auto fifty = reverse_positional_encoding(50, 16, 64);
  CHECK(torch::equal(ten[9], fifty[49]));
  const auto one = reverse_positional_encoding(1, 16, 64);
  REQUIRE(one.size(0) == 1);
  for (int i = 0; i < 16; ++i) CHECK(one[0][i].item<double>() == pe_value(0.0, i, 16));

  const int T = 13;
  const auto rev = reverse_positional_encoding(T, 16, 64);
  const auto fwd = nn::forward_positional_encoding(T, 16);
  for (int t = 1; t <= T; ++t) {
    CHECK(torch::allclose(rev[t - 1], fwd[T - t], 0, 1e-15));
    for (int i = 0; i < 16; ++i) CHECK(std::abs(rev[t - 1][i].item<double>() - pe_value(T - t, i, 16)) < 1e-12);
  }
  CHECK_THROWS_AS(reverse_positional_encoding(0, 16, 64), Error);
  CHECK_THROWS_AS(reverse_positional_encoding(65, 16, 64), Error);
}

TEST_CASE("time unrolling") {
  auto model = make_model(small_config());
  torch::NoGradGuard guard;
  Rng rng(2);
  const auto z = latent_noise(1, 16, 3);
  const auto path = torch::randn({1, 9, 2}, nn::options());
  const auto a = model->time_unroll(z, tags({0}), path);
  const auto b = model->time_unroll(z, tags({1}), path);
  CHECK(a.sizes() == std::vector<int64_t>{1, 9, 16});
  CHECK_FALSE(torch::allclose(a, b));
  CHECK_THROWS_AS(model->time_unroll(z, tags({0}), torch::zeros({1, 9, 3}, nn::options())), Error);

  auto cfg = small_config();
  cfg.use_trajectory = false;
  cfg.d_tilde = cfg.d_model;
  auto plain = make_model(cfg);
  CHECK(torch::equal(plain->time_unroll(z, tags({0}), path), plain->time_unroll(z, tags({0}), path * 5.0)));
}

TEST_CASE("property: decoder output t ignores inputs after t") {
  auto model = make_model(small_config());
  torch::NoGradGuard guard;
  Rng rng(3);
  for (int frames : {2, 8, 32}) {
    const auto inputs = random_poses(rng, 1, frames, 3);
    const auto controls = torch::randn({1, frames, 16}, nn::options());
    const auto base = model->decode_parallel(inputs, controls);
    CHECK(base.sizes() == inputs.sizes());
    for (int t = 0; t + 1 < frames; ++t) {
      auto perturbed = inputs.clone();
      perturbed.index_put_({0, Slice(t + 1)}, torch::randn({frames - t - 1, inputs.size(2)}, nn::options()) * 10.0);
      const auto out = model->decode_parallel(perturbed, controls);
      REQUIRE(torch::equal(out.index({0, Slice(0, t + 1)}), base.index({0, Slice(0, t + 1)})));
      REQUIRE_FALSE(torch::equal(out.index({0, t + 1}), base.index({0, t + 1})));
    }
  }
}

TEST_CASE("parallel and iterative decoding agree on the same history") {
  auto model = make_model(small_config());
  torch::NoGradGuard guard;
  Rng rng(4);
  const int frames = 12;
  const auto bop = random_poses(rng, 1, 1, 3).select(1, 0);
  const auto controls = torch::randn({1, frames, 16}, nn::options());
  const auto iterative = model->decode_iterative(model->embed_pose(bop), controls);
  // Feed the iterative predictions back as a teacher-forced history.
  const auto history = torch::cat({bop.unsqueeze(1), iterative.slice(1, 0, frames - 1)}, 1);
  const auto parallel = model->decode_parallel(history, controls);
  CHECK((parallel - iterative).abs().max().item<double>() < 1e-5);
}

TEST_CASE("padded batches match unpadded sequences") {
  auto model = make_model(small_config());
  torch::NoGradGuard guard;
  Rng rng(5);
  const auto inputs = random_poses(rng, 2, 10, 3);
  const auto z = latent_noise(2, 16, 1);
  const auto path = torch::randn({2, 10, 2}, nn::options());
  const auto controls = model->time_unroll(z, tags({0, 2}), path, {10, 6});
  const auto out = model->decode_parallel(inputs, controls, {10, 6});

  const auto alone_controls = model->time_unroll(z.slice(0, 1, 2), tags({2}), path.slice(0, 1, 2).slice(1, 0, 6));
  const auto alone = model->decode_parallel(inputs.slice(0, 1, 2).slice(1, 0, 6), alone_controls);
  CHECK((controls.slice(0, 1, 2).slice(1, 0, 6) - alone_controls).abs().max().item<double>() < 1e-12);
  CHECK((out.slice(0, 1, 2).slice(1, 0, 6) - alone).abs().max().item<double>() < 1e-12);
}

TEST_CASE("generate_action") {
  auto model = make_model(small_config());
  Rng rng(6);
  const auto context = testing::random_clip(rng, 6, 3);
  const auto one = generate_action(model, context, 1, 2, 1, {});
  CHECK(one.size() == 1);

  GenerateOptions opt;
  opt.seed = 99;
  const auto a = generate_action(model, context, 0, 1, 20, {}, opt);
  const auto b = generate_action(model, context, 0, 1, 20, {}, opt);
  CHECK(a == b);
  opt.mode = SampleMode::Random;
  CHECK(generate_action(model, context, 0, 1, 20, {}, opt) == generate_action(model, context, 0, 1, 20, {}, opt));

  for (int frames : {1, 30, 150}) {
    const auto clip = generate_action(model, context, 3, 0, frames, {}, opt);
    REQUIRE(static_cast<int>(clip.size()) == frames);
    CHECK_NOTHROW(clip.validate());
  }
  CHECK_THROWS_AS(generate_action(model, context.tail(5), 0, 1, 4, {}), Error);
  CHECK_THROWS_AS(generate_action(model, context, 0, 1, 4, std::vector<motion::Vec2>(3)), Error);
}

TEST_CASE("pose embedding is one shared linear map") {
  auto model = make_model(small_config());
  int matches = 0;
  for (const auto& p : model->named_parameters()) matches += p.key().find("pose_embedding") != std::string::npos;
  CHECK(matches == 2);  // weight and bias only

  torch::NoGradGuard guard;
  Rng rng(7);
  const auto ctx = random_poses(rng, 1, 6, 3);
  const auto controls = torch::randn({1, 4, 16}, nn::options());
  const auto inputs = random_poses(rng, 1, 4, 3);
  const auto enc_before = model->encode_condition(ctx, tags({0}), tags({1})).mu.clone();
  const auto dec_before = model->decode_parallel(inputs, controls).clone();
  auto& weight = model->named_parameters()["pose_embedding.weight"];
  weight.add_(0.1);
  CHECK_FALSE(torch::equal(enc_before, model->encode_condition(ctx, tags({0}), tags({1})).mu));
  CHECK_FALSE(torch::equal(dec_before, model->decode_parallel(inputs, controls)));

  model->named_parameters()["pose_embedding.bias"].zero_();
  const auto pose = inputs[0][0];
  CHECK(torch::allclose(model->embed_pose(pose * 2.5), model->embed_pose(pose) * 2.5, 1e-12, 1e-12));
  CHECK(model->embed_pose(pose).sizes() == std::vector<int64_t>{16});
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  auto model = make_model(small_config());
  const auto path = (std::filesystem::temp_directory_path() / "marionette_model_test.ckpt").string();
  save_checkpoint(model, {{"note", "test"}}, path);
  auto loaded = load_checkpoint(path);
  CHECK(loaded.meta["note"] == "test");
  const auto a = model->named_parameters();
  const auto b = loaded.model->named_parameters();
  REQUIRE(a.size() == b.size());
  for (const auto& p : a) CHECK(torch::equal(p.value(), b[p.key()]));

  Rng rng(8);
  const auto context = testing::random_clip(rng, 6, 3);
  CHECK(generate_action(model, context, 0, 1, 9, {}) == generate_action(loaded.model, context, 0, 1, 9, {}));
  CHECK_THROWS_AS(load_checkpoint(path + ".missing"), Error);
}
