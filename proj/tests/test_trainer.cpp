#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>

#include "modest/eval_metrics.hpp"
#include "modest/synth_data.hpp"
#include "modest/trainer.hpp"

using namespace modest;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "modest_trainer_test";
  fs::create_directories(dir);
  return dir;
}

PairedDataset clean_dataset(Index n, std::uint64_t seed) {
  SynthSpec spec;
  spec.n_pairs = n;
  spec.latent_dim = 8;
  spec.dim_x = 16;
  spec.dim_y = 12;
  spec.noise_scale = 0.0;
  spec.seed = seed;
  return generate(spec);
}

RunConfig small_config(const PairedDataset& ds, Index batch, Index epochs) {
  RunConfig c;
  c.batch_size = batch;
  c.epochs = epochs;
  c.adapter_x = {ds.x.dim, 1, 2, 16, 11};
  c.adapter_y = {ds.y.dim, 1, 2, 16, 12};
  c.master_seed = 99;
  return c;
}

bool networks_bitwise_equal(const AdapterNetwork<float>& a, const AdapterNetwork<float>& b) {
  bool equal = true;
  for_each_tensor_pair(a, b, [&](const auto& ta, const auto& tb) {
    if (ta.size() != tb.size() ||
        std::memcmp(ta.data(), tb.data(), sizeof(float) * std::size_t(ta.size())) != 0)
      equal = false;
  });
  return equal;
}

bool logs_equal(const RunLog& a, const RunLog& b) {
  return run_log_to_jsonl(a) == run_log_to_jsonl(b);
}

}  // namespace

TEST_CASE("make_epoch_batches") {
  SUBCASE("drops the remainder") {
    const auto batches = make_epoch_batches(25, 10, 1);
    REQUIRE(batches.size() == 2);
    CHECK(batches[0].size() == 10);
    CHECK(batches[1].size() == 10);
  }
  SUBCASE("single full batch is a permutation") {
    const auto batches = make_epoch_batches(10, 10, 2);
    REQUIRE(batches.size() == 1);
    std::vector<Index> sorted = batches[0];
    std::sort(sorted.begin(), sorted.end());
    for (Index i = 0; i < 10; ++i) CHECK(sorted[std::size_t(i)] == i);
  }
  SUBCASE("deterministic per seed") {
    CHECK(make_epoch_batches(100, 10, 7) == make_epoch_batches(100, 10, 7));
    CHECK(make_epoch_batches(100, 10, 7) != make_epoch_batches(100, 10, 8));
  }
  SUBCASE("dataset smaller than batch") {
    CHECK_THROWS_AS(make_epoch_batches(5, 10, 0), Error);
  }
}

TEST_CASE("run config json round trip and hashing") {
  RunConfig c;
  c.batch_size = 128;
  c.epochs = 17;
  c.sigma = 0.02;
  c.alpha_schedule.kind = AlphaScheduleKind::dynamic;
  c.loss_mode = LossMode::rp_only;
  c.similarity = Similarity::dot;
  c.rp_position = RpPosition::post_adapter;
  c.adapter_x = {16, 2, 4, 32, 5};
  c.adapter_y = {12, 2, 4, 32, 6};
  c.schedule = {1e-6, 1e-3, 10, 200};
  c.master_seed = 12345;

  const RunConfig back = run_config_from_json(run_config_to_json(c));
  CHECK(run_config_to_json(back) == run_config_to_json(c));
  CHECK(run_config_hash(back) == run_config_hash(c));

  RunConfig other = c;
  other.alpha = c.alpha + 0.01;
  CHECK(run_config_hash(other) != run_config_hash(c));

  CHECK_THROWS_AS(run_config_from_json("{bad"), Error);
}

TEST_CASE("training reduces the loss on clean separable data") {
  const PairedDataset ds = clean_dataset(64, 3);
  RunConfig c = small_config(ds, 32, 2);
  c.loss_mode = LossMode::infonce;
  auto [adapters, log] = train(c, ds);
  REQUIRE(log.epochs.size() == 2);
  CHECK(log.epochs.back().mean_loss < log.epochs.front().mean_loss);
}

TEST_CASE("ccl with sigma=0 alpha=0 lambda=0 reproduces the infonce run exactly") {
  const PairedDataset ds = clean_dataset(48, 5);
  RunConfig base = small_config(ds, 24, 3);
  base.sigma = 0.0;
  base.alpha = 0.0;
  base.lambda = 0.0;
  base.loss_mode = LossMode::ccl;
  RunConfig nce = base;
  nce.loss_mode = LossMode::infonce;

  auto [a1, log1] = train(base, ds);
  auto [a2, log2] = train(nce, ds);
  CHECK(logs_equal(log1, log2));
  CHECK(networks_bitwise_equal(a1.x, a2.x));
  CHECK(networks_bitwise_equal(a1.y, a2.y));
}

TEST_CASE("ablation modes equal the ccl runs with the matching knob zeroed") {
  const PairedDataset ds = clean_dataset(48, 6);
  RunConfig base = small_config(ds, 24, 3);
  base.sigma = 0.02;
  base.alpha = 0.1;

  SUBCASE("rp_only == ccl with alpha 0") {
    RunConfig rp = base;
    rp.loss_mode = LossMode::rp_only;
    RunConfig ccl_a0 = base;
    ccl_a0.alpha = 0.0;  // note: config hash differs, logs must not
    auto [ar, lr_] = train(rp, ds);
    auto [ac, lc] = train(ccl_a0, ds);
    CHECK(logs_equal(lr_, lc));
    CHECK(networks_bitwise_equal(ar.x, ac.x));
  }
  SUBCASE("kl_only == ccl with sigma 0") {
    RunConfig kl = base;
    kl.loss_mode = LossMode::kl_only;
    RunConfig ccl_s0 = base;
    ccl_s0.sigma = 0.0;
    auto [ak, lk] = train(kl, ds);
    auto [ac, lc] = train(ccl_s0, ds);
    CHECK(logs_equal(lk, lc));
    CHECK(networks_bitwise_equal(ak.x, ac.x));
  }
}

TEST_CASE("identical configs train to bitwise identical checkpoints") {
  const PairedDataset ds = clean_dataset(40, 7);
  RunConfig c = small_config(ds, 20, 3);
  c.sigma = 0.01;
  c.use_fusemix = true;

  Trainer t1(c, ds);
  while (!t1.done()) t1.run_epoch();
  Trainer t2(c, ds);
  while (!t2.done()) t2.run_epoch();

  const auto p1 = temp_dir() / "ck1.mack";
  const auto p2 = temp_dir() / "ck2.mack";
  save_checkpoint(t1.checkpoint(), p1);
  save_checkpoint(t2.checkpoint(), p2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(logs_equal(t1.log(), t2.log()));
}

TEST_CASE("checkpoint round trip preserves every field") {
  const PairedDataset ds = clean_dataset(40, 8);
  RunConfig c = small_config(ds, 20, 2);
  Trainer t(c, ds);
  t.run_epoch();
  const Checkpoint ck = t.checkpoint();
  const auto path = temp_dir() / "roundtrip.mack";
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.epoch == ck.epoch);
  CHECK(back.global_step == ck.global_step);
  CHECK(back.config_hash == ck.config_hash);
  CHECK(back.master_seed == ck.master_seed);
  CHECK(networks_bitwise_equal(back.adapter_x, ck.adapter_x));
  CHECK(networks_bitwise_equal(back.adapter_y, ck.adapter_y));
  CHECK(back.opt_x.step == ck.opt_x.step);
  CHECK(std::memcmp(back.opt_x.second_moment.data(), ck.opt_x.second_moment.data(),
                    sizeof(float) * std::size_t(ck.opt_x.second_moment.size())) == 0);
}

TEST_CASE("resuming a mid-run checkpoint reproduces the uninterrupted run") {
  const PairedDataset ds = clean_dataset(40, 9);
  RunConfig c = small_config(ds, 20, 6);
  c.sigma = 0.01;

  Trainer full(c, ds);
  while (!full.done()) full.run_epoch();

  Trainer head(c, ds);
  for (int e = 0; e < 3; ++e) head.run_epoch();
  const auto path = temp_dir() / "mid.mack";
  save_checkpoint(head.checkpoint(), path);

  Trainer resumed(c, ds, load_checkpoint(path));
  CHECK(resumed.next_epoch() == 3);
  while (!resumed.done()) resumed.run_epoch();

  CHECK(networks_bitwise_equal(resumed.adapter_x(), full.adapter_x()));
  CHECK(networks_bitwise_equal(resumed.adapter_y(), full.adapter_y()));

  // the resumed log is exactly the suffix of the uninterrupted log
  REQUIRE(resumed.log().epochs.size() == 3);
  for (int i = 0; i < 3; ++i) {
    const auto& a = resumed.log().epochs[std::size_t(i)];
    const auto& b = full.log().epochs[std::size_t(i + 3)];
    CHECK(a.epoch == b.epoch);
    CHECK(a.mean_loss == b.mean_loss);
    CHECK(a.mean_entropy == b.mean_entropy);
    CHECK(a.mean_grad_l1 == b.mean_grad_l1);
    CHECK(a.lr == b.lr);
  }
}

TEST_CASE("resume with an altered config is refused") {
  const PairedDataset ds = clean_dataset(40, 10);
  RunConfig c = small_config(ds, 20, 4);
  Trainer t(c, ds);
  t.run_epoch();
  const auto path = temp_dir() / "altered.mack";
  save_checkpoint(t.checkpoint(), path);

  RunConfig changed = c;
  changed.alpha = 0.2;
  try {
    Trainer resumed(changed, ds, load_checkpoint(path));
    FAIL("expected ConfigHashMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::config_hash_mismatch);
  }
}

TEST_CASE("mismatched adapter dims are rejected") {
  const PairedDataset ds = clean_dataset(40, 11);
  RunConfig c = small_config(ds, 20, 1);
  c.adapter_x.in_dim = ds.x.dim + 1;
  CHECK_THROWS_AS(Trainer(c, ds), Error);
}

TEST_CASE("exploding updates abort with a located non-finite loss") {
  const PairedDataset ds = clean_dataset(40, 12);
  RunConfig c = small_config(ds, 20, 50);
  c.schedule = {1e8, 1e9, 1, 100};  // absurd learning rate
  Trainer t(c, ds);
  try {
    while (!t.done()) t.run_epoch();
    FAIL("expected a failure");
  } catch (const Error& e) {
    CHECK((e.code() == Errc::non_finite_loss || e.code() == Errc::zero_row));
    if (e.code() == Errc::non_finite_loss)
      CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("adapters trained to convergence retrieve perfectly on clean pairs") {
  const PairedDataset ds = clean_dataset(100, 13);
  RunConfig c = small_config(ds, 50, 300);
  c.adapter_x.out_dim = 32;
  c.adapter_y.out_dim = 32;
  c.schedule = {1e-6, 3e-3, 0, 0};
  c.loss_mode = LossMode::infonce;
  auto [adapters, log] = train(c, ds);
  auto [t2i, i2t] = retrieval_report(ds, adapters.x, adapters.y);
  CHECK(t2i.r_at.at(1) == 1.0);
  CHECK(i2t.r_at.at(1) == 1.0);
}

TEST_CASE("grid search") {
  const PairedDataset full = clean_dataset(60, 14);
  std::vector<Index> train_rows, eval_rows;
  for (Index i = 0; i < 40; ++i) train_rows.push_back(i);
  for (Index i = 40; i < 60; ++i) eval_rows.push_back(i);
  const PairedDataset train_ds = subset(full, train_rows);
  const PairedDataset eval_ds = subset(full, eval_rows);

  RunConfig base = small_config(train_ds, 20, 3);

  SUBCASE("a 1x1 grid equals a direct train+eval") {
    const double sigma = 0.01, alpha = 0.1;
    auto cells = grid_search(base, std::vector<double>{sigma}, std::vector<double>{alpha},
                             train_ds, eval_ds);
    REQUIRE(cells.size() == 1);
    RunConfig direct = base;
    direct.sigma = sigma;
    direct.alpha = alpha;
    auto [adapters, log] = train(direct, train_ds);
    auto [t2i, i2t] = retrieval_report(eval_ds, adapters.x, adapters.y);
    CHECK(cells[0].t2i.r_at.at(1) == t2i.r_at.at(1));
    CHECK(cells[0].i2t.r_at.at(1) == i2t.r_at.at(1));
  }
  SUBCASE("grid rows cover the cross product, sorted by mean R@1") {
    auto cells = grid_search(base, std::vector<double>{0.0, 0.01}, std::vector<double>{0.0, 0.1},
                             train_ds, eval_ds);
    REQUIRE(cells.size() == 4);
    for (std::size_t i = 1; i < cells.size(); ++i)
      CHECK(cells[i - 1].mean_r1 >= cells[i].mean_r1);
    const std::string csv = grid_to_csv(cells);
    CHECK(csv.find("sigma,alpha,r1_text_to_image,r1_image_to_text,mean_r1") == 0);
  }
  SUBCASE("empty grids are rejected") {
    CHECK_THROWS_AS(
        grid_search(base, std::vector<double>{}, std::vector<double>{0.1}, train_ds, eval_ds),
        Error);
  }
}

TEST_CASE("run log serialization splits metrics from timing") {
  RunLog log;
  log.epochs.push_back({0, 1.5, 2.0, 0.5, 0.1, 1e-4, 3.25});
  log.epochs.push_back({1, 1.2, 2.1, 0.4, 0.1, 2e-4, 3.5});
  const std::string metrics = run_log_to_jsonl(log);
  CHECK(metrics.find("wall_seconds") == std::string::npos);
  CHECK(metrics.find("\"mean_loss\":1.5") != std::string::npos);
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 2);
  const std::string timing = run_timing_to_jsonl(log);
  CHECK(timing.find("wall_seconds") != std::string::npos);
}
