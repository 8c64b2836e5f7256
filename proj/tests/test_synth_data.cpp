#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <random>
#include <vector>

#include "modest/synth_data.hpp"
#include "oracle_helpers.hpp"

using namespace modest;

TEST_CASE("generation is bitwise deterministic per seed") {
  SynthSpec spec;
  spec.n_pairs = 50;
  spec.latent_dim = 8;
  spec.dim_x = 16;
  spec.dim_y = 12;
  spec.noise_scale = 0.05;
  spec.partial_rate = 0.2;
  spec.mismatch_rate = 0.1;
  spec.seed = 42;

  const PairedDataset a = generate(spec);
  const PairedDataset b = generate(spec);
  CHECK(std::memcmp(a.x.data.data(), b.x.data.data(),
                    sizeof(float) * std::size_t(a.x.data.size())) == 0);
  CHECK(std::memcmp(a.y.data.data(), b.y.data.data(),
                    sizeof(float) * std::size_t(a.y.data.size())) == 0);
  CHECK(a.quality == b.quality);

  spec.seed = 43;
  const PairedDataset c = generate(spec);
  CHECK(std::memcmp(a.x.data.data(), c.x.data.data(),
                    sizeof(float) * std::size_t(a.x.data.size())) != 0);
}

TEST_CASE("label partition is exact-count with the remainder matched") {
  SynthSpec spec;
  spec.n_pairs = 100;
  spec.latent_dim = 4;
  spec.dim_x = 8;
  spec.dim_y = 8;
  spec.partial_rate = 0.3;
  spec.mismatch_rate = 0.2;
  spec.seed = 7;
  const SynthSummary s = describe(generate(spec));
  CHECK(s.counts[0] == 50);  // matched
  CHECK(s.counts[1] == 30);  // partial
  CHECK(s.counts[2] == 20);  // mismatched

  spec.n_pairs = 97;
  spec.partial_rate = 0.25;
  spec.mismatch_rate = 0.1;
  const SynthSummary t = describe(generate(spec));
  CHECK(t.counts[1] == Index(0.25 * 97));  // 24
  CHECK(t.counts[2] == Index(0.1 * 97));   // 9
  CHECK(t.counts[0] == 97 - 24 - 9);
}

TEST_CASE("noiseless blend-0.5 partials sit strictly between matched and mismatched") {
  SynthSpec spec;
  spec.n_pairs = 300;
  spec.latent_dim = 8;
  spec.dim_x = 24;
  spec.dim_y = 20;
  spec.noise_scale = 0.0;
  spec.partial_rate = 0.3;
  spec.partial_blend = 0.5;
  spec.mismatch_rate = 0.3;
  spec.seed = 11;
  const SynthSummary s = describe(generate(spec));
  CHECK(s.mean_cosine[0] > s.mean_cosine[1]);
  CHECK(s.mean_cosine[1] > s.mean_cosine[2]);
}

TEST_CASE("label ordering holds across seeds in the documented regime") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (double blend : {0.3, 0.7}) {
      SynthSpec spec;
      spec.n_pairs = 400;
      spec.latent_dim = 8;
      spec.dim_x = 32;
      spec.dim_y = 24;
      spec.noise_scale = kSeparabilityNoiseThreshold;
      spec.partial_rate = 0.3;
      spec.partial_blend = blend;
      spec.mismatch_rate = 0.2;
      spec.seed = seed;
      const SynthSummary s = describe(generate(spec));
      CHECK(s.mean_cosine[0] > s.mean_cosine[1]);
      CHECK(s.mean_cosine[1] > s.mean_cosine[2]);
    }
  }
}

TEST_CASE("empty dataset describes as zero counts") {
  SynthSpec spec;
  spec.n_pairs = 0;
  spec.latent_dim = 4;
  spec.dim_x = 8;
  spec.dim_y = 8;
  const SynthSummary s = describe(generate(spec));
  CHECK(s.counts[0] == 0);
  CHECK(s.counts[1] == 0);
  CHECK(s.counts[2] == 0);
}

TEST_CASE("describe requires quality labels") {
  SynthSpec spec;
  spec.n_pairs = 4;
  spec.latent_dim = 4;
  spec.dim_x = 8;
  spec.dim_y = 8;
  PairedDataset ds = generate(spec);
  ds.quality.clear();
  CHECK_THROWS_AS(describe(ds), Error);
}

TEST_CASE("clean generation is exactly linearly invertible") {
  // With zero noise and no corruption, a least-squares fit X -> Y must make
  // retrieval perfect: the relation Y = X * M holds exactly.
  SynthSpec spec;
  spec.n_pairs = 200;
  spec.latent_dim = 16;
  spec.dim_x = 64;
  spec.dim_y = 48;
  spec.noise_scale = 0.0;
  spec.seed = 2025;
  const PairedDataset ds = generate(spec);

  const RowMatrixXd x = ds.x.data.cast<double>();
  const RowMatrixXd y = ds.y.data.cast<double>();
  const RowMatrixXd m =
      x.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(y);
  const RowMatrixXd predicted = x * m;

  std::vector<Index> truth(200);
  for (Index i = 0; i < 200; ++i) truth[std::size_t(i)] = i;
  CHECK(oracle::brute_force_recall(predicted, y, truth, 1) == 1.0);
  CHECK((predicted - y).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("full mismatch makes paired cosines look unpaired") {
  SynthSpec spec;
  spec.n_pairs = 2000;
  spec.latent_dim = 8;
  spec.dim_x = 24;
  spec.dim_y = 20;
  spec.noise_scale = 0.05;
  spec.mismatch_rate = 1.0;
  spec.seed = 77;
  const PairedDataset ds = generate(spec);
  for (Quality q : ds.quality) CHECK(q == Quality::mismatched);

  auto cosine = [&](Index i, Index j) {
    const VectorXd a = ds.x.data.row(i).cast<double>().transpose();
    const VectorXd b = ds.y.data.row(j).cast<double>().transpose();
    return a.dot(b) / (a.norm() * b.norm());
  };
  std::vector<double> paired, unpaired;
  std::mt19937_64 rng(99);
  for (Index i = 0; i < 2000; ++i) {
    paired.push_back(cosine(i, i));
    Index j = Index(rng() % 2000);
    if (j == i) j = (j + 1) % 2000;
    unpaired.push_back(cosine(i, j));
  }
  // Welch two-sample test at the 0.01 level.
  CHECK(std::abs(oracle::welch_t(paired, unpaired)) < 2.576);
}

TEST_CASE("spec json round trip and validation") {
  SynthSpec spec;
  spec.n_pairs = 10;
  spec.latent_dim = 4;
  spec.dim_x = 8;
  spec.dim_y = 6;
  spec.noise_scale = 0.02;
  spec.partial_rate = 0.5;
  spec.mismatch_rate = 0.25;
  spec.seed = 5;
  const SynthSpec back = synth_spec_from_json(synth_spec_to_json(spec));
  CHECK(back.n_pairs == spec.n_pairs);
  CHECK(back.dim_y == spec.dim_y);
  CHECK(back.partial_rate == spec.partial_rate);
  CHECK(back.seed == spec.seed);

  CHECK_THROWS_AS(synth_spec_from_json("{not json"), Error);

  SynthSpec bad = spec;
  bad.partial_rate = 0.8;
  bad.mismatch_rate = 0.3;  // sums above 1
  CHECK_THROWS_AS(validate(bad), Error);
  bad = spec;
  bad.latent_dim = 1;
  CHECK_THROWS_AS(validate(bad), Error);
}
