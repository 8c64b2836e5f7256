#include "modest/synth_data.hpp"

#include <algorithm>
#include <random>
#include <vector>

#include <json.hpp>

#include "modest/rng.hpp"

namespace modest {

void validate(const SynthSpec& spec) {
  auto bad = [](const std::string& what) { fail(Errc::spec_invalid, what); };
  if (spec.n_pairs < 0) bad("n_pairs must be >= 0");
  if (spec.latent_dim < 2 || spec.dim_x < 2 || spec.dim_y < 2)
    bad("latent_dim, dim_x and dim_y must all be >= 2");
  if (spec.noise_scale < 0.0) bad("noise_scale must be >= 0");
  if (spec.partial_rate < 0.0 || spec.partial_rate > 1.0) bad("partial_rate must lie in [0, 1]");
  if (spec.mismatch_rate < 0.0 || spec.mismatch_rate > 1.0)
    bad("mismatch_rate must lie in [0, 1]");
  if (spec.partial_rate + spec.mismatch_rate > 1.0)
    bad("partial_rate + mismatch_rate must be <= 1");
  if (spec.partial_blend < 0.0 || spec.partial_blend > 1.0)
    bad("partial_blend must lie in [0, 1]");
}

namespace {

RowMatrixXd normalized_columns(RowMatrixXd p) {
  for (Index j = 0; j < p.cols(); ++j) {
    double norm = p.col(j).norm();
    if (norm > 0.0) p.col(j) /= norm;
  }
  return p;
}

}  // namespace

PairedDataset generate(const SynthSpec& spec) {
  validate(spec);
  const Index n = spec.n_pairs;
  const Index latent = spec.latent_dim;

  // Both modalities observe the latent through prefixes of one common
  // Gaussian matrix, each prefix renormalized to unit columns. Sharing the
  // directions is what makes the cross-modal paired cosine track match
  // quality; independent projections would decorrelate the two sides even
  // for perfectly matched pairs.
  RowMatrixXd common(std::max(spec.dim_x, spec.dim_y), latent);
  {
    std::mt19937_64 rng(derive_seed(spec.seed, "proj"));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index i = 0; i < common.rows(); ++i)
      for (Index j = 0; j < latent; ++j) common(i, j) = normal(rng);
  }
  const RowMatrixXd proj_x = normalized_columns(common.topRows(spec.dim_x));
  const RowMatrixXd proj_y = normalized_columns(common.topRows(spec.dim_y));

  // Deterministic-count partition: exact class sizes, positions shuffled.
  const Index n_partial = Index(spec.partial_rate * double(n));
  const Index n_mismatch = Index(spec.mismatch_rate * double(n));
  std::vector<Quality> labels(std::size_t(n), Quality::matched);
  {
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[std::size_t(i)] = i;
    std::mt19937_64 rng(derive_seed(spec.seed, "labels"));
    std::shuffle(order.begin(), order.end(), rng);
    for (Index k = 0; k < n_partial; ++k) labels[std::size_t(order[std::size_t(k)])] = Quality::partial;
    for (Index k = 0; k < n_mismatch; ++k)
      labels[std::size_t(order[std::size_t(n_partial + k)])] = Quality::mismatched;
  }

  std::mt19937_64 latent_rng(derive_seed(spec.seed, "latent"));
  std::mt19937_64 distract_rng(derive_seed(spec.seed, "distract"));
  std::mt19937_64 noise_rng(derive_seed(spec.seed, "noise"));
  std::normal_distribution<double> normal(0.0, 1.0);

  auto draw_latent = [&](std::mt19937_64& rng) {
    VectorXd u(latent);
    for (Index k = 0; k < latent; ++k) u(k) = normal(rng);
    return u;
  };
  auto observe = [&](const RowMatrixXd& proj, const VectorXd& u, Index dim) {
    VectorXd v = proj * u;
    if (spec.noise_scale > 0.0)
      for (Index k = 0; k < dim; ++k) v(k) += spec.noise_scale * normal(noise_rng);
    return v;
  };

  PairedDataset ds;
  ds.x.count = n;
  ds.x.dim = spec.dim_x;
  ds.x.data.resize(n, spec.dim_x);
  ds.y.count = n;
  ds.y.dim = spec.dim_y;
  ds.y.data.resize(n, spec.dim_y);
  ds.quality = labels;

  const double b = spec.partial_blend;
  for (Index i = 0; i < n; ++i) {
    const VectorXd u = draw_latent(latent_rng);
    ds.x.data.row(i) = observe(proj_x, u, spec.dim_x).transpose().cast<float>();
    VectorXd y_latent;
    switch (labels[std::size_t(i)]) {
      case Quality::matched:
        y_latent = u;
        break;
      case Quality::partial:
        y_latent = (1.0 - b) * u + b * draw_latent(distract_rng);
        break;
      case Quality::mismatched:
        y_latent = draw_latent(distract_rng);
        break;
    }
    ds.y.data.row(i) = observe(proj_y, y_latent, spec.dim_y).transpose().cast<float>();
  }
  return ds;
}

SynthSummary describe(const PairedDataset& ds) {
  validate_pairing(ds);
  if (ds.x.count > 0 && ds.quality.empty())
    fail(Errc::missing_labels, "describe requires quality labels");

  SynthSummary s;
  std::array<double, 3> sums{};
  for (Index i = 0; i < ds.x.count; ++i) {
    const auto idx = std::size_t(ds.quality[std::size_t(i)]);
    s.counts[idx] += 1;
    sums[idx] += paired_cosine(ds, i);
  }
  for (std::size_t k = 0; k < 3; ++k)
    s.mean_cosine[k] = s.counts[k] > 0 ? sums[k] / double(s.counts[k]) : 0.0;
  return s;
}

SynthSpec synth_spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::spec_invalid, std::string("bad synth spec JSON: ") + e.what());
  }
  SynthSpec s;
  try {
    s.n_pairs = j.value("n_pairs", std::int64_t(s.n_pairs));
    s.latent_dim = j.value("latent_dim", std::int64_t(s.latent_dim));
    s.dim_x = j.value("dim_x", std::int64_t(s.dim_x));
    s.dim_y = j.value("dim_y", std::int64_t(s.dim_y));
    s.noise_scale = j.value("noise_scale", s.noise_scale);
    s.partial_rate = j.value("partial_rate", s.partial_rate);
    s.partial_blend = j.value("partial_blend", s.partial_blend);
    s.mismatch_rate = j.value("mismatch_rate", s.mismatch_rate);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::spec_invalid, std::string("bad synth spec field: ") + e.what());
  }
  validate(s);
  return s;
}

std::string synth_spec_to_json(const SynthSpec& spec) {
  nlohmann::json j;
  j["n_pairs"] = spec.n_pairs;
  j["latent_dim"] = spec.latent_dim;
  j["dim_x"] = spec.dim_x;
  j["dim_y"] = spec.dim_y;
  j["noise_scale"] = spec.noise_scale;
  j["partial_rate"] = spec.partial_rate;
  j["partial_blend"] = spec.partial_blend;
  j["mismatch_rate"] = spec.mismatch_rate;
  j["seed"] = spec.seed;
  return j.dump(2) + "\n";
}

}  // namespace modest
