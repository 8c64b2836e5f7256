#include "modest/eval_metrics.hpp"

#include <sstream>

#include <json.hpp>

namespace modest {

std::pair<RetrievalReport, RetrievalReport> retrieval_report(
    const PairedDataset& ds, const AdapterNetwork<float>& adapter_x,
    const AdapterNetwork<float>& adapter_y) {
  validate_pairing(ds);
  if (ds.x.dim != adapter_x.config.in_dim || ds.y.dim != adapter_y.config.in_dim)
    fail(Errc::dim_mismatch, "dataset dims do not match adapter in_dims");
  if (adapter_x.config.out_dim != adapter_y.config.out_dim)
    fail(Errc::dim_mismatch, "adapters project to different output dims");

  const RowMatrixXf ax = forward(adapter_x, ds.x.data).first;
  const RowMatrixXf ay = forward(adapter_y, ds.y.data).first;

  std::vector<Index> truth(std::size_t(ds.x.count));
  for (Index i = 0; i < ds.x.count; ++i) truth[std::size_t(i)] = i;

  RetrievalReport t2i{"text_to_image", {}, ds.x.count};
  RetrievalReport i2t{"image_to_text", {}, ds.x.count};
  for (int k : {1, 5, 10}) {
    t2i.r_at[k] = recall_at_k(ay, ax, truth, k);
    i2t.r_at[k] = recall_at_k(ax, ay, truth, k);
  }
  return {t2i, i2t};
}

SimilarityHistogram similarity_histogram(const PairedDataset& ds, double tau) {
  validate_pairing(ds);
  if (tau <= 0.0) fail(Errc::non_positive_temperature, "tau must be positive");
  SimilarityHistogram h;
  double sum = 0.0;
  for (Index i = 0; i < ds.x.count; ++i) {
    const double score = paired_cosine(ds, i) / tau;
    sum += score;
    const int bin = histogram_bin_index(score);
    if (bin < 0)
      ++h.underflow;
    else if (bin >= 9)
      ++h.overflow;
    else
      ++h.counts[std::size_t(bin)];
  }
  h.mean = ds.x.count > 0 ? sum / double(ds.x.count) : 0.0;
  return h;
}

ConfidenceSummary confidence_diagnostics(const AlignmentDistribution& p) {
  ConfidenceSummary s;
  if (p.n == 0) return s;
  const VectorXd ent = row_entropy(p);
  s.mean_entropy = ent.mean();
  s.min_entropy = ent.minCoeff();
  s.mean_diagonal = p.probs.diagonal().mean();
  s.max_diagonal = p.probs.diagonal().maxCoeff();
  s.mean_max_prob = p.probs.rowwise().maxCoeff().mean();
  return s;
}

namespace {

nlohmann::json report_to_json(const RetrievalReport& r) {
  nlohmann::json j;
  j["direction"] = r.direction;
  j["n_queries"] = r.n_queries;
  nlohmann::json recalls;
  for (const auto& [k, v] : r.r_at) recalls["R@" + std::to_string(k)] = v;
  j["recall"] = recalls;
  return j;
}

}  // namespace

std::string retrieval_reports_to_json(const RetrievalReport& a, const RetrievalReport& b) {
  nlohmann::json j;
  j["reports"] = {report_to_json(a), report_to_json(b)};
  return j.dump(2) + "\n";
}

std::string retrieval_reports_to_csv(const RetrievalReport& a, const RetrievalReport& b) {
  std::ostringstream out;
  out << "direction,K,recall\n";
  for (const auto* r : {&a, &b})
    for (const auto& [k, v] : r->r_at) out << r->direction << ',' << k << ',' << v << '\n';
  return out.str();
}

std::string histogram_to_csv(const SimilarityHistogram& h) {
  std::ostringstream out;
  out << "bin_low,bin_high,count\n";
  out << "-inf," << h.bin_edges.front() << ',' << h.underflow << '\n';
  for (std::size_t b = 0; b < h.counts.size(); ++b)
    out << h.bin_edges[b] << ',' << h.bin_edges[b + 1] << ',' << h.counts[b] << '\n';
  out << h.bin_edges.back() << ",inf," << h.overflow << '\n';
  return out.str();
}

}  // namespace modest
