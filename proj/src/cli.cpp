#include "modest/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "modest/embedding_store.hpp"
#include "modest/eval_metrics.hpp"
#include "modest/rng.hpp"
#include "modest/synth_data.hpp"
#include "modest/trainer.hpp"

namespace modest::cli {
namespace {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_failure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) fail(Errc::io_failure, "cannot open " + path.string() + " for writing");
  out << content;
  out.flush();
  if (!out) fail(Errc::io_failure, "write error on " + path.string());
}

PairedDataset load_dataset(const fs::path& dir) {
  PairedDataset ds;
  ds.x = load_embeddings(dir / "x.maln");
  ds.y = load_embeddings(dir / "y.maln");
  if (fs::exists(dir / "quality.txt")) ds.quality = load_quality(dir / "quality.txt");
  validate_pairing(ds);
  return ds;
}

void write_dataset(const PairedDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  save_embeddings(ds.x, dir / "x.maln");
  save_embeddings(ds.y, dir / "y.maln");
  if (!ds.quality.empty()) save_quality(ds.quality, dir / "quality.txt");
}

std::vector<int> parse_k_list(const std::string& text) {
  std::vector<int> ks;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    ks.push_back(std::stoi(tok));
  }
  if (ks.empty()) fail(Errc::invalid_argument, "--k list is empty");
  return ks;
}

std::vector<double> parse_double_list(const std::string& text, const char* flag) {
  std::vector<double> vs;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    vs.push_back(std::stod(tok));
  }
  if (vs.empty()) fail(Errc::invalid_argument, std::string(flag) + " list is empty");
  return vs;
}

// Indices of `n_eval` matched-quality rows (seeded choice); used to carve a
// clean held-out split for grid search.
std::vector<Index> pick_clean_holdout(const PairedDataset& ds, Index n_eval, std::uint64_t seed) {
  if (ds.quality.empty()) fail(Errc::missing_labels, "holdout split needs quality labels");
  std::vector<Index> matched;
  for (Index i = 0; i < ds.x.count; ++i)
    if (ds.quality[std::size_t(i)] == Quality::matched) matched.push_back(i);
  if (Index(matched.size()) < n_eval)
    fail(Errc::invalid_argument, "not enough matched rows for the requested holdout");
  std::mt19937_64 rng(derive_seed(seed, "holdout"));
  std::shuffle(matched.begin(), matched.end(), rng);
  matched.resize(std::size_t(n_eval));
  std::sort(matched.begin(), matched.end());
  return matched;
}

struct TrainFlags {
  std::string config_path, data_dir, out_dir;
  std::uint64_t seed = 0;
  double sigma = 0, alpha = 0, lambda = 0, tau = 0, beta = 0;
  std::int64_t batch_size = 0, epochs = 0;
  std::string alpha_schedule, loss_mode, fusemix;
};

// Precedence: built-in defaults < --config file < explicit flags.
RunConfig merge_run_config(const CLI::App* cmd, const TrainFlags& f) {
  RunConfig c;
  if (cmd->count("--config")) c = run_config_from_json(read_file(f.config_path));
  if (cmd->count("--seed")) c.master_seed = f.seed;
  if (cmd->count("--sigma")) c.sigma = f.sigma;
  if (cmd->count("--alpha")) c.alpha = f.alpha;
  if (cmd->count("--lambda")) c.lambda = f.lambda;
  if (cmd->count("--tau")) c.tau = f.tau;
  if (cmd->count("--batch-size")) c.batch_size = f.batch_size;
  if (cmd->count("--epochs")) c.epochs = f.epochs;
  if (cmd->count("--alpha-schedule")) {
    if (f.alpha_schedule != "fixed" && f.alpha_schedule != "dynamic")
      fail(Errc::invalid_argument, "--alpha-schedule must be fixed|dynamic");
    c.alpha_schedule.kind =
        f.alpha_schedule == "fixed" ? AlphaScheduleKind::fixed : AlphaScheduleKind::dynamic;
  }
  if (cmd->count("--loss-mode")) c.loss_mode = loss_mode_from_string(f.loss_mode);
  if (cmd->count("--fusemix")) {
    if (f.fusemix != "on" && f.fusemix != "off")
      fail(Errc::invalid_argument, "--fusemix must be on|off");
    c.use_fusemix = f.fusemix == "on";
  }
  if (cmd->count("--beta")) c.beta_param = f.beta;
  return c;
}

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config_path, "Run config JSON");
  cmd->add_option("--seed", f.seed, "Master seed");
  cmd->add_option("--sigma", f.sigma, "Perturbation scale");
  cmd->add_option("--alpha", f.alpha, "Smoothing coefficient");
  cmd->add_option("--lambda", f.lambda, "Regularization coefficient");
  cmd->add_option("--tau", f.tau, "Temperature");
  cmd->add_option("--batch-size", f.batch_size, "Batch size");
  cmd->add_option("--epochs", f.epochs, "Epoch count");
  cmd->add_option("--alpha-schedule", f.alpha_schedule, "fixed|dynamic");
  cmd->add_option("--loss-mode", f.loss_mode, "ccl|infonce|kl_only|rp_only");
  cmd->add_option("--fusemix", f.fusemix, "on|off");
  cmd->add_option("--beta", f.beta, "FuseMix concentration");
}

int run_impl(const std::vector<std::string>& args) {
  CLI::App app{"modest-align: confidence-calibrated contrastive alignment over "
               "pre-computed embeddings"};
  app.require_subcommand(1);

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "Generate a weakly-aligned synthetic dataset");
  std::string gen_config, gen_out;
  SynthSpec spec;
  spec.n_pairs = 1000;
  spec.latent_dim = 16;
  spec.dim_x = 64;
  spec.dim_y = 48;
  gen->add_option("--config", gen_config, "Synth spec JSON");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", spec.seed, "RNG seed");
  gen->add_option("--n-pairs", spec.n_pairs, "Pair count");
  gen->add_option("--latent-dim", spec.latent_dim, "Shared latent dim");
  gen->add_option("--dim-x", spec.dim_x, "Visual dim");
  gen->add_option("--dim-y", spec.dim_y, "Textual dim");
  gen->add_option("--noise", spec.noise_scale, "Observation noise");
  gen->add_option("--partial-rate", spec.partial_rate, "Partial-match fraction");
  gen->add_option("--partial-blend", spec.partial_blend, "Distractor blend weight");
  gen->add_option("--mismatch-rate", spec.mismatch_rate, "Mismatch fraction");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Similarity histogram audit of a dataset");
  std::string an_data, an_out;
  double an_tau = 0.01;
  analyze->add_option("--data", an_data, "Dataset directory")->required();
  analyze->add_option("--out", an_out, "Output directory")->required();
  analyze->add_option("--tau", an_tau, "Audit temperature");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the V-L adapters");
  TrainFlags tf;
  add_train_flags(train_cmd, tf);
  train_cmd->add_option("--data", tf.data_dir, "Dataset directory")->required();
  train_cmd->add_option("--out", tf.out_dir, "Output directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Retrieval evaluation of a checkpoint");
  std::string ev_ckpt, ev_data, ev_out, ev_k = "1,5,10";
  eval_cmd->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--data", ev_data, "Dataset directory")->required();
  eval_cmd->add_option("--out", ev_out, "Output directory")->required();
  eval_cmd->add_option("--k", ev_k, "Comma-separated recall cutoffs");

  // grid-search
  auto* grid_cmd = app.add_subcommand("grid-search", "Sigma x alpha grid of train+eval runs");
  TrainFlags gf;
  add_train_flags(grid_cmd, gf);
  std::string gr_sigmas = "0,0.01", gr_alphas = "0,0.1";
  std::int64_t gr_holdout = 0;
  grid_cmd->add_option("--data", gf.data_dir, "Dataset directory")->required();
  grid_cmd->add_option("--out", gf.out_dir, "Output directory")->required();
  grid_cmd->add_option("--sigma-grid", gr_sigmas, "Comma-separated sigma values");
  grid_cmd->add_option("--alpha-grid", gr_alphas, "Comma-separated alpha values");
  grid_cmd->add_option("--holdout", gr_holdout, "Clean held-out rows for eval (default 10%)");

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "Print MALN file headers");
  std::vector<std::string> inspect_files;
  inspect_cmd->add_option("files", inspect_files, "MALN files")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, returns 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (gen->parsed()) {
    SynthSpec s = spec;
    if (gen->count("--config")) {
      s = synth_spec_from_json(read_file(gen_config));
      // flags override file values
      if (gen->count("--seed")) s.seed = spec.seed;
      if (gen->count("--n-pairs")) s.n_pairs = spec.n_pairs;
      if (gen->count("--latent-dim")) s.latent_dim = spec.latent_dim;
      if (gen->count("--dim-x")) s.dim_x = spec.dim_x;
      if (gen->count("--dim-y")) s.dim_y = spec.dim_y;
      if (gen->count("--noise")) s.noise_scale = spec.noise_scale;
      if (gen->count("--partial-rate")) s.partial_rate = spec.partial_rate;
      if (gen->count("--partial-blend")) s.partial_blend = spec.partial_blend;
      if (gen->count("--mismatch-rate")) s.mismatch_rate = spec.mismatch_rate;
    }
    validate(s);
    const PairedDataset ds = generate(s);
    write_dataset(ds, gen_out);
    write_file(fs::path(gen_out) / "synth_spec.json", synth_spec_to_json(s));
    std::cout << "wrote " << ds.x.count << " pairs to " << gen_out << "\n";
    return 0;
  }

  if (analyze->parsed()) {
    const PairedDataset ds = load_dataset(an_data);
    const SimilarityHistogram h = similarity_histogram(ds, an_tau);
    fs::create_directories(an_out);
    write_file(fs::path(an_out) / "histogram.csv", histogram_to_csv(h));
    std::cout << "pairs: " << ds.x.count << "  mean similarity: " << h.mean << "\n";
    return 0;
  }

  if (train_cmd->parsed()) {
    const PairedDataset ds = load_dataset(tf.data_dir);
    const RunConfig config = resolve_config(merge_run_config(train_cmd, tf), ds);
    fs::create_directories(tf.out_dir);
    write_file(fs::path(tf.out_dir) / "effective_config.json", run_config_to_json(config));

    Trainer trainer(config, ds);
    while (!trainer.done()) trainer.run_epoch();

    save_checkpoint(trainer.checkpoint(), fs::path(tf.out_dir) / "final.mack");
    write_file(fs::path(tf.out_dir) / "run_log.jsonl", run_log_to_jsonl(trainer.log()));
    write_file(fs::path(tf.out_dir) / "run_timing.jsonl", run_timing_to_jsonl(trainer.log()));
    std::cout << "trained " << config.epochs << " epochs; final mean loss "
              << trainer.log().epochs.back().mean_loss << "\n";
    return 0;
  }

  if (eval_cmd->parsed()) {
    const PairedDataset ds = load_dataset(ev_data);
    const Checkpoint ckpt = load_checkpoint(ev_ckpt);
    const std::vector<int> ks = parse_k_list(ev_k);
    auto [t2i, i2t] = retrieval_report(ds, ckpt.adapter_x, ckpt.adapter_y);
    // retrieval_report pins K in {1,5,10}; extra cutoffs are appended here
    std::vector<Index> truth(std::size_t(ds.x.count));
    for (Index i = 0; i < ds.x.count; ++i) truth[std::size_t(i)] = i;
    const RowMatrixXf ax = forward(ckpt.adapter_x, ds.x.data).first;
    const RowMatrixXf ay = forward(ckpt.adapter_y, ds.y.data).first;
    for (int k : ks) {
      if (!t2i.r_at.count(k)) t2i.r_at[k] = recall_at_k(ay, ax, truth, k);
      if (!i2t.r_at.count(k)) i2t.r_at[k] = recall_at_k(ax, ay, truth, k);
    }
    fs::create_directories(ev_out);
    write_file(fs::path(ev_out) / "report.json", retrieval_reports_to_json(t2i, i2t));
    write_file(fs::path(ev_out) / "report.csv", retrieval_reports_to_csv(t2i, i2t));
    std::cout << retrieval_reports_to_csv(t2i, i2t);
    return 0;
  }

  if (grid_cmd->parsed()) {
    const PairedDataset full = load_dataset(gf.data_dir);
    const RunConfig base = merge_run_config(grid_cmd, gf);
    const std::vector<double> sigmas = parse_double_list(gr_sigmas, "--sigma-grid");
    const std::vector<double> alphas = parse_double_list(gr_alphas, "--alpha-grid");

    Index holdout = Index(gr_holdout);
    if (holdout == 0) holdout = std::max<Index>(1, full.x.count / 10);
    const std::vector<Index> eval_rows = pick_clean_holdout(full, holdout, base.master_seed);
    std::vector<Index> train_rows;
    {
      std::vector<char> is_eval(std::size_t(full.x.count), 0);
      for (Index r : eval_rows) is_eval[std::size_t(r)] = 1;
      for (Index i = 0; i < full.x.count; ++i)
        if (!is_eval[std::size_t(i)]) train_rows.push_back(i);
    }
    const PairedDataset train_ds = subset(full, train_rows);
    const PairedDataset eval_ds = subset(full, eval_rows);

    const auto cells = grid_search(base, sigmas, alphas, train_ds, eval_ds);
    fs::create_directories(gf.out_dir);
    write_file(fs::path(gf.out_dir) / "grid.csv", grid_to_csv(cells));
    write_file(fs::path(gf.out_dir) / "effective_config.json", run_config_to_json(base));
    std::cout << grid_to_csv(cells);
    return 0;
  }

  if (inspect_cmd->parsed()) {
    for (const auto& file : inspect_files) {
      const EmbeddingMatrix m = load_embeddings(file);
      std::cout << file << ": count=" << m.count << " dim=" << m.dim
                << " normalized=" << (m.normalized ? "true" : "false") << "\n";
    }
    return 0;
  }

  return 2;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  try {
    return run_impl(args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace modest::cli
